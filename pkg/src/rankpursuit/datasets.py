"""Data ingestion, synthetic benchmark generation and evaluation metrics.

File formats use 1-based indices (CSV triplets and MatrixMarket
coordinate); indices are converted to 0-based at this boundary and
nowhere else.  All randomness flows through explicitly seeded generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import thin_qr
from .problems import Observations
from .variety import FixedRankMatrix


class ParseError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


@dataclass
class Dataset:
    """Disjoint train/test observation sets plus provenance metadata."""

    train: Observations
    test: Observations
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.train.shape


def load_triplets(path, fmt="csv-triplet", dims=None):
    """Read observations from a ``row,col,value`` CSV (needs ``dims`` unless
    they can be inferred from the maximum indices) or a MatrixMarket
    coordinate file.  Duplicate positions and out-of-range indices are
    rejected with the offending line number."""
    if fmt == "csv-triplet":
        return _load_csv_triplets(path, dims)
    if fmt == "matrix-market":
        return _load_matrix_market(path)
    raise ValueError(f"unknown triplet format {fmt!r}")


def _load_csv_triplets(path, dims):
    rows, cols, values = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 'row,col,value', got {line!r}")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if i < 1 or j < 1:
                raise ParseError(path, lineno, "indices are 1-based")
            rows.append(i - 1)
            cols.append(j - 1)
            values.append(v)
    if not rows:
        raise ParseError(path, 0, "no samples in file")
    if dims is None:
        dims = (max(rows) + 1, max(cols) + 1)
    return _observations(path, dims, rows, cols, values)


def _load_matrix_market(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise ParseError(path, 1, "missing MatrixMarket header")
        tokens = header.lower().split()
        if tokens[1:4] != ["matrix", "coordinate", "real"]:
            raise ParseError(path, 1, f"unsupported MatrixMarket flavor: {header.strip()!r}")
        lineno = 1
        dims = None
        rows, cols, values = [], [], []
        for line in fh:
            lineno += 1
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            parts = line.split()
            if dims is None:
                if len(parts) != 3:
                    raise ParseError(path, lineno, "expected 'rows cols nnz'")
                dims = (int(parts[0]), int(parts[1]))
                declared = int(parts[2])
                continue
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 'row col value', got {line!r}")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if i < 1 or j < 1:
                raise ParseError(path, lineno, "indices are 1-based")
            rows.append(i - 1)
            cols.append(j - 1)
            values.append(v)
    if dims is None:
        raise ParseError(path, lineno, "missing size line")
    if len(values) != declared:
        raise ParseError(path, lineno, f"expected {declared} entries, found {len(values)}")
    return _observations(path, dims, rows, cols, values)


def _observations(path, dims, rows, cols, values):
    try:
        return Observations(dims[0], dims[1], rows, cols, values)
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None


def write_triplets(path, obs, fmt="csv-triplet"):
    """Write observations with 1-based indices (round-trips load_triplets)."""
    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "csv-triplet":
            for i, j, v in zip(obs.rows, obs.cols, obs.values):
                fh.write(f"{i + 1},{j + 1},{v!r}\n")
        elif fmt == "matrix-market":
            fh.write("%%MatrixMarket matrix coordinate real general\n")
            fh.write(f"{obs.m} {obs.n} {obs.size}\n")
            for i, j, v in zip(obs.rows, obs.cols, obs.values):
                fh.write(f"{i + 1} {j + 1} {v!r}\n")
        else:
            raise ValueError(f"unknown triplet format {fmt!r}")


def split(obs, fraction, seed):
    """Uniform random train/test partition, deterministic under the seed."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(obs.size)
    n_train = int(round(fraction * obs.size))
    if n_train == 0 or n_train == obs.size:
        raise ValueError("split leaves one side empty")
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    return Dataset(
        train=obs.take(np.sort(train_idx)),
        test=obs.take(np.sort(test_idx)),
        meta={"fraction": fraction, "seed": seed},
    )


def sample_count(m, rank, omega):
    """Number of observations for oversampling factor ``omega``: the factor
    times the degrees of freedom of an m-by-m rank-``rank`` matrix."""
    return int(round(omega * rank * (2 * m - rank)))


def gen_synthetic(m, rank, omega, noise_scale=0.0, outlier_fraction=0.0,
                  outlier_range=10.0, seed=0, train_fraction=0.8):
    """Square synthetic completion benchmark with a known factored truth.

    The ground truth is ``U diag(sigma) V^T`` with Gaussian-orthonormalized
    factors and singular values uniform on ``[0, 1000]``.  ``sample_count``
    positions are drawn without replacement; Gaussian noise is added to the
    full observation vector, scaled so its norm is exactly ``noise_scale``
    times the clean vector's, and a fraction of the observations is further
    perturbed by uniform outliers on ``[-outlier_range, outlier_range]``.

    The returned dataset carries corrupted values on the train side and
    pristine ground-truth values on the test side (recovery error is
    measured against the truth), plus generator metadata including the
    per-entry noise level ``noise_rms``.
    """
    count = sample_count(m, rank, omega)
    if count > m * m:
        raise ValueError(f"oversampling infeasible: {count} samples from {m}x{m}")
    if count < 2:
        raise ValueError("need at least two samples to split")
    rng = np.random.default_rng(seed)
    u = thin_qr(rng.standard_normal((m, rank)))[0]
    v = thin_qr(rng.standard_normal((m, rank)))[0]
    sigma = np.sort(rng.uniform(0.0, 1000.0, rank))[::-1]
    truth = FixedRankMatrix(u, sigma, v)

    flat = rng.choice(m * m, size=count, replace=False)
    rows, cols = np.divmod(flat, m)
    pristine = truth.entries(rows, cols)

    observed = pristine.copy()
    noise_rms = 0.0
    if noise_scale > 0:
        noise = rng.standard_normal(count)
        noise *= noise_scale * np.linalg.norm(observed) / np.linalg.norm(noise)
        noise_rms = float(np.linalg.norm(noise) / math.sqrt(count))
        observed = observed + noise
    n_outliers = int(round(outlier_fraction * count))
    if n_outliers:
        hit = rng.choice(count, size=n_outliers, replace=False)
        observed[hit] += rng.uniform(-outlier_range, outlier_range, n_outliers)

    perm = rng.permutation(count)
    n_train = int(round(train_fraction * count))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    train = Observations(m, m, rows[train_idx], cols[train_idx], observed[train_idx])
    test = Observations(m, m, rows[test_idx], cols[test_idx], pristine[test_idx])
    meta = {
        "seed": seed, "m": m, "rank": rank, "omega": omega,
        "samples": count, "noise_scale": noise_scale, "noise_rms": noise_rms,
        "outlier_fraction": outlier_fraction, "outlier_range": outlier_range,
        "outliers": n_outliers, "train_fraction": train_fraction,
    }
    return Dataset(train=train, test=test, meta=meta), truth


def rmse(x, test):
    """Root-mean-square deviation of a factored point from the test values."""
    if test.size == 0:
        raise ValueError("empty test set")
    if x.shape != test.shape:
        raise ValueError(f"point shape {x.shape} != test shape {test.shape}")
    diff = x.entries(test.rows, test.cols) - test.values
    return float(np.sqrt(np.mean(diff ** 2)))
