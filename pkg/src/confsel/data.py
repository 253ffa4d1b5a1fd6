"""Datasets, reproducible splitting, heavy-tailed samplers, and synthetic models.

All randomness flows through counter-based Philox streams keyed by explicit
integer seeds, so regenerating with the same seed is reproducible across
platforms and across serial/parallel execution.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .errors import ConfigError, CsvParseError, NumericError

SYNTHETIC_MODELS = ("LinearT", "NonlinearPoisson")


def rng_stream(*entropy: int) -> Generator:
    """Counter-based generator for a tuple of integer stream labels.

    Distinct label tuples give independent streams; the same tuple always
    reproduces the same stream.
    """
    return Generator(Philox(SeedSequence(entropy=list(entropy))))


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``x`` (n rows, d columns) with response vector ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape[0] != y.shape[0]:
            raise ConfigError(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
        if x.shape[0] < 1:
            raise ConfigError("dataset must contain at least one row")
        if not np.all(np.isfinite(x)):
            raise ConfigError("covariates contain non-finite entries")
        if not np.all(np.isfinite(y)):
            raise ConfigError("responses contain non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint index sets covering ``range(n)``, reproducible from the seed."""

    parts: tuple[np.ndarray, ...]
    seed: int

    @property
    def n(self) -> int:
        return int(sum(len(p) for p in self.parts))


def split(n: int, sizes: list[int] | tuple[int, ...], seed: int) -> SplitPlan:
    """Uniformly random partition of ``range(n)`` into parts of given sizes.

    Deterministic for a fixed seed. Raises ``ConfigError`` when the sizes do
    not sum to ``n`` or any size is negative.
    """
    sizes = [int(s) for s in sizes]
    if any(s < 0 for s in sizes):
        raise ConfigError(f"negative part size in {sizes}")
    if sum(sizes) != n:
        raise ConfigError(f"sizes {sizes} sum to {sum(sizes)}, expected n={n}")
    perm = rng_stream(seed).permutation(n)
    parts = []
    start = 0
    for s in sizes:
        parts.append(np.sort(perm[start:start + s]))
        start += s
    return SplitPlan(parts=tuple(parts), seed=seed)


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the two synthetic generative models."""

    model: str
    d: int
    nu: float = 3.0
    rho: float = 0.5
    n_train: int = 200
    n_test: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.model not in SYNTHETIC_MODELS:
            raise ConfigError(f"unknown model {self.model!r}, expected one of {SYNTHETIC_MODELS}")
        if not self.nu > 2:
            raise ConfigError(f"nu={self.nu} must exceed 2 for a finite covariance")
        if not 0 <= self.rho < 1:
            raise ConfigError(f"rho={self.rho} must lie in [0, 1)")
        if self.model == "NonlinearPoisson" and self.d < 2:
            raise ConfigError("NonlinearPoisson needs d >= 2 (uses the first two covariates)")
        if self.d < 1:
            raise ConfigError("d must be positive")


def equicorrelation(d: int, rho: float) -> np.ndarray:
    """d x d matrix with unit diagonal and constant off-diagonal ``rho``."""
    return np.full((d, d), rho) + (1.0 - rho) * np.eye(d)


def sample_mvt(n: int, d: int, nu: float, sigma: np.ndarray, seed_or_rng) -> np.ndarray:
    """Draw n rows from a multivariate t with scale matrix ``sigma``.

    Realised as a Gaussian draw scaled by sqrt(nu / chi2_nu) per row, so the
    covariance of the draws is nu/(nu-2) * sigma for nu > 2.
    """
    if nu <= 0:
        raise ConfigError(f"nu={nu} must be positive")
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (d, d):
        raise ConfigError(f"sigma has shape {sigma.shape}, expected ({d}, {d})")
    if not np.allclose(sigma, sigma.T):
        raise NumericError("sigma is not symmetric")
    evals = np.linalg.eigvalsh(sigma)
    if evals[0] <= 0:
        raise NumericError(f"sigma is not positive definite (eigenvalue {evals[0]:.3e})")
    rng = seed_or_rng if isinstance(seed_or_rng, Generator) else rng_stream(int(seed_or_rng))
    chol = np.linalg.cholesky(sigma)
    z = rng.standard_normal((n, d)) @ chol.T
    if n == 0:
        return z
    w = rng.chisquare(nu, size=n)
    return z * np.sqrt(nu / w)[:, None]


def modular_coefficients(d: int) -> np.ndarray:
    """Coefficient vector (1, 2, 3, 4, 5, 1, 2, ...) of length d."""
    return 1.0 + np.arange(d) % 5


def _linear_rows(n: int, cfg: SyntheticConfig, rng: Generator, noise_scale: float) -> Dataset:
    x = sample_mvt(n, cfg.d, cfg.nu, equicorrelation(cfg.d, cfg.rho), rng)
    beta = modular_coefficients(cfg.d)
    # heteroscedastic factor uses the first two covariates (just X1 when d == 1)
    r = np.sqrt(np.sum(x[:, : min(cfg.d, 2)] ** 2, axis=1))
    xi = rng.standard_t(cfg.nu, size=n) * (1.0 + r)
    y = x @ beta + noise_scale * xi
    return Dataset(x, y)


def gen_linear_t(cfg: SyntheticConfig, noise_scale: float = 1.0) -> tuple[Dataset, Dataset]:
    """Linear model Y = X beta + t(nu)-noise inflated by 1 + sqrt(X1^2 + X2^2).

    ``noise_scale=0`` gives the exact noiseless response, used by tests.
    Returns independent train and test datasets.
    """
    if cfg.model != "LinearT":
        raise ConfigError(f"config model is {cfg.model!r}, expected 'LinearT'")
    ss = SeedSequence(entropy=[cfg.seed]).spawn(2)
    train = _linear_rows(cfg.n_train, cfg, Generator(Philox(ss[0])), noise_scale)
    test = _linear_rows(cfg.n_test, cfg, Generator(Philox(ss[1])), noise_scale)
    return train, test


def _poisson_rows(n: int, cfg: SyntheticConfig, rng: Generator,
                  noise_scale: float, outlier_prob: float) -> Dataset:
    x = sample_mvt(n, cfg.d, cfg.nu, equicorrelation(cfg.d, cfg.rho), rng)
    x1, x2 = x[:, 0], x[:, 1]
    rate = np.sin(x1) ** 2 + np.cos(x2) ** 4 + 0.01
    y = rng.poisson(rate).astype(float)
    eps1 = rng.standard_t(cfg.nu, size=n) * (1.0 + np.sqrt(x1 ** 2 + x2 ** 2))
    eps2 = rng.standard_t(cfg.nu, size=n) * (1.0 + np.sqrt(x1 ** 4 + x2 ** 4))
    u = rng.uniform(size=n)
    y = y + noise_scale * (0.03 * x1 * eps1 + 25.0 * (u < outlier_prob) * eps2)
    return Dataset(x, y)


def gen_nonlinear_poisson(cfg: SyntheticConfig, noise_scale: float = 1.0,
                          outlier_prob: float = 0.01) -> tuple[Dataset, Dataset]:
    """Poisson response with rate sin^2(X1) + cos^4(X2) + 0.01 plus heavy-tailed
    additive noise and a 1%-probability outlier burst of magnitude 25.

    ``noise_scale=0`` zeroes both noise terms; ``outlier_prob=0`` disables the
    outlier indicator.
    """
    if cfg.model != "NonlinearPoisson":
        raise ConfigError(f"config model is {cfg.model!r}, expected 'NonlinearPoisson'")
    ss = SeedSequence(entropy=[cfg.seed]).spawn(2)
    train = _poisson_rows(cfg.n_train, cfg, Generator(Philox(ss[0])), noise_scale, outlier_prob)
    test = _poisson_rows(cfg.n_test, cfg, Generator(Philox(ss[1])), noise_scale, outlier_prob)
    return train, test


def poisson_rate(x1: float, x2: float) -> float:
    """Rate of the Poisson component at a covariate point."""
    return math.sin(x1) ** 2 + math.cos(x2) ** 4 + 0.01


def load_csv(path, response_column: str) -> Dataset:
    """Load a numeric CSV (header row, '.' decimal) into a Dataset.

    The named column becomes the response; the remaining columns become the
    covariates in file order. Raises ``CsvParseError`` with the offending
    row/column on missing columns, ragged rows, or non-numeric cells.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if response_column not in header:
            raise CsvParseError(f"{path}: response column {response_column!r} not in header {header}")
        y_col = header.index(response_column)
        x_cols = [j for j in range(len(header)) if j != y_col]
        xs, ys = [], []
        for i, row in enumerate(reader, start=2):  # 1-based, counting the header
            if len(row) != len(header):
                raise CsvParseError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            vals = []
            for j, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise CsvParseError(
                        f"{path}: non-numeric cell {cell!r} at row {i}, column {header[j]!r}"
                    ) from None
            xs.append([vals[j] for j in x_cols])
            ys.append(vals[y_col])
    if not ys:
        raise CsvParseError(f"{path}: no data rows")
    return Dataset(np.asarray(xs), np.asarray(ys))
