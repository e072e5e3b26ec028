"""Exact sampling of fractional Gaussian noise and fractional Brownian motion.

The increments of B^H on a grid of step h form a stationary Gaussian sequence
with autocovariance h^{2H} gamma_H(k).  Sampling embeds the Toeplitz
covariance into a circulant matrix and draws through the FFT
(Davies-Harte / Wood-Chan); dense Cholesky is used for short grids or when
the embedding is not non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import cholesky

from .errors import FactorizationError, ValidationError

_CHOLESKY_MAX_N = 16
_DENSE_FALLBACK_MAX_N = 4096
_EMBED_DOUBLINGS = 4
_EIG_ROUNDOFF = 1e-12


@dataclass(frozen=True)
class Hurst:
    value: float

    def __post_init__(self):
        v = self.value
        if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 < v < 1.0):
            raise ValidationError(f"Hurst parameter must lie in (0, 1), got {v!r}")

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class NoiseGrid:
    """``n`` increments of step ``h``; ``seed``/``stream`` select the random stream."""

    n: int
    h: float = 1.0
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"grid size n must be a positive integer, got {self.n!r}")
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValidationError(f"grid step h must be positive, got {self.h!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if int(self.stream) < 0:
            raise ValidationError("stream index must be non-negative")


def _hurst_value(hurst: Hurst | float) -> float:
    return float(hurst) if isinstance(hurst, Hurst) else float(Hurst(hurst))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for replication ``stream`` under master ``seed``.

    Streams are derived by SeedSequence hashing of ``(seed, stream)`` and fed
    to Philox, so replication ``k`` is reproducible regardless of how many
    other replications ran or in which order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def fgn_autocovariance(hurst: Hurst | float, k) -> np.ndarray | float:
    """Unit-step fGN autocovariance gamma_H(k) = (|k+1|^2H - 2|k|^2H + |k-1|^2H) / 2."""
    H2 = 2.0 * _hurst_value(hurst)
    k = np.abs(np.asarray(k, dtype=float))
    out = 0.5 * (np.abs(k + 1.0) ** H2 - 2.0 * k**H2 + np.abs(k - 1.0) ** H2)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=64)
def _fgn_embedding(H: float, n: int) -> np.ndarray | None:
    return _circulant_sqrt_eigs(lambda m: fgn_autocovariance(H, np.arange(m)), n)


def _circulant_sqrt_eigs(acov: Callable[[int], np.ndarray], n: int) -> np.ndarray | None:
    """sqrt(eigenvalues / M) of a non-negative circulant embedding, or None.

    ``acov(m)`` must return the first ``m`` autocovariances.  The embedding
    size starts at 2n and doubles a few times if negative eigenvalues appear.
    """
    half = max(n, 1)
    for _ in range(_EMBED_DOUBLINGS + 1):
        c = np.asarray(acov(half + 1), dtype=float)
        row = np.concatenate([c, c[-2:0:-1]])
        eig = np.fft.rfft(row).real
        lam_max = float(eig.max())
        lam_min = float(eig.min())
        if lam_min >= -_EIG_ROUNDOFF * lam_max:
            eig = np.clip(eig, 0.0, None)
            return np.sqrt(eig / row.size)
        half *= 2
    return None


def _draw_circulant(sqrt_eig: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    m = 2 * (sqrt_eig.size - 1)
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    full = np.concatenate([sqrt_eig, sqrt_eig[-2:0:-1]])
    return np.fft.fft(full * z).real[:n]


def _dense_factor(acov_values: np.ndarray) -> np.ndarray:
    from scipy.linalg import toeplitz

    cov = toeplitz(acov_values)
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        eig_min = float(np.linalg.eigvalsh(cov).min())
        raise FactorizationError(
            f"covariance of size {len(acov_values)} is not positive definite "
            f"(smallest eigenvalue {eig_min:.3e})"
        ) from exc


def sample_stationary(acov: Callable[[int], np.ndarray], n: int, rng: np.random.Generator,
                      _embedding: np.ndarray | None = None) -> np.ndarray:
    """One draw of a zero-mean stationary Gaussian vector of length ``n``.

    ``acov(m)`` returns autocovariances at lags 0..m-1.
    """
    if n <= _CHOLESKY_MAX_N:
        L = _dense_factor(np.asarray(acov(n), dtype=float))
        return L @ rng.standard_normal(n)
    sqrt_eig = _embedding if _embedding is not None else _circulant_sqrt_eigs(acov, n)
    if sqrt_eig is None:
        if n > _DENSE_FALLBACK_MAX_N:
            raise FactorizationError(
                f"circulant embedding is not non-negative and n={n} is too large for dense Cholesky"
            )
        L = _dense_factor(np.asarray(acov(n), dtype=float))
        return L @ rng.standard_normal(n)
    return _draw_circulant(sqrt_eig, n, rng)


def sample_fgn(hurst: Hurst | float, grid: NoiseGrid) -> np.ndarray:
    """Increments (B_h - B_0, ..., B_nh - B_(n-1)h) of a fractional Brownian motion.

    The draw is exact: zero mean, covariance h^{2H} gamma_H(|i - j|).  The
    same ``grid`` (including seed and stream) gives bit-identical output.
    """
    H = _hurst_value(hurst)
    rng = make_rng(grid.seed, grid.stream)
    n = int(grid.n)
    scale = grid.h**H
    if n <= _CHOLESKY_MAX_N:
        return scale * sample_stationary(lambda m: fgn_autocovariance(H, np.arange(m)), n, rng)
    emb = _fgn_embedding(H, n)
    out = sample_stationary(lambda m: fgn_autocovariance(H, np.arange(m)), n, rng, _embedding=emb)
    if not np.all(np.isfinite(out)):
        raise FactorizationError(f"non-finite fGN sample for n={n}")
    return scale * out


def sample_fbm(hurst: Hurst | float, grid: NoiseGrid) -> np.ndarray:
    """B^H at h, 2h, ..., nh (B^H_0 = 0 implied): cumulative sums of :func:`sample_fgn`."""
    return np.cumsum(sample_fgn(hurst, grid))
