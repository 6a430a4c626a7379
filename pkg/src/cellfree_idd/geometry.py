"""Network layout, large-scale fading, spatial correlation and small-scale channel draws.

Antenna indexing convention used across the package: the stacked receive
vector has length ``N * L`` and AP ``l`` owns rows ``l*N : (l+1)*N``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

AP_HEIGHT_M = 10.0
SHADOW_STD_DB = 4.0


@dataclass(frozen=True)
class NetworkGeometry:
    area_side_m: float
    ap_positions: np.ndarray  # (L, 2)
    ue_positions: np.ndarray  # (K, 2)
    N: int
    ap_height_m: float = AP_HEIGHT_M

    @property
    def L(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def K(self) -> int:
        return self.ue_positions.shape[0]

    def distances(self) -> np.ndarray:
        """3D AP-UE distances, shape (L, K)."""
        diff = self.ap_positions[:, None, :] - self.ue_positions[None, :, :]
        horiz2 = np.sum(diff**2, axis=-1)
        return np.sqrt(horiz2 + self.ap_height_m**2)


@dataclass(frozen=True)
class LargeScaleCoefficients:
    beta: np.ndarray  # (L, K), linear
    shadow_db: np.ndarray  # (L, K)

    @property
    def beta_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.beta)


@dataclass(frozen=True)
class SpatialCorrelation:
    """Per-(AP, UE) correlation blocks, ``omega[l, k]`` is the N x N matrix of UE k at AP l."""

    omega: np.ndarray  # (L, K, N, N) complex

    @property
    def L(self) -> int:
        return self.omega.shape[0]

    @property
    def K(self) -> int:
        return self.omega.shape[1]

    @property
    def N(self) -> int:
        return self.omega.shape[2]


@dataclass(frozen=True)
class ChannelRealization:
    g: np.ndarray  # (N*L, K) complex

    @property
    def K(self) -> int:
        return self.g.shape[1]


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def place_network(seed, L: int, K: int, N: int = 1, area_side_m: float = 1000.0) -> NetworkGeometry:
    """Drop L APs and K UEs uniformly at random in a square of side ``area_side_m``."""
    if L < 1:
        raise ValueError("no APs")
    if K < 1:
        raise ValueError("no UEs")
    if N < 1:
        raise ValueError("APs need at least one antenna")
    if not area_side_m > 0:
        raise ValueError("zero-area square")
    if N * L < K:
        warnings.warn(f"N*L={N * L} < K={K}: detection is ill-posed", stacklevel=2)
    rng = _as_rng(seed)
    aps = rng.uniform(0.0, area_side_m, size=(L, 2))
    ues = rng.uniform(0.0, area_side_m, size=(K, 2))
    return NetworkGeometry(area_side_m=float(area_side_m), ap_positions=aps, ue_positions=ues, N=N)


def pathloss_db(d_m, shadow_db=0.0):
    """3GPP Urban Microcell gain in dB; distances below the 1 m reference are clamped."""
    d = np.maximum(np.asarray(d_m, dtype=float), 1.0)
    return -30.5 - 36.7 * np.log10(d) + shadow_db


def large_scale_fading(geom: NetworkGeometry, seed, shadow_std_db: float = SHADOW_STD_DB) -> LargeScaleCoefficients:
    rng = _as_rng(seed)
    shadow = shadow_std_db * rng.standard_normal((geom.L, geom.K))
    beta = 10.0 ** (pathloss_db(geom.distances(), shadow) / 10.0)
    return LargeScaleCoefficients(beta=beta, shadow_db=shadow)


def correlation_matrix(beta: float, N: int, r: float = 0.0) -> np.ndarray:
    """Exponential correlation model ``beta * r**|m-n|``.

    With ``r = 0`` this is ``beta * I``; the trace is always ``N * beta``.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not 0.0 <= abs(r) < 1.0:
        raise ValueError("correlation coefficient must satisfy |r| < 1")
    idx = np.arange(N)
    lag = idx[:, None] - idx[None, :]
    R = np.where(lag >= 0, r ** np.abs(lag), np.conj(r) ** np.abs(lag))
    return (beta * R).astype(complex)


def spatial_correlation(lsf: LargeScaleCoefficients, N: int, r: float = 0.0) -> SpatialCorrelation:
    L, K = lsf.beta.shape
    omega = np.empty((L, K, N, N), dtype=complex)
    for l in range(L):
        for k in range(K):
            omega[l, k] = correlation_matrix(lsf.beta[l, k], N, r)
    return SpatialCorrelation(omega=omega)


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """A factor F with F F^H = a; Cholesky when possible, eigen-decomposition otherwise."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(a)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_channel(corr: SpatialCorrelation, seed) -> ChannelRealization:
    rng = _as_rng(seed)
    L, K, N = corr.L, corr.K, corr.N
    z = complex_normal(rng, (L, K, N))
    g = np.empty((N * L, K), dtype=complex)
    for l in range(L):
        for k in range(K):
            g[l * N:(l + 1) * N, k] = sqrtm_psd(corr.omega[l, k]) @ z[l, k]
    return ChannelRealization(g=g)
