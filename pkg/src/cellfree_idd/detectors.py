"""Centralized MMSE receive filters with soft interference cancellation.

Power convention: the transmitted symbol of UE k is ``sqrt(rho_k) * a_k`` with
``a_k`` a unit-energy constellation point. Soft statistics that enter the
filters (``sbar``, ``var``) are in that transmit scale, so at the first IDD
iteration ``sbar = 0`` and ``var = rho``.

Arrays that vary over the symbol slots of a frame carry a trailing/leading
time axis T; the filter bank ``w`` has shape (K, T, N*L) and is zero on the
antennas of APs that do not serve the UE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import Constellation, SoftSymbolStats
from .estimation import ChannelEstimate
from .selection import SelectionMask


@dataclass(frozen=True)
class InterferenceProfile:
    """Soft symbol statistics of all K streams in transmit scale, shape (K, T)."""

    sbar: np.ndarray
    var: np.ndarray
    rho: np.ndarray
    log_prior: np.ndarray | None = None  # (K, T, Q) log P(a) per point, None when uniform

    @classmethod
    def first_iteration(cls, rho) -> "InterferenceProfile":
        rho = np.asarray(rho, dtype=float)
        return cls(sbar=np.zeros((rho.size, 1), dtype=complex), var=rho[:, None].copy(), rho=rho)

    @classmethod
    def from_stats(cls, stats: SoftSymbolStats, rho) -> "InterferenceProfile":
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            logp = np.log(stats.priors)
        return cls(sbar=np.sqrt(rho)[:, None] * stats.mean, var=rho[:, None] * stats.variance, rho=rho,
                   log_prior=logp)

    @classmethod
    def perfect(cls, symbols, rho) -> "InterferenceProfile":
        """Point-mass priors on the transmitted symbols (given in transmit scale)."""
        symbols = np.asarray(symbols, dtype=complex)
        if symbols.ndim == 1:
            symbols = symbols[:, None]
        return cls(sbar=symbols, var=np.zeros(symbols.shape), rho=np.asarray(rho, dtype=float))

    @property
    def T(self) -> int:
        return self.sbar.shape[1]

    def second_moments(self) -> np.ndarray:
        """|sbar_m|^2 + var_m, the weights of the estimation-error covariances."""
        return np.abs(self.sbar) ** 2 + self.var

    def err_cov_sum(self, est: ChannelEstimate) -> np.ndarray:
        """sum_m (|sbar_m|^2 + var_m) C_m, shape (T, NL, NL)."""
        return est.weighted_error_covariance(self.second_moments().T)


@dataclass(frozen=True)
class DetectionResult:
    s_tilde: np.ndarray  # (K, T) filter output after IC, transmit scale
    gain: np.ndarray  # (K, T) effective gain on the unit-energy symbol
    hard: np.ndarray  # (K, T) unit-energy constellation decisions

    def normalized(self) -> np.ndarray:
        return self.s_tilde / self.gain


def _block_inverse(est: ChannelEstimate, weights: np.ndarray, sigma2: float) -> np.ndarray:
    """(sigma2 I + sum_m weights[t, m] C_m)^{-1} per AP block, shape (T, L, N, N).

    The Cholesky factorization doubles as the positive-definiteness check.
    """
    blocks = np.einsum("tk,lkij->tlij", weights, est.err_cov)
    blocks = blocks + sigma2 * np.eye(est.N)
    try:
        chol = np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("noise-plus-error covariance is not positive definite") from exc
    inv_chol = np.linalg.inv(chol)
    return np.conj(np.swapaxes(inv_chol, -1, -2)) @ inv_chol


def soft_ic_filters(est: ChannelEstimate, mask: SelectionMask, prof: InterferenceProfile,
                    sigma2: float, users=None) -> np.ndarray:
    """MMSE soft-IC filters w_k for every UE and symbol slot, shape (len(users), T, NL).

    w_k = rho_k [D_k(rho_k g_k g_k^H + G_i Delta_i G_i^H + B) D_k^H]^{-1} D_k g_k,
    with B = sigma2 I + sum_m (|sbar_m|^2 + var_m) C_m block diagonal per AP.

    The bracket is B plus a rank-K term, so it is inverted through the
    matrix-inversion lemma on the serving antennas: with V the per-stream
    variances (rho_k for stream k itself) and Q = G^H D B^{-1} D G,
    w_k = rho_k D B^{-1} (g_k - G V^1/2 (I + V^1/2 Q V^1/2)^{-1} V^1/2 Q e_k).
    D and B^{-1} commute since selection acts on whole AP blocks.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    users = np.arange(est.K) if users is None else np.atleast_1d(users)
    G = est.g_hat
    L, N, K = est.L, est.N, est.K
    T = prof.T
    rho = prof.rho
    binv = _block_inverse(est, prof.second_moments().T, sigma2)  # (T, L, N, N)
    BG = np.einsum("tlij,ljk->tlik", binv, G.reshape(L, N, K)).reshape(T, L * N, K)
    am = mask.antenna_mask()[users].astype(float)  # (U, NL)
    GmH = np.swapaxes((am[:, :, None] * G).conj(), -1, -2)  # (U, K, NL)
    Q = GmH[:, None] @ BG[None]  # (U, T, K, K)
    v = np.broadcast_to(prof.var.T, (users.size, T, K)).copy()
    v[np.arange(users.size), :, users] = rho[users][:, None]
    sv = np.sqrt(v)
    M = sv[..., :, None] * Q * sv[..., None, :]
    idx = np.arange(K)
    M[..., idx, idx] += 1.0
    rhs = sv * Q[np.arange(users.size), :, :, users]  # V^1/2 Q e_k, (U, T, K)
    x = np.linalg.solve(M, rhs[..., None])[..., 0]
    own = np.moveaxis(BG[:, :, users], -1, 0)  # (U, T, NL)
    w = own - (BG[None] @ (sv * x)[..., None])[..., 0]
    return rho[users][:, None, None] * am[:, None, :] * w


def filters_direct(est: ChannelEstimate, mask: SelectionMask, prof: InterferenceProfile,
                   sigma2: float) -> np.ndarray:
    """Reference evaluation of the same filters: dense bracket, explicit serving submatrix."""
    G = est.g_hat
    NL, K = G.shape
    am = mask.antenna_mask()
    E = prof.err_cov_sum(est)
    w = np.zeros((K, prof.T, NL), dtype=complex)
    for k in range(K):
        s = np.flatnonzero(am[k])
        for t in range(prof.T):
            v = prof.var[:, t].astype(complex)
            v[k] = prof.rho[k]
            A = G @ np.diag(v) @ G.conj().T + sigma2 * np.eye(NL) + E[t]
            A = A[np.ix_(s, s)]
            assert np.allclose(A, A.conj().T), "bracket must be Hermitian"
            np.linalg.cholesky(A)
            w[k, t, s] = prof.rho[k] * np.linalg.solve(A, G[s, k])
    return w


def mmse_soft_ic_filter(k: int, est: ChannelEstimate, mask: SelectionMask, prof: InterferenceProfile,
                        sigma2: float) -> np.ndarray:
    """Filter of a single UE, shape (T, NL)."""
    return soft_ic_filters(est, mask, prof, sigma2, users=[k])[0]


def all_aps_filter(k: int, est: ChannelEstimate, prof: InterferenceProfile, sigma2: float) -> np.ndarray:
    """All-APs closed form written out without any selection matrix, shape (T, NL)."""
    G = est.g_hat
    NL, K = G.shape
    others = [m for m in range(K) if m != k]
    gk = G[:, k]
    E = prof.err_cov_sum(est)
    out = np.empty((prof.T, NL), dtype=complex)
    for t in range(prof.T):
        Gi = G[:, others]
        A = (prof.rho[k] * np.outer(gk, gk.conj()) + Gi @ np.diag(prof.var[others, t]) @ Gi.conj().T
             + sigma2 * np.eye(NL) + E[t])
        out[t] = prof.rho[k] * np.linalg.solve(A, gk)
    return out


def noise_variance(w: np.ndarray, est: ChannelEstimate, rho, sigma2: float) -> np.ndarray:
    """w^H (sum_m rho_m C_m + sigma2 I) w for a filter bank (K, T, NL), shape (K, T)."""
    B = est.weighted_error_covariance(np.asarray(rho, dtype=float))
    B[np.diag_indices_from(B)] += sigma2
    return np.sum((w.conj() @ B) * w, axis=-1).real


def filter_gains(w: np.ndarray, est: ChannelEstimate) -> np.ndarray:
    """w_k^H g_m for all UEs k, slots t and streams m, shape (K, T, K)."""
    return np.einsum("ktn,nm->ktm", w.conj(), est.g_hat)


def soft_ic_outputs(w: np.ndarray, y: np.ndarray, est: ChannelEstimate, sbar: np.ndarray,
                    wg: np.ndarray | None = None) -> np.ndarray:
    """s_tilde_k = w_k^H y - w_k^H D_k G_i sbar_i for all k, shape (K, T).

    ``y`` is (NL, T); ``sbar`` is (K, T) or (K, 1) in transmit scale. D_k is
    implicit because w_k vanishes outside the serving antennas.
    """
    if wg is None:
        wg = filter_gains(w, est)
    T = y.shape[1]
    wy = np.einsum("ktn,nt->kt", np.broadcast_to(w, (w.shape[0], T, w.shape[2])).conj(), y)
    sb = np.broadcast_to(sbar, (wg.shape[0], T))
    wg = np.broadcast_to(wg, (wg.shape[0], T, wg.shape[2]))
    interference = np.einsum("ktm,mt->kt", wg, sb)
    k = np.arange(wg.shape[0])
    interference = interference - wg[k, :, k] * sb
    return wy - interference


def soft_ic_detect(k: int, y: np.ndarray, w_k: np.ndarray, est: ChannelEstimate, mask: SelectionMask,
                   sbar: np.ndarray) -> np.ndarray:
    """Single-UE soft-IC statistic; ``w_k`` is (NL,) or (T, NL), ``y`` is (NL,) or (NL, T)."""
    y2 = y[:, None] if y.ndim == 1 else y
    w2 = np.atleast_2d(w_k)
    am = mask.antenna_mask()[k]
    others = [m for m in range(est.K) if m != k]
    sb = np.asarray(sbar)
    sb = sb[:, None] if sb.ndim == 1 else sb
    Gi = (est.g_hat * am[:, None])[:, others]
    resid = y2 - Gi @ np.broadcast_to(sb[others], (len(others), y2.shape[1]))
    out = np.einsum("tn,nt->t", np.broadcast_to(w2, (y2.shape[1], w2.shape[1])).conj(), resid)
    return out[0] if y.ndim == 1 else out


def unit_gain(w: np.ndarray, est: ChannelEstimate, rho) -> np.ndarray:
    """Gain on the unit-energy symbol, sqrt(rho_k) w_k^H D_k g_k, shape (K, T)."""
    K = w.shape[0]
    k = np.arange(K)
    return np.sqrt(np.asarray(rho, dtype=float))[:, None] * np.einsum("ktn,nk->kt", w.conj(), est.g_hat[:, k])


def _result(s_tilde, gain, const: Constellation) -> DetectionResult:
    return DetectionResult(s_tilde=s_tilde, gain=gain, hard=const.quantize(s_tilde / gain))


def detect_soft_ic(y, est, mask, prof: InterferenceProfile, sigma2, const: Constellation):
    """Parallel MMSE soft-IC over a frame; returns the result and the filter bank."""
    w = soft_ic_filters(est, mask, prof, sigma2)
    s_tilde = soft_ic_outputs(w, y, est, prof.sbar)
    gain = np.broadcast_to(unit_gain(w, est, prof.rho), s_tilde.shape)
    return _result(s_tilde, gain, const), w


def linear_mmse_filters(est: ChannelEstimate, mask: SelectionMask, rho, sigma2: float) -> np.ndarray:
    """First-iteration linear MMSE filters on each UE's serving-antenna submatrix, shape (K, NL).

    Written independently of :func:`soft_ic_filters`: the reduced system is
    extracted explicitly and the solution zero-padded.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    rho = np.asarray(rho, dtype=float)
    G = est.g_hat
    NL, K = G.shape
    am = mask.antenna_mask()
    cov = G @ np.diag(rho) @ G.conj().T + sigma2 * np.eye(NL) + est.weighted_error_covariance(rho)
    w = np.zeros((K, NL), dtype=complex)
    for k in range(K):
        s = np.flatnonzero(am[k])
        w[k, s] = rho[k] * np.linalg.solve(cov[np.ix_(s, s)], G[s, k])
    return w


def linear_mmse_detect(y, est: ChannelEstimate, mask: SelectionMask, rho, sigma2: float,
                       const: Constellation | None = None):
    """Linear MMSE estimates of all UEs, no interference cancellation.

    Returns s_tilde (K, T) or, when ``const`` is given, a :class:`DetectionResult`.
    """
    y2 = y[:, None] if y.ndim == 1 else y
    w = linear_mmse_filters(est, mask, rho, sigma2)
    s_tilde = w.conj() @ y2
    if const is None:
        return s_tilde[:, 0] if y.ndim == 1 else s_tilde
    gain = np.sqrt(np.asarray(rho))[:, None] * np.einsum("kn,nk->k", w.conj(), est.g_hat)[:, None]
    return _result(s_tilde, np.broadcast_to(gain, s_tilde.shape), const)


def perfect_ic_detect(k: int, y, est: ChannelEstimate, mask: SelectionMask, true_syms, rho,
                      sigma2: float) -> np.ndarray:
    """Genie-aided estimate of UE k with the interference of all others removed exactly.

    ``true_syms`` are transmit-scale symbols, (K,) or (K, T); ``y`` is (NL,) or (NL, T).
    """
    rho = np.asarray(rho, dtype=float)
    y2 = y[:, None] if y.ndim == 1 else y
    s = np.asarray(true_syms, dtype=complex)
    s = s[:, None] if s.ndim == 1 else s
    s = np.broadcast_to(s, (est.K, y2.shape[1]))
    G = est.g_hat
    sv = np.flatnonzero(mask.antenna_mask()[k])
    others = [m for m in range(est.K) if m != k]
    gk = G[sv, k]
    out = np.empty(y2.shape[1], dtype=complex)
    for t in range(y2.shape[1]):
        E = est.weighted_error_covariance(np.abs(s[:, t]) ** 2)[np.ix_(sv, sv)]
        A = rho[k] * np.outer(gk, gk.conj()) + sigma2 * np.eye(sv.size) + E
        clean = y2[sv, t] - G[np.ix_(sv, others)] @ s[others, t]
        out[t] = rho[k] * gk.conj() @ np.linalg.solve(A, clean)
    return out[0] if y.ndim == 1 else out


def detect_perfect_ic(y, est, mask, true_syms, rho, sigma2, const: Constellation):
    """Genie detector over a frame via the soft-IC path with point-mass priors."""
    prof = InterferenceProfile.perfect(true_syms, rho)
    return detect_soft_ic(y, est, mask, prof, sigma2, const)
