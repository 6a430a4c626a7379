"""Sequential soft-IC detection with a shadow-area reliability test and list feedback.

Layers are detected strongest-first. Each layer's soft estimate comes from the
same per-UE MMSE filter bank; a layer whose estimate lands too far from every
constellation point (the shadow area) spawns one selection vector per list
candidate, completes the remaining layers by hard soft-IC decisions, and keeps
the candidate with the smallest local ML residual. Only the first unreliable
layer of a symbol slot branches.

Interference is tracked in the filter-output domain: ``z[k]`` holds
``w_k^H (y - cancelled part)`` so cancellation is elementwise and every path
performs the same floating-point operations in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import Constellation
from .detectors import DetectionResult, InterferenceProfile, filter_gains, noise_variance, soft_ic_filters
from .estimation import ChannelEstimate
from .selection import SelectionMask

DEFAULT_D_TH = 0.38


@dataclass(frozen=True)
class SacConfig:
    d_th: float = DEFAULT_D_TH
    M: int = 4

    def __post_init__(self):
        if self.d_th < 0:
            raise ValueError("d_th must be >= 0")
        if self.M < 1:
            raise ValueError("list size must be >= 1")


@dataclass(frozen=True)
class ListDetectionResult(DetectionResult):
    order: np.ndarray  # detection order of UE indices
    branch_layer: np.ndarray  # (T,) layer position that branched, -1 if none
    filter_builds: int


def sac_reliability(u, const: Constellation, d_th: float = DEFAULT_D_TH):
    """Distance to the closest point, that point, and whether it is within ``d_th``."""
    u = np.asarray(u)
    nu = const.quantize(u)
    d = np.abs(u - nu)
    return d, nu, d <= d_th


def candidate_list(u, const: Constellation, M: int) -> np.ndarray:
    """The M constellation points closest to each entry of ``u``, nearest first; shape (..., M)."""
    dist = np.abs(np.asarray(u)[..., None] - const.points)
    idx = np.argsort(dist, axis=-1, kind="stable")[..., :M]
    return const.points[idx]


def detection_order(est: ChannelEstimate, mask: SelectionMask) -> np.ndarray:
    """UEs by descending norm of their masked channel estimate (ties: lower index first)."""
    am = mask.antenna_mask()
    norms = np.linalg.norm(est.g_hat.T * am, axis=1)
    return np.argsort(-norms, kind="stable")


@dataclass
class _Bank:
    """Per-frame quantities shared by every layer and branch."""

    wy: np.ndarray  # (K, T) w_k^H y
    wg: np.ndarray  # (K, T, K) w_k^H g_m
    unit: np.ndarray  # (K, T) sqrt(rho_k) w_k^H g_k
    amp: np.ndarray  # (K,) sqrt(rho_k)
    sbar: np.ndarray  # (K, T) soft means, transmit scale
    snr: np.ndarray | None = None  # (K, T) |unit|^2 / kappa2, only with priors
    log_prior: np.ndarray | None = None  # (K, T, Q)


def _bank(w, y, est, prof, sigma2) -> _Bank:
    T = y.shape[1]
    K = w.shape[0]
    wb = np.broadcast_to(w, (K, T, w.shape[2]))
    wy = np.einsum("ktn,nt->kt", wb.conj(), y)
    wg = np.ascontiguousarray(np.broadcast_to(filter_gains(w, est), (K, T, K)))
    amp = np.sqrt(prof.rho)
    k = np.arange(K)
    unit = amp[:, None] * wg[k, :, k]
    sbar = np.ascontiguousarray(np.broadcast_to(prof.sbar, (K, T)))
    b = _Bank(wy=wy, wg=wg, unit=unit, amp=amp, sbar=sbar)
    if prof.log_prior is not None:
        kappa2 = np.broadcast_to(noise_variance(wb, est, prof.rho, sigma2), (K, T))
        b.snr = np.abs(unit) ** 2 / kappa2
        b.log_prior = np.broadcast_to(prof.log_prior, (K, T, prof.log_prior.shape[-1]))
    return b


def _decide(zq, b: _Bank, q: int, const: Constellation, sl=slice(None), lifted=False):
    """Hard decision for stream q from its filter output ``zq``.

    Without priors this is Q(z / unit). With decoder priors the slice is the
    symbol maximizing -|z - unit a|^2 / kappa2 + log P(a), which reduces to
    Q(z / unit) for uniform priors.
    """
    unit = b.unit[q, sl]
    if lifted:
        unit = unit[..., None]
    u = zq / unit
    if b.log_prior is None:
        return const.quantize(u)
    snr, lp = b.snr[q, sl], b.log_prior[q, sl]
    if lifted:
        snr, lp = snr[..., None], lp[..., None, :]
    metric = lp - snr[..., None] * np.abs(u[..., None] - const.points) ** 2
    return const.points[np.argmax(metric, axis=-1)]


def _initial_z(b: _Bank) -> np.ndarray:
    """Soft-IC start: every other stream removed through its soft mean."""
    K = b.wy.shape[0]
    z = b.wy.copy()
    for k in range(K):
        for m in range(K):
            if m != k:
                z[k] = z[k] - b.wg[k, :, m] * b.sbar[m]
    return z


def _cancel(z, b: _Bank, p: int, x_p, targets, sl=slice(None)) -> None:
    """Replace stream p's soft mean by the decision ``x_p`` (transmit scale) in ``z[targets]``."""
    for q in targets:
        z[q] = z[q] - b.wg[q, sl, p] * (x_p - b.sbar[p, sl])


def sequential_soft_ic_detect(y, est, mask, prof: InterferenceProfile, sigma2, const: Constellation,
                              w=None) -> DetectionResult:
    """Plain sequential soft-IC: hard decisions cancelled layer by layer, no list."""
    y = y[:, None] if y.ndim == 1 else y
    if w is None:
        w = soft_ic_filters(est, mask, prof, sigma2)
    b = _bank(w, y, est, prof, sigma2)
    order = detection_order(est, mask)
    z = _initial_z(b)
    s_tilde = np.empty_like(z)
    hard = np.empty_like(z)
    for i, k in enumerate(order):
        s_tilde[k] = z[k]
        hard[k] = _decide(z[k], b, k, const)
        _cancel(z, b, k, b.amp[k] * hard[k], order[i + 1:])
    return DetectionResult(s_tilde=s_tilde, gain=b.unit, hard=hard)


def expand_candidate(c_m, i: int, order, z, b: _Bank, const: Constellation, sl=slice(None)):
    """Selection-vector completion for candidate(s) ``c_m`` at layer position ``i``.

    ``z`` is the filter-output state (K, T) after cancelling layers ``order[:i]``.
    ``c_m`` may carry a trailing candidate axis. Returns the completed decisions
    and soft outputs for layers ``order[i+1:]`` (dicts keyed by UE).
    """
    k = order[i]
    c_m = np.asarray(c_m)
    lifted = c_m.ndim > np.ndim(z[k, sl])

    def lift(a):
        return a[..., None] if lifted else a

    rest = order[i + 1:]
    zc = {q: np.broadcast_to(lift(z[q, sl]), c_m.shape).copy() for q in rest}
    for q in rest:
        zc[q] = zc[q] - lift(b.wg[q, sl, k]) * (b.amp[k] * c_m - lift(b.sbar[k, sl]))
    phi, soft = {}, {}
    for j, q in enumerate(rest):
        soft[q] = zc[q]
        phi[q] = _decide(zc[q], b, q, const, sl, lifted)
        for r in rest[j + 1:]:
            zc[r] = zc[r] - lift(b.wg[r, sl, q]) * (b.amp[q] * phi[q] - lift(b.sbar[q, sl]))
    return phi, soft


def ml_select(candidates: np.ndarray, y: np.ndarray, g_hat: np.ndarray, antenna_mask: np.ndarray,
              amp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the selection vector with the smallest masked residual ||D(y - G phi)||^2.

    ``candidates`` is (K, T, M) in unit-symbol scale, ``y`` is (NL, T). Ties go to the lowest m.
    """
    tx = candidates * amp[:, None, None]
    resid = y[:, :, None] - np.einsum("nk,ktm->ntm", g_hat, tx)
    cost = np.sum(np.abs(resid * antenna_mask[:, None, None]) ** 2, axis=0)  # (T, M)
    return np.argmin(cost, axis=-1), cost


def list_detect(y, est: ChannelEstimate, mask: SelectionMask, cfg: SacConfig, prof: InterferenceProfile,
                sigma2: float, const: Constellation, w=None) -> ListDetectionResult:
    """List-based soft-IC detection of one frame (y is (NL, T) or (NL,))."""
    y = y[:, None] if y.ndim == 1 else y
    builds = 0
    if w is None:
        w = soft_ic_filters(est, mask, prof, sigma2)
        builds = w.shape[0]
    b = _bank(w, y, est, prof, sigma2)
    K, T = b.wy.shape
    order = detection_order(est, mask)
    am = mask.antenna_mask()
    M = min(cfg.M, const.size)
    z = _initial_z(b)
    s_tilde = np.empty_like(z)
    hard = np.empty_like(z)
    open_ = np.ones(T, dtype=bool)  # slots that have not branched yet
    branch_layer = np.full(T, -1)
    for i, k in enumerate(order):
        s_tilde[k] = np.where(open_, z[k], s_tilde[k])
        un = z[k] / b.unit[k]
        _, _, reliable = sac_reliability(un, const, cfg.d_th)
        hard[k] = np.where(open_, _decide(z[k], b, k, const), hard[k])
        spawn = np.flatnonzero(open_ & ~reliable)
        if spawn.size:
            cands = candidate_list(un[spawn], const, M)  # (S, M)
            phi, soft = expand_candidate(cands, i, order, z, b, const, sl=spawn)
            vec = np.empty((K, spawn.size, M), dtype=complex)
            for p in order[:i]:
                vec[p] = hard[p, spawn][:, None]
            vec[k] = cands
            for q in order[i + 1:]:
                vec[q] = phi[q]
            best, _ = ml_select(vec, y[:, spawn], est.g_hat, am[k], b.amp)
            pick = np.arange(spawn.size)
            hard[k, spawn] = cands[pick, best]
            for q in order[i + 1:]:
                hard[q, spawn] = phi[q][pick, best]
                s_tilde[q, spawn] = soft[q][pick, best]
            open_[spawn] = False
            branch_layer[spawn] = i
        if open_.any():
            # hard[k] only matters on open slots; branched slots never read z again
            _cancel(z, b, k, b.amp[k] * hard[k], order[i + 1:])
    return ListDetectionResult(s_tilde=s_tilde, gain=b.unit, hard=hard, order=order,
                               branch_layer=branch_layer, filter_builds=builds)
