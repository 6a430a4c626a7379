"""Iterative detection and decoding: AWGN model of the filter output, extrinsic
demapping and the detector/decoder exchange loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import detectors as det
from .constellation import LLR_CLIP, Constellation, log_priors_from_llr, soft_symbols
from .estimation import ChannelEstimate
from .ldpc import LdpcCode, decode
from .list_detector import SacConfig, list_detect, sequential_soft_ic_detect
from .selection import SelectionMask

DETECTORS = ("mmse", "softic", "list", "sic", "genie")


@dataclass(frozen=True)
class EffectiveAwgn:
    omega: np.ndarray  # (K, T) gain on the unit-energy symbol
    kappa2: np.ndarray  # (K, T) noise-plus-estimation-error variance


def effective_channel(w: np.ndarray, est: ChannelEstimate, rho, sigma2: float,
                      residual_var: np.ndarray | None = None) -> EffectiveAwgn:
    """AWGN model u_k = omega_k a_k + z_k of the filter outputs.

    ``w`` is (K, T, NL) or (K, NL). kappa2 counts estimation error and noise,
    w^H D (sum_m rho_m C_m + sigma2 I) D^H w; pass ``residual_var`` (K, T) in
    transmit scale to add the residual multi-user term sum_{m!=k} var_m |w_k^H g_m|^2.
    """
    rho = np.asarray(rho, dtype=float)
    w3 = w[:, None, :] if w.ndim == 2 else w
    omega = np.sqrt(rho)[:, None] * np.einsum("ktn,nk->kt", w3.conj(), est.g_hat)
    kappa2 = det.noise_variance(w3, est, rho, sigma2)
    if residual_var is not None:
        wg = np.abs(det.filter_gains(w3, est)) ** 2  # (K, T, K)
        K = wg.shape[0]
        wg[np.arange(K), :, np.arange(K)] = 0.0
        kappa2 = kappa2 + np.einsum("ktm,mt->kt", wg, np.broadcast_to(residual_var, (K, wg.shape[1])))
    if np.any(kappa2 <= 0):
        raise ValueError("non-positive effective noise variance")
    return EffectiveAwgn(omega=omega, kappa2=kappa2)


def extrinsic_llr(u, omega, kappa2, prior_llr, const: Constellation) -> np.ndarray:
    """Per-bit extrinsic LLRs of symbol observations ``u`` under the Gaussian model.

    ``prior_llr`` has shape (..., Mc) matching ``u`` (...,); the output drops
    each bit's own prior so only new information is passed on.
    """
    u = np.asarray(u)[..., None]
    omega = np.asarray(omega)[..., None]
    kappa2 = np.asarray(kappa2)[..., None]
    lam = np.clip(np.asarray(prior_llr, dtype=float), -LLR_CLIP, LLR_CLIP)
    metric = -np.abs(u - omega * const.points) ** 2 / kappa2 + log_priors_from_llr(lam, const)
    plus = const.bit_labels == 0  # (Q, Mc): label +1
    m = metric[..., :, None]
    num = np.logaddexp.reduce(np.where(plus, m, -np.inf), axis=-2)
    den = np.logaddexp.reduce(np.where(~plus, m, -np.inf), axis=-2)
    return num - den - lam


@dataclass
class Frame:
    """One coherence block as seen by the CPU."""

    y: np.ndarray  # (NL, T)
    est: ChannelEstimate
    mask: SelectionMask
    rho: np.ndarray  # (K,)
    sigma2: float
    messages: np.ndarray  # (K, k) transmitted message bits
    symbols: np.ndarray | None = None  # (K, T) unit-energy transmitted symbols (genie only)


@dataclass
class IddResult:
    bits: np.ndarray  # (K, k) decoded message bits after the last iteration
    errors: np.ndarray  # (n_outer,) message-bit errors after each outer iteration
    iterations: int  # outer iterations actually run
    history: list = field(default_factory=list)  # per-iteration BER


def _detect(kind, frame: Frame, llr_c, const, sac, residual_mui, cache):
    """Soft outputs, unit gains and kappa2 for all UEs, each (K, T)."""
    est, mask, rho, sigma2, y = frame.est, frame.mask, frame.rho, frame.sigma2, frame.y
    if kind == "mmse":
        if "mmse" not in cache:
            w = det.linear_mmse_filters(est, mask, rho, sigma2)
            eff = effective_channel(w, est, rho, sigma2, rho[:, None] if residual_mui else None)
            cache["mmse"] = ((w.conj() @ y), eff)
        return cache["mmse"]
    if kind == "genie":
        prof = det.InterferenceProfile.perfect(np.sqrt(rho)[:, None] * frame.symbols, rho)
    elif not np.any(llr_c):
        prof = det.InterferenceProfile.first_iteration(rho)
    else:
        prof = det.InterferenceProfile.from_stats(soft_symbols(llr_c, const), rho)
    w = det.soft_ic_filters(est, mask, prof, sigma2)
    if kind in ("softic", "genie"):
        s_tilde = det.soft_ic_outputs(w, y, est, prof.sbar)
    elif kind == "list":
        s_tilde = list_detect(y, est, mask, sac, prof, sigma2, const, w=w).s_tilde
    elif kind == "sic":
        s_tilde = sequential_soft_ic_detect(y, est, mask, prof, sigma2, const, w=w).s_tilde
    else:
        raise ValueError(f"unknown detector {kind!r}")
    eff = effective_channel(w, est, rho, sigma2, prof.var if residual_mui else None)
    return s_tilde, eff


def idd_loop(frame: Frame, detector: str, n_outer: int, code: LdpcCode, const: Constellation,
             inner_iters: int = 10, sac: SacConfig | None = None, residual_mui: bool = False) -> IddResult:
    """Run detector and decoder for up to ``n_outer`` exchanges.

    The detector consumes a-priori LLRs (zero on the first pass); the decoder
    returns its extrinsic output (posterior minus input) as the next priors.
    Stops early once every UE's codeword satisfies all checks; later
    iterations then repeat the final error count.
    """
    if n_outer < 1:
        raise ValueError("n_outer must be >= 1")
    sac = sac or SacConfig()
    K, T = frame.rho.size, frame.y.shape[1]
    Mc = const.bits_per_symbol
    llr_c = np.zeros((K, T * Mc))
    errors = np.zeros(n_outer, dtype=np.int64)
    cache: dict = {}
    prev_in = prev_dec = None
    it = 0
    for it in range(1, n_outer + 1):
        s_tilde, eff = _detect(detector, frame, llr_c, const, sac, residual_mui, cache)
        lam_e = extrinsic_llr(s_tilde, eff.omega, eff.kappa2, llr_c.reshape(K, T, Mc), const).reshape(K, T * Mc)
        if prev_in is not None and np.array_equal(lam_e, prev_in):
            dec = prev_dec  # deterministic decoder, identical input
        else:
            dec = decode(lam_e, code, inner_iters)
        prev_in, prev_dec = lam_e, dec
        llr_c = dec.extrinsic
        bits = code.message(dec.bits)
        errors[it - 1] = np.count_nonzero(bits != frame.messages)
        if dec.converged.all():
            errors[it:] = errors[it - 1]
            break
    nbits = frame.messages.size
    return IddResult(bits=bits, errors=errors, iterations=it, history=list(errors / nbits))
