"""Pilot assignment, pilot reception and per-AP MMSE channel estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ChannelRealization, SpatialCorrelation, _as_rng, complex_normal


@dataclass(frozen=True)
class PilotBook:
    tau_p: int
    assignment: np.ndarray  # (K,) pilot index per UE, 0-based
    pilot_powers: np.ndarray  # (K,) watts

    @property
    def K(self) -> int:
        return self.assignment.shape[0]

    def sharing_set(self, k: int) -> np.ndarray:
        """UEs that share UE k's pilot, k included."""
        return np.flatnonzero(self.assignment == self.assignment[k])


@dataclass(frozen=True)
class PilotObservation:
    r: np.ndarray  # (tau_p, L, N) despread pilot signal per pilot and AP
    psi: np.ndarray  # (tau_p, L, N, N) its covariance


@dataclass(frozen=True)
class ChannelEstimate:
    g_hat: np.ndarray  # (N*L, K)
    err_cov: np.ndarray  # (L, K, N, N) blocks C_kl

    @property
    def L(self) -> int:
        return self.err_cov.shape[0]

    @property
    def K(self) -> int:
        return self.err_cov.shape[1]

    @property
    def N(self) -> int:
        return self.err_cov.shape[2]

    def error_covariance(self, k: int) -> np.ndarray:
        """Dense block-diagonal C_k of size NL x NL."""
        return self.weighted_error_covariance(np.eye(self.K)[k])

    def weighted_error_covariance(self, weights) -> np.ndarray:
        """sum_m weights[..., m] * C_m as dense NL x NL matrices (leading axes of weights kept)."""
        weights = np.asarray(weights)
        L, N = self.L, self.N
        blocks = np.einsum("...k,lkij->...lij", weights, self.err_cov)
        out = np.zeros(weights.shape[:-1] + (N * L, N * L), dtype=complex)
        for l in range(L):
            out[..., l * N:(l + 1) * N, l * N:(l + 1) * N] = blocks[..., l, :, :]
        return out


def assign_pilots(K: int, tau_p: int, seed=None, power: float = 0.1) -> PilotBook:
    """Round-robin pilot reuse over a random UE ordering.

    ``seed=None`` keeps the natural UE order, so UE k gets pilot ``k mod tau_p``.
    """
    if tau_p < 1:
        raise ValueError("tau_p must be >= 1")
    order = np.arange(K) if seed is None else _as_rng(seed).permutation(K)
    assignment = np.empty(K, dtype=int)
    assignment[order] = np.arange(K) % tau_p
    powers = np.broadcast_to(np.asarray(power, dtype=float), (K,)).copy()
    if np.any(powers <= 0):
        raise ValueError("pilot powers must be positive")
    return PilotBook(tau_p=tau_p, assignment=assignment, pilot_powers=powers)


def pilot_covariance(corr: SpatialCorrelation, book: PilotBook, sigma2: float) -> np.ndarray:
    """Psi_{t,l} = sum_{j on pilot t} eta_j tau_p Omega_jl + sigma2 I, shape (tau_p, L, N, N)."""
    L, N = corr.L, corr.N
    psi = np.zeros((book.tau_p, L, N, N), dtype=complex)
    for j in range(book.K):
        psi[book.assignment[j]] += book.pilot_powers[j] * book.tau_p * corr.omega[:, j]
    psi += sigma2 * np.eye(N)
    return psi


def receive_pilots(G: ChannelRealization, corr: SpatialCorrelation, book: PilotBook, sigma2: float,
                   seed=None, noise=None) -> PilotObservation:
    """Despread pilot observations r_{t,l} for every pilot t and AP l.

    ``noise`` lets a caller supply a unit-variance draw of shape (tau_p, L, N) so the
    same realization can be rescaled for several noise powers.
    """
    if book.K != G.K:
        raise ValueError("pilot book and channel disagree on K")
    L, N = corr.L, corr.N
    g = G.g.reshape(L, N, G.K)
    r = np.zeros((book.tau_p, L, N), dtype=complex)
    for j in range(book.K):
        r[book.assignment[j]] += np.sqrt(book.pilot_powers[j] * book.tau_p) * g[:, :, j]
    if noise is None:
        noise = complex_normal(_as_rng(seed), r.shape)
    r = r + np.sqrt(sigma2) * noise
    return PilotObservation(r=r, psi=pilot_covariance(corr, book, sigma2))


def mmse_estimate(obs: PilotObservation, corr: SpatialCorrelation, book: PilotBook) -> ChannelEstimate:
    L, K, N = corr.L, corr.K, corr.N
    g_hat = np.zeros((N * L, K), dtype=complex)
    err_cov = np.empty((L, K, N, N), dtype=complex)
    for k in range(K):
        t = book.assignment[k]
        scale = np.sqrt(book.pilot_powers[k] * book.tau_p)
        for l in range(L):
            om = corr.omega[l, k]
            psi = obs.psi[t, l]
            # Psi^{-1} Omega; Psi is Hermitian so (Omega Psi^{-1})^H = Psi^{-1} Omega
            psi_inv_om = np.linalg.solve(psi, om)
            a = psi_inv_om.conj().T  # Omega Psi^{-1}
            g_hat[l * N:(l + 1) * N, k] = scale * a @ obs.r[t, l]
            c = om - scale**2 * a @ om
            err_cov[l, k] = 0.5 * (c + c.conj().T)
    return ChannelEstimate(g_hat=g_hat, err_cov=err_cov)
