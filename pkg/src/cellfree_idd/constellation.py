"""Constellations, bit labels and soft symbol statistics derived from a-priori LLRs.

LLR convention throughout: ``log P(b=0) / P(b=1)``; bit 0 maps to the +1 label.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

LLR_CLIP = 30.0


@dataclass(frozen=True)
class Constellation:
    points: np.ndarray  # (Q,) complex, unit average energy
    bit_labels: np.ndarray  # (Q, Mc) in {0, 1}

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_labels.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def energy(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    @cached_property
    def signs(self) -> np.ndarray:
        """+1/-1 label values s^{b_l}, shape (Q, Mc)."""
        return 1.0 - 2.0 * self.bit_labels

    @cached_property
    def _weights(self) -> np.ndarray:
        return 2 ** np.arange(self.bits_per_symbol - 1, -1, -1)

    def modulate(self, bits: np.ndarray) -> np.ndarray:
        """Map bits (..., n*Mc) to symbols (..., n); MSB first within a symbol."""
        bits = np.asarray(bits)
        grouped = bits.reshape(bits.shape[:-1] + (-1, self.bits_per_symbol))
        return self.points[grouped @ self._weights]

    def nearest(self, x: np.ndarray) -> np.ndarray:
        """Index of the closest point for every entry of ``x``."""
        return np.argmin(np.abs(np.asarray(x)[..., None] - self.points), axis=-1)

    def quantize(self, x: np.ndarray) -> np.ndarray:
        """Q(x): closest constellation point."""
        return self.points[self.nearest(x)]

    def demodulate_hard(self, x: np.ndarray) -> np.ndarray:
        lab = self.bit_labels[self.nearest(x)]
        return lab.reshape(lab.shape[:-2] + (-1,))


def qpsk() -> Constellation:
    """Gray-labelled unit-energy QPSK: (b1, b2) -> ((1-2b1) + j(1-2b2)) / sqrt(2)."""
    labels = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    signs = 1.0 - 2.0 * labels
    points = (signs[:, 0] + 1j * signs[:, 1]) / np.sqrt(2.0)
    return Constellation(points=points, bit_labels=labels)


@dataclass(frozen=True)
class SoftSymbolStats:
    mean: np.ndarray  # (K, T)
    variance: np.ndarray  # (K, T)
    priors: np.ndarray  # (K, T, Q)


def log_priors_from_llr(llr: np.ndarray, const: Constellation) -> np.ndarray:
    """log P(s) for every point, from per-bit LLRs of shape (..., Mc)."""
    lam = np.clip(np.asarray(llr, dtype=float), -LLR_CLIP, LLR_CLIP)
    # log [1 + exp(-s^b * Lambda)]^{-1} summed over the bits of each point
    return -np.sum(np.logaddexp(0.0, -lam[..., None, :] * const.signs), axis=-1)


def priors_from_llr(llr: np.ndarray, const: Constellation) -> np.ndarray:
    """P(s_j = s) for each point; bits are taken as independent within a symbol."""
    return np.exp(log_priors_from_llr(llr, const))


def symbol_mean(priors: np.ndarray, const: Constellation) -> np.ndarray:
    return priors @ const.points


def symbol_variance(priors: np.ndarray, mean, const: Constellation) -> np.ndarray:
    dev = np.abs(const.points - np.asarray(mean)[..., None]) ** 2
    return np.sum(dev * priors, axis=-1)


def soft_symbols(llr: np.ndarray, const: Constellation) -> SoftSymbolStats:
    """Symbol statistics per UE and symbol slot from frame-ordered LLRs.

    ``llr`` has shape (K, T * Mc) with the bits of symbol t at ``t*Mc : (t+1)*Mc``.
    """
    llr = np.asarray(llr, dtype=float)
    K = llr.shape[0]
    pri = priors_from_llr(llr.reshape(K, -1, const.bits_per_symbol), const)
    mean = symbol_mean(pri, const)
    return SoftSymbolStats(mean=mean, variance=symbol_variance(pri, mean, const), priors=pri)
