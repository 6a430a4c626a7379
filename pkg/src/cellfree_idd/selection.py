"""Access-point selection: master AP by largest large-scale fading plus a dB threshold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ALL_APS = "all"
APS_SEL = "sel"


@dataclass(frozen=True)
class SelectionPolicy:
    mode: str = ALL_APS
    beta_th_db: float = -60.0

    def __post_init__(self):
        if self.mode not in (ALL_APS, APS_SEL):
            raise ValueError(f"unknown AP mode {self.mode!r}")


@dataclass(frozen=True)
class SelectionMask:
    """``serve[l, k]`` is True when AP l takes part in detecting UE k.

    D_k is never materialised as a matrix; ``antenna_mask`` gives its diagonal.
    """

    serve: np.ndarray  # (L, K) bool
    N: int = 1

    @property
    def L(self) -> int:
        return self.serve.shape[0]

    @property
    def K(self) -> int:
        return self.serve.shape[1]

    def antenna_mask(self) -> np.ndarray:
        """Diagonal of every D_k, shape (K, N*L)."""
        return np.repeat(self.serve.T, self.N, axis=1)

    def matrix(self, k: int) -> np.ndarray:
        """Dense D_k; for tests and debugging only."""
        return np.diag(self.antenna_mask()[k].astype(float))

    @classmethod
    def all_aps(cls, L: int, K: int, N: int = 1) -> "SelectionMask":
        return cls(serve=np.ones((L, K), dtype=bool), N=N)


def select_master_ap(beta: np.ndarray, k: int) -> int:
    # np.argmax returns the first maximum, i.e. the lowest AP index on ties
    return int(np.argmax(beta[:, k]))


def build_selection(beta: np.ndarray, policy: SelectionPolicy, N: int = 1) -> SelectionMask:
    L, K = beta.shape
    if policy.mode == ALL_APS:
        return SelectionMask.all_aps(L, K, N)
    with np.errstate(divide="ignore"):
        beta_db = 10.0 * np.log10(beta)
    serve = beta_db >= policy.beta_th_db
    serve[np.argmax(beta, axis=0), np.arange(K)] = True
    return SelectionMask(serve=serve, N=N)


def apply_selection(mask: SelectionMask, k: int, y: np.ndarray) -> np.ndarray:
    """D_k y, applied along the first axis of ``y``."""
    m = mask.antenna_mask()[k]
    return y * m.reshape((-1,) + (1,) * (np.ndim(y) - 1))


def serving_set(mask: SelectionMask, l: int) -> set[int]:
    return {int(k) for k in np.flatnonzero(mask.serve[l])}


def fronthaul_links(mask: SelectionMask) -> int:
    """Number of APs that serve at least one UE."""
    return int(np.count_nonzero(mask.serve.any(axis=1)))
