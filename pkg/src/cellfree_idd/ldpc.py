"""LDPC codes: progressive-edge-growth construction, systematic encoding, alist I/O,
and a flooding sum-product decoder built on the exact box-plus operator.

LLRs are ``log P(b=0)/P(b=1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

LLR_CLIP = 30.0
DEFAULT_CODE = "peg_256_128.alist"


# ---------------------------------------------------------------------------
# box-plus
# ---------------------------------------------------------------------------

def box_plus(l1, l2):
    """LLR of the XOR of two bits.

    sign(l1) sign(l2) min(|l1|, |l2|) + log(1 + e^-|l1+l2|) - log(1 + e^-|l1-l2|)
    """
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    a1, a2 = np.abs(l1), np.abs(l2)
    core = np.sign(l1) * np.sign(l2) * np.minimum(a1, a2)
    with np.errstate(invalid="ignore"):
        s = np.abs(l1 + l2)
        d = np.abs(l1 - l2)
    # inf - inf only happens for two opposite infinite inputs; both corrections vanish then
    s = np.where(np.isnan(s), np.inf, s)
    d = np.where(np.isnan(d), np.inf, d)
    out = core + np.log1p(np.exp(-s)) - np.log1p(np.exp(-d))
    return out if out.ndim else float(out)


_PAD = 1e300  # finite stand-in for +inf inside the decoder: box_plus(_PAD, x) == x


def _box_plus_finite(l1, l2):
    """box_plus for finite inputs, without the infinity bookkeeping."""
    core = np.sign(l1) * np.sign(l2) * np.minimum(np.abs(l1), np.abs(l2))
    return core + np.log1p(np.exp(-np.abs(l1 + l2))) - np.log1p(np.exp(-np.abs(l1 - l2)))


def box_plus_fold(values):
    """Box-plus of all entries along the last axis."""
    values = np.asarray(values, dtype=float)
    acc = np.full(values.shape[:-1], np.inf)
    for i in range(values.shape[-1]):
        acc = box_plus(acc, values[..., i])
    return acc


# ---------------------------------------------------------------------------
# GF(2) helpers
# ---------------------------------------------------------------------------

def gf2_rank(H: np.ndarray) -> int:
    A = (np.asarray(H) & 1).astype(np.uint8).copy()
    rank = 0
    rows, cols = A.shape
    for c in range(cols):
        piv = np.flatnonzero(A[rank:, c])
        if piv.size == 0:
            continue
        p = rank + piv[0]
        A[[rank, p]] = A[[p, rank]]
        hit = np.flatnonzero(A[:, c])
        hit = hit[hit != rank]
        A[hit] ^= A[rank]
        rank += 1
        if rank == rows:
            break
    return rank


def _systematic_form(H: np.ndarray):
    """Reduced row-echelon form of H over GF(2).

    Returns (pivots, free, P): column ``pivots[r]`` is the r-th pivot and
    ``P = rref[:, free]``, so a codeword has ``c[pivots] = P @ c[free]``.
    """
    A = (np.asarray(H) & 1).astype(np.uint8).copy()
    M, C = A.shape
    pivots = []
    r = 0
    for c in range(C):
        if r == M:
            break
        rows = r + np.flatnonzero(A[r:, c])
        if rows.size == 0:
            continue
        A[[r, rows[0]]] = A[[rows[0], r]]
        hit = np.flatnonzero(A[:, c])
        hit = hit[hit != r]
        A[hit] ^= A[r]
        pivots.append(c)
        r += 1
    if r < M:
        raise ValueError("parity-check matrix is rank deficient")
    pivots = np.asarray(pivots)
    free = np.setdiff1d(np.arange(C), pivots)
    return pivots, free, A[:, free]


# ---------------------------------------------------------------------------
# code object
# ---------------------------------------------------------------------------

@dataclass
class LdpcCode:
    """Binary LDPC code from its parity-check matrix.

    The generator is systematic: message bits occupy ``info_positions`` of the codeword.
    """

    H: np.ndarray  # (M, C) uint8
    info_positions: np.ndarray = field(init=False)
    generator: np.ndarray = field(init=False)  # (C-M, C)

    def __post_init__(self):
        self.H = (np.asarray(self.H) & 1).astype(np.uint8)
        pivots, free, P = _systematic_form(self.H)
        G = np.zeros((free.size, self.H.shape[1]), dtype=np.uint8)
        G[:, free] = np.eye(free.size, dtype=np.uint8)
        G[:, pivots] = P.T
        self.generator = G
        self.info_positions = free

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def k(self) -> int:
        return self.n - self.m

    @property
    def rate(self) -> float:
        return self.k / self.n

    @cached_property
    def _edges(self):
        chk, var = np.nonzero(self.H)
        order = np.lexsort((chk, var))  # edges grouped by variable node
        chk, var = chk[order], var[order]
        E = chk.size
        dv = np.bincount(var, minlength=self.n)
        dc = np.bincount(chk, minlength=self.m)
        # per-check edge table padded with E (points at a +inf dummy)
        chk_tab = np.full((self.m, dc.max()), E, dtype=np.int64)
        fill = np.zeros(self.m, dtype=np.int64)
        for e in range(E):
            c = chk[e]
            chk_tab[c, fill[c]] = e
            fill[c] += 1
        var_tab = np.full((self.n, dv.max()), E, dtype=np.int64)
        fill = np.zeros(self.n, dtype=np.int64)
        for e in range(E):
            v = var[e]
            var_tab[v, fill[v]] = e
            fill[v] += 1
        return chk, var, chk_tab, var_tab

    @property
    def num_edges(self) -> int:
        return int(self.H.sum())

    def encode(self, msg: np.ndarray) -> np.ndarray:
        msg = np.asarray(msg, dtype=np.uint8)
        if msg.shape[-1] != self.k:
            raise ValueError(f"message must have {self.k} bits, got {msg.shape[-1]}")
        return (msg.astype(np.int64) @ self.generator.astype(np.int64) % 2).astype(np.uint8)

    def syndrome(self, bits: np.ndarray) -> np.ndarray:
        # float matmul is exact for these sizes and uses BLAS
        return (np.asarray(bits, dtype=float) @ self._h_t).astype(np.int64) % 2

    @cached_property
    def _h_t(self) -> np.ndarray:
        return self.H.T.astype(float)

    def is_codeword(self, bits: np.ndarray) -> np.ndarray:
        return ~self.syndrome(bits).any(axis=-1)

    def message(self, bits: np.ndarray) -> np.ndarray:
        return np.asarray(bits)[..., self.info_positions]

    def girth_at_least_6(self) -> bool:
        """No two variable nodes share more than one check (no 4-cycles)."""
        H = self.H.astype(np.int64)
        overlap = H.T @ H
        np.fill_diagonal(overlap, 0)
        return bool(overlap.max() <= 1)

    def decode(self, channel_llr, max_iter: int = 10):
        return decode(channel_llr, self, max_iter)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def peg_matrix(n: int, m: int, dv: int = 3, seed=0) -> np.ndarray:
    """Progressive edge growth with constant variable degree ``dv``.

    Each new edge goes to the check node farthest from the variable node in the
    current graph; ties are broken by lowest check degree, then at random.
    """
    if not m < n:
        raise ValueError("need M < C_leng")
    rng = np.random.default_rng(seed)
    chk_adj: list[set[int]] = [set() for _ in range(m)]
    var_adj: list[set[int]] = [set() for _ in range(n)]
    deg = np.zeros(m, dtype=int)

    def pick(cands):
        cands = np.asarray(sorted(cands))
        d = deg[cands]
        best = cands[d == d.min()]
        return int(rng.choice(best))

    def farthest_checks(v):
        reached = set(var_adj[v])
        frontier = set(reached)
        while True:
            nbr_v = set().union(*(chk_adj[c] for c in frontier))
            new = set().union(*(var_adj[u] for u in nbr_v)) - reached
            if not new or len(reached | new) == m:
                return set(range(m)) - reached
            reached |= new
            frontier = new

    for v in range(n):
        for j in range(dv):
            cands = set(range(m)) if j == 0 else farthest_checks(v)
            if not cands:
                cands = set(range(m)) - var_adj[v]
            c = pick(cands)
            var_adj[v].add(c)
            chk_adj[c].add(v)
            deg[c] += 1
    H = np.zeros((m, n), dtype=np.uint8)
    for v in range(n):
        H[list(var_adj[v]), v] = 1
    return H


def build_code(n: int = 256, m: int = 128, seed=0, dv: int = 3, max_tries: int = 20) -> LdpcCode:
    """PEG code of length n with m checks; retries with the next seed if H is rank deficient."""
    for attempt in range(max_tries):
        H = peg_matrix(n, m, dv, seed + attempt)
        if gf2_rank(H) == m:
            return LdpcCode(H)
    raise ValueError(f"no full-rank PEG matrix after {max_tries} seeds")


# ---------------------------------------------------------------------------
# alist I/O
# ---------------------------------------------------------------------------

def write_alist(H: np.ndarray, path) -> None:
    H = np.asarray(H)
    m, n = H.shape
    cols = [np.flatnonzero(H[:, j]) + 1 for j in range(n)]
    rows = [np.flatnonzero(H[i]) + 1 for i in range(m)]
    dvmax = max(len(c) for c in cols)
    dcmax = max(len(r) for r in rows)
    lines = [f"{n} {m}", f"{dvmax} {dcmax}",
             " ".join(str(len(c)) for c in cols), " ".join(str(len(r)) for r in rows)]
    for c in cols:
        lines.append(" ".join(str(x) for x in list(c) + [0] * (dvmax - len(c))))
    for r in rows:
        lines.append(" ".join(str(x) for x in list(r) + [0] * (dcmax - len(r))))
    Path(path).write_text("\n".join(lines) + "\n")


def read_alist(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    vals = [int(t) for t in tokens]
    n, m = vals[0], vals[1]
    dvmax, dcmax = vals[2], vals[3]
    pos = 4
    col_deg = vals[pos:pos + n]
    pos += n
    pos += m  # row degrees are implied by the column lists
    H = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        entries = vals[pos:pos + dvmax]
        pos += dvmax
        for r in entries[:col_deg[j]]:
            H[r - 1, j] = 1
    return H


def load_code(path=None) -> LdpcCode:
    """Code from an alist file; the bundled (256, 128) PEG code when ``path`` is None."""
    if path is None:
        with resources.as_file(resources.files("cellfree_idd") / "data" / DEFAULT_CODE) as p:
            return LdpcCode(read_alist(p))
    return LdpcCode(read_alist(path))


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------

@dataclass
class DecodeResult:
    bits: np.ndarray  # (..., C) hard decisions
    posterior: np.ndarray  # (..., C) a-posteriori LLRs
    converged: np.ndarray  # (...) parity satisfied
    iterations: np.ndarray  # (...) iterations run
    channel: np.ndarray  # (..., C) saturated decoder input

    @property
    def extrinsic(self) -> np.ndarray:
        """Posterior minus the (saturated) channel input."""
        return self.posterior - self.channel


def _check_update(v2c: np.ndarray, chk_tab: np.ndarray) -> np.ndarray:
    """Leave-one-out box-plus at every check node via prefix/suffix folds."""
    B = v2c.shape[0]
    padded = np.concatenate([v2c, np.full((B, 1), _PAD)], axis=1)
    x = padded[:, chk_tab]  # (B, M, dcmax)
    d = x.shape[-1]
    pre = np.empty_like(x)
    suf = np.empty_like(x)
    pre[..., 0] = _PAD
    suf[..., d - 1] = _PAD
    for i in range(1, d):
        pre[..., i] = _box_plus_finite(pre[..., i - 1], x[..., i - 1])
        suf[..., d - 1 - i] = _box_plus_finite(suf[..., d - i], x[..., d - i])
    ext = _box_plus_finite(pre, suf)
    c2v = np.empty((B, v2c.shape[1] + 1))
    c2v[:, chk_tab.reshape(-1)] = ext.reshape(B, -1)
    return np.clip(c2v[:, :-1], -LLR_CLIP, LLR_CLIP)


def decode(channel_llr, code: LdpcCode, max_iter: int = 10) -> DecodeResult:
    """Flooding box-plus sum-product decoding of one frame or a batch (..., C).

    Frames stop updating once their hard decisions satisfy every check.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    llr = np.clip(np.asarray(channel_llr, dtype=float), -LLR_CLIP, LLR_CLIP)
    shape = llr.shape
    lch = llr.reshape(-1, code.n)
    B = lch.shape[0]
    chk, var, chk_tab, var_tab = code._edges
    E = chk.size
    v2c = lch[:, var].copy()
    c2v = np.zeros((B, E))
    post = lch.copy()
    active = np.ones(B, dtype=bool)
    converged = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    for it in range(1, max_iter + 1):
        a = np.flatnonzero(active)
        c2v_a = _check_update(v2c[a], chk_tab)
        c2v[a] = c2v_a
        padded = np.concatenate([c2v_a, np.zeros((a.size, 1))], axis=1)
        post_a = lch[a] + padded[:, var_tab].sum(axis=-1)
        post[a] = post_a
        v2c[a] = np.clip(post_a[:, var] - c2v_a, -LLR_CLIP, LLR_CLIP)
        iters[a] = it
        ok = code.is_codeword((post_a < 0).astype(np.uint8))
        converged[a] = ok
        active[a[ok]] = False
        if not active.any():
            break
    return DecodeResult(
        bits=(post < 0).astype(np.uint8).reshape(shape),
        posterior=post.reshape(shape),
        converged=converged.reshape(shape[:-1]),
        iterations=iters.reshape(shape[:-1]),
        channel=llr,
    )
