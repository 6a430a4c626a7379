"""Fast self-checks run by ``cellfree-idd validate``.

Each check builds a small random system, compares a production code path with an
independent reference evaluation and returns a :class:`CheckResult`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import detectors as det
from . import geometry as geo
from .constellation import qpsk, soft_symbols
from .estimation import assign_pilots, mmse_estimate, receive_pilots
from .harness import snr_to_noise
from .idd import extrinsic_llr
from .ldpc import box_plus, decode, load_code
from .list_detector import SacConfig, list_detect, sequential_soft_ic_detect
from .selection import SelectionPolicy, build_selection


@dataclass
class System:
    geom: geo.NetworkGeometry
    lsf: geo.LargeScaleCoefficients
    corr: geo.SpatialCorrelation
    G: geo.ChannelRealization
    book: object
    est: object
    sigma2: float
    rho: np.ndarray


def random_system(seed=0, L=8, K=4, N=2, tau_p=None, snr_db=10.0, r=0.5, area=400.0, rho=1.0,
                  pilot_seed=None) -> System:
    """A small cell-free network with an MMSE channel estimate at the given SNR."""
    rng = np.random.default_rng(seed)
    geom = geo.place_network(rng, L, K, N, area)
    lsf = geo.large_scale_fading(geom, rng)
    corr = geo.spatial_correlation(lsf, N, r)
    G = geo.draw_channel(corr, rng)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (K,)).copy()
    sigma2 = snr_to_noise(G.g, rho, 10 ** (snr_db / 10))
    book = assign_pilots(K, tau_p or K, pilot_seed)
    obs = receive_pilots(G, corr, book, sigma2, rng)
    est = mmse_estimate(obs, corr, book)
    return System(geom, lsf, corr, G, book, est, sigma2, rho)


def random_profile(rng, K, T, rho, scale=2.0):
    llr = rng.normal(0.0, scale, size=(K, 2 * T))
    return det.InterferenceProfile.from_stats(soft_symbols(llr, qpsk()), rho)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}: {self.detail}"


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def check_filter_algebra(seed=0) -> CheckResult:
    s = random_system(seed, L=6, K=4, N=2)
    rng = np.random.default_rng(seed)
    prof = random_profile(rng, 4, 3, s.rho)
    full = build_selection(s.lsf.beta, SelectionPolicy("all"), 2)
    sel = build_selection(s.lsf.beta, SelectionPolicy("sel", float(np.median(s.lsf.beta_db))), 2)
    errs = [_rel(det.soft_ic_filters(s.est, m, prof, s.sigma2), det.filters_direct(s.est, m, prof, s.sigma2))
            for m in (full, sel)]
    errs.append(_rel(det.soft_ic_filters(s.est, full, prof, s.sigma2)[1],
                     det.all_aps_filter(1, s.est, prof, s.sigma2)))
    p0 = det.InterferenceProfile.first_iteration(s.rho)
    errs.append(_rel(det.soft_ic_filters(s.est, sel, p0, s.sigma2)[:, 0],
                     det.linear_mmse_filters(s.est, sel, s.rho, s.sigma2)))
    worst = max(errs)
    return CheckResult("filter algebra", worst < 1e-10, f"max relative deviation {worst:.1e}")


def check_estimation(seed=0, draws=2000) -> CheckResult:
    s = random_system(seed, L=4, K=3, N=2, tau_p=2, pilot_seed=None)
    rng = np.random.default_rng(seed + 1)
    err = np.zeros(s.est.err_cov.shape[:2])
    for _ in range(draws):
        G = geo.draw_channel(s.corr, rng)
        est = mmse_estimate(receive_pilots(G, s.corr, s.book, s.sigma2, rng), s.corr, s.book)
        d = (G.g - est.g_hat).reshape(s.geom.L, s.geom.N, -1)
        err += np.sum(np.abs(d) ** 2, axis=1)
    err /= draws
    ref = np.trace(s.est.err_cov, axis1=-2, axis2=-1).real
    worst = float(np.max(np.abs(err / ref - 1)))
    return CheckResult("MMSE estimation error", worst < 0.1, f"max relative MSE gap {worst:.3f} over {draws} draws")


def check_llr(seed=0) -> CheckResult:
    const = qpsk()
    rng = np.random.default_rng(seed)
    n = 200
    u = rng.normal(size=n) + 1j * rng.normal(size=n)
    om = rng.normal(size=n) + 1j * rng.normal(size=n)
    k2 = rng.uniform(0.1, 3.0, n)
    pri = rng.normal(0, 3, (n, 2))
    got = extrinsic_llr(u, om, k2, pri, const)
    ref = np.empty_like(got)
    for i, b in itertools.product(range(n), range(2)):
        num = den = 0.0
        for q, a in enumerate(const.points):
            lab = const.bit_labels[q]
            p = np.prod([1 / (1 + np.exp(pri[i, j] * (2 * lab[j] - 1))) for j in range(2) if j != b])
            lik = np.exp(-abs(u[i] - om[i] * a) ** 2 / k2[i]) * p
            if lab[b] == 0:
                num += lik
            else:
                den += lik
        ref[i, b] = np.log(num) - np.log(den)
    worst = float(np.max(np.abs(got - ref)))
    return CheckResult("extrinsic LLR", worst < 1e-9, f"max deviation from marginalization {worst:.1e}")


def check_box_plus(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(0, 5, (3, 500))
    exact = np.log((1 + np.exp(a + b)) / (np.exp(a) + np.exp(b)))
    e1 = float(np.max(np.abs(box_plus(a, b) - exact)))
    e2 = float(np.max(np.abs(box_plus(box_plus(a, b), c) - box_plus(a, box_plus(b, c)))))
    e3 = float(np.max(np.abs(box_plus(a, np.inf) - a)))
    ok = e1 < 1e-12 and e2 < 1e-12 and e3 == 0.0
    return CheckResult("box-plus", ok, f"identity {e1:.1e}, associativity {e2:.1e}, neutral {e3:.1e}")


def check_ldpc(seed=0) -> CheckResult:
    code = load_code()
    rng = np.random.default_rng(seed)
    msg = rng.integers(0, 2, (16, code.k), dtype=np.uint8)
    cw = code.encode(msg)
    res = decode(8.0 * (1 - 2.0 * cw), code, 10)
    ok = bool(np.all(res.bits == cw) and np.all(res.iterations == 1) and np.all(code.is_codeword(cw)))
    return CheckResult("LDPC noiseless decode", ok, f"{code.n}x{code.m} code, rate {code.rate:.2f}")


def check_selection(seed=0) -> CheckResult:
    s = random_system(seed)
    a = build_selection(s.lsf.beta, SelectionPolicy("all"), 2)
    b = build_selection(s.lsf.beta, SelectionPolicy("sel", -np.inf), 2)
    masters = build_selection(s.lsf.beta, SelectionPolicy("sel", np.inf), 2).serve.sum(axis=0)
    ok = np.array_equal(a.serve, b.serve) and np.all(masters == 1)
    return CheckResult("AP selection", bool(ok), "threshold -inf equals all APs; +inf keeps one master per UE")


def check_list_degeneracy(seed=0, frames=20) -> CheckResult:
    const = qpsk()
    rng = np.random.default_rng(seed)
    same = True
    for f in range(frames):
        s = random_system(seed + f, L=6, K=4, N=1, snr_db=5.0)
        mask = build_selection(s.lsf.beta, SelectionPolicy("all"), 1)
        syms = const.points[rng.integers(0, 4, (4, 8))]
        y = s.G.g @ (np.sqrt(s.rho)[:, None] * syms) + np.sqrt(s.sigma2) * geo.complex_normal(rng, (6, 8))
        prof = random_profile(rng, 4, 8, s.rho) if f % 2 else det.InterferenceProfile.first_iteration(s.rho)
        a = list_detect(y, s.est, mask, SacConfig(d_th=np.inf), prof, s.sigma2, const)
        b = sequential_soft_ic_detect(y, s.est, mask, prof, s.sigma2, const)
        same &= np.array_equal(a.s_tilde, b.s_tilde) and np.array_equal(a.hard, b.hard)
    return CheckResult("list detector degeneracy", bool(same), f"d_th=inf equals sequential soft-IC on {frames} frames")


CHECKS = (check_filter_algebra, check_estimation, check_llr, check_box_plus, check_ldpc, check_selection,
          check_list_degeneracy)


def run_checks(seed=0) -> list[CheckResult]:
    out = []
    for fn in CHECKS:
        try:
            out.append(fn(seed))
        except Exception as exc:  # report, keep going
            out.append(CheckResult(fn.__name__.removeprefix("check_"), False, f"{type(exc).__name__}: {exc}"))
    return out
