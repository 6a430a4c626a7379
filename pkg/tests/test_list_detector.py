import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellfree_idd import detectors as det
from cellfree_idd import geometry as geo
from cellfree_idd import list_detector as ld
from cellfree_idd.constellation import qpsk
from cellfree_idd.estimation import ChannelEstimate
from cellfree_idd.selection import SelectionMask, SelectionPolicy, build_selection
from cellfree_idd.validation import random_profile, random_system

C = qpsk()


def _frame(seed, L=6, K=4, N=1, T=16, snr_db=5.0, mode="all"):
    s = random_system(seed, L=L, K=K, N=N, snr_db=snr_db)
    rng = np.random.default_rng(seed)
    th = float(np.median(s.lsf.beta_db))
    mask = build_selection(s.lsf.beta, SelectionPolicy(mode, th), N)
    syms = C.points[rng.integers(0, 4, (K, T))]
    y = s.G.g @ (np.sqrt(s.rho)[:, None] * syms) + np.sqrt(s.sigma2) * geo.complex_normal(rng, (N * L, T))
    return s, mask, syms, y, rng


def test_sac_examples():
    d, nu, ok = ld.sac_reliability(C.points[2], C, 0.38)
    assert d == 0 and nu == C.points[2] and ok
    d, _, ok = ld.sac_reliability(0j, C, 0.38)
    assert d == pytest.approx(1.0) and not ok  # every unit-energy point is at distance 1
    _, _, ok = ld.sac_reliability(np.array([0j, 5 + 5j]), C, np.inf)
    assert ok.all()


@settings(max_examples=50, deadline=None)
@given(re=st.floats(-3, 3), im=st.floats(-3, 3), M=st.integers(1, 4))
def test_candidate_list_is_nearest_first(re, im, M):
    u = complex(re, im)
    cands = ld.candidate_list(u, C, M)
    assert cands.shape == (M,)
    assert cands[0] == C.quantize(u)
    dist = np.abs(u - cands)
    assert np.all(np.diff(dist) >= 0)
    others = np.setdiff1d(C.points, cands)
    if others.size:
        assert dist.max() <= np.abs(u - others).min()


def test_full_list_contains_every_point():
    assert set(ld.candidate_list(0.3 + 0.1j, C, 4)) == set(C.points)


def test_detection_order_strongest_first():
    G = np.array([[1.0, 3.0, 2.0], [0.0, 0.0, 0.0]], dtype=complex)
    est = ChannelEstimate(G, np.zeros((2, 3, 1, 1), dtype=complex))
    assert list(ld.detection_order(est, SelectionMask.all_aps(2, 3))) == [1, 2, 0]
    mask = SelectionMask(np.array([[True, False, True], [True, True, True]]))
    assert list(ld.detection_order(est, mask)) == [2, 0, 1]


def _state(s, mask, y, prof):
    w = det.soft_ic_filters(s.est, mask, prof, s.sigma2)
    b = ld._bank(w, y, s.est, prof, s.sigma2)
    return w, b, ld._initial_z(b)


def test_expand_last_layer_needs_no_completion():
    s, mask, _, y, _ = _frame(1, K=3)
    prof = det.InterferenceProfile.first_iteration(s.rho)
    _, b, z = _state(s, mask, y, prof)
    order = ld.detection_order(s.est, mask)
    phi, soft = ld.expand_candidate(C.points[0], 2, order, z, b, C)
    assert phi == {} and soft == {}


def test_expand_with_hard_slice_reproduces_plain_trajectory():
    s, mask, _, y, rng = _frame(2)
    prof = random_profile(rng, 4, 16, s.rho)
    w, b, z = _state(s, mask, y, prof)
    order = ld.detection_order(s.est, mask)
    plain = ld.sequential_soft_ic_detect(y, s.est, mask, prof, s.sigma2, C, w=w)
    k = order[0]
    phi, soft = ld.expand_candidate(plain.hard[k], 0, order, z, b, C)
    for q in order[1:]:
        assert np.array_equal(phi[q], plain.hard[q])
        assert np.array_equal(soft[q], plain.s_tilde[q])


def test_expand_matches_brute_force_redetection():
    # noiseless K=2 toy: completion of layer 2 equals slicing w_2^H (y - g_1 c)
    rng = np.random.default_rng(3)
    G = (rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))) / np.sqrt(2)
    est = ChannelEstimate(G, np.zeros((4, 2, 1, 1), dtype=complex))
    rho = np.array([1.0, 0.7])
    syms = C.points[rng.integers(0, 4, (2, 6))]
    y = G @ (np.sqrt(rho)[:, None] * syms)
    mask = SelectionMask.all_aps(4, 2)
    prof = det.InterferenceProfile.first_iteration(rho)
    w = det.soft_ic_filters(est, mask, prof, 1e-3)
    b = ld._bank(w, y, est, prof, 1e-3)
    z = ld._initial_z(b)
    order = ld.detection_order(est, mask)
    k, q = order
    cands = np.broadcast_to(C.points, (6, 4))
    phi, _ = ld.expand_candidate(cands, 0, order, z, b, C)
    for m in range(4):
        resid = y - np.outer(G[:, k], np.sqrt(rho[k]) * cands[:, m])
        u = np.einsum("n,nt->t", w[q, 0].conj(), resid) / (np.sqrt(rho[q]) * w[q, 0].conj() @ G[:, q])
        assert np.array_equal(phi[q][:, m], C.quantize(u))


def test_ml_select_examples():
    G = np.eye(2, dtype=complex)
    amp = np.ones(2)
    one = np.array([[[C.points[0]]], [[C.points[1]]]])  # (K=2, T=1, M=1)
    best, _ = ld.ml_select(one, np.zeros((2, 1)), G, np.ones(2), amp)
    assert best[0] == 0
    cands = np.stack([np.array([[C.points[i], C.points[3 - i]]]) for i in range(2)])  # (2, 1, 2)
    y = (G @ cands[:, 0, 1])[:, None]
    best, cost = ld.ml_select(cands, y, G, np.ones(2), amp)
    assert best[0] == 1 and cost[0, 1] == pytest.approx(0.0)
    # ties go to the lowest index
    tie = np.broadcast_to(cands[:, :, :1], (2, 1, 3))
    assert ld.ml_select(tie, y, G, np.ones(2), amp)[0][0] == 0


@pytest.mark.parametrize("mode", ["all", "sel"])
def test_list_residual_not_above_plain(mode):
    # containment: with M = 4 the plain decision vector is one of the evaluated candidates
    for seed in range(10):
        s, mask, _, y, rng = _frame(10 + seed, mode=mode, snr_db=0.0)
        prof = det.InterferenceProfile.first_iteration(s.rho) if seed % 2 else random_profile(rng, 4, 16, s.rho)
        res = ld.list_detect(y, s.est, mask, ld.SacConfig(0.38, 4), prof, s.sigma2, C)
        plain = ld.sequential_soft_ic_detect(y, s.est, mask, prof, s.sigma2, C)
        am = mask.antenna_mask()
        amp = np.sqrt(s.rho)[:, None]
        for t in np.flatnonzero(res.branch_layer >= 0):
            k = res.order[res.branch_layer[t]]
            r_list = np.sum(np.abs(am[k] * (y[:, t] - s.est.g_hat @ (amp[:, 0] * res.hard[:, t]))) ** 2)
            r_plain = np.sum(np.abs(am[k] * (y[:, t] - s.est.g_hat @ (amp[:, 0] * plain.hard[:, t]))) ** 2)
            assert r_list <= r_plain * (1 + 1e-12)


def test_infinite_threshold_equals_sequential():
    for seed in range(20):
        s, mask, _, y, rng = _frame(30 + seed, mode="sel" if seed % 2 else "all")
        prof = random_profile(rng, 4, 16, s.rho)
        a = ld.list_detect(y, s.est, mask, ld.SacConfig(np.inf), prof, s.sigma2, C)
        b = ld.sequential_soft_ic_detect(y, s.est, mask, prof, s.sigma2, C)
        assert np.array_equal(a.s_tilde, b.s_tilde) and np.array_equal(a.hard, b.hard)
        assert np.all(a.branch_layer == -1)


def test_zero_threshold_branches_everywhere():
    s, mask, _, y, _ = _frame(4)
    prof = det.InterferenceProfile.first_iteration(s.rho)
    res = ld.list_detect(y, s.est, mask, ld.SacConfig(0.0), prof, s.sigma2, C)
    assert np.all(res.branch_layer == 0)
    assert np.all(np.isin(res.hard, C.points))
    assert np.all(np.isfinite(res.s_tilde))


def test_filter_builds_equal_K_regardless_of_branching():
    s, mask, _, y, _ = _frame(5)
    prof = det.InterferenceProfile.first_iteration(s.rho)
    for d_th in (0.0, 0.38, np.inf):
        assert ld.list_detect(y, s.est, mask, ld.SacConfig(d_th), prof, s.sigma2, C).filter_builds == 4


def test_list_detect_deterministic():
    s, mask, _, y, rng = _frame(6)
    prof = random_profile(rng, 4, 16, s.rho)
    a = ld.list_detect(y, s.est, mask, ld.SacConfig(), prof, s.sigma2, C)
    b = ld.list_detect(y, s.est, mask, ld.SacConfig(), prof, s.sigma2, C)
    assert np.array_equal(a.hard, b.hard) and np.array_equal(a.branch_layer, b.branch_layer)


def test_single_vector_input():
    s, mask, _, y, _ = _frame(7, T=1)
    prof = det.InterferenceProfile.first_iteration(s.rho)
    res = ld.list_detect(y[:, 0], s.est, mask, ld.SacConfig(), prof, s.sigma2, C)
    assert res.hard.shape == (4, 1)


def test_prior_aware_slice_follows_strong_priors():
    # with a confident prior on a point the decision follows it even if u lands elsewhere
    s, mask, syms, y, _ = _frame(8, snr_db=-10.0)
    llr = np.repeat(30.0 * (1 - 2 * C.demodulate_hard(syms).astype(float)).reshape(4, 16, 2), 1, axis=0)
    from cellfree_idd.constellation import soft_symbols
    prof = det.InterferenceProfile.from_stats(soft_symbols(llr.reshape(4, 32), C), s.rho)
    res = ld.sequential_soft_ic_detect(y, s.est, mask, prof, s.sigma2, C)
    assert np.array_equal(res.hard, syms)


def test_config_validation():
    with pytest.raises(ValueError):
        ld.SacConfig(d_th=-1)
    with pytest.raises(ValueError):
        ld.SacConfig(M=0)
