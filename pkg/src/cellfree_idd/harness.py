"""Monte-Carlo driver: configuration, per-trial link simulation and SNR sweeps."""

from __future__ import annotations

import dataclasses
import logging
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import geometry as geo
from .constellation import qpsk
from .estimation import ChannelEstimate, assign_pilots, mmse_estimate, receive_pilots
from .idd import DETECTORS, Frame, idd_loop
from .ldpc import LdpcCode, load_code
from .list_detector import SacConfig
from .selection import ALL_APS, APS_SEL, SelectionPolicy, build_selection

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    # geometry and propagation
    area_side_m: float = 1000.0
    L: int = 32
    N: int = 1
    K: int = 8
    corr_r: float = 0.0
    shadow_std_db: float = 4.0
    fixed_geometry: bool = False
    # coherence block and pilots
    tau_p: int = 10
    tau_c: int = 200
    tau_u: int = 190
    pilot_power: float = 0.1
    rho: float = 1.0
    ue_powers: tuple = ()  # per-UE data powers; empty -> rho for every UE
    perfect_csi: bool = False
    # code
    ldpc_file: str = ""
    # receiver
    detectors: tuple = ("mmse", "softic", "list")
    ap_modes: tuple = (ALL_APS, APS_SEL)
    beta_th_db: float = -60.0
    d_th: float = 0.38
    list_size: int = 4
    idd_iters: int = 3
    inner_iters: int = 10
    residual_mui: bool = False
    # experiment
    snr_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    snr_normalization: str = "instantaneous"
    trials: int = 1000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.tau_p + self.tau_u > self.tau_c:
            raise ValueError("tau_p + tau_u must not exceed tau_c")
        for d in self.detectors:
            if d not in DETECTORS:
                raise ValueError(f"unknown detector {d!r}")
        for m in self.ap_modes:
            if m not in (ALL_APS, APS_SEL):
                raise ValueError(f"unknown AP mode {m!r}")
        if self.snr_normalization not in ("instantaneous", "average"):
            raise ValueError("snr_normalization must be 'instantaneous' or 'average'")
        if self.idd_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if min(self.L, self.N, self.K) < 1:
            raise ValueError("L, N and K must be >= 1")
        if self.ue_powers and len(self.ue_powers) != self.K:
            raise ValueError("ue_powers needs one entry per UE")
        if self.trials < 0:
            raise ValueError("trials must be >= 0")

    def powers(self) -> np.ndarray:
        p = np.array(self.ue_powers, dtype=float) if self.ue_powers else np.full(self.K, self.rho)
        if np.any(p <= 0):
            raise ValueError("data powers must be positive")
        return p

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def _convert(name: str, raw: str):
    default = {f.name: f.default for f in dataclasses.fields(SimConfig)}[name]
    raw = raw.strip()
    if isinstance(default, bool):
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ValueError(f"{name}: not a boolean: {raw!r}") from None
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.replace(";", ",").split(",") if s.strip()]
        if name in ("snr_db", "ue_powers"):
            return tuple(float(s) for s in items)
        return tuple(items)
    return raw


def parse_overrides(pairs: dict) -> dict:
    names = {f.name for f in dataclasses.fields(SimConfig)}
    out = {}
    for key, val in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in names:
            raise ValueError(f"unknown config key {key!r}")
        out[key] = _convert(key, val) if isinstance(val, str) else val
    return out


def load_config(path=None, **overrides) -> SimConfig:
    """Read a flat ``key = value`` file (``#`` starts a comment) and apply overrides."""
    pairs = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            pairs[key.strip()] = val.strip()
    kw = parse_overrides(pairs)
    kw.update(parse_overrides(overrides))
    return SimConfig(**kw)


def dump_config(cfg: SimConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


@lru_cache(maxsize=8)
def _code(path: str) -> LdpcCode:
    return load_code(path or None)


def snr_to_noise(g: np.ndarray, rho, snr_linear: float) -> float:
    """Noise power giving tr(G diag(rho) G^H) / (sigma2 N L K) = snr."""
    if not snr_linear > 0:
        raise ValueError("snr must be positive")
    NL, K = g.shape
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (K,))
    power = float(np.sum(np.abs(g) ** 2 * rho))
    if power <= 0:
        raise ValueError("zero channel")
    return power / (snr_linear * NL * K)


def measured_snr(g: np.ndarray, rho, sigma2: float) -> float:
    NL, K = g.shape
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (K,))
    return float(np.sum(np.abs(g) ** 2 * rho)) / (sigma2 * NL * K)


@dataclass
class TrialDraw:
    """Everything random about one coherence block, before the noise level is fixed."""

    geometry: geo.NetworkGeometry
    lsf: geo.LargeScaleCoefficients
    corr: geo.SpatialCorrelation
    G: geo.ChannelRealization
    book: object
    pilot_noise: np.ndarray
    messages: np.ndarray
    symbols: np.ndarray
    data_noise: np.ndarray


def draw_trial(cfg: SimConfig, seed: int, code: LdpcCode) -> TrialDraw:
    const = qpsk()
    ss = np.random.SeedSequence(seed)
    s_geo, s_shadow, s_fast, s_pilot, s_pnoise, s_bits, s_dnoise = ss.spawn(7)
    if cfg.fixed_geometry:
        s_geo, s_shadow = np.random.SeedSequence([cfg.seed, 0x6E0]).spawn(2)
    geom = geo.place_network(np.random.default_rng(s_geo), cfg.L, cfg.K, cfg.N, cfg.area_side_m)
    lsf = geo.large_scale_fading(geom, np.random.default_rng(s_shadow), cfg.shadow_std_db)
    corr = geo.spatial_correlation(lsf, cfg.N, cfg.corr_r)
    G = geo.draw_channel(corr, np.random.default_rng(s_fast))
    book = assign_pilots(cfg.K, cfg.tau_p, np.random.default_rng(s_pilot), cfg.pilot_power)
    pilot_noise = geo.complex_normal(np.random.default_rng(s_pnoise), (cfg.tau_p, cfg.L, cfg.N))
    messages = np.random.default_rng(s_bits).integers(0, 2, size=(cfg.K, code.k), dtype=np.uint8)
    symbols = const.modulate(code.encode(messages))
    T = symbols.shape[1]
    if T > cfg.tau_u:
        raise ValueError(f"codeword needs {T} channel uses but tau_u = {cfg.tau_u}")
    data_noise = geo.complex_normal(np.random.default_rng(s_dnoise), (cfg.N * cfg.L, T))
    return TrialDraw(geom, lsf, corr, G, book, pilot_noise, messages, symbols, data_noise)


def _noise_power(cfg: SimConfig, draw: TrialDraw, rho: np.ndarray, snr_db: float) -> float:
    snr = 10.0 ** (snr_db / 10.0)
    if cfg.snr_normalization == "average":
        NL = cfg.N * cfg.L
        power = cfg.N * float(np.sum(draw.lsf.beta * rho))
        return power / (snr * NL * cfg.K)
    return snr_to_noise(draw.G.g, rho, snr)


def estimate_channel(cfg: SimConfig, draw: TrialDraw, sigma2: float) -> ChannelEstimate:
    if cfg.perfect_csi:
        return ChannelEstimate(g_hat=draw.G.g.copy(),
                               err_cov=np.zeros((cfg.L, cfg.K, cfg.N, cfg.N), dtype=complex))
    obs = receive_pilots(draw.G, draw.corr, draw.book, sigma2, noise=draw.pilot_noise)
    return mmse_estimate(obs, draw.corr, draw.book)


def run_trial(cfg: SimConfig, snr_db, seed: int) -> Counter:
    """Bit errors of one coherence block keyed by (snr_db, detector, ap_mode, idd_iter).

    Every detector and AP mode sees the same channel, pilots, data and noise.
    """
    code = _code(cfg.ldpc_file)
    const = qpsk()
    draw = draw_trial(cfg, seed, code)
    rho = cfg.powers()
    x = np.sqrt(rho)[:, None] * draw.symbols
    y_clean = draw.G.g @ x
    sac = SacConfig(d_th=cfg.d_th, M=cfg.list_size)
    counts: Counter = Counter()
    for snr in np.atleast_1d(snr_db):
        snr = float(snr)
        sigma2 = _noise_power(cfg, draw, rho, snr)
        est = estimate_channel(cfg, draw, sigma2)
        y = y_clean + np.sqrt(sigma2) * draw.data_noise
        for mode in cfg.ap_modes:
            mask = build_selection(draw.lsf.beta, SelectionPolicy(mode, cfg.beta_th_db), cfg.N)
            frame = Frame(y=y, est=est, mask=mask, rho=rho, sigma2=sigma2,
                          messages=draw.messages, symbols=draw.symbols)
            for d in cfg.detectors:
                res = idd_loop(frame, d, cfg.idd_iters, code, const, cfg.inner_iters, sac, cfg.residual_mui)
                for it, e in enumerate(res.errors, start=1):
                    counts[(snr, d, mode, it)] += int(e)
    return counts


def bits_per_trial(cfg: SimConfig) -> int:
    return cfg.K * _code(cfg.ldpc_file).k


@dataclass(frozen=True)
class BerRecord:
    snr_db: float
    detector: str
    ap_mode: str
    idd_iter: int
    trials: int
    bits_total: int
    bit_errors: int
    ber: float
    seed_base: int


def _trial_worker(args):
    cfg, seed = args
    return run_trial(cfg, cfg.snr_db, seed)


def trial_counts(cfg: SimConfig) -> Counter:
    """Summed error counts over trials ``seed .. seed + trials - 1``."""
    seeds = [cfg.seed + i for i in range(cfg.trials)]
    total: Counter = Counter()
    if cfg.workers > 1 and len(seeds) > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(cfg.workers) as pool:
            for c in pool.imap_unordered(_trial_worker, [(cfg, s) for s in seeds], chunksize=4):
                total.update(c)
    else:
        for i, s in enumerate(seeds):
            total.update(run_trial(cfg, cfg.snr_db, s))
            if (i + 1) % 50 == 0:
                log.info("trial %d/%d", i + 1, len(seeds))
    return total


def records_from_counts(cfg: SimConfig, counts: Counter) -> list[BerRecord]:
    nbits = cfg.trials * bits_per_trial(cfg)
    out = []
    for snr in cfg.snr_db:
        for d in cfg.detectors:
            for mode in cfg.ap_modes:
                for it in range(1, cfg.idd_iters + 1):
                    e = int(counts.get((float(snr), d, mode, it), 0))
                    out.append(BerRecord(float(snr), d, mode, it, cfg.trials, nbits, e,
                                         e / nbits if nbits else 0.0, cfg.seed))
    return out


def sweep(cfg: SimConfig) -> list[BerRecord]:
    """BER over the grid snr x detector x AP mode x IDD iteration."""
    if not cfg.snr_db:
        return []
    return records_from_counts(cfg, trial_counts(cfg))
