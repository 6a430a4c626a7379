"""Command line: ``run`` (one SNR point), ``sweep`` (SNR grid) and ``validate``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import harness, report
from .selection import SelectionPolicy, build_selection
from .validation import run_checks

log = logging.getLogger("cellfree_idd")

# flag name -> SimConfig field
_FLAGS = {
    "detector": "detectors",
    "ap_mode": "ap_modes",
    "beta_th_db": "beta_th_db",
    "d_th": "d_th",
    "list_size": "list_size",
    "ldpc_file": "ldpc_file",
    "idd_iters": "idd_iters",
    "inner_iters": "inner_iters",
    "snr_db": "snr_db",
    "trials": "trials",
    "seed": "seed",
    "workers": "workers",
}


def _add_sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat 'key = value' file with SimConfig fields")
    p.add_argument("--out", type=Path, required=True, help="CSV output path")
    p.add_argument("--detector", help="comma separated: mmse, softic, list, sic, genie")
    p.add_argument("--ap-mode", help="all, sel or both comma separated")
    p.add_argument("--beta-th-db", type=float)
    p.add_argument("--d-th", type=float)
    p.add_argument("--list-size", type=int)
    p.add_argument("--ldpc-file", help="alist parity-check matrix (default: bundled 256x128 code)")
    p.add_argument("--idd-iters", type=int)
    p.add_argument("--inner-iters", type=int)
    p.add_argument("--snr-db", help="comma separated SNR values in dB")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, repeatable")
    p.add_argument("--dump-dir", type=Path,
                   help="write beta, positions, serving masks and channel estimates of the first trial as CSV")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figures next to the CSV")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    ap = argparse.ArgumentParser(prog="cellfree-idd", parents=[common],
                                 description="Cell-free massive MIMO uplink IDD link simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", parents=[common], help="simulate a single SNR point")
    _add_sim_args(run)
    sw = sub.add_parser("sweep", parents=[common], help="simulate the SNR grid")
    _add_sim_args(sw)
    sw.add_argument("--plot-script", type=Path, help="also write a gnuplot script for the CSV")
    val = sub.add_parser("validate", parents=[common], help="run the built-in property checks")
    val.add_argument("--seed", type=int, default=0)
    return ap


def config_from_args(args) -> harness.SimConfig:
    over = {}
    for flag, key in _FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = str(v) if isinstance(v, str) else v
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v
    return harness.load_config(args.config, **over)


def dump_trial(cfg: harness.SimConfig, outdir: Path) -> list[Path]:
    """CSV views of the first trial: rows are APs (or antennas), columns UEs."""
    outdir.mkdir(parents=True, exist_ok=True)
    code = harness._code(cfg.ldpc_file)
    draw = harness.draw_trial(cfg, cfg.seed, code)
    sigma2 = harness._noise_power(cfg, draw, cfg.powers(), float(cfg.snr_db[0]))
    est = harness.estimate_channel(cfg, draw, sigma2)
    files = {
        "beta.csv": draw.lsf.beta,
        "beta_db.csv": draw.lsf.beta_db,
        "ap_positions.csv": draw.geometry.ap_positions,
        "ue_positions.csv": draw.geometry.ue_positions,
        "g_hat_real.csv": est.g_hat.real,
        "g_hat_imag.csv": est.g_hat.imag,
    }
    for mode in cfg.ap_modes:
        mask = build_selection(draw.lsf.beta, SelectionPolicy(mode, cfg.beta_th_db), cfg.N)
        files[f"mask_{mode}.csv"] = mask.serve.astype(int)
    out = []
    for name, arr in files.items():
        p = outdir / name
        fmt = "%d" if arr.dtype.kind in "iub" else "%.17g"
        np.savetxt(p, arr, delimiter=",", fmt=fmt)
        out.append(p)
    return out


def _simulate(args, single: bool) -> int:
    cfg = config_from_args(args)
    if single and len(cfg.snr_db) != 1:
        raise ValueError(f"run takes one SNR point, got {len(cfg.snr_db)} (use --snr-db or sweep)")
    if args.dump_dir:
        for p in dump_trial(cfg, args.dump_dir):
            log.info("wrote %s", p)
    t0 = time.perf_counter()
    records = harness.sweep(cfg)
    log.info("%d trials in %.1f s", cfg.trials, time.perf_counter() - t0)
    script = getattr(args, "plot_script", None)
    for p in report.write_outputs(records, args.out, script, figures=not args.no_figures):
        print(p)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    try:
        if args.cmd == "validate":
            results = run_checks(args.seed)
            for r in results:
                print(r.line())
            return 0 if all(r.ok for r in results) else 1
        return _simulate(args, single=args.cmd == "run")
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
