"""BER tables: CSV round trip, a gnuplot script and matplotlib figures."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from .harness import BerRecord

FIELDS = ("snr_db", "detector", "ap_mode", "idd_iter", "trials", "bits_total", "bit_errors", "ber", "seed_base")

LABELS = {
    "mmse": "soft MMSE",
    "softic": "MMSE-soft-IC",
    "list": "List-MMSE-soft-IC",
    "sic": "sequential soft-IC",
    "genie": "perfect IC",
}
MODE_LABELS = {"all": "All APs", "sel": "APs selection"}
MARKERS = {"mmse": "o", "softic": "s", "list": "^", "sic": "v", "genie": "x"}


def write_csv(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for r in records:
            # repr keeps floats exact on reading back
            w.writerow([repr(r.snr_db), r.detector, r.ap_mode, r.idd_iter, r.trials, r.bits_total,
                        r.bit_errors, repr(r.ber), r.seed_base])
    return path


def read_csv(path) -> list[BerRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            out.append(BerRecord(
                snr_db=float(row["snr_db"]), detector=row["detector"], ap_mode=row["ap_mode"],
                idd_iter=int(row["idd_iter"]), trials=int(row["trials"]), bits_total=int(row["bits_total"]),
                bit_errors=int(row["bit_errors"]), ber=float(row["ber"]), seed_base=int(row["seed_base"])))
    return out


def curves(records) -> dict:
    """{(detector, ap_mode, idd_iter): (snr array, ber array)} sorted by SNR."""
    acc = defaultdict(list)
    for r in records:
        acc[(r.detector, r.ap_mode, r.idd_iter)].append((r.snr_db, r.ber))
    out = {}
    for key, pts in acc.items():
        pts.sort()
        snr, ber = zip(*pts)
        out[key] = (np.array(snr), np.array(ber))
    return out


def _label(det, mode, it, with_iter=True) -> str:
    s = f"{LABELS.get(det, det)}, {MODE_LABELS.get(mode, mode)}"
    return f"{s}, IDD={it}" if with_iter else s


def plot_script(records, csv_path, image="ber.png") -> str:
    """gnuplot commands drawing every curve straight from the CSV columns."""
    csv_name = Path(csv_path).as_posix()
    lines = [
        "# BER versus SNR, one curve per detector / AP mode / IDD iteration",
        "set datafile separator ','",
        "set terminal pngcairo size 900,650",
        f"set output '{image}'",
        "set logscale y",
        "set format y '10^{%L}'",
        "set xlabel 'SNR [dB]'",
        "set ylabel 'BER'",
        "set grid",
        "set key outside right",
    ]
    plots = []
    for det, mode, it in sorted(curves(records)):
        # column 2 = detector, 3 = ap_mode, 4 = idd_iter, 1 = snr_db, 8 = ber
        sel = f'(strcol(2) eq "{det}" && strcol(3) eq "{mode}" && $4 == {it} && $8 > 0 ? $8 : 1/0)'
        plots.append(f"'{csv_name}' every ::1 using 1:{sel} with linespoints title '{_label(det, mode, it)}'")
    if plots:
        lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def plot_ber(records, path, idd_iter=None, title=None) -> Path:
    """Log-scale BER-vs-SNR figure; solid lines for All APs, dashed for AP selection.

    With ``idd_iter`` set only that iteration is drawn, otherwise every
    iteration gets its own curve (lighter for earlier ones).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = curves(records)
    iters = sorted({k[2] for k in data})
    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    known = list(LABELS)
    dets = sorted({k[0] for k in data}, key=lambda d: (known.index(d) if d in known else len(known), d))
    for (det, mode, it), (snr, ber) in sorted(data.items()):
        if idd_iter is not None and it != idd_iter:
            continue
        keep = ber > 0
        if not keep.any():
            continue
        alpha = 1.0 if idd_iter is not None else 0.35 + 0.65 * (it / max(iters))
        ax.semilogy(snr[keep], ber[keep], linestyle="-" if mode == "all" else "--",
                    marker=MARKERS.get(det, "."), color=colors[dets.index(det) % len(colors)], alpha=alpha,
                    label=_label(det, mode, it, with_iter=idd_iter is None))
    ax.set_xlabel("SNR [dB]")
    ax.set_ylabel("BER")
    ax.grid(True, which="both", alpha=0.3)
    if title:
        ax.set_title(title)
    if ax.lines:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_outputs(records, csv_path, plot_script_path=None, figures=True) -> list[Path]:
    """CSV, optional gnuplot script, and PNG figures next to the CSV."""
    csv_path = write_csv(records, csv_path)
    written = [csv_path]
    if plot_script_path is not None:
        p = Path(plot_script_path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(plot_script(records, csv_path, image=csv_path.with_suffix(".gp.png").name))
        written.append(p)
    if figures and records:
        stem = csv_path.with_suffix("")
        written.append(plot_ber(records, f"{stem}_ber.png", title="BER vs SNR, all IDD iterations"))
        iters = sorted({r.idd_iter for r in records})
        last = 2 if 2 in iters else iters[-1]
        written.append(plot_ber(records, f"{stem}_ber_idd{last}.png", idd_iter=last,
                                title=f"BER vs SNR, IDD={last}"))
    return written
