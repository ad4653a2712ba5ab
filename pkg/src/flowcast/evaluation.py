"""Error metrics, repeated-trial statistics, and report files.

run_trials repeats the evaluation protocol: draw a random test subset
without replacement, apply a fresh noise draw to the features, predict,
and record the scalar RMSE (per-target RMSE averaged over targets).  The
mean/std over trials summarize accuracy and consistency.

Report writers emit deterministic CSV/SVG/JSON artifacts.
"""

import json
import pathlib
from dataclasses import dataclass

import numpy as np

from . import estimators, measurement


def rmse(pred, truth):
    """Per-feature RMSE and its mean over features."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    per_feature = np.sqrt(np.mean((pred - truth) ** 2, axis=0))
    return per_feature, float(np.mean(per_feature))


@dataclass(frozen=True)
class TrialReport:
    kind: str
    trials: int
    rmse_mean: float
    rmse_std: float
    per_feature_rmse: np.ndarray
    subset_size: int
    seed: int


def run_trials(est, ds, trials, subset_size, noise, seed=0):
    """Repeated random-subset evaluation with fresh noise per trial."""
    rows = ds.rows("test")
    if not 1 <= subset_size <= len(rows):
        raise ValueError(f"subset_size must lie in [1, {len(rows)}]")
    if trials < 1:
        raise ValueError("trials must be at least 1")

    scalars = np.empty(trials)
    per_feature_acc = np.zeros(ds.y.shape[1])
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE7, t]))
        subset = rows[rng.choice(len(rows), size=subset_size, replace=False)]
        trial_noise = noise.reseeded(_trial_seed(seed, t)) if noise is not None else None
        z = measurement.noisy_features(ds.z[subset], ds.channels, trial_noise,
                                       ds.row_ids[subset])
        pred = estimators.predict(est, z)
        per_feature, scalar = rmse(pred, ds.y[subset])
        scalars[t] = scalar
        per_feature_acc += per_feature
    return TrialReport(kind=est.kind, trials=trials,
                       rmse_mean=float(scalars.mean()),
                       rmse_std=float(scalars.std()),
                       per_feature_rmse=per_feature_acc / trials,
                       subset_size=subset_size, seed=int(seed))


def _trial_seed(seed, t):
    return int(np.random.SeedSequence([int(seed), 0xA9, int(t)]).generate_state(1)[0])


# --------------------------------------------------------------------------
# report files

def _fmt(x):
    return repr(float(x))


def table1_report(table, path):
    """Noise-family study: rows v_mag/v_ang/flow/injection x columns
    none/gaussian/gmm."""
    units = {"v_mag": "pu", "v_ang": "deg", "flow": "MW", "injection": "MW"}
    lines = ["quantity,unit,none,gaussian,gmm"]
    for row in ("v_mag", "v_ang", "flow", "injection"):
        cols = table[row]
        lines.append(f"{row},{units[row]},{_fmt(cols['none'])},"
                     f"{_fmt(cols['gaussian'])},{_fmt(cols['gmm'])}")
    _write_lines(path, lines)


def table3_report(reports, path):
    """Model comparison: one row per estimator kind, n/a rows preserved."""
    lines = ["model,rmse_mean_mw,rmse_std_mw,trials,subset_size"]
    for kind in ("lr", "svr", "indirect", "direct", "pic"):
        rep = reports.get(kind)
        if rep is None:
            lines.append(f"{kind},n/a,n/a,n/a,n/a")
        else:
            lines.append(f"{kind},{_fmt(rep.rmse_mean)},{_fmt(rep.rmse_std)},"
                         f"{rep.trials},{rep.subset_size}")
    _write_lines(path, lines)


def sweep_report(results, csv_path, svg_path):
    """Placement-search trajectories: CSV plus a line chart."""
    lines = ["model,step,pmu_count,adopted_bus,val_rmse_mw"]
    series = {}
    for res in results:
        n0 = len(res.start_buses)
        pts = []
        for i, (bus, err) in enumerate(res.sequence):
            lines.append(f"{res.kind},{i + 1},{n0 + i + 1},{bus},{_fmt(err)}")
            pts.append((n0 + i + 1, err))
        series[res.kind] = pts
    _write_lines(csv_path, lines)
    write_line_chart(svg_path, series, x_label="PMU count",
                     y_label="validation RMSE (MW)")


def run_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(entries, f, indent=2, sort_keys=True)


def _write_lines(path, lines):
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# hand-rolled SVG chart (matplotlib output embeds timestamps; this stays
# byte-identical across runs)

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def write_line_chart(path, series, x_label="", y_label="", size=(640, 420)):
    w, h = size
    ml, mr, mt, mb = 60, 20, 20, 45
    pw, ph = w - ml - mr, h - mt - mb

    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        xs, ys = [0, 1], [0, 1]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1
    y_lo, y_hi = y_lo - 0.05 * (y_hi - y_lo), y_hi + 0.05 * (y_hi - y_lo)

    def sx(x):
        return ml + pw * (x - x_lo) / (x_hi - x_lo)

    def sy(y):
        return mt + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
             'stroke="#333" stroke-width="1"/>']
    for i in range(5):
        gx = x_lo + (x_hi - x_lo) * i / 4
        gy = y_lo + (y_hi - y_lo) * i / 4
        parts.append(f'<line x1="{sx(gx):.1f}" y1="{mt}" x2="{sx(gx):.1f}" '
                     f'y2="{mt + ph}" stroke="#ddd"/>')
        parts.append(f'<line x1="{ml}" y1="{sy(gy):.1f}" x2="{ml + pw}" '
                     f'y2="{sy(gy):.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{sx(gx):.1f}" y="{h - mb + 16}" font-size="11" '
                     f'text-anchor="middle" fill="#333">{gx:g}</text>')
        parts.append(f'<text x="{ml - 6}" y="{sy(gy):.1f}" font-size="11" '
                     f'text-anchor="end" dominant-baseline="middle" '
                     f'fill="#333">{gy:.3g}</text>')
    for ci, (name, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[ci % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     'stroke-width="1.8"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.6" '
                         f'fill="{color}"/>')
        parts.append(f'<text x="{ml + 10}" y="{mt + 16 + 15 * ci}" font-size="12" '
                     f'fill="{color}">{name}</text>')
    parts.append(f'<text x="{ml + pw / 2:.0f}" y="{h - 8}" font-size="12" '
                 f'text-anchor="middle" fill="#333">{x_label}</text>')
    parts.append(f'<text x="14" y="{mt + ph / 2:.0f}" font-size="12" '
                 f'text-anchor="middle" fill="#333" '
                 f'transform="rotate(-90 14 {mt + ph / 2:.0f})">{y_label}</text>')
    parts.append("</svg>")
    _write_lines(path, parts)
