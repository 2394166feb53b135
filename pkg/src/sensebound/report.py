"""Report bundles: per-run CSVs, a summary JSON, and self-contained SVG
plots, written atomically (temp dir + rename).

CSV schema (version 1, column set is frozen):
    t, run_id, state_norm_sq, err_norm_sq, h_pred_bits, h_post_bits,
    cmi_bits, di_cum_bits
Floats are serialized with repr, which round-trips exactly, so identical
(config, seed) pairs produce byte-identical files.
"""

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ExperimentConfig, build_context, default_thresholds
from .errors import EmptySeries, SenseboundError
from .infoflow import NecessityVerdict, necessity_audit, rate_balance_check
from .loop import EnsembleStats, classify_outcome, run_ensemble

SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "t",
    "run_id",
    "state_norm_sq",
    "err_norm_sq",
    "h_pred_bits",
    "h_post_bits",
    "cmi_bits",
    "di_cum_bits",
)


def _fmt(x) -> str:
    return repr(float(x))


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def run_csv_text(record, run_id: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i in range(record.steps):
        row = record.ledger.rows[i]
        w.writerow(
            [
                int(record.t[i]),
                run_id,
                _fmt(record.state_norm_sq[i]),
                _fmt(record.err_norm_sq[i]),
                _fmt(row.h_pred),
                _fmt(row.h_post),
                _fmt(row.cmi),
                _fmt(row.di_cum),
            ]
        )
    return buf.getvalue()


def read_run_csv(path) -> dict:
    cols = {c: [] for c in CSV_COLUMNS}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise SenseboundError(f"unexpected CSV columns in {path}: {reader.fieldnames}")
        for row in reader:
            for c in CSV_COLUMNS:
                cols[c].append(float(row[c]))
    return {c: np.asarray(v) for c, v in cols.items()}


# ---------------------------------------------------------------------------
# SVG


@dataclass(frozen=True)
class Series:
    name: str
    xs: tuple
    ys: tuple
    annotation: str = ""


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    vals = []
    v = start
    while v <= hi + 1e-12 * step:
        vals.append(v)
        v += step
    return vals


def render_svg(
    series_list,
    title: str = "",
    xlabel: str = "t",
    ylabel: str = "",
    logy: bool = False,
    hlines=None,
    width: int = 800,
    height: int = 500,
) -> str:
    """Render polyline series into a standalone SVG document.

    Series may have different lengths (halted runs are simply shorter);
    hlines draws labelled horizontal reference lines (e.g. the expansion
    rate against a di-rate trace).
    """
    series_list = [s for s in series_list if len(s.xs) > 0]
    if not series_list:
        raise EmptySeries("nothing to plot")
    hlines = list(hlines or [])

    ml, mr, mt, mb = 70, 20, 40, 55
    pw, ph = width - ml - mr, height - mt - mb

    xs_all = [x for s in series_list for x in s.xs]
    ys_all = [y for s in series_list for y in s.ys] + [y for _, y in hlines]
    if logy:
        ys_all = [y for y in ys_all if y > 0]
        if not ys_all:
            raise EmptySeries("log scale requested but no positive values")
        ylo, yhi = math.log10(min(ys_all)), math.log10(max(ys_all))
    else:
        ylo, yhi = min(ys_all), max(ys_all)
    if yhi <= ylo:
        yhi = ylo + 1.0
    xlo, xhi = min(xs_all), max(xs_all)
    if xhi <= xlo:
        xhi = xlo + 1.0

    def px(x):
        return ml + (x - xlo) / (xhi - xlo) * pw

    def py(y):
        yy = math.log10(y) if logy else y
        yy = min(max(yy, ylo), yhi)
        return mt + ph - (yy - ylo) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    if title:
        out.append(
            f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>'
        )
    for xv in _ticks(xlo, xhi):
        out.append(
            f'<line x1="{px(xv):.2f}" y1="{mt + ph}" x2="{px(xv):.2f}" y2="{mt + ph + 5}" stroke="#333"/>'
        )
        out.append(
            f'<text x="{px(xv):.2f}" y="{mt + ph + 18}" text-anchor="middle">{xv:.6g}</text>'
        )
    tick_vals = _ticks(ylo, yhi)
    for tv in tick_vals:
        yv = 10.0**tv if logy else tv
        out.append(
            f'<line x1="{ml - 5}" y1="{py(yv):.2f}" x2="{ml}" y2="{py(yv):.2f}" stroke="#333"/>'
        )
        label = f"1e{tv:.0f}" if logy else f"{tv:.6g}"
        out.append(
            f'<text x="{ml - 8}" y="{py(yv) + 4:.2f}" text-anchor="end">{label}</text>'
        )
    out.append(
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {mt + ph / 2:.1f})">{ylabel}</text>'
    )
    for label, yv in hlines:
        out.append(
            f'<line x1="{ml}" y1="{py(yv):.2f}" x2="{ml + pw}" y2="{py(yv):.2f}" '
            f'stroke="#555" stroke-dasharray="6 4"/>'
        )
        out.append(
            f'<text x="{ml + pw - 4}" y="{py(yv) - 5:.2f}" text-anchor="end" fill="#555">{label}</text>'
        )
    for i, s in enumerate(series_list):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s.xs, s.ys))
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        name = s.name + (f" ({s.annotation})" if s.annotation else "")
        ly = mt + 16 + 16 * i
        out.append(
            f'<line x1="{ml + pw - 150}" y1="{ly - 4}" x2="{ml + pw - 130}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(f'<text x="{ml + pw - 124}" y="{ly}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# bundles


@dataclass
class ReportBundle:
    out_dir: str
    summary: dict
    csv_names: list
    svg_names: list
    acceptance_violation: bool

    @property
    def exit_code(self) -> int:
        return 2 if self.acceptance_violation else 0


def build_summary(cfg: ExperimentConfig, ctx, ens: EnsembleStats, outcome,
                  verdict: Optional[NecessityVerdict], residual) -> dict:
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "n_runs": ens.n_runs,
        "horizon": ens.horizon,
        "seed": ens.master_seed,
        "r_exp_bits_per_step": ctx.decomp.r_exp,
        "n_u": ctx.decomp.n_u,
        "eigenvalues": [{"re": l.real, "im": l.imag} for l in ctx.decomp.eigenvalues],
        "di_rate_bits_per_step": ens.di_rate,
        "rate_balance_residual_bits_per_step": residual,
        "outcome": outcome.to_json_dict(),
        "necessity": verdict.to_json_dict() if verdict is not None else None,
        "n_halted": ens.n_halted,
        "n_degenerate": ens.n_degenerate,
        "fraction_halted_by": {str(k): v for k, v in ens.fraction_halted_by.items()},
        "ensemble": {
            "mean_state_sq": ens.mean_state_sq,
            "mean_err_sq": ens.mean_err_sq,
            "mean_cmi_bits": ens.mean_cmi,
            "alive": ens.alive,
        },
        "config": cfg.to_json_dict(),
    }
    if ens.mean_cmi_channel is not None:
        summary["ensemble"]["mean_cmi_channel_bits"] = ens.mean_cmi_channel
    audited = [r for r in ens.runs if r.audits is not None]
    if audited:
        summary["audits"] = audited[0].audits.to_json_dict()
    return to_jsonable(summary)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Optional[str] = None,
    seed: Optional[int] = None,
    runs: Optional[int] = None,
    horizon: Optional[int] = None,
    workers: int = 1,
    write: bool = True,
) -> ReportBundle:
    """Run the configured ensemble and emit the report bundle.

    The bundle directory must not already exist; everything is staged in a
    sibling temp dir and renamed into place in one shot.
    """
    if horizon is not None:
        cfg.run["horizon"] = int(horizon)
    if runs is not None:
        cfg.run["runs"] = int(runs)
    master_seed = int(seed if seed is not None else cfg.run.get("seed", 0))
    n_runs = int(cfg.run.get("runs", 1))
    ctx = build_context(cfg)
    ens = run_ensemble(
        ctx,
        n_runs,
        master_seed=master_seed,
        workers=workers,
        collect_audits=bool(cfg.run.get("audit", False)),
        audit_window=int(cfg.run.get("audit_window", 2)),
        kappa_cap=float(cfg.run.get("kappa_cap", 1e6)),
        collect_beliefs=bool(cfg.outputs.get("debug_beliefs", False)),
    )
    thresholds = default_thresholds(cfg, ctx)
    outcome = classify_outcome(ens, thresholds)
    verdict = None
    residual = None
    if ens.mean_ledger is not None:
        verdict = necessity_audit(
            ens.mean_ledger, ens.mean_err_sq, threshold=thresholds.bound_error,
            tail_window=thresholds.tail_window,
        )
        residual = rate_balance_check(ens.mean_ledger)
    summary = build_summary(cfg, ctx, ens, outcome, verdict, residual)
    violation = bool(verdict is not None and verdict.applicable and not verdict.passed)

    csv_names, svg_names = [], []
    out_path = out_dir if out_dir is not None else cfg.outputs.get("dir", "out")
    if write:
        formats = cfg.outputs.get("formats", ["csv", "json"])
        want_svg = bool(cfg.outputs.get("svg", True))
        files = {}
        if "csv" in formats:
            for r in ens.runs:
                name = os.path.join("runs", f"run_{r.run_index:05d}.csv")
                files[name] = run_csv_text(r, r.run_index)
                csv_names.append(name)
        if "json" in formats:
            files["summary.json"] = json.dumps(summary, indent=2, sort_keys=True) + "\n"
        files["config.cfg"] = cfg.source_text or _render_config(cfg)
        if bool(cfg.outputs.get("debug_beliefs", False)):
            for r in ens.runs:
                if r.beliefs_json is not None:
                    files[os.path.join("beliefs", f"run_{r.run_index:05d}.json")] = (
                        json.dumps(to_jsonable(r.beliefs_json), indent=1) + "\n"
                    )
        for r in ens.runs:
            if r.audits is not None:
                files[os.path.join("audits", f"run_{r.run_index:05d}.json")] = (
                    json.dumps(to_jsonable(r.audits.to_json_dict()), indent=2, sort_keys=True)
                    + "\n"
                )
        if want_svg:
            ts = list(range(len(ens.mean_err_sq)))
            files["plots/err_norm_sq.svg"] = render_svg(
                [Series("mean ||e||^2", tuple(ts), tuple(ens.mean_err_sq))],
                title=f"{cfg.experiment}: estimation error",
                ylabel="E ||e_t||^2",
                logy=bool(np.all(ens.mean_err_sq > 0)),
            )
            svg_names.append("plots/err_norm_sq.svg")
            files["plots/state_norm_sq.svg"] = render_svg(
                [Series("mean ||x||^2", tuple(ts), tuple(ens.mean_state_sq))],
                title=f"{cfg.experiment}: state second moment",
                ylabel="E ||x_t||^2",
                logy=bool(np.all(ens.mean_state_sq > 0)),
            )
            svg_names.append("plots/state_norm_sq.svg")
            if ens.mean_ledger is not None:
                rates = [
                    ens.mean_ledger.rows[t].di_cum / (t + 1)
                    for t in range(len(ens.mean_ledger.rows))
                ]
                files["plots/di_rate.svg"] = render_svg(
                    [Series("di rate", tuple(range(len(rates))), tuple(rates))],
                    title=f"{cfg.experiment}: directed information rate",
                    ylabel="bits/step",
                    hlines=[("r_exp", ctx.decomp.r_exp)],
                )
                svg_names.append("plots/di_rate.svg")
        write_bundle_atomic(out_path, files)

    return ReportBundle(
        out_dir=str(out_path),
        summary=summary,
        csv_names=csv_names,
        svg_names=svg_names,
        acceptance_violation=violation,
    )


def _render_config(cfg: ExperimentConfig) -> str:
    lines = [f'experiment = "{cfg.experiment}"']
    for section in ("system", "channel", "prior", "filter", "controller", "run", "outputs"):
        data = getattr(cfg, section)
        if not data:
            continue
        lines.append(f"[{section}]")
        for k, v in data.items():
            lines.append(f"{k} = {json.dumps(to_jsonable(v))}")
    return "\n".join(lines) + "\n"


def write_bundle_atomic(out_dir, files: dict) -> None:
    """Stage files in a temp sibling and rename into place."""
    out_dir = str(out_dir)
    if os.path.exists(out_dir):
        raise SenseboundError(
            f"output dir {out_dir!r} already exists; refusing to overwrite a bundle"
        )
    parent = os.path.dirname(os.path.abspath(out_dir)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".bundle-", dir=parent)
    try:
        for rel, text in files.items():
            path = os.path.join(tmp, rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        os.replace(tmp, out_dir)
    except BaseException:
        import shutil

        shutil.rmtree(tmp, ignore_errors=True)
        raise


# ---------------------------------------------------------------------------
# sweeps and recomputation


def set_config_value(cfg: ExperimentConfig, dotted: str, value) -> None:
    section, _, key = dotted.partition(".")
    if not key or not hasattr(cfg, section):
        raise SenseboundError(f"bad parameter path {dotted!r}; use section.key")
    getattr(cfg, section)[key] = value


def run_sweep(
    base_cfg_text: str,
    param: str,
    values,
    out_dir: str,
    seed: Optional[int] = None,
    workers: int = 1,
) -> dict:
    """Vary one scalar parameter over a list; one summary row per point."""
    from .config import parse_config

    rows = []
    violation = False
    for v in values:
        cfg = parse_config(base_cfg_text)
        set_config_value(cfg, param, v)
        from .config import validate_config

        validate_config(cfg)
        bundle = run_experiment(cfg, seed=seed, write=False)
        s = bundle.summary
        rows.append(
            {
                "param": param,
                "value": v,
                "r_exp_bits_per_step": s["r_exp_bits_per_step"],
                "di_rate_bits_per_step": s["di_rate_bits_per_step"],
                "ms_bounded_state": s["outcome"]["ms_bounded_state"],
                "ms_bounded_error": s["outcome"]["ms_bounded_error"],
                "asymptotic_error": s["outcome"]["asymptotic_error"],
                "tail_mean_err_sq": (
                    float(np.mean(s["ensemble"]["mean_err_sq"][-s["outcome"]["tail_window"]:]))
                    if s["ensemble"]["mean_err_sq"]
                    else None
                ),
                "n_halted": s["n_halted"],
                "necessity_passed": (s["necessity"] or {}).get("passed"),
            }
        )
        violation = violation or bundle.acceptance_violation

    buf = io.StringIO()
    cols = list(rows[0].keys())
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    files = {
        "sweep.csv": buf.getvalue(),
        "sweep.json": json.dumps(to_jsonable(rows), indent=2, sort_keys=True) + "\n",
    }
    write_bundle_atomic(out_dir, files)
    return {"rows": rows, "violation": violation}


def recompute_summary_from_csvs(bundle_dir: str) -> dict:
    """Re-derive ensemble statistics straight from the run CSVs."""
    runs_dir = os.path.join(bundle_dir, "runs")
    names = sorted(os.listdir(runs_dir)) if os.path.isdir(runs_dir) else []
    if not names:
        raise SenseboundError(f"no run CSVs under {bundle_dir!r}")
    datas = [read_run_csv(os.path.join(runs_dir, n)) for n in names]
    horizon = max(len(d["t"]) for d in datas)
    mean_err, mean_state, mean_cmi = [], [], []
    for t in range(horizon):
        at_t = [d for d in datas if len(d["t"]) > t]
        if not at_t:
            break
        mean_err.append(math.fsum(d["err_norm_sq"][t] for d in at_t) / len(at_t))
        mean_state.append(math.fsum(d["state_norm_sq"][t] for d in at_t) / len(at_t))
        mean_cmi.append(math.fsum(d["cmi_bits"][t] for d in at_t) / len(at_t))
    full = [d for d in datas if len(d["t"]) == horizon]
    di_rate = (
        math.fsum(d["di_cum_bits"][-1] for d in full) / len(full) / horizon if full else None
    )
    return {
        "n_runs": len(datas),
        "horizon": horizon,
        "mean_err_sq": mean_err,
        "mean_state_sq": mean_state,
        "mean_cmi_bits": mean_cmi,
        "di_rate_bits_per_step": di_rate,
    }
