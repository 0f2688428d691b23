"""Command-line entry point: simulate, twin, fuse, preprocess, evaluate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import ConfigError, RunConfig, load_bundled, load_config
from .ekf import MOISTURE, CovarianceError, StreamError, run_fusion
from .grid import GridError
from .maps import abs_error, export_map, layer_raster, map_filename
from .pipeline import DataError, GeometryError, MeasurementBatch, preprocess, quadrant_grid, read_batches, read_csv, write_batches
from .pivot import SensorConfigError
from .richards import NumericalBlowup, StiffnessError
from .scenarios import build, prior, run_twin
from .soil import ParameterError

log = logging.getLogger("pivotfusion")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _resolve(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.scenario:
        cfg = load_bundled(args.scenario)
    else:
        raise ConfigError(["either --config or --scenario is required"])
    raw = dict(cfg.raw)
    model = cfg.model
    if args.seed is not None:
        raw["seed"] = args.seed
        cfg.seed = args.seed
        model = replace(model, seed=args.seed)
    if args.days is not None:
        raw.setdefault("schedule", {})
        raw["schedule"] = {**(raw["schedule"] or {}), "days": args.days}
        model = replace(model, days=float(args.days))
    cfg.model = model
    cfg.evaluation.alpha = args.alpha
    cfg.raw = raw
    return cfg


def _meta(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash, "seed": cfg.seed}


def _soil_bounds(model):
    p = model.params
    return float(np.min(p.theta_r)), float(np.max(p.theta_s))


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _write_maps(cfg, model, out: Path, t, layers, fields: dict, quantity: str):
    """``fields`` maps raster kind -> nodal values (already converted to ``quantity``)."""
    bounds = _soil_bounds(model) if quantity == MOISTURE else None
    meta = {**_meta(cfg), "quantity": quantity}
    written = []
    for k in layers:
        rasters = {kind: layer_raster(model.grid, v, k, t, kind, meta) for kind, v in fields.items()}
        if "actual" in rasters:
            est = rasters.get("estimated") or rasters.get("predicted")
            if est is not None:
                rasters["abs_error"] = abs_error(rasters["actual"], est)
        for r in rasters.values():
            written.append(export_map(r, out / map_filename(r), bounds=bounds))
    return written


def _write_innovations(path: Path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({"t": float(r.t), "nodes": [int(i) for i in r.nodes], "e": [float(v) for v in r.e], "E": np.asarray(r.E).tolist()}, sort_keys=True) + "\n")


def _read_innovations(path: Path):
    recs = []
    for line in path.read_text().splitlines():
        d = json.loads(line)
        recs.append(ev.InnovationRecord(d["t"], np.array(d["e"]), np.array(d["E"]), np.array(d["nodes"], dtype=int)))
    return recs


def _write_trace(path: Path, snapshots) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "phase", "trace"])
        for s in snapshots:
            w.writerow([repr(float(s.t)), s.phase, repr(float(s.trace))])


def _read_trace(path: Path) -> ev.TraceSeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ev.TraceSeries(np.array([float(r["t_s"]) for r in rows]), np.array([float(r["trace"]) for r in rows]), [r["phase"] for r in rows])


def _observe(model, kind):
    if kind == MOISTURE:
        return lambda x, nodes: model.theta(np.asarray(x))[np.asarray(nodes, dtype=int)]
    return lambda x, nodes: np.asarray(x)[np.asarray(nodes, dtype=int)]


def _write_validation(path: Path, validation, estimates, observe) -> None:
    with open(path, "w") as fh:
        for b in validation:
            if len(b.nodes) == 0 or b.t not in estimates:
                continue
            est = observe(estimates[b.t], b.nodes)
            fh.write(json.dumps({"t": float(b.t), "nodes": [int(i) for i in b.nodes], "observed": [float(v) for v in b.values], "estimated": [float(v) for v in est]}, sort_keys=True) + "\n")


def _split(batches, ratio, seed):
    train, val = [], []
    for i, b in enumerate(batches):
        if len(b.nodes) == 0:
            train.append(b)
            continue
        tr, va = ev.split_train_validation(b, ratio, seed + i)
        train.append(tr)
        val.append(va)
    return train, val


# ---- commands ---------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    m = cfg.model
    model, sched, _ = build(m)
    from .richards import StateField

    snaps = cfg.snapshot_times()
    x0 = np.full(model.size, m.x0)
    traj = model.simulate(StateField(x0, 0.0), sched, m.horizon, output_times=snaps, max_dt=m.max_dt)
    layers = cfg.output.layer_ids(model.grid.n_z)
    for s in traj:
        _write_maps(cfg, model, out, s.t, layers, {"actual": model.theta(s.h)}, MOISTURE)
    w0 = model.total_water(x0)
    return {"snapshots": [s.t for s in traj], "water_m3": {"initial": w0, "final": model.total_water(traj[-1].h) if traj else w0}}


def cmd_twin(cfg: RunConfig, out: Path) -> dict:
    m = cfg.model
    ratio = cfg.evaluation.split_ratio
    base = run_twin(m, fuse=False, snapshot_times=cfg.snapshot_times())
    batches = base.twin.batches
    validation = []
    if ratio is not None and ratio < 1:
        batches, validation = _split(batches, ratio, m.seed)
    write_batches(base.twin.batches, out / "measurements.jsonl")
    fusion = run_fusion(
        prior(m, base.model.grid),
        batches,
        base.schedule,
        base.model,
        m.noise(),
        base.output,
        horizon=m.horizon,
        max_dt=m.max_dt,
        psd=m.check_psd,
        joseph=m.joseph,
        extra_times=base.twin.times,
    )
    model = base.model
    kind = m.sensor.kind
    conv = (lambda h: model.theta(h)) if kind == MOISTURE else (lambda h: np.asarray(h))
    layers = cfg.output.layer_ids(model.grid.n_z)
    for t in cfg.snapshot_times():
        est_kind = "estimated" if t in fusion.posterior else "predicted"
        _write_maps(cfg, model, out, t, layers, {"actual": conv(base.twin.truth[t]), est_kind: conv(fusion.states[t])}, kind)
    _write_innovations(out / "innovations.jsonl", fusion.innovations)
    _write_trace(out / "trace.csv", fusion.snapshots)
    if validation:
        _write_validation(out / "validation.jsonl", validation, fusion.states, _observe(model, kind))
    T = max(base.twin.truth)
    err = np.abs(conv(base.twin.truth[T]) - conv(fusion.states[T]))
    return {"updates": len(fusion.innovations), "final_time": T, "final_abs_error": {"max": float(err.max()), "mean": float(err.mean())}}


def cmd_fuse(cfg: RunConfig, out: Path) -> dict:
    m = cfg.model
    if cfg.data.batches is None:
        raise ConfigError(["data.batches: a batch file is required for fuse"])
    batches = read_batches(cfg.data.batches)
    model, sched, output = build(m)
    validation = []
    if cfg.evaluation.split_ratio is not None and cfg.evaluation.split_ratio < 1:
        batches, validation = _split(batches, cfg.evaluation.split_ratio, m.seed)
    for b in batches:
        if len(b.nodes) and (b.nodes.min() < 0 or b.nodes.max() >= model.size):
            raise DataError(f"batch at t={b.t} references nodes outside the grid")
    t0 = min((b.t for b in batches), default=0.0)
    belief = prior(m, model.grid)
    belief.t = t0 - (t0 % 86400.0) if t0 > 0 else 0.0
    fusion = run_fusion(belief, batches, sched, model, m.noise(), output, max_dt=m.max_dt, psd=m.check_psd, joseph=m.joseph)
    kind = m.sensor.kind
    conv = (lambda h: model.theta(h)) if kind == MOISTURE else (lambda h: np.asarray(h))
    layers = cfg.output.layer_ids(model.grid.n_z)
    times = sorted(fusion.posterior) if not cfg.output.snapshot_times else [t for t in cfg.snapshot_times() if t in fusion.states]
    for t in times[-1:] if not cfg.output.snapshot_times else times:
        _write_maps(cfg, model, out, t, layers, {"estimated" if t in fusion.posterior else "predicted": conv(fusion.states[t])}, kind)
    _write_innovations(out / "innovations.jsonl", fusion.innovations)
    _write_trace(out / "trace.csv", fusion.snapshots)
    if validation:
        _write_validation(out / "validation.jsonl", validation, fusion.states, _observe(model, kind))
    return {"updates": len(fusion.innovations), "batches": len(batches)}


def cmd_preprocess(cfg: RunConfig, out: Path) -> dict:
    if cfg.data.measurements is None:
        raise ConfigError(["data.measurements: a CSV file is required for preprocess"])
    geom = cfg.geometry()
    readings = read_csv(cfg.data.measurements, geom)
    g = cfg.model.grid
    grids = {q: quadrant_grid(q, g.radius, g.depth, g.n_r, g.n_theta, g.n_z, g.z_ratio) for q in cfg.data.quadrants}
    soil = cfg.model.soils if not isinstance(cfg.model.soils, list) else cfg.model.soils[0].params
    rep = preprocess(readings, geom, grids, soil, cfg.data.epoch_length)
    for q, bs in rep.batches.items():
        write_batches(bs, out / f"batches_q{q}.jsonl")
    counts = {k: ({str(q): n for q, n in v.items()} if isinstance(v, dict) else v) for k, v in rep.counts.items()}
    return {"counts": counts, "batches": {str(q): len(bs) for q, bs in rep.batches.items()}}


def cmd_evaluate(cfg: RunConfig, out: Path) -> dict:
    inn = out / "innovations.jsonl"
    if not inn.exists():
        raise DataError(f"{inn} not found; run twin or fuse into this directory first")
    recs = _read_innovations(inn)
    alpha = cfg.evaluation.alpha
    omegas, passes = [], []
    for r in recs:
        o, thr, ok = ev.nis(r, alpha)
        omegas.append(o)
        passes.append(ok)
    report = {
        "alpha": alpha,
        "nis": {"count": len(recs), "pass_rate": float(np.mean(passes)) if recs else None, "median": float(np.median(omegas)) if recs else None},
    }
    tr = out / "trace.csv"
    if tr.exists():
        ts = _read_trace(tr)
        drops = ts.update_drops()
        report["trace"] = {"initial": float(ts.trace[0]), "final": float(ts.trace[-1]), "updates": int(drops.size), "all_updates_decrease": bool(np.all(drops > 0)) if drops.size else None}
    val = out / "validation.jsonl"
    if val.exists():
        rows = [json.loads(ln) for ln in val.read_text().splitlines() if ln.strip()]
        days = {}
        for d in rows:
            err = np.abs(np.array(d["observed"]) - np.array(d["estimated"]))
            days.setdefault(int(d["t"] // 86400), []).append(err)
        thr = cfg.evaluation.mae_threshold
        report["crossvalidation"] = {
            str(k): {"mae": float(np.concatenate(v).mean()), "max": float(np.concatenate(v).max()), "frac_below": float(np.mean(np.concatenate(v) < thr)), "count": int(np.concatenate(v).size)}
            for k, v in sorted(days.items())
        }
    return report


COMMANDS = {"simulate": cmd_simulate, "twin": cmd_twin, "fuse": cmd_fuse, "preprocess": cmd_preprocess, "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pivotfusion", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="YAML run configuration")
    ap.add_argument("--scenario", help="bundled configuration: 1, 2 or real_quadrant")
    ap.add_argument("--out-dir", type=Path, default=Path("run"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--alpha", type=float, default=0.05, help="NIS significance level")
    ap.add_argument("--days", type=float, help="override the simulated horizon")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if not 0 < args.alpha < 1:
            raise ConfigError(["--alpha must be in (0, 1)"])
        cfg = _resolve(args)
        out = args.out_dir
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out)
        name = "evaluation.json" if args.command == "evaluate" else "run.json"
        _dump_json(out / name, {"command": args.command, "scenario": cfg.scenario, **_meta(cfg), **summary})
    except (ConfigError, GeometryError, GridError, SensorConfigError, ParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, StreamError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StiffnessError, NumericalBlowup, CovarianceError, ev.ConditioningError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
