"""Command-line front end: ``crossdiff {run,converge,steady,audit}``.

Every output file carries the hash of the resolved configuration (output
paths and thread count excluded), so two runs with equal hashes produce
byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, SimulationConfig, parse_config_text, resolve_config
from .experiments import convergence_study, run_to_stationary
from .integrators import BlowUpError, FixedPointError, SingularSystemError, TimeGrid, integrate
from .state import DiagnosticsRecord, State, compute_diagnostics, dissipation

log = logging.getLogger("crossdiff")

FLOAT_FMT = "{:.17g}"
# |rate + dissipation - C| may exceed 0 by this fraction of C
AUDIT_REL_TOL = 1e-6


# ------------------------------------------------------------------- files


def _fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def write_csv(path: Path, header, rows, config_hash: str, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path: Path) -> tuple[dict, list[str], np.ndarray]:
    """Return ``(comments, header, data)`` of a file written by :func:`write_csv`."""
    comments = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(":")
            comments[key.strip()] = value.strip()
        else:
            body.append(line)
    header = body[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in body[1:]], dtype=float)
    return comments, header, data.reshape(-1, len(header))


def write_snapshot(path: Path, state: State, config_hash: str):
    rows = zip(state.mesh.centers, state.rho, state.eta)
    write_csv(path, ["x_center", "rho", "eta"], rows, config_hash, f"time: {_fmt(state.time)}")


def write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _svg_figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "crossdiff"
    return plt


def plot_profiles(path: Path, state: State, config_hash: str, title: str = ""):
    plt = _svg_figure()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = state.mesh.centers
    ax.plot(x, state.rho, label="rho", color="tab:blue")
    ax.plot(x, state.eta, label="eta", color="tab:red")
    ax.set_xlabel("x")
    ax.set_title(title or f"t = {state.time:g}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": f"config_hash={config_hash}"})
    plt.close(fig)


def plot_errors(path: Path, report, config_hash: str, title: str = ""):
    plt = _svg_figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    h, e = report.grid_sizes, report.errors
    ax.loglog(h, e, "o-", label="error")
    ref = e[0] * (h / h[0])
    ax.loglog(h, ref, "k--", lw=0.8, label="slope 1")
    ax.set_xlabel("dx")
    ax.set_ylabel("e")
    ax.set_title(title or f"fitted order {report.fitted_order:.3f}")
    ax.annotate(f"slope {report.fitted_order:.3f}", xy=(h[len(h) // 2], e[len(e) // 2]), xytext=(10, -15),
                textcoords="offset points")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": f"config_hash={config_hash}"})
    plt.close(fig)


# ----------------------------------------------------------------- helpers


def _resolve_threads(flag: int | None, config: SimulationConfig) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("CROSSDIFF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer CROSSDIFF_THREADS=%r", env)
    return config.threads


def load_config(args) -> SimulationConfig:
    """Config file and/or preset, then command-line overrides."""
    if args.config:
        data = load_raw(Path(args.config).read_text())
    elif args.preset:
        data = {}
    else:
        raise ConfigError(["need --config or --preset"])
    if args.preset:
        data["preset"] = args.preset
    config = resolve_config(data)
    overrides = {
        "eps": args.eps,
        "nu": args.nu,
        "cells": args.cells,
        "t_final": args.t_final,
        "dt_report": args.dt_report,
        "integrator": args.integrator,
    }
    config = config.with_overrides(**overrides)
    if args.out:
        raw = config.to_dict()
        raw["output"] = {**raw.get("output", {}), "dir": args.out}
        config = resolve_config(raw)
    threads = _resolve_threads(args.threads, config)
    if threads != config.threads:
        raw = config.to_dict()
        raw["threads"] = threads
        config = resolve_config(raw)
    return config


def load_raw(text: str) -> dict:
    data = parse_config_text(text)
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a mapping"])
    return data


def _metadata(config: SimulationConfig, mesh, model, extra: dict) -> dict:
    profiles = config.profiles()
    return {
        "version": __version__,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "threads": config.threads,
        "mesh": mesh.describe(),
        "initial_data": {k: p.info for k, p in profiles.items()},
        "kernel_lipschitz_norms": list(model.kernel_norms()),
        **extra,
    }


def _outdir(config: SimulationConfig, sub: str | None = None) -> Path:
    out = Path(config.output.get("dir", "out"))
    if sub:
        out = out / sub
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_run(config: SimulationConfig) -> int:
    out = _outdir(config)
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    h = config.config_hash()
    mesh = config.build_mesh()
    model = config.build_model(mesh)
    state0 = config.initial_state(mesh)
    c_eps = model.energy_bound((state0.mass_rho, state0.mass_eta))
    diag_path = out / "diagnostics.csv"
    records = []
    counter = [0]

    diag_fh = open(diag_path, "w", newline="")
    diag_fh.write(f"# config_hash: {h}\n")
    writer = csv.writer(diag_fh, lineterminator="\n")
    writer.writerow(DiagnosticsRecord.FIELDS)

    def observe(state: State):
        rec = compute_diagnostics(state, model.eps, model.nu, c_eps, records[-1] if records else None)
        records.append(rec)
        writer.writerow([_fmt(v) for v in rec.row()])
        diag_fh.flush()
        write_snapshot(snaps / f"snap_{counter[0]:05d}.csv", state, h)
        counter[0] += 1

    status, error = "ok", None
    traj = None
    try:
        traj = integrate(
            state0,
            model,
            TimeGrid(config.dt_report, config.t_final),
            config.integrator,
            observer=observe,
            **config.integrator_options(),
        )
    except (FixedPointError, BlowUpError, SingularSystemError) as exc:
        status, error = "failed", str(exc)
        log.error("solver failure: %s", exc)
    finally:
        diag_fh.close()

    extra = {
        "status": status,
        "error": error,
        "energy_bound": c_eps,
        "n_snapshots": counter[0],
        "failed_at": records[-1].time if status != "ok" and records else None,
    }
    if traj is not None:
        extra.update(steps=traj.steps, min_value=traj.min_value, cfl_ratio_history=traj.cfl_history)
    write_json(out / "metadata.json", _metadata(config, mesh, model, extra))
    if config.output.get("svg", True) and records:
        final = State(*_last_snapshot(snaps, counter[0] - 1), mesh, records[-1].time)
        plot_profiles(out / "final_profiles.svg", final, h)
    print(f"run {status}: {counter[0]} snapshots in {out}")
    return 0 if status == "ok" else 1


def _last_snapshot(snaps: Path, k: int):
    _, _, data = read_csv(snaps / f"snap_{k:05d}.csv")
    return data[:, 1], data[:, 2]


def cmd_converge(config: SimulationConfig) -> int:
    out = _outdir(config)
    h = config.config_hash()
    try:
        report = convergence_study(config, threads=config.threads)
    except (FixedPointError, BlowUpError, SingularSystemError) as exc:
        log.error("solver failure: %s", exc)
        write_json(out / "convergence.json", {"config_hash": h, "status": "failed", "error": str(exc)})
        return 1
    write_csv(out / "errors.csv", ["dx", "error"], report.rows(), h)
    payload = {"config_hash": h, "config": config.to_dict(), "status": "ok", **report.summary()}
    payload["initial_data"] = {k: p.info for k, p in config.profiles().items()}
    write_json(out / "convergence.json", payload)
    if config.output.get("svg", True):
        plot_errors(out / "convergence.svg", report, h)
    print(f"fitted order {report.fitted_order:.4f}; errors {', '.join(f'{e:.3e}' for e in report.errors)}")
    return 0


def cmd_steady(config: SimulationConfig) -> int:
    out = _outdir(config)
    h = config.config_hash()
    try:
        rep = run_to_stationary(config)
    except (FixedPointError, BlowUpError, SingularSystemError) as exc:
        log.error("solver failure: %s", exc)
        write_json(out / "stationary.json", {"config_hash": h, "status": "failed", "error": str(exc)})
        return 1
    write_snapshot(out / "stationary_state.csv", rep.state, h)
    s = rep.state
    payload = {
        "config_hash": h,
        "config": config.to_dict(),
        "stationary": rep.stationary,
        "residual": rep.residual,
        "time": rep.time,
        "steps": rep.steps,
        "overlap": rep.overlap,
        "overlap_ratio": rep.overlap / float(s.mesh.widths @ s.rho**2),
        "supports": rep.supports,
        "mass_rho": s.mass_rho,
        "mass_eta": s.mass_eta,
    }
    write_json(out / "stationary.json", payload)
    if config.output.get("svg", True):
        plot_profiles(out / "stationary_profiles.svg", s, h, f"stationary state, t = {rep.time:g}")
    flag = "stationary" if rep.stationary else "NOT stationary"
    print(f"{flag}: residual {rep.residual:.3e} at t = {rep.time:g}, overlap {rep.overlap:.3e}")
    return 0


def audit_run(run_dir: Path, rel_tol: float = AUDIT_REL_TOL) -> list[dict]:
    """Check ``dS/dt + dissipation <= C_eps (1 + rel_tol)`` on a stored run.

    ``dS/dt`` is the exact pairing of the rhs with ``1 + log c`` at each
    snapshot, so only strictly positive snapshots can be audited; the
    others are reported with ``status = "skipped"``.
    """
    meta = json.loads((run_dir / "metadata.json").read_text())
    config = resolve_config(meta["config"])
    mesh = config.build_mesh()
    model = config.build_model(mesh)
    snaps = sorted((run_dir / "snapshots").glob("snap_*.csv"))
    if not snaps:
        raise FileNotFoundError(f"no snapshots in {run_dir}")
    states = []
    for path in snaps:
        comments, _, data = read_csv(path)
        if comments.get("config_hash") != meta["config_hash"]:
            raise ValueError(f"{path.name}: config hash does not match metadata")
        states.append(State(data[:, 1], data[:, 2], mesh, float(comments["time"])))
    c_eps = model.energy_bound((states[0].mass_rho, states[0].mass_eta))
    rows = []
    # interior reporting times: exclude t = 0 and the final time
    for st in states[1:-1]:
        row = {"time": st.time, "bound": c_eps}
        if c_eps is None:
            row.update(status="no_bound", rate=math.nan, dissipation=math.nan, lhs=math.nan)
        elif st.min_value() <= 0:
            row.update(status="skipped", rate=math.nan, dissipation=math.nan, lhs=math.nan)
        else:
            rate = model.entropy_rate(st)
            dis = dissipation(st.rho, st.eta, mesh, model.eps, model.nu)
            lhs = rate + dis
            ok = lhs <= c_eps + rel_tol * abs(c_eps)
            row.update(status="pass" if ok else "fail", rate=rate, dissipation=dis, lhs=lhs)
        rows.append(row)
    return rows


def cmd_audit(run_dir: Path) -> int:
    rows = audit_run(run_dir)
    meta = json.loads((run_dir / "metadata.json").read_text())
    h = meta["config_hash"]
    status_code = {"pass": 0.0, "fail": 1.0, "skipped": 2.0, "no_bound": 3.0}
    write_csv(
        run_dir / "audit.csv",
        ["time", "entropy_rate", "dissipation", "lhs", "bound", "status"],
        [
            (r["time"], r["rate"], r["dissipation"], r["lhs"],
             math.nan if r["bound"] is None else r["bound"], status_code[r["status"]])
            for r in rows
        ],
        h,
        "status codes: 0 pass, 1 fail, 2 skipped (not strictly positive), 3 no bound (eps = 0)",
    )
    counts = {s: sum(r["status"] == s for r in rows) for s in status_code}
    print(
        f"audit: {counts['pass']} pass, {counts['fail']} fail, "
        f"{counts['skipped']} skipped, {counts['no_bound']} without bound"
    )
    return 1 if counts["fail"] else 0


# -------------------------------------------------------------------- main


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML/JSON configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named experiment preset")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, help="worker threads (fallback: $CROSSDIFF_THREADS)")
    p.add_argument("--eps", type=float, help="self-diffusion coefficient")
    p.add_argument("--nu", type=float, help="cross-diffusion coefficient")
    p.add_argument("--cells", type=int, help="number of uniform cells")
    p.add_argument("--t-final", type=float, dest="t_final", help="final time")
    p.add_argument("--dt-report", type=float, dest="dt_report", help="reporting interval")
    p.add_argument("--integrator", choices=["rk4", "implicit_euler"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossdiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "integrate and write snapshots, diagnostics and metadata"),
        ("converge", "grid-refinement study against a benchmark run"),
        ("steady", "integrate until the rhs residual drops below tolerance"),
    ):
        _add_common(sub.add_parser(name, help=helptext))
    audit = sub.add_parser("audit", help="re-check the energy inequality on a stored run")
    audit.add_argument("run_dir", help="directory written by 'crossdiff run'")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "audit":
            return cmd_audit(Path(args.run_dir))
        config = load_config(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    commands = {"run": cmd_run, "converge": cmd_converge, "steady": cmd_steady}
    try:
        return commands[args.command](config)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
