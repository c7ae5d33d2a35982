"""Command line entry point: ``sllg simulate | twin | analyze | selftest``.

Exit codes: 0 COMPLETED, 2 BLOWUP_SUSPECTED, 1 ERROR (including usage errors).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, blowup_config, initial_data, load_config, model_params, step_config, twin_config
from .diagnostics import BlowupMonitor, SeriesObserver, energy, format_value, write_csv
from .field_core import FieldError, Grid, gradient, integrate, project_to_sphere, read_snapshot, write_snapshot
from .integrator import StepFailure, config_hash, read_checkpoint, run, write_checkpoint
from .lab import REPORT_COLUMNS, make_initial, twin_run
from .littlewood_paley import PartitionError, all_blocks, besov_norm, build_partition
from .model import ModelParams, State, m_nonlinear

EXIT_OK, EXIT_ERROR, EXIT_BLOWUP = 0, 1, 2
STATUS_EXIT = {"COMPLETED": EXIT_OK, "INTERRUPTED": EXIT_OK, "BLOWUP_SUSPECTED": EXIT_BLOWUP,
               "ERROR": EXIT_ERROR}

log = logging.getLogger("sllg")


class _Parser(argparse.ArgumentParser):
    # exit code 2 is reserved for BLOWUP_SUSPECTED
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def run_hash(cfg: dict) -> str:
    """Hash of everything that determines the trajectory (output location excluded)."""
    return config_hash({k: v for k, v in cfg.items() if k != "output"})


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def write_manifest(out: Path, cfg: dict, command: str, outputs: dict) -> dict:
    """Manifest written before the run starts; the end-of-run record goes to ``status.json``."""
    manifest = {
        "kind": "sllg-manifest",
        "command": command,
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg,
        "config_hash": run_hash(cfg),
        "seeds": {"initial": cfg["seed"], "twin": cfg["twin"]["seed"]},
        "grid": cfg["grid"],
        "params": cfg["model"],
        "outputs": outputs,
        "started": _now(),
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def _finish(out: Path, status: str, started: str, **extra) -> None:
    _write_json(out / "status.json", dict(status=status, started=started, finished=_now(), **extra))


def _snapshot_name(k: int) -> str:
    return f"snapshot_{k:03d}.sllg"


def _save_state(path: Path, state: State) -> None:
    write_snapshot(path, np.concatenate([state.s, state.m], axis=-1), state.grid)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.out:
        cfg["output"]["dir"] = args.out
    params, scfg, bcfg = model_params(cfg), step_config(cfg), blowup_config(cfg)
    rcfg = cfg["run"]
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    chash = run_hash(cfg)

    step_counter, dt_hint, next_snap = 0, None, 0
    if args.resume:
        state, header = read_checkpoint(args.resume)
        if header["config_hash"] != chash:
            raise ConfigError(f"checkpoint {args.resume} was written with a different config "
                              f"({header['config_hash']} != {chash})")
        step_counter, dt_hint = header["step"], header["dt"]
        next_snap = header.get("next_snapshot", 0)
    else:
        state = make_initial(initial_data(cfg))

    t_end = rcfg["t_end"]
    targets = sorted(set([0.0] + list(rcfg["snapshot_times"]) + [t_end]))
    snaps = {t: _snapshot_name(k) for k, t in enumerate(targets)}
    outputs = {"series": "series.csv", "snapshots": snaps, "checkpoint": "checkpoint.ckpt",
               "status": "status.json"}
    if args.resume and (out / "manifest.json").exists():
        # the manifest belongs to the original run and stays untouched
        manifest = json.loads((out / "manifest.json").read_text())
    else:
        manifest = write_manifest(out, cfg, "simulate", outputs)

    series = SeriesObserver(params, bcfg)
    if args.resume and (out / "series.csv").exists():
        series.rows = _read_rows(out / "series.csv")
    else:
        series(state)
    status, message, rejected = "COMPLETED", "", 0
    max_steps = args.max_steps if args.max_steps is not None else rcfg["max_steps"]
    try:
        for k, target in enumerate(targets):
            if k < next_snap:
                continue
            if target > state.t:
                res = run(state, target, scfg, params, observers=[series], cadence=rcfg["cadence"],
                          max_steps=max_steps, step_counter=step_counter, dt_hint=dt_hint,
                          observe_initial=False)
                state, step_counter, dt_hint = res.state, res.steps, res.dt
                rejected += res.rejected
                if res.status != "COMPLETED":
                    status, message = res.status, res.message
                    break
            _save_state(out / snaps[target], state)
            next_snap = k + 1
    except StepFailure as exc:
        status, message = "ERROR", str(exc)
        state = exc.state
    write_checkpoint(out / "checkpoint.ckpt", state, dt_hint or scfg.dt, step_counter, chash,
                     extra={"next_snapshot": next_snap})
    series.write(out / "series.csv")
    _finish(out, status, manifest["started"], t=format_value(float(state.t)), steps=step_counter,
            rejected=rejected, message=message)
    print(f"{status} t={state.t:.17g} steps={step_counter} rejected={rejected} -> {out}")
    if message:
        print(message, file=sys.stderr)
    return STATUS_EXIT[status]


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_twin(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.out:
        cfg["output"]["dir"] = args.out
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = write_manifest(out, cfg, "twin", {"report": "twin_report.csv", "status": "status.json"})
    report = twin_run(twin_config(cfg), model_params(cfg), step_config(cfg))
    write_csv(out / "twin_report.csv", report.rows(), REPORT_COLUMNS)
    _finish(out, report.status, manifest["started"], c_hat=format_value(report.c_hat),
            c_lsq=format_value(report.c_lsq), message=report.message)
    print(f"{report.status} observations={len(report.t)} sup W={format_value(float(np.max(report.W, initial=0.0)))}"
          f" c_hat={format_value(report.c_hat)} c_lsq={format_value(report.c_lsq)} -> {out}")
    if report.message:
        print(report.message, file=sys.stderr)
    return STATUS_EXIT[report.status]


def analyze_state(state: State, params: ModelParams, cfg: dict) -> dict:
    """Offline diagnostics of one state (same code paths as the in-run observers)."""
    grid = state.grid
    rep = energy(state, params)
    beta_exp = cfg["lp"]["beta_exp"]
    out = {"t": state.t, "Es": rep.Es, "Em": rep.Em, "E": rep.E,
           "dirichlet_over_8pi": rep.Em / (8 * np.pi)}
    try:
        part = build_partition(grid)
        out["besov_s"] = besov_norm(state.s, -beta_exp, part)
        out["besov_grad_m"] = besov_norm(gradient(state.m, grid), -beta_exp, part)
    except PartitionError:
        out["besov_s"] = out["besov_grad_m"] = float("nan")
    mon = BlowupMonitor(blowup_config(cfg))
    out["verdict"] = mon.observe(state).value
    out["max_local_energy"] = mon.max_local
    out["mean_m_norm_dev"] = float(integrate(np.abs(np.linalg.norm(state.m, axis=-1) - 1), grid) / grid.area)
    return out


def load_state(path: str) -> State:
    data, grid = read_snapshot(path)
    if data.shape[-1] == 6:
        return State(data[..., :3].copy(), data[..., 3:].copy(), 0.0, grid)
    if data.shape[-1] == 3:
        return State(np.zeros_like(data), data.copy(), 0.0, grid)
    raise FieldError(f"{path}: expected 3 (m) or 6 (s, m) components, got {data.shape[-1]}")


ANALYZE_KEYS = ("Es", "Em", "E", "dirichlet_over_8pi", "besov_s", "besov_grad_m", "max_local_energy",
                "verdict")


def cmd_analyze(args) -> int:
    cfg = load_config(args.config, args.set)
    params = model_params(cfg)
    rows = []
    for path in args.snapshots:
        res = analyze_state(load_state(path), params, cfg)
        res["file"] = path
        rows.append(res)
        print(path)
        for key in ANALYZE_KEYS:
            print(f"  {key} = {format_value(res[key])}")
    if args.csv:
        write_csv(args.csv, rows, ("file",) + ANALYZE_KEYS)
    return EXIT_OK


def _negative_controls() -> list[tuple[str, bool, str]]:
    out = []
    try:
        ModelParams(beta=1.2)
        out.append(("beta = 1.2 rejected", False, "accepted"))
    except ValueError as exc:
        out.append(("beta = 1.2 rejected", True, str(exc)))
    try:
        load_config(None, ["model.beta=1.2"], environ={})
        out.append(("config with beta = 1.2 rejected", False, "accepted"))
    except ConfigError as exc:
        out.append(("config with beta = 1.2 rejected", True, str(exc)))
    # aliasing injected: rough m, nonlinear term evaluated without dealiasing
    grid = Grid(32, 32)
    rng = np.random.default_rng(0)
    m = project_to_sphere(np.array([0.0, 0.0, 1.0]) + 0.3 * rng.normal(size=grid.shape + (3,)))
    s = np.zeros_like(m)
    part = build_partition(grid)
    N = m_nonlinear(s, m, ModelParams(dealias=False), grid)
    rel = float(np.linalg.norm(sum(all_blocks(N, part)) - N) / np.linalg.norm(N))
    out.append(("partition-of-unity check fails with dealiasing off", rel > 1e-6,
                f"reconstruction error {rel:.2e}"))
    return out


def cmd_selftest(args) -> int:
    from .acceptance import CRITERIA, evaluate

    wanted = [k for k, _, _ in CRITERIA]
    if args.only:
        wanted = [int(x) for x in args.only.split(",") if x]
    failed = 0
    for k in wanted:
        res = evaluate(k)
        failed += not res.passed
        print(res.line(), flush=True)
    for name, ok, detail in _negative_controls():
        failed += not ok
        print(f"[{'PASS' if ok else 'FAIL'}] control {name}: {detail}")
    print(f"{failed} failed")
    return EXIT_OK if failed == 0 else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sllg", description="Spin-accumulation / LLG spectral simulator and audits.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("config", help="YAML config file (or a manifest.json)")
        else:
            sp.add_argument("--config", help="YAML config file for model/analysis keys")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set model.alpha=0.5")

    sp = sub.add_parser("simulate", help="evolve one state and write series, snapshots, checkpoint")
    common(sp)
    sp.add_argument("--out", help="output directory (overrides output.dir)")
    sp.add_argument("--resume", help="checkpoint file to resume from")
    sp.add_argument("--max-steps", type=int, help="stop after this many steps (resumable)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("twin", help="twin-run uniqueness audit")
    common(sp)
    sp.add_argument("--out", help="output directory (overrides output.dir)")
    sp.set_defaults(func=cmd_twin)

    sp = sub.add_parser("analyze", help="energies, Besov norms and blow-up verdict of snapshots")
    sp.add_argument("snapshots", nargs="+")
    common(sp, config_required=False)
    sp.add_argument("--csv", help="also write the results to this CSV file")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("selftest", help="run the acceptance suite and negative controls")
    sp.add_argument("--only", help="comma-separated criterion numbers")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"sllg: config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (FieldError, OSError, ValueError) as exc:
        print(f"sllg: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
