"""Command-line front end.

    biped3d check     [--config PATH]
    biped3d optimize  [--config PATH] [--gait INIT] [--criterion torque|stability] [--out DIR]
    biped3d simulate  --gait PATH [--controller fixed|hzd|hzd+dlqr|reselected] [--steps N]
                      [--perturb-pos DEG] [--perturb-vel DEGPS] [--out DIR]
    biped3d analyze   --gait PATH [--controller ...] [--out DIR]
    biped3d dlqr      --gait PATH [--r FLOAT] [--out DIR]

``--gait`` takes a gait file or a bundled name (torque, stability,
torque-frontal).  Exit codes: 0 ok, 1 failed self-check, 2 infeasible or
unstable input, 3 numerical failure, 4 bad config or arguments.
Log verbosity comes from ``BIPED3D_LOG`` (e.g. DEBUG, INFO; default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (Biped3DError, ConfigError, FallDetected, NoConvergence, NoImpact, RiccatiDivergence)

EXIT_OK, EXIT_CHECK, EXIT_INFEASIBLE, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2, 3, 4
MANIFEST = "manifest.json"

log = logging.getLogger("biped3d")


@dataclass
class RunManifest:
    command: str
    config: str | None
    gait: str | None
    args: dict
    out_dir: str
    version: str = __version__
    started: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    python: str = field(default_factory=platform.python_version)
    tolerances: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    exit_code: int | None = None

    def write(self) -> Path:
        p = Path(self.out_dir) / MANIFEST
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(asdict(self), indent=2, default=str))
        return p


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biped3d", description="3D point-foot biped gait toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, gait_required=False):
        p.add_argument("--config", type=Path, help="INI config file")
        p.add_argument("--gait", required=gait_required, help="gait file or bundled gait name")
        p.add_argument("--out", type=Path, default=None, help="output directory")

    common(sub.add_parser("check", help="model property self-checks"))
    p = sub.add_parser("optimize", help="search for a periodic gait")
    common(p)
    p.add_argument("--criterion", choices=["torque", "stability"])
    p = sub.add_parser("simulate", help="closed-loop full-model simulation")
    common(p, gait_required=True)
    p.add_argument("--controller", choices=["fixed", "hzd", "hzd+dlqr", "reselected"], default="hzd")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--perturb-pos", type=float, default=0.0, metavar="DEG")
    p.add_argument("--perturb-vel", type=float, default=0.0, metavar="DEGPS")
    p = sub.add_parser("analyze", help="restricted Poincare stability analysis")
    common(p, gait_required=True)
    p.add_argument("--controller", choices=["hzd", "hzd+dlqr", "reselected"], default=None)
    p = sub.add_parser("dlqr", help="event-based DLQR gain synthesis")
    common(p, gait_required=True)
    p.add_argument("--r", type=float, default=None, help="input weight (default from config, 2)")
    return ap


def _out_dir(args, default: str) -> Path:
    return Path(args.out) if args.out else Path("runs") / f"{default}-{time.strftime('%Y%m%d-%H%M%S')}"


def _print_json(d):
    print(json.dumps(d, indent=2, default=str))


def cmd_check(args, cfg, manifest) -> int:
    from .checks import run_all

    results = run_all(cfg.params)
    for r in results:
        print(r.line())
    out = Path(manifest.out_dir) / "checks.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps([asdict(r) for r in results], indent=2, default=float))
    manifest.outputs.append(str(out))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_optimize(args, cfg, manifest) -> int:
    from dataclasses import replace

    from .gaits import resolve_gait
    from .optimizer import encode, optimize, save_report

    problem = cfg.problem if args.criterion is None else replace(cfg.problem, criterion=args.criterion)
    init = resolve_gait(args.gait or "torque")
    x0 = init.meta.get("decision_vector") or encode(init.qf, init.dqf).tolist()
    problem = replace(problem, chart_hint=float(init.qf[1]))
    try:
        x, ev, report = optimize(np.asarray(x0), problem, cfg.params)
    except NoConvergence as e:
        print(f"no feasible gait found: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = Path(manifest.out_dir)
    ev.design.name = f"optimized-{problem.criterion}"
    gp = ev.design.save(out / "gait.json")
    rp = save_report(report, out / "optimization_report.json")
    manifest.outputs += [str(gp), str(rp)]
    _print_json(report["final"])
    return EXIT_OK


def _stability_report(design, cfg, controller):
    from . import hzd

    st = cfg.stability
    if controller == "hzd+dlqr":
        if design.K is None:
            raise ConfigError("gait file has no K; run the dlqr command first")
        rep = hzd.linearize(design, cfg.params, st.perturbation, with_F=True,
                            beta_perturbation=st.beta_perturbation, K=design.K)
        cl = hzd.linearize_closed_loop(design, cfg.params, design.K, st.perturbation)
        rep.closed_loop_eigenvalues = cl.eigenvalues
        return rep, cl.spectral_radius
    if controller == "reselected" and design.is_default_selection:
        raise ConfigError("reselected analysis needs a gait with a non-default output selection")
    rep = hzd.linearize(design, cfg.params, st.perturbation)
    return rep, rep.spectral_radius


def cmd_analyze(args, cfg, manifest) -> int:
    from .gaits import resolve_gait

    design = resolve_gait(args.gait)
    controller = args.controller or ("reselected" if not design.is_default_selection else "hzd")
    rep, rho = _stability_report(design, cfg, controller)
    d = rep.to_dict()
    d.update({"controller": controller, "effective_spectral_radius": rho,
              "verdict": "STABLE" if rho < 1.0 else "UNSTABLE"})
    out = Path(manifest.out_dir) / "stability_report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(d, indent=2))
    manifest.outputs.append(str(out))
    print(f"verdict {d['verdict']}  spectral radius {rho:.4f}  ({controller})")
    print("eigenvalues " + ", ".join(f"{complex(a, b):.4f}" for a, b in d["eigenvalues"]))
    return EXIT_OK


def cmd_dlqr(args, cfg, manifest) -> int:
    from . import hzd
    from .gaits import resolve_gait

    design = resolve_gait(args.gait)
    r = cfg.stability.r if args.r is None else args.r
    if not r > 0:
        raise ConfigError("--r must be positive")
    st = cfg.stability
    rep = hzd.linearize(design, cfg.params, st.perturbation, with_F=True, beta_perturbation=st.beta_perturbation)
    try:
        K = hzd.dlqr(rep.Az, rep.F, r)
    except RiccatiDivergence as e:
        print(f"(A^z, F) not stabilizable: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    rep.K = K
    rep.closed_loop_eigenvalues = hzd.sorted_eigenvalues(rep.Az - rep.F @ K)
    design.K = K
    design.meta.update({"dlqr_r": r})
    out = Path(manifest.out_dir)
    gp = design.save(out / "gait_dlqr.json")
    rp = rep.save(out / "dlqr_report.json")
    manifest.outputs += [str(gp), str(rp)]
    rho = float(np.max(np.abs(rep.closed_loop_eigenvalues)))
    print(f"open-loop spectral radius {rep.spectral_radius:.4f}, closed-loop {rho:.4f}")
    print("K =\n" + np.array2string(K, precision=4, suppress_small=True))
    return EXIT_OK


def cmd_simulate(args, cfg, manifest) -> int:
    from .gaits import resolve_gait
    from .simulator import export_records, make_controller, perturbed_start, simulate_walk, zd_errors

    design = resolve_gait(args.gait)
    if args.steps < 1 or args.steps > cfg.sim.max_steps:
        raise ConfigError(f"--steps must be in [1, {cfg.sim.max_steps}]")
    try:
        ctrl = make_controller(args.controller, design)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    q, dq = perturbed_start(design, args.perturb_pos, args.perturb_vel)
    code, err, records = EXIT_OK, None, []
    try:
        records = simulate_walk(q, dq, ctrl, args.steps, cfg.params, cfg.sim)
    except (FallDetected, NoImpact) as e:
        code, err, records = EXIT_INFEASIBLE, e, getattr(e, "records", [])
    except Biped3DError as e:
        code, err, records = EXIT_NUMERIC, e, getattr(e, "records", [])
    errs = zd_errors(records, design.xz_star)
    extra = {"controller": args.controller, "gait": str(args.gait), "perturbation_deg": args.perturb_pos,
             "perturbation_degps": args.perturb_vel, "fixed_point": design.xz_star.tolist(),
             "zd_error": errs.tolist(), "completed_steps": len(records),
             "failure": None if err is None else f"{type(err).__name__}: {err}"}
    paths = export_records(records, manifest.out_dir, extra)
    manifest.outputs += [str(p) for p in paths.values()]
    for r, e in zip(records, errs):
        print(f"step {r.index:3d}  T={r.T:.4f}  L={r.L:.4f}  width={r.width:.4f}  |x^z - x*|={e:.3e}")
    if err is not None:
        print(f"stopped: {type(err).__name__}: {err}", file=sys.stderr)
    return code


COMMANDS = {"check": cmd_check, "optimize": cmd_optimize, "simulate": cmd_simulate, "analyze": cmd_analyze,
            "dlqr": cmd_dlqr}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BIPED3D_LOG", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    from .config import load_config

    out = _out_dir(args, args.command)
    manifest = RunManifest(command=args.command, config=None if args.config is None else str(args.config),
                           gait=getattr(args, "gait", None),
                           args={k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()},
                           out_dir=str(out))
    try:
        cfg = load_config(args.config)
        manifest.tolerances = {"sim_rtol": cfg.sim.rtol, "sim_atol": cfg.sim.atol, "event_tol": cfg.sim.event_tol,
                               "perturbation_rad": cfg.stability.perturbation.tolist(),
                               "eq_tol": cfg.problem.eq_tol, "ineq_tol": cfg.problem.ineq_tol}
        code = COMMANDS[args.command](args, cfg, manifest)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        code = EXIT_CONFIG
    except (FileNotFoundError, KeyError, json.JSONDecodeError) as e:
        print(f"bad input: {e}", file=sys.stderr)
        code = EXIT_CONFIG
    except NoConvergence as e:
        print(f"infeasible: {e}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except Biped3DError as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        code = EXIT_NUMERIC
    manifest.exit_code = code
    manifest.write()
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
