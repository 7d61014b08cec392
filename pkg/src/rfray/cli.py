"""Command-line surface: simulate, gradcheck, optimize, demo.

Every command reads a strict-schema scene file, writes its outputs
under --out, and drops a manifest.json with content hashes of inputs
and outputs.  Outputs are deterministic for a fixed --seed and worker
count (the manifest timestamp lives in its own field so payload
comparisons can skip it).

Exit codes: 0 success, 1 check failure, 2 usage or validation error,
3 resource limit or interruption, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .demos import run_double_slit, run_edge_sweep, run_measure_zero
from .engine import Scene, build_plan, evaluate_plan, render_field_grid
from .field import (CIR, CirTap, build_cir, load_cir_json, save_cir_csv,
                    save_cir_json, save_field_grid, save_grid_csv)
from .gradients import ParamVector, UnsupportedModeError, gradcheck
from .optimize import (LossConfig, MeasurementBundle, Observation,
                       OptimizerConfig, optimize, save_history_csv,
                       save_run_manifest, save_snapshot_obj)
from .parallel import worker_count
from .sceneio import (LoadedScene, SceneValidationError, load_scene,
                      sha256_of, validate_document, write_manifest)
from .surrogate import (SurrogateConfig, default_schedule, load_profile_json)

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_RESOURCE = 3
EXIT_INTERNAL = 4

# desk-scale resource caps; beyond these the run is refused, not attempted
MAX_GRID_CELLS = 1_000_000
MAX_TRIANGLES = 200_000
MAX_DEPTH = 6


class ResourceLimitError(RuntimeError):
    pass


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _check_resources(loaded: LoadedScene):
    if loaded.scene.mesh.n_triangles > MAX_TRIANGLES:
        raise ResourceLimitError(
            f"mesh has {loaded.scene.mesh.n_triangles} triangles "
            f"(limit {MAX_TRIANGLES})")
    if loaded.scene.cfg.max_depth > MAX_DEPTH:
        raise ResourceLimitError(
            f"max_depth {loaded.scene.cfg.max_depth} exceeds limit {MAX_DEPTH}")
    if loaded.grid is not None and loaded.grid.nx * loaded.grid.ny > MAX_GRID_CELLS:
        raise ResourceLimitError(
            f"grid has {loaded.grid.nx * loaded.grid.ny} cells "
            f"(limit {MAX_GRID_CELLS})")


def _parse_params(spec: str, scene: Scene, theta0_csv: str | None,
                  rx) -> ParamVector:
    """Parameter spec: 'txrx', 'rigid', 'vertex:ID[,ID...]', or
    'materials:NAME[,NAME...]'; an optional '@name,name' suffix selects
    an active subset (e.g. 'rigid@translation.z')."""
    active = None
    if "@" in spec:
        spec, active_csv = spec.split("@", 1)
        active = tuple(s.strip() for s in active_csv.split(",") if s.strip())
    kind, _, arg = spec.partition(":")
    if kind == "txrx":
        theta = ParamVector.txrx(active=active)
    elif kind == "rigid":
        theta = ParamVector.rigid(active=active)
    elif kind == "vertex":
        if not arg:
            raise SceneValidationError(
                "params: 'vertex:' needs vertex ids", field="params")
        ids = [int(s) for s in arg.split(",")]
        n_verts = len(scene.mesh.vertices)
        bad = [i for i in ids if not 0 <= i < n_verts]
        if bad:
            raise SceneValidationError(
                f"params: vertex ids {bad} out of range (mesh has "
                f"{n_verts} vertices)", field="params")
        theta = ParamVector.vertex_offsets(ids, active=active)
    elif kind == "materials":
        if not arg:
            raise SceneValidationError(
                "params: 'materials:' needs material names", field="params")
        theta = ParamVector.materials(scene, [s.strip() for s in arg.split(",")],
                                      active=active)
    else:
        raise SceneValidationError(
            f"params: unknown parameter kind {kind!r} (expected txrx, rigid, "
            f"vertex:..., or materials:...)", field="params")
    if theta0_csv:
        vals = [float(s) for s in theta0_csv.split(",")]
        if len(vals) != theta.values.size:
            raise SceneValidationError(
                f"theta0: expected {theta.values.size} values "
                f"({', '.join(theta.names)}), got {len(vals)}", field="theta0")
        theta = theta.replace_values(vals)
    return theta


# -- commands -----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    loaded = load_scene(args.scene)
    _check_resources(loaded)
    scene = loaded.scene
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: dict = {}

    if loaded.grid is not None:
        fg = render_field_grid(scene, loaded.grid)
        sidecar = {"frequency_hz": scene.cfg.frequency_hz,
                   "weight_mode": scene.cfg.weight_mode.kind,
                   "max_depth": scene.cfg.max_depth}
        bin_path = out / "field.rfdt"
        save_field_grid(bin_path, fg, sidecar=sidecar)
        outputs["field.rfdt"] = bin_path
        outputs["field.rfdt.json"] = Path(str(bin_path) + ".json")
        if args.csv:
            save_grid_csv(out / "field.csv", fg)
            outputs["field.csv"] = out / "field.csv"
    else:
        plan = build_plan(scene, loaded.rx)
        paths = evaluate_plan(scene, plan)
        cir = build_cir(paths, scene.cfg)
        save_cir_json(out / "cir.json", cir)
        outputs["cir.json"] = out / "cir.json"
        if args.csv:
            save_cir_csv(out / "cir.csv", cir)
            outputs["cir.csv"] = out / "cir.csv"

    write_manifest(out / "manifest.json", "simulate",
                   {"scene": args.scene}, outputs,
                   seed=args.seed, workers=worker_count(),
                   timestamp=_timestamp())
    for name in outputs:
        print(f"wrote {out / name}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    loaded = load_scene(args.scene)
    _check_resources(loaded)
    if loaded.rx is None:
        raise SceneValidationError(
            f"{args.scene}: $.rx: gradcheck needs a single receiver, "
            f"not a grid", field="$.rx")
    scene = loaded.scene
    theta = _parse_params(args.params, scene, args.theta0, loaded.rx)
    report = gradcheck(scene, theta, loaded.rx,
                       tolerance=args.tolerance, floor=args.floor)
    validate_document(report, "gradcheck", source="gradcheck report")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gradcheck.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out / "manifest.json", "gradcheck",
                   {"scene": args.scene},
                   {"gradcheck.json": out / "gradcheck.json"},
                   seed=args.seed, workers=worker_count(),
                   timestamp=_timestamp())
    worst = max((c["rel_err"] for c in report["components"]), default=0.0)
    print(f"gradcheck: {len(report['components'])} components, "
          f"worst rel err {worst:.3e}, ok={report['ok']}")
    return EXIT_OK if report["ok"] else EXIT_CHECK


def _load_target(path) -> Observation | None:
    """Target file: CIR JSON (tap list) or range-profile JSON."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, list):
        validate_document(doc, "cir", source=str(path))
        cir = CIR(taps=[CirTap(tau=d["tau"], alpha=d["alpha"],
                               phi=d["phi"], kind=d["kind"]) for d in doc])
        return ("taps", cir.taps)
    if isinstance(doc, dict) and "bins" in doc:
        validate_document(doc, "profile", source=str(path))
        return ("profile", np.asarray(doc["bins"], dtype=float))
    raise SceneValidationError(
        f"{path}: target must be a CIR JSON array or a profile object",
        field="target")


def cmd_optimize(args) -> int:
    loaded = load_scene(args.scene)
    _check_resources(loaded)
    if loaded.rx is None:
        raise SceneValidationError(
            f"{args.scene}: $.rx: optimize needs a single receiver, "
            f"not a grid", field="$.rx")
    scene = loaded.scene
    theta0 = _parse_params(args.params, scene, args.theta0, loaded.rx)

    kind, payload = _load_target(args.target)
    if kind == "taps":
        obs = Observation(rx=loaded.rx, taps=payload)
    else:
        obs = Observation(rx=loaded.rx, profile=payload)
    bundle = MeasurementBundle([obs])

    n_bins = args.bins
    if kind == "profile" and len(payload) != n_bins:
        n_bins = len(payload)
    sur = SurrogateConfig(n_bins=n_bins, dtau_per_bin=1.0 / args.bandwidth,
                          f_c=scene.cfg.frequency_hz,
                          schedule=default_schedule(max(args.iters, 1)))
    opt = OptimizerConfig(lr=args.lr, beta_reg=args.beta_reg,
                          max_iters=args.iters,
                          convergence_tol=args.convergence_tol)
    loss = LossConfig(kind="profile_mse")
    result = optimize(scene, theta0, bundle, loss, opt, sur,
                      snapshot_every=args.snapshot_every)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: dict = {}
    theta_doc = {"kind": result.theta.kind,
                 "names": list(result.theta.names),
                 "values": [float(v) for v in result.theta.values]}
    with open(out / "theta.json", "w", encoding="utf-8") as fh:
        json.dump(theta_doc, fh, indent=2)
        fh.write("\n")
    outputs["theta.json"] = out / "theta.json"
    save_history_csv(out / "history.csv", result)
    outputs["history.csv"] = out / "history.csv"
    for it, verts in result.snapshots:
        p = out / f"snapshot_{it:05d}.obj"
        save_snapshot_obj(p, verts, scene.mesh)
        outputs[p.name] = p
    save_run_manifest(out / "run.json",
                      {"file": str(args.scene)}, result.theta, loss, opt, sur,
                      result)
    with open(out / "run.json", "r", encoding="utf-8") as fh:
        validate_document(json.load(fh), "run", source="run manifest")
    outputs["run.json"] = out / "run.json"
    write_manifest(out / "manifest.json", "optimize",
                   {"scene": args.scene, "target": args.target}, outputs,
                   seed=args.seed, workers=worker_count(),
                   timestamp=_timestamp())
    vals = ", ".join(f"{n}={v:.6g}" for n, v in
                     zip(result.theta.names, result.theta.values))
    print(f"optimize: {result.message}; theta* [{vals}]")
    if result.message.startswith("interrupted"):
        return EXIT_RESOURCE
    return EXIT_OK


def cmd_demo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.name == "double-slit":
        summary = run_double_slit(out)
        print(f"double-slit: fringe spacing {summary['measured_spacing']:.4f} m "
              f"(paraxial {summary['expected_spacing']:.4f} m, "
              f"rel err {summary['rel_err']:.1%})")
    elif args.name == "measure-zero":
        summary = run_measure_zero(out, seed=args.seed)
        print(f"measure-zero: MC estimate {summary['mc_estimate']} "
              f"({summary['exact_hits']} exact hits), deterministic |E| "
              f"{summary['field_abs']:.6g}")
    else:
        summary = run_edge_sweep(out)
        jumps = summary["jumps"]
        print("edge-sweep: max adjacent jumps "
              + ", ".join(f"{m}={jumps[m]:.4g}" for m in jumps))
    files = {p.name: p for p in sorted(out.iterdir())
             if p.name != "manifest.json"}
    write_manifest(out / "manifest.json", f"demo {args.name}", {}, files,
                   seed=args.seed, workers=worker_count(),
                   timestamp=_timestamp())
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rfray",
        description="Differentiable RF ray tracing: simulate, check "
                    "gradients, optimize scene parameters, run demos.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="rfray_out",
                       help="output directory (default: rfray_out)")
        p.add_argument("--seed", type=int, default=0,
                       help="RNG seed for stochastic parts (default: 0)")
        p.add_argument("--workers", type=int, default=None,
                       help="worker threads (default: RFDT_THREADS or cores)")

    p = sub.add_parser("simulate", help="trace a scene to a CIR or field grid")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--csv", action="store_true",
                   help="also write CSV versions of the outputs")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gradcheck",
                       help="compare analytic and finite-difference gradients")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--params", default="txrx",
                   help="parameter spec: txrx | rigid | vertex:IDS | "
                        "materials:NAMES, optionally @subset (default: txrx)")
    p.add_argument("--theta0", default=None,
                   help="comma-separated evaluation point (default: nominal)")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--floor", type=float, default=1e-9)
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("optimize", help="fit parameters to a measured target")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("target", help="target file: CIR JSON or profile JSON")
    p.add_argument("--params", required=True,
                   help="parameter spec (see gradcheck)")
    p.add_argument("--theta0", default=None,
                   help="comma-separated initial values (default: nominal)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--beta-reg", type=float, default=0.0,
                   help="Laplacian regularizer weight")
    p.add_argument("--convergence-tol", type=float, default=1e-12)
    p.add_argument("--bins", type=int, default=256,
                   help="range-profile FFT size (default: 256)")
    p.add_argument("--bandwidth", type=float, default=2e9,
                   help="profile bandwidth in Hz; bin delay is 1/B "
                        "(default: 2e9)")
    p.add_argument("--snapshot-every", type=int, default=50)
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("demo", help="run a built-in demonstration")
    p.add_argument("name", choices=("double-slit", "measure-zero",
                                    "edge-sweep"))
    common(p)
    p.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers is not None:
        if args.workers < 1:
            print("error: --workers must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        os.environ["RFDT_THREADS"] = str(args.workers)
    try:
        return args.func(args)
    except (SceneValidationError, UnsupportedModeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RESOURCE
    except Exception as exc:                  # pragma: no cover - safety net
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
