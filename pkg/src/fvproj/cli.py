"""Command-line driver: run / verify / converge / mesh-info.

Exit codes: 0 success, 1 verification or admissibility failure, 2 bad
configuration, 3 linear-solver failure.
"""

import argparse
import os
import sys

from . import config as cfgmod
from . import linalg, mesh as meshmod, output, scheme, verification

__all__ = ["main", "main_entry"]


class InadmissibleMesh(Exception):
    pass


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fvproj",
        description="Finite volume projection solver for the incompressible "
                    "Navier-Stokes equations on triangular meshes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
            ("run", "simulate and write snapshots plus diagnostics"),
            ("verify", "operator-identity suite and consistency test"),
            ("converge", "manufactured-solution refinement study"),
            ("mesh-info", "admissibility report for a mesh")):
        s = sub.add_parser(name, help=desc)
        s.add_argument("--config", metavar="PATH", help="config file")
        s.add_argument("--mesh", metavar="generate:NXxNY|file:PATH")
        s.add_argument("--re", type=float, help="Reynolds number")
        s.add_argument("--dt", type=float, help="time step")
        s.add_argument("--tend", type=float, help="final time")
        s.add_argument("--out", metavar="DIR", help="output directory")
        s.add_argument("--levels", type=int, help="study refinement levels")
        s.add_argument("--alpha", type=float, help="mesh/step coupling exponent")
        s.add_argument("--seed", type=int, help="random seed for verify")
        s.add_argument("--no-timestamp", action="store_true",
                       help="omit wall-clock comments from snapshots")
    return parser


def _resolve_config(args):
    text = ""
    if args.config:
        with open(args.config) as f:
            text = f.read()
    cfg = cfgmod.parse_config(text)
    if args.mesh:
        kind, _, rest = args.mesh.partition(":")
        if kind == "generate" and rest:
            cfg["mesh.generate"], cfg["mesh.file"] = rest, None
        elif kind == "file" and rest:
            cfg["mesh.file"] = rest
        else:
            raise cfgmod.ConfigError(
                "mesh must be generate:NXxNY or file:PATH", key="mesh")
    for flag, key in (("re", "fluid.re"), ("dt", "time.k"), ("tend", "time.T"),
                      ("out", "output.dir"), ("levels", "study.levels"),
                      ("alpha", "study.alpha"), ("seed", "verify.seed")):
        value = getattr(args, flag)
        if value is not None:
            cfg[key] = value
    if args.no_timestamp:
        cfg["output.timestamp"] = False
    cfgmod._validate(cfg)
    return cfg


def _build_mesh(cfg, check=True):
    if cfg["mesh.file"]:
        with open(cfg["mesh.file"]) as f:
            m = meshmod.load_mesh(f.read())
        if check:
            report = meshmod.validate_admissibility(m)
            if not report.admissible:
                raise InadmissibleMesh("; ".join(report.messages)
                                       or "mesh is not admissible")
        return m
    nx, ny = (int(p) for p in cfg["mesh.generate"].lower().split("x"))
    return meshmod.generate_structured(nx, ny)


def _solver_config(cfg):
    return linalg.SolverConfig(rtol=cfg["solver.rtol"], atol=cfg["solver.atol"],
                               maxiter=cfg["solver.maxiter"],
                               preconditioner=cfg["solver.preconditioner"])


def _cmd_run(cfg):
    m = _build_mesh(cfg)
    mms = verification.builtin_mms(cfg["fluid.re"])
    run_cfg = scheme.RunConfig(
        re=cfg["fluid.re"], k=cfg["time.k"], T=cfg["time.T"],
        forcing=mms.forcing, initial=mms.velocity(0.0), exact=mms,
        init_mode=cfg["run.init_mode"],
        momentum_solver=_solver_config(cfg), pressure_solver=_solver_config(cfg))
    digest = cfgmod.config_hash(cfg)
    outdir = cfg["output.dir"]
    sinks = output.RunSinks(outdir, m, digest,
                            every=cfg["output.snapshot_every"],
                            timestamp=cfg["output.timestamp"])
    state, records = scheme.run(run_cfg, m, sinks=sinks)
    with open(os.path.join(outdir, "config.txt"), "w") as f:
        f.write("# config=%s mesh=%s\n" % (digest, m.digest))
        f.write(cfgmod.serialize_config(cfg))
    if records:
        output.plot_monitors(records, os.path.join(outdir, "monitors.png"))
    print("run complete: %d steps to t=%.6g, |u|=%.6g, outputs in %s"
          % (state.step, state.time, records[-1].l2_u if records else 0.0,
             outdir))
    return 0


def _cmd_verify(cfg):
    m = _build_mesh(cfg)
    code = 0
    report = verification.identity_suite(
        m, trials=cfg["verify.trials"], seed=cfg["verify.seed"],
        raise_on_violation=False)
    print("identity suite on mesh %s (%d trials, seed %d)"
          % (m.digest, report.trials, report.seed))
    for check in report.checks:
        if check.kind == "identity":
            status = "PASS" if check.passed else "FAIL"
            print("  %-40s %s  (worst relative gap %.3e)"
                  % (check.name, status, check.worst))
        else:
            print("  %-40s measured C = %.6g" % (check.name, check.worst))
    if not report.passed:
        code = 1

    v, lap, normal_grad = verification.neumann_test_field()
    meshes = [meshmod.generate_structured(n, n) for n in (8, 16, 32)]
    try:
        result = verification.consistency_order_test(
            v, lap, meshes, normal_grad=normal_grad)
        for row in result["rows"]:
            ratio = "" if row["ratio"] is None else " ratio=%.3f" % row["ratio"]
            print("  consistency defect h=%.5f: %.5e%s"
                  % (row["h"], row["defect"], ratio))
        print("  laplacian consistency                    PASS")
    except verification.OrderViolation as exc:
        print("  laplacian consistency                    FAIL  (%s)" % exc)
        code = 1
    return code


def _cmd_converge(cfg):
    nx0, _ = (int(p) for p in cfg["mesh.generate"].lower().split("x"))
    base = {"nx0": nx0, "k0": cfg["time.k"], "T": cfg["time.T"],
            "re": cfg["fluid.re"], "init_mode": "mms"}
    digests = []

    def progress(row):
        eoc = "" if row["eoc"] is None else "  eoc=%.3f" % row["eoc"]
        print("level %d: h=%.5f k=%.5f err=%.6e%s"
              % (row["level"], row["h"], row["k"], row["err_l2l2_u"], eoc))

    study = verification.convergence_study(
        cfg["study.levels"], cfg["study.alpha"], base, progress=progress)
    for lev in range(cfg["study.levels"]):
        digests.append(meshmod.generate_structured(nx0 * 2 ** lev,
                                                   nx0 * 2 ** lev).digest)
    outdir = cfg["output.dir"]
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "study.csv"), "w") as f:
        output.write_study_csv(study, f, cfgmod.config_hash(cfg), digests)
    output.plot_convergence(study, os.path.join(outdir, "convergence.png"))
    errs = study.errors
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    print("errors %s; outputs in %s"
          % ("strictly decreasing" if decreasing else "NOT decreasing", outdir))
    return 0 if decreasing else 1


def _cmd_mesh_info(cfg):
    m = _build_mesh(cfg, check=False)
    report = meshmod.validate_admissibility(m)
    print("mesh %s: %d vertices, %d triangles, %d edges, h=%.6g"
          % (m.digest, m.n_vertices, m.n_triangles, m.n_edges, m.h))
    print("max angle %.6g rad, min tau %.6g, min d %.3e"
          % (report.max_angle.max(), report.min_tau, report.min_d))
    for msg in report.messages:
        print("  " + msg)
    print("admissible" if report.admissible else "NOT admissible")
    return 0 if report.admissible else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        handler = {"run": _cmd_run, "verify": _cmd_verify,
                   "converge": _cmd_converge, "mesh-info": _cmd_mesh_info}
        return handler[args.command](cfg)
    except (cfgmod.ConfigError, meshmod.ParseError, FileNotFoundError,
            ValueError) as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return 2
    except (InadmissibleMesh, meshmod.NonConforming, meshmod.DegenerateTriangle,
            verification.IdentityViolation, verification.OrderViolation) as exc:
        print("verification failure: %s" % exc, file=sys.stderr)
        return 1
    except (scheme.SolverFailure, linalg.NotConverged) as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return 3


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
