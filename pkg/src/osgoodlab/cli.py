"""Command-line front end: ``osgoodlab {osgood, validate-lemmas, certify}``.

Exit codes
    0  success (for ``certify`` also the uniqueness branch)
    1  configuration or precondition error
    2  Osgood probe inconclusive
    3  a lemma check or certificate invariant failed
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


from .config import ConfigError, RunConfig, load_config
from .elliptic import build_semigroup, estimate_kappa, kernel_matrix, verify_kernel_ordering
from .errors import (
    ConstructionError,
    HorizonExceeded,
    InconclusiveOsgood,
    KappaNotPositive,
    MonotonicityViolation,
    NonConvergence,
    OsgoodHolds,
)
from .io import write_csv, write_json
from .nonlinearity import OsgoodClass, check_osgood
from .nonuniqueness import certify_nonuniqueness

EXIT_OK, EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_FAILED = 0, 1, 2, 3

DEFAULT_KAPPA_RADIUS = 0.25


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _verdict(cfg: RunConfig):
    return check_osgood(cfg.nonlinearity, cfg.epsilon, cfg.tol, max_shells=cfg.max_shells)


def cmd_osgood(cfg: RunConfig, out: Path) -> int:
    verdict = _verdict(cfg)
    write_json(out / "report.json", {"command": "osgood", "nonlinearity": repr(cfg.nonlinearity), **verdict.to_dict()})
    print(f"{verdict.classification.value} integral_estimate={verdict.integral_estimate!r}")
    return EXIT_INCONCLUSIVE if verdict.classification is OsgoodClass.INCONCLUSIVE else EXIT_OK


def _axis_names(prefix: str, d: int) -> list[str]:
    return [prefix] if d == 1 else [f"{prefix}_{k + 1}" for k in range(d)]


def cmd_validate_lemmas(cfg: RunConfig, out: Path) -> int:
    problem = cfg.problem
    r = cfg.r if cfg.r is not None else DEFAULT_KAPPA_RADIUS
    stepper = cfg.stepper()
    dirichlet = problem.with_beta(0.0)
    try:
        kappa = estimate_kappa(dirichlet, r, cfg.t_samples, stepper=stepper)
        kappa_error = None
    except KappaNotPositive as exc:
        kappa, kappa_error = None, str(exc)
    ordering = verify_kernel_ordering(problem, cfg.times, stepper, seed=cfg.seed)

    d = problem.domain.dimension
    pts = problem.domain.points
    sg_b, sg_d = build_semigroup(problem, stepper), build_semigroup(dirichlet, stepper)

    def rows():
        for t in cfg.times:
            Kb = kernel_matrix(sg_b, t).values
            Kd = kernel_matrix(sg_d, t).values
            for i in range(0, len(pts), cfg.kernel_stride):
                for j in range(0, len(pts), cfg.kernel_stride):
                    yield (*pts[i], *pts[j], t, Kb[i, j], Kd[i, j])

    write_csv(out / "kernel.csv", [*_axis_names("x", d), *_axis_names("y", d), "t", "K", "K_D"], rows())

    ok = ordering.passed and kappa_error is None
    report = {
        "command": "validate-lemmas",
        "beta": list(problem.beta_sides),
        "ordering": ordering.to_dict(),
        "min_ordering_gap": ordering.min_gap,
        "kappa": None if kappa is None else kappa.kappa,
        "r": r,
        "window": None if kappa is None else list(kappa.window),
        "kappa_detail": None if kappa is None else kappa.to_dict(),
        "kappa_error": kappa_error,
        "passed": ok,
    }
    if not ordering.passed:
        report["violation"] = {"x_y_t": list(ordering.worst), "gap": ordering.min_gap}
    write_json(out / "report.json", report)
    if not ordering.passed:
        _say(f"ordering lemma FAIL at (x, y, t) = {ordering.worst}: gap {ordering.min_gap:.3g}")
    if kappa_error:
        _say(f"kappa lemma FAIL: {kappa_error}")
    print(f"ordering {'PASS' if ordering.passed else 'FAIL'} min_gap={ordering.min_gap:.6g}; "
          f"kappa {'PASS' if kappa_error is None else 'FAIL'}"
          + ("" if kappa is None else f" kappa={kappa.kappa:.6g} r={r}"))
    return EXIT_OK if ok else EXIT_FAILED


def cmd_certify(cfg: RunConfig, out: Path) -> int:
    verdict = _verdict(cfg)
    if verdict.classification is OsgoodClass.INCONCLUSIVE:
        write_json(out / "report.json", {"command": "certify", "result": "Inconclusive", "osgood": verdict.to_dict()})
        _say("Osgood probe inconclusive; no certificate attempted")
        return EXIT_INCONCLUSIVE
    if verdict.classification is OsgoodClass.DIVERGENT:
        write_json(out / "report.json", {
            "command": "certify",
            "result": "OsgoodHolds",
            "conclusion": "uniqueness",
            "reason": "the Osgood integral diverges, which is equivalent to u = 0 being the only "
                      "bounded solution from zero data",
            "osgood": verdict.to_dict(),
        })
        print("OsgoodHolds: uniqueness")
        return EXIT_OK

    try:
        cert = certify_nonuniqueness(
            cfg.problem, cfg.nonlinearity, cfg.dt, r=cfg.r, t_samples=cfg.t_samples,
            stepper=cfg.stepper(), max_iter=cfg.max_iter, with_maximal=cfg.maximal,
        )
    except (MonotonicityViolation, NonConvergence, KappaNotPositive, HorizonExceeded) as exc:
        write_json(out / "report.json", {"command": "certify", "result": "CertificateFailed",
                                         "error": type(exc).__name__, "message": str(exc)})
        _say(f"certificate FAIL: {type(exc).__name__}: {exc}")
        return EXIT_FAILED

    d = cfg.problem.domain.dimension
    write_csv(out / "fields.csv", [*_axis_names("x", d), "t", "v", "U", "w"], cert.field_rows())
    write_json(out / "report.json", {"command": "certify", "osgood": verdict.to_dict(), **cert.to_dict()})
    if not cert.valid:
        failed = [k for k, ok in cert.checks().items() if not ok]
        _say(f"certificate FAIL: {', '.join(failed)}")
        return EXIT_FAILED
    print(f"NonUniqueness T={cert.params.T:.6g} |U(T)|={cert.U_final_sup:.6g} "
          f"residual={cert.duhamel_residual:.3g} positivity={cert.positivity_margin:.3g}")
    return EXIT_OK


COMMANDS = {"osgood": cmd_osgood, "validate-lemmas": cmd_validate_lemmas, "certify": cmd_certify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osgoodlab",
        description="Osgood classification, semigroup lemma checks and non-uniqueness certificates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH", help="INI run configuration")
        p.add_argument("--out", metavar="DIR", help="output directory (default: run.out or '.')")
        p.add_argument("--grid-n", type=int, metavar="N", help="override problem.grid_n")
        p.add_argument("--dt", type=float, metavar="X", help="override run.dt")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, grid_n=args.grid_n, dt=args.dt)
        out = Path(args.out or cfg.out or ".")
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        _say(f"config error: {exc}")
        return EXIT_CONFIG
    except (ConstructionError, ValueError, OsgoodHolds, InconclusiveOsgood) as exc:
        if isinstance(exc, InconclusiveOsgood):
            _say(f"inconclusive: {exc}")
            return EXIT_INCONCLUSIVE
        _say(f"precondition error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
