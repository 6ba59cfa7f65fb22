"""Command-line driver: ``subrie <command> ...`` emitting JSON reports and CSV files."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import SCHEMA_VERSION, RunConfig
from .endpoint import (DistanceBudget, DistanceError, EndpointProblem, PliabilityFailure,
                       cone_condition, estimate_dsr, goh_spanning_check, medium_fat_check,
                       strong_pliability_search)
from .flow import IntegrationError, chron_exp, load_control
from .lift import check_lift, lift_whitney_data, load_lift
from .nilpotent import ChartError, check_convergence, nilpotentize, privileged_chart
from .structure import StructureError, classify_regularity, flag_at, load_structure
from .whitney import (ExtensionError, NeedsLiftError, WhitneyBudget, extend, load_whitney, lusin,
                      verify_dilation, verify_direct)

EXIT_OK, EXIT_REJECT, EXIT_INCONCLUSIVE, EXIT_INPUT = 0, 1, 2, 3


class InputError(ValueError):
    pass


def _vec(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError as exc:
        raise InputError(f"bad vector {text!r}; expected comma-separated numbers") from exc


def _params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"bad --param {item!r}; expected key=value")
        try:
            out[key.strip()] = float(value) if any(c in value for c in ".eE") else int(value)
        except ValueError:
            out[key.strip()] = value.strip()
    return out


def _structure(args):
    return load_structure(args.structure, _params(args.param))


def _config(args) -> RunConfig:
    cfg = RunConfig(seed=args.seed, output_dir=args.out)
    if getattr(args, "eta", None) is not None:
        cfg = replace(cfg, eta=args.eta)
    return cfg


def _emit(payload: dict, cfg: RunConfig) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), **payload}
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _write(cfg: RunConfig, name: str, text: str) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _verdict_code(verdict: str) -> int:
    return {"accept": EXIT_OK, "reject": EXIT_REJECT}.get(verdict, EXIT_INCONCLUSIVE)


# subcommands

def cmd_analyze(args) -> int:
    s = _structure(args)
    cfg = _config(args)
    rmap = classify_regularity(s, grid=args.grid)
    _emit({"command": "analyze", "structure": s.name, "regularity": rmap.to_dict()}, cfg)
    return EXIT_OK


def cmd_nilpotent(args) -> int:
    s = _structure(args)
    cfg = _config(args)
    p = _vec(args.point)
    if not flag_at(s, p).regular:
        raise NeedsLiftError(f"point {p.tolist()} is singular; supply a lift and work upstairs")
    chart = privileged_chart(s, p)
    nf = nilpotentize(s, chart)
    out = {"command": "nilpotent", "chart": chart.to_json(), "nilpotent_frame": nf.serialize(),
           "weights": list(nf.weights), "homogeneous": nf.is_homogeneous()}
    if args.check_convergence:
        lams = [2.0 ** -k for k in range(5)]
        out["convergence"] = check_convergence(s, chart, nf, lams).to_dict()
    _emit(out, cfg)
    return EXIT_OK


def cmd_pliability(args) -> int:
    s = _structure(args)
    cfg = _config(args)
    p = _vec(args.point)
    u = _vec(args.u)
    if u.shape != (s.rank,):
        raise InputError(f"--u needs {s.rank} components")
    if not flag_at(s, p).regular:
        raise NeedsLiftError(f"point {p.tolist()} is singular; supply a lift and work upstairs")
    nf = nilpotentize(s, privileged_chart(s, p))
    flags = {"medium_fat": medium_fat_check(s, p, u).to_dict(),
             "goh_spanning": goh_spanning_check(nf, u).to_dict()}
    try:
        flags["cone"] = cone_condition(nf, u, seed=cfg.seed).to_dict()
    except ValueError as exc:
        flags["cone"] = {"applicable": False, "reason": str(exc)}
    prob = EndpointProblem(nf, u)
    res = strong_pliability_search(prob, eta=cfg.eta, N_schedule=cfg.basis_sizes,
                                   restarts=cfg.restarts, seed=cfg.seed,
                                   submersion_tol=cfg.submersion_tol,
                                   residual_tol=cfg.residual_tol)
    found = not isinstance(res, PliabilityFailure)
    flags["certificate_found"] = found
    _emit({"command": "pliability", "flags": flags, "certificate": res.to_dict()}, cfg)
    return EXIT_OK if found else EXIT_INCONCLUSIVE


def _whitney_budget(cfg: RunConfig) -> WhitneyBudget:
    return WhitneyBudget(seed=cfg.seed, beta_min=cfg.beta_min, theta=cfg.theta, Theta=cfg.Theta)


def cmd_whitney_verify(args) -> int:
    s = _structure(args)
    cfg = _config(args)
    data = load_whitney(args.data)
    if args.dilation:
        rep = verify_dilation(s, data, args.direction, beta_min=cfg.beta_min, theta=cfg.theta)
    else:
        rep = verify_direct(s, data, args.direction, _whitney_budget(cfg))
    _emit({"command": "whitney verify", "report": rep.to_dict()}, cfg)
    return _verdict_code(rep.verdict)


def cmd_whitney_extend(args) -> int:
    s = _structure(args)
    cfg = _config(args)
    data = load_whitney(args.data)
    if not args.force:
        rep = verify_direct(s, data, "both", _whitney_budget(cfg))
        if rep.verdict != "accept":
            _emit({"command": "whitney extend", "refused": True, "report": rep.to_dict()}, cfg)
            return _verdict_code(rep.verdict)
    res = extend(s, data, seed=cfg.seed)
    path = _write(cfg, "extension.csv", res.to_csv())
    _emit({"command": "whitney extend", "extension": res.to_dict(), "trajectory_csv": path}, cfg)
    return EXIT_OK


def cmd_lusin(args) -> int:
    s = _structure(args)
    cfg = _config(args)
    ctrl = load_control(args.control)
    res = lusin(s, ctrl, _vec(args.p0), args.eps, seed=cfg.seed)
    out = {"command": "lusin", "result": res.to_dict()}
    if res.extension is not None and res.data is not None:
        out["trajectory_csv"] = _write(cfg, "lusin_extension.csv", res.extension.to_csv())
    _emit(out, cfg)
    return EXIT_OK


def cmd_distance(args) -> int:
    s = _structure(args)
    cfg = _config(args)
    budget = DistanceBudget(n_knots=cfg.dsr_knots, starts=cfg.dsr_starts,
                            max_iter=cfg.dsr_max_iter, seed=cfg.seed)
    est = estimate_dsr(s, _vec(args.from_), _vec(args.to), budget)
    out = {"command": "distance", "estimate": est.to_dict()}
    if est.control is not None:
        out["control_csv"] = _write(cfg, "distance_control.csv", est.control.to_csv())
    _emit(out, cfg)
    return EXIT_OK


def cmd_flow(args) -> int:
    s = _structure(args)
    ctrl = load_control(args.control)
    traj = chron_exp(s, ctrl, _vec(args.p0), args.rtol, args.atol)
    times = np.linspace(ctrl.t0, ctrl.t1, args.samples) if args.samples else None
    sys.stdout.write(traj.to_csv(times))
    return EXIT_OK


def cmd_lift_check(args) -> int:
    cfg = _config(args)
    ls = load_lift(args.liftspec)
    rep = check_lift(ls)
    _emit({"command": "lift check", "lift": ls.name, "report": rep.to_dict()}, cfg)
    return EXIT_OK if rep.ok else EXIT_REJECT


def cmd_lift_data(args) -> int:
    cfg = _config(args)
    ls = load_lift(args.liftspec)
    data = load_whitney(args.data)
    p0 = _vec(args.p0) if args.p0 else None
    res = lift_whitney_data(ls, data, p0)
    path = _write(cfg, "lifted.csv", res.data.to_csv())
    _emit({"command": "lift lift-data", "lift": ls.name, "result": res.to_dict(),
           "lifted_csv": path}, cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="directory for CSV outputs")
    common.add_argument("--param", action="append", help="key=value for parametric built-ins")

    parser = argparse.ArgumentParser(prog="subrie", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def structured(name, fn, **kw):
        p = sub.add_parser(name, parents=[common], **kw)
        p.add_argument("structure", help="built-in name or structure file")
        p.set_defaults(fn=fn)
        return p

    p = structured("analyze", cmd_analyze, help="growth vectors and regularity map")
    p.add_argument("--grid", type=int, default=5)

    p = structured("nilpotent", cmd_nilpotent, help="privileged chart and nilpotent frame")
    p.add_argument("--point", required=True)
    p.add_argument("--check-convergence", action="store_true")

    p = structured("pliability", cmd_pliability, help="strong pliability screen and search")
    p.add_argument("--point", required=True)
    p.add_argument("--u", required=True)
    p.add_argument("--eta", type=float)

    w = sub.add_parser("whitney", help="Whitney data verification and extension")
    wsub = w.add_subparsers(dest="action", required=True)
    p = wsub.add_parser("verify", parents=[common])
    p.add_argument("structure")
    p.add_argument("data")
    p.add_argument("--direction", choices=("both", "forward", "backward"), default="both")
    p.add_argument("--dilation", action="store_true")
    p.set_defaults(fn=cmd_whitney_verify)
    p = wsub.add_parser("extend", parents=[common])
    p.add_argument("structure")
    p.add_argument("data")
    p.add_argument("--force", action="store_true", help="skip the verification gate")
    p.set_defaults(fn=cmd_whitney_extend)

    p = structured("lusin", cmd_lusin, help="Lusin-type selection and extension")
    p.add_argument("control")
    p.add_argument("--p0", required=True)
    p.add_argument("--eps", type=float, required=True)

    p = structured("distance", cmd_distance, help="upper estimate of the distance")
    p.add_argument("--from", dest="from_", required=True)
    p.add_argument("--to", required=True)

    p = structured("flow", cmd_flow, help="integrate a control from a point")
    p.add_argument("control")
    p.add_argument("--p0", required=True)
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--rtol", type=float, default=1e-10)
    p.add_argument("--atol", type=float, default=1e-10)

    lf = sub.add_parser("lift", help="lift checks and lifting Whitney data")
    lsub = lf.add_subparsers(dest="action", required=True)
    p = lsub.add_parser("check", parents=[common])
    p.add_argument("liftspec")
    p.set_defaults(fn=cmd_lift_check)
    p = lsub.add_parser("lift-data", parents=[common])
    p.add_argument("liftspec")
    p.add_argument("data")
    p.add_argument("--p0")
    p.set_defaults(fn=cmd_lift_data)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    err = {"schema_version": SCHEMA_VERSION, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, NeedsLiftError):
        err["hint"] = "verify on a desingularizing lift (see `subrie lift`)"
    for attr in ("best_gap", "best_residual", "gap"):
        if hasattr(exc, attr):
            err[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(err, default=_jsonable) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (DistanceError, ExtensionError, IntegrationError) as exc:
        return _fail(EXIT_INCONCLUSIVE, exc)
    except (InputError, StructureError, ChartError, ValueError, KeyError, OSError) as exc:
        return _fail(EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
