"""Command-line entry point: simulate, transform, cc, spin, rates, shadow, report, scenario.

Exit codes: 0 success, 1 numerical failure, 2 input error. Body and cluster
indices are 1-based in every user-facing file and flag. All outputs are
written atomically.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Optional

import jsonschema
import numpy as np

from .core import CartesianState, Cluster, CollisionError, MassSystem
from .io import atomic_write_text

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Malformed user input; maps to exit code 2."""


class StageError(Exception):
    """Failure inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException, code: int):
        super().__init__(f"stage {stage!r}: {cause}")
        self.stage, self.cause, self.code = stage, cause, code


# --------------------------------------------------------------------------- #
# schemas

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["masses", "positions", "velocities", "cluster", "mode", "stop", "tolerances"],
    "properties": {
        "name": {"type": "string"},
        "masses": {"type": "array", "minItems": 2, "items": {"type": "number", "exclusiveMinimum": 0}},
        "positions": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                 "items": {"type": "number"}}},
        "velocities": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                  "items": {"type": "number"}}},
        "cluster": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "mode": {"enum": ["parabolic", "collision", "generic"]},
        "t0": {"type": "number"},
        "stop": {
            "type": "object",
            "properties": {
                "t_end": {"type": "number"},
                "r_min": {"type": "number", "minimum": 0},
                "r_max": {"type": "number", "exclusiveMinimum": 0},
                "max_steps": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "required": ["rtol"],
            "properties": {"rtol": {"type": "number", "exclusiveMinimum": 0}},
        },
        "params": {"type": "object"},
    },
}

CC_SCHEMA = {
    "type": "object",
    "required": ["masses", "positions"],
    "properties": {
        "masses": {"type": "array", "minItems": 3, "items": {"type": "number", "exclusiveMinimum": 0}},
        "positions": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                 "items": {"type": "number"}}},
        "lambda": {"type": "number"},
        "mode": {"enum": ["parabolic", "collision"]},
    },
}

_RATE = {
    "type": "object",
    "required": ["name", "slope", "target", "kind", "passed", "reliable"],
    "properties": {"name": {"type": "string"}, "passed": {"type": "boolean"}, "reliable": {"type": "boolean"}},
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["format", "scenario", "simulation", "rates", "spin", "equilibrium", "shadow", "summary"],
    "properties": {
        "format": {"const": "nospin-report-1"},
        "scenario": {"type": "object", "required": ["name", "masses", "cluster", "mode"]},
        "simulation": {"type": "object", "required": ["stop_reason", "samples", "energy_drift"]},
        "rates": {"type": "array", "items": _RATE},
        "spin": {"type": ["object", "null"]},
        "equilibrium": {"type": ["object", "null"]},
        "shadow": {"type": ["object", "null"]},
        "summary": {
            "type": "object",
            "required": ["checks", "all_passed", "note"],
            "properties": {
                "checks": {"type": "array", "items": {"type": "object", "required": ["name", "status"],
                                                      "properties": {"status": {"enum": ["pass", "fail", "n/a"]}}}},
                "all_passed": {"type": "boolean"},
            },
        },
    },
}

SHADOW_SCHEMA = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["scalar_toy", "blowup"]},
        "masses": {"type": "array", "minItems": 3, "items": {"type": "number", "exclusiveMinimum": 0}},
        "positions": {"type": "array"},
        "mode": {"enum": ["parabolic", "collision"]},
        "forcing": {"type": "string"},
        "delta0": {"type": "array", "items": {"type": "number"}},
        "T_f": {"type": "number", "exclusiveMinimum": 0},
        "hmax": {"type": "number", "exclusiveMinimum": 0},
    },
}

# --------------------------------------------------------------------------- #
# file helpers


def jsonable(obj):
    """Plain-JSON copy: numpy scalars and arrays converted, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dump_json(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, allow_nan=False) + "\n"


def read_json(path, schema=None) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from None
    if schema is not None:
        try:
            jsonschema.validate(doc, schema)
        except jsonschema.ValidationError as e:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise InputError(f"{path}: field {where}: {e.message}") from None
    return doc


def read_csv_table(path):
    """(header, float array) from a CSV with one header row; errors name line and field."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    data = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{ln}: expected {len(header)} fields, found {len(row)}")
        vals = []
        for name, v in zip(header, row):
            try:
                vals.append(float(v))
            except ValueError:
                raise InputError(f"{path}:{ln}: field {name!r}: cannot parse {v!r} as a number") from None
        data.append(vals)
    if not data:
        raise InputError(f"{path}: no data rows")
    return header, np.array(data)


def write_table(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{float(x):.17g}" for x in row])
    atomic_write_text(path, buf.getvalue())


def parse_cluster(text: str, n: int) -> Cluster:
    try:
        idx = [int(s) - 1 for s in text.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"--cluster: expected comma-separated body numbers, got {text!r}") from None
    if any(i < 0 or i >= n for i in idx):
        raise InputError(f"--cluster: body numbers must lie in 1..{n}")
    try:
        return Cluster(tuple(idx), n)
    except ValueError as e:
        raise InputError(f"--cluster: {e}") from None


# --------------------------------------------------------------------------- #
# scenarios


def scenario_to_json(sc) -> dict:
    st = sc.state
    return {
        "name": sc.name,
        "masses": sc.system.masses,
        "positions": st.q,
        "velocities": st.v,
        "t0": st.t,
        "cluster": [i + 1 for i in sc.cluster.indices],
        "mode": sc.mode,
        "stop": {k: v for k, v in sc.stop.items() if v is not None and (not isinstance(v, float) or math.isfinite(v))},
        "tolerances": {"rtol": 1e-12},
        "params": sc.params,
    }


def scenario_from_json(doc: dict, source: str = "<scenario>"):
    from .dynamics import Scenario

    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise InputError(f"{source}: field {where}: {e.message}") from None
    m = np.asarray(doc["masses"], dtype=float)
    n = m.size
    q = np.asarray(doc["positions"], dtype=float)
    v = np.asarray(doc["velocities"], dtype=float)
    if q.shape != (n, 2) or v.shape != (n, 2):
        raise InputError(f"{source}: field positions/velocities: need {n} rows of [x, y]")
    if not doc["cluster"]:
        raise InputError(f"{source}: field cluster: empty cluster")
    try:
        sys_ = MassSystem(m)
        cl = Cluster(tuple(int(i) - 1 for i in doc["cluster"]), n)
        st = CartesianState.centered(sys_, float(doc.get("t0", 0.0)), q, v)
    except (ValueError, CollisionError) as e:
        raise InputError(f"{source}: {e}") from None
    return Scenario(doc.get("name", "custom"), sys_, st, cl, doc["mode"], dict(doc["stop"]), dict(doc.get("params", {})))


def _system_from_sidecar(traj_path: str, masses_flag: Optional[str]):
    if masses_flag:
        try:
            return MassSystem([float(x) for x in masses_flag.split(",")])
        except ValueError as e:
            raise InputError(f"--masses: {e}") from None
    side = traj_path + ".json"
    try:
        doc = read_json(side)
    except InputError:
        raise InputError(f"{traj_path}: masses unknown; pass --masses or keep the sidecar {side}") from None
    if "masses" not in doc:
        raise InputError(f"{side}: field masses: missing")
    return MassSystem(doc["masses"])


def load_trajectory(path: str, masses_flag: Optional[str] = None):
    from .dynamics import Trajectory

    sys_ = _system_from_sidecar(path, masses_flag)
    header, data = read_csv_table(path)
    n = sys_.n
    expect = ["t"] + [f"q{i + 1}{c}" for i in range(n) for c in "xy"] + [f"v{i + 1}{c}" for i in range(n) for c in "xy"]
    if header != expect:
        raise InputError(f"{path}:1: header does not match {n} bodies (expected {','.join(expect)})")
    reason = "loaded"
    try:
        reason = read_json(path + ".json").get("stop_reason", reason)
    except InputError:
        pass
    return Trajectory(sys_, data[:, 0], data[:, 1:], reason)


# --------------------------------------------------------------------------- #
# subcommands


def cmd_scenario(args) -> int:
    from .dynamics import SCENARIOS, scenario_library

    if args.list or not args.name:
        print("\n".join(sorted(k for k in SCENARIOS if k != "custom")))
        return EXIT_OK
    params = {}
    for item in args.param or []:
        if "=" not in item:
            raise InputError(f"--param: expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            params[k] = json.loads(v)
        except json.JSONDecodeError:
            raise InputError(f"--param {k}: value {v!r} is not a JSON number/list") from None
    if args.name == "custom" or args.name not in SCENARIOS:
        raise InputError(f"unknown scenario {args.name!r}; choose from {sorted(k for k in SCENARIOS if k != 'custom')}")
    try:
        sc = scenario_library(args.name, params)
    except TypeError as e:
        raise InputError(f"--param: {e}") from None
    text = dump_json(scenario_to_json(sc))
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .dynamics import integrate

    doc = read_json(args.scenario)
    sc = scenario_from_json(doc, args.scenario)
    tol = float(doc["tolerances"]["rtol"])
    tr = integrate(sc, tol=tol)
    tr.to_csv(args.output)
    side = {
        "scenario": sc.name,
        "masses": sc.system.masses,
        "cluster": [i + 1 for i in sc.cluster.indices],
        "mode": sc.mode,
        "stop_reason": tr.stop_reason,
        "steps": tr.steps,
        "rejected": tr.rejected,
        "energy_drift": tr.energy_drift,
        "angular_momentum_drift": tr.angmom_drift,
        "t_final": float(tr.t[-1]),
    }
    atomic_write_text(args.output + ".json", dump_json(side))
    print(f"{len(tr)} samples, stop reason {tr.stop_reason}, energy drift {tr.energy_drift:.3g}")
    return EXIT_OK


def cmd_transform(args) -> int:
    from .blowup import transform_trajectory

    tr = load_trajectory(args.trajectory, args.masses)
    cl = parse_cluster(args.cluster, tr.n)
    ser = transform_trajectory(tr.system, cl, tr, args.variant)
    write_table(args.output, ser.header(), ser.table())
    side = {
        "variant": args.variant,
        "masses": tr.system.masses,
        "cluster": [i + 1 for i in cl.indices],
        "charts": sorted(int(a) + 1 for a in np.unique(ser.charts)),
        "chart_switches": int(np.sum(np.diff(ser.charts) != 0)),
        "theta_constants": {str(int(a) + 1): c for a, c in ser.theta_C.items()},
        "kappa": ser.kappa,
    }
    atomic_write_text(args.output + ".json", dump_json(side))
    print(f"{len(ser.t)} samples in {side['charts']} chart(s), variant {args.variant}")
    return EXIT_OK


def _emit(doc, path):
    text = dump_json(doc)
    if path:
        atomic_write_text(path, text)
    else:
        sys.stdout.write(text)


def cmd_cc(args) -> int:
    from .centconfig import classify, find_cc, normalize_cc, to_record

    doc = read_json(args.file, CC_SCHEMA)
    m = np.asarray(doc["masses"], dtype=float)
    q = np.asarray(doc["positions"], dtype=float)
    if q.shape != (m.size, 2):
        raise InputError(f"{args.file}: field positions: need {m.size} rows of [x, y]")
    sys_ = MassSystem(m)
    if args.action == "find":
        cc = find_cc(sys_, Cluster.everything(sys_), q, tol=args.tol)
        rec = to_record(normalize_cc(cc))
        rec["residual"] = cc.residual
        rec["iterations"] = len(cc.history)
    else:
        mode = args.mode or doc.get("mode")
        if mode is None:
            raise InputError(f"{args.file}: field mode: give --mode parabolic|collision")
        cc = find_cc(sys_, Cluster.everything(sys_), q, tol=args.tol)
        eq = classify(cc, mode)
        rec = to_record(normalize_cc(cc), eq)
        rec.update({
            "v0": eq.v0,
            "V": eq.V,
            "lambda_plus": eq.lam_plus,
            "lambda_minus": eq.lam_minus,
            "radial_eigenvalue": eq.radial_eig,
            "degenerate": eq.degenerate,
            "signature": list(eq.signature()),
            "residual": cc.residual,
        })
    _emit(rec, args.output)
    return EXIT_OK


def cmd_spin(args) -> int:
    from .diagnostics import spin_report

    header, data = read_csv_table(args.blowup)
    need = ["tau", "t", "F", "theta"]
    missing = [c for c in need if c not in header]
    if missing:
        raise InputError(f"{args.blowup}:1: missing column(s) {', '.join(missing)}")
    col = {h: data[:, i] for i, h in enumerate(header)}
    parabolic = header[2] == "u"
    clock = col["t"] if parabolic else col["tau"]
    rep = spin_report(col["t"], col["theta"], col["F"], clock, tol=args.tol)
    _emit(rep.as_dict(), args.output)
    return EXIT_OK


def cmd_rates(args) -> int:
    from .diagnostics import fit_power_law, rate_suite

    header, data = read_csv_table(args.file)
    if header == ["t", "y"]:
        kind = args.kind or "two-sided"
        fit = fit_power_law(data[:, 0], data[:, 1], "y", args.target if args.target is not None else 0.0,
                            args.tol, kind, toward=args.toward)
        _emit({"fits": [fit.as_dict()], **fit.as_dict()}, args.output)
        return EXIT_OK
    if not args.cluster or not args.mode:
        raise InputError("rates on a trajectory needs --cluster and --mode")
    tr = load_trajectory(args.file, args.masses)
    cl = parse_cluster(args.cluster, tr.n)
    fits = rate_suite(tr, cl, args.mode)
    _emit({"fits": [f.as_dict() for f in fits]}, args.output)
    return EXIT_OK


def _forcing_from_blowup_csv(path):
    from .blowup import Forcing

    header, data = read_csv_table(path)
    col = {h: data[:, i] for i, h in enumerate(header)}
    variant = "parabolic" if header[2] == "u" else "collision"
    for c in ("tau", "P", "mu"):
        if c not in col:
            raise InputError(f"{path}:1: missing column {c}")
    qcols = [h for h in header if h.startswith("Q")]
    Q = np.stack([col[h] for h in qcols], axis=1) if qcols else np.zeros((len(data), 0))
    x = col[header[2]]
    kap = col["mu"] if variant == "parabolic" else col["mu"] * x**-2.5
    return variant, Forcing(variant, col["tau"], col["P"], Q, kap)


def run_shadow(doc: dict, source: str = "<problem>") -> dict:
    from .shadowing import choose_cutoff, default_eta, picard_solve, scalar_toy_problem, spectral_split

    if doc["type"] == "scalar_toy":
        prob = scalar_toy_problem(float(doc.get("T_f", 30.0)), 1e-3, float(doc.get("hmax", 0.02)))
        split = spectral_split(prob.A)
        tt, y, z, rep = picard_solve(split, prob, float(doc.get("eta", 0.5)))
        exact = np.where(tt > 0, np.exp(-2 * tt) - np.exp(-tt), 0.0)
        out = rep.as_dict()
        out["max_error_vs_closed_form"] = float(np.max(np.abs(z[:, 0] - exact)))
        return out
    # blow-up problem at a CC equilibrium with sampled forcing
    from .centconfig import classify, find_cc

    for f in ("masses", "positions", "mode", "forcing"):
        if f not in doc:
            raise InputError(f"{source}: field {f}: required for type blowup")
    m = np.asarray(doc["masses"], dtype=float)
    sys_ = MassSystem(m)
    cc = find_cc(sys_, Cluster.everything(sys_), np.asarray(doc["positions"], dtype=float))
    eq = classify(cc, doc["mode"])
    variant, forcing = _forcing_from_blowup_csv(doc["forcing"])
    if variant != eq.mode:
        raise InputError(f"{source}: field forcing: {variant} forcing for a {eq.mode} equilibrium")
    from .shadowing import blowup_shadow_problem

    d = eq.p0.size
    delta0 = np.asarray(doc.get("delta0", [0.05, 0.02] + [0.0] * (d - 2)), dtype=float)
    if delta0.size != d:
        raise InputError(f"{source}: field delta0: need {d} entries")
    prob = blowup_shadow_problem(eq, forcing, delta0, T_f=float(doc.get("T_f", 20.0)),
                                 hmax=float(doc.get("hmax", 0.02)))
    split = spectral_split(prob.A)
    eta = default_eta(split.beta, eq.v0)
    R, kap, op = choose_cutoff(split, prob, eta)
    tt, y, z, rep = picard_solve(split, prob.with_cutoff(R), eta, op=op)
    out = rep.as_dict()
    out.update({"beta": split.beta, "cutoff_radius": R, "weighted_gap": rep.weighted_gap,
                "tail_bound": rep.tail_bound, "converged": rep.converged})
    return out


def cmd_shadow(args) -> int:
    doc = read_json(args.problem, SHADOW_SCHEMA)
    _emit(run_shadow(doc, args.problem), args.output)
    return EXIT_OK


def cmd_report(args) -> int:
    from .dynamics import SCENARIOS, scenario_library

    if args.scenario in SCENARIOS and args.scenario != "custom":
        source = args.scenario
        try:
            sc = scenario_library(args.scenario)
        except Exception as e:  # noqa: BLE001
            raise StageError("validate", e, EXIT_INPUT) from e
    else:
        source = args.scenario
        try:
            sc = scenario_from_json(read_json(args.scenario), args.scenario)
        except InputError as e:
            raise StageError("validate", e, EXIT_INPUT) from e
    doc = report_bundle(sc, shadow=args.shadow, source=source)
    _emit(doc, args.output)
    return EXIT_OK if doc["summary"]["all_passed"] else EXIT_NUMERIC


# --------------------------------------------------------------------------- #
# report bundle


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except InputError as e:
        raise StageError(name, e, EXIT_INPUT) from e
    except (ArithmeticError, RuntimeError, CollisionError, np.linalg.LinAlgError, ValueError) as e:
        raise StageError(name, e, EXIT_NUMERIC) from e


def report_bundle(sc, shadow: bool = False, source: str = "", tol: float = 1e-12, spin_tol: float = 1e-3,
                  v_tol: float = 1e-4) -> dict:
    """simulate -> transform -> diagnostics (-> shadow) as one JSON document."""
    from .blowup import transform_trajectory
    from .centconfig import classify, find_cc
    from .diagnostics import equilibrium_convergence, rate_suite, spin_report_series
    from .dynamics import integrate

    if sc.cluster.size < 2:
        raise StageError("validate", InputError("empty cluster"), EXIT_INPUT)
    if sc.mode not in ("parabolic", "collision"):
        raise StageError("validate", InputError(f"mode {sc.mode!r} has no asymptotic diagnostics"), EXIT_INPUT)
    tr = _stage("simulate", integrate, sc, tol=tol)
    ser = _stage("transform", transform_trajectory, sc.system, sc.cluster, tr, sc.mode)
    fits = _stage("diagnostics", rate_suite, tr, sc.cluster, sc.mode)
    spin = _stage("diagnostics", spin_report_series, ser, spin_tol)
    eq = None
    if sc.cluster.size >= 3:
        sub = MassSystem(sc.system.masses[sc.cluster.idx])
        q_end = tr.q[-1][sc.cluster.idx]
        cc = _stage("diagnostics", find_cc, sub, Cluster.everything(sub), q_end)
        eq = _stage("diagnostics", classify, cc, sc.mode)
    conv = _stage("diagnostics", equilibrium_convergence, ser, eq)
    checks = []
    for f in fits:
        checks.append({"name": f"rate:{f.name}", "status": ("pass" if f.passed else "fail") if f.reliable else "n/a",
                       "value": f.slope, "bounds": [f.bound_lo, f.bound_hi]})
    checks.append({"name": "spin:theta_tail_variation", "status": "pass" if spin.tail_variation < spin_tol else "fail",
                   "value": spin.tail_variation})
    checks.append({"name": "spin:arclength_tail_cauchy", "status": "pass" if spin.tail_cauchy else "fail",
                   "value": spin.tail_arclength})
    verr = None if conv.v0 is None else abs(conv.v_final - conv.v0)
    checks.append({"name": "equilibrium:v_limit", "status": "n/a" if verr is None else
                   ("pass" if verr < v_tol else "fail"), "value": verr})
    shadow_doc = None
    if shadow:
        if eq is None or eq.degenerate:
            checks.append({"name": "shadow", "status": "n/a", "value": None})
        else:
            from .shadowing import (blowup_shadow_problem, choose_cutoff, default_eta, picard_solve,
                                    spectral_split)

            def _run():
                d = eq.p0.size
                prob = blowup_shadow_problem(eq, ser.forcing(), np.array([0.05, 0.02] + [0.0] * (d - 2)))
                split = spectral_split(prob.A)
                eta = default_eta(split.beta, eq.v0)
                R, _, op = choose_cutoff(split, prob, eta)
                _, _, _, rep = picard_solve(split, prob.with_cutoff(R), eta, op=op)
                return rep

            rep = _stage("shadow", _run)
            shadow_doc = rep.as_dict()
            ok = rep.converged and rep.rate_fit >= rep.eta and rep.membership_residual < 1e-8
            checks.append({"name": "shadow", "status": "pass" if ok else "fail", "value": rep.rate_fit})
    all_passed = all(c["status"] != "fail" for c in checks)
    doc = {
        "format": "nospin-report-1",
        "scenario": {"name": sc.name, "source": source, "masses": sc.system.masses,
                     "cluster": [i + 1 for i in sc.cluster.indices], "mode": sc.mode, "params": sc.params},
        "simulation": {"stop_reason": tr.stop_reason, "samples": len(tr), "steps": tr.steps,
                       "energy_drift": tr.energy_drift, "angular_momentum_drift": tr.angmom_drift,
                       "t_final": float(tr.t[-1])},
        "rates": [f.as_dict() for f in fits],
        "spin": spin.as_dict(),
        "equilibrium": {**conv.as_dict(), **({} if eq is None else {"beta": eq.beta, "V": eq.V,
                                                                     "degenerate": eq.degenerate})},
        "shadow": shadow_doc,
        "summary": {"checks": checks, "all_passed": all_passed,
                    "note": "finite-horizon numerical evidence for asymptotic statements, not a proof"},
    }
    doc = jsonable(doc)
    jsonschema.validate(doc, REPORT_SCHEMA)
    return doc


def validate_report(doc: dict) -> None:
    jsonschema.validate(doc, REPORT_SCHEMA)


# --------------------------------------------------------------------------- #
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nospin", description="n-body cluster spin diagnostics")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scenario", help="write a library scenario as explicit JSON")
    s.add_argument("name", nargs="?")
    s.add_argument("--param", action="append", help="factory parameter key=value (JSON value)")
    s.add_argument("--list", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("simulate", help="integrate a scenario JSON to CSV")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("transform", help="shape and blow-up coordinates of a cluster")
    s.add_argument("trajectory")
    s.add_argument("--cluster", required=True, help="1-based body numbers, e.g. 1,2")
    s.add_argument("--variant", required=True, choices=["parabolic", "collision"])
    s.add_argument("--masses", help="comma-separated masses (default: trajectory sidecar)")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_transform)

    s = sub.add_parser("cc", help="central configurations")
    s.add_argument("action", choices=["find", "classify"])
    s.add_argument("file")
    s.add_argument("--mode", choices=["parabolic", "collision"])
    s.add_argument("--tol", type=float, default=1e-13)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_cc)

    s = sub.add_parser("spin", help="spin and arclength diagnostics of a blow-up CSV")
    s.add_argument("blowup")
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_spin)

    s = sub.add_parser("rates", help="power-law fits on a t,y CSV or a trajectory")
    s.add_argument("file")
    s.add_argument("--cluster")
    s.add_argument("--mode", choices=["parabolic", "collision"])
    s.add_argument("--masses")
    s.add_argument("--target", type=float)
    s.add_argument("--tol", type=float, default=0.35)
    s.add_argument("--kind", choices=["upper", "lower", "two-sided"])
    s.add_argument("--toward", choices=["large", "small"], default="large")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_rates)

    s = sub.add_parser("shadow", help="solve a shadowing problem JSON")
    s.add_argument("problem")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_shadow)

    s = sub.add_parser("report", help="full diagnostic bundle for a scenario")
    s.add_argument("scenario", help="library scenario name or scenario JSON")
    s.add_argument("--shadow", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_report)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INPUT
    try:
        return int(args.func(args))
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ArithmeticError, RuntimeError, CollisionError, np.linalg.LinAlgError, ValueError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
