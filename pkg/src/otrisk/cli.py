"""Command-line entry point: ``otrisk <command> [--config FILE] [flags]``.

Each command reads a JSON config (missing keys fall back to defaults),
applies flag overrides, runs, and writes a JSON report. Reports carry
``"schema": "otrisk/v1"`` and the fully resolved config, and contain no
timestamps, so a (config, seed) pair always produces the same bytes.

Exit codes: 0 ok, 2 invalid config or input, 3 solver or numerical
failure, 4 a self-test check failed under ``--check``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .calibrate import CLOCKS, brownian_units, estimate_delta
from .duality import InnerProblem, minimize_dual, saturating_cost, saturating_objective
from .errors import InvalidInput, OtriskError, ParseError, SolverError
from .finite import FiniteInstance, duality_certificate, random_instance
from .measures import ClaimModel, EmpiricalMeasure, estimate_moments, pareto_claims, pareto_moments, read_claims_csv
from .paths import (
    PlanarReserve,
    capital_requirement_2d,
    default_steps,
    psi_rob_1d,
    simulate_loss_sups,
    simulate_transfer_infima,
)
from .reinsurance import METHODS, ReinsuranceProblem, optimize_b

SCHEMA_ID = "otrisk/v1"

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

RUIN1D_COLUMNS = ["u", "psi_B", "u_tilde", "psi_rob"]
RUIN2D_COLUMNS = ["delta", "u_required"]

_MODEL = {"claim_rate": 1.0, "safety_loading": 0.1, "horizon": 100.0, "p": 2.0}
_CLAIMS = {"source": "pareto", "alpha": 2.2, "n": 10_000, "path": None, "moments": "sample"}
_CALIBRATION = {"n_replications": 500, "confidence": 0.95, "dt": 0.01, "clock": "brownian"}

DEFAULTS = {
    "verify-duality": {
        "seed": 0,
        "n_instances": 100,
        "n_min": 2,
        "n_max": 15,
        "tol": 1e-8,
        "gap_tol": 1e-6,
        "instance_file": None,
        "fixture": None,
    },
    "ruin1d": {
        "seed": 0,
        "model": dict(_MODEL),
        "claims": dict(_CLAIMS),
        "calibration": dict(_CALIBRATION),
        "delta": None,
        "u": [50.0, 100.0, 150.0, 200.0, 250.0],
        "n_paths": 20_000,
        "n_steps": None,
    },
    "ruin2d": {
        "seed": 0,
        "model": {"drift": [-0.1, -0.1], "cov_factor": [[1.0, 0.0], [0.0, 1.0]], "split": [0.5, 0.5], "horizon": 100.0},
        "beta": 0.5,
        "deltas": [0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
        "target": 0.01,
        "n_paths": 20_000,
        "n_steps": 1024,
    },
    "reinsurance": {
        "seed": 0,
        "model": dict(_MODEL, m1=11.0 / 6.0, m2=11.0, reinsurer_loading=0.3),
        "delta": 0.0,
        "claims": dict(_CLAIMS),
        "calibration": dict(_CALIBRATION),
        "b_step": 1e-3,
        "method": "tail_integration",
        "n_paths": 100_000,
        "n_steps": 16,
    },
    "calibrate": {
        "seed": 0,
        "model": dict(_MODEL),
        "claims": dict(_CLAIMS),
        "calibration": dict(_CALIBRATION),
    },
}

# which config key --n-paths overrides
N_PATHS_KEY = {
    "verify-duality": "n_instances",
    "ruin1d": "n_paths",
    "ruin2d": "n_paths",
    "reinsurance": "n_paths",
    "calibrate": ("calibration", "n_replications"),
}

_NUM = {"type": ["number", "string"]}  # non-finite floats are written as strings
_BASE = {"schema": {"const": SCHEMA_ID}, "command": {"type": "string"}, "config": {"type": "object"}, "seed": {"type": "integer"}, "checks": {"type": "object"}}


def _schema(required, props):
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "required": ["schema", "command", "config", "seed", "checks"] + required,
        "properties": dict(_BASE, **props),
    }


_CALIB_PROPS = {
    "delta_hat": {"type": "number"},
    "ci": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    "n": {"type": "integer", "minimum": 30},
    "mean_cost": {"type": "number"},
    "sd": {"type": "number", "minimum": 0},
}

REPORT_SCHEMAS = {
    "verify-duality": _schema(
        ["max_gap", "instances"],
        {
            "max_gap": {"type": "number", "minimum": 0},
            "max_scaled_gap": {"type": "number", "minimum": 0},
            "instances": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["index", "n", "delta", "lp_value", "dual_value", "gap", "lambda_star"],
                    "properties": {"lp_value": {"type": ["number", "string", "null"]}, "dual_value": _NUM, "gap": _NUM, "lambda_star": _NUM},
                },
            },
            "flags": {"type": "array", "items": {"type": "string"}},
        },
    ),
    "ruin1d": _schema(
        ["rows", "delta", "m1", "m2"],
        {
            "delta": {"type": "number", "minimum": 0},
            "m1": {"type": "number"},
            "m2": {"type": "number"},
            "calibration": {"type": ["object", "null"]},
            "rows": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": RUIN1D_COLUMNS + ["lambda_star", "dual_value"],
                    "properties": {k: _NUM for k in RUIN1D_COLUMNS + ["lambda_star", "dual_value"]},
                },
            },
        },
    ),
    "ruin2d": _schema(
        ["rows", "beta", "target"],
        {
            "beta": {"type": "number"},
            "target": {"type": "number"},
            "rows": {
                "type": "array",
                "items": {"type": "object", "required": RUIN2D_COLUMNS, "properties": {"delta": {"type": "number"}, "u_required": _NUM}},
            },
        },
    ),
    "reinsurance": _schema(
        ["b_star", "value", "delta", "method"],
        {
            "b_star": {"type": "number", "minimum": 0, "maximum": 1},
            "value": {"type": "number"},
            "delta": {"type": "number", "minimum": 0},
            "method": {"enum": list(METHODS)},
            "interior": {"type": "boolean"},
            "calibration": {"type": ["object", "null"]},
        },
    ),
    "calibrate": _schema(["delta_hat", "ci", "n", "mean_cost", "sd"], _CALIB_PROPS),
}


# ------------------------------------------------------------------ config


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise InvalidInput(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def resolve_config(command, config=None, seed=None, n_paths=None) -> dict:
    """Defaults, then the config mapping, then flag overrides."""
    if command not in DEFAULTS:
        raise InvalidInput(f"unknown command {command!r}")
    if config is not None and not isinstance(config, dict):
        raise InvalidInput("config must be a JSON object")
    cfg = _merge(DEFAULTS[command], config or {})
    if seed is not None:
        cfg["seed"] = seed
    if n_paths is not None:
        key = N_PATHS_KEY[command]
        if isinstance(key, tuple):
            cfg[key[0]][key[1]] = n_paths
        else:
            cfg[key] = n_paths
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise InvalidInput("seed must be a nonnegative integer")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"config {path} is not valid JSON: {exc}") from None


# ------------------------------------------------------------------ shared pipeline


def _claim_sample(cfg_claims, seed):
    src = cfg_claims.get("source")
    if src == "pareto":
        rng = np.random.default_rng([seed, 0])
        return pareto_claims(rng, int(cfg_claims["n"]), float(cfg_claims["alpha"]))
    if src == "csv":
        if not cfg_claims.get("path"):
            raise InvalidInput("claims.path is required for a csv source")
        return np.asarray(read_claims_csv(cfg_claims["path"]))
    raise InvalidInput(f"unknown claims source {src!r}")


def _model_moments(cfg_claims, claims):
    """Sample moments, or the exact Pareto ones when ``moments`` is ``analytic``."""
    how = cfg_claims.get("moments", "sample")
    if how == "sample":
        return estimate_moments(claims)
    if how == "analytic":
        if cfg_claims.get("source") != "pareto":
            raise InvalidInput("analytic moments need a pareto claims source")
        return pareto_moments(float(cfg_claims["alpha"]))
    raise InvalidInput(f"unknown moments {how!r}; choose sample or analytic")


def _claim_model(cfg_model, m1, m2, reinsurer_loading=None):
    return ClaimModel(
        claim_rate=float(cfg_model["claim_rate"]),
        safety_loading=float(cfg_model["safety_loading"]),
        m1=m1,
        m2=m2,
        horizon=float(cfg_model["horizon"]),
        p=float(cfg_model["p"]),
        reinsurer_loading=reinsurer_loading,
    )


def calibration_pipeline(cfg):
    """Claims -> moments -> embedding estimate of delta.

    Returns:
        (model with the configured moments, DeltaEstimate).
    """
    claims = _claim_sample(cfg["claims"], cfg["seed"])
    model = _claim_model(cfg["model"], *_model_moments(cfg["claims"], claims))
    cal = cfg["calibration"]
    if cal["clock"] not in CLOCKS:
        raise InvalidInput(f"unknown clock {cal['clock']!r}")
    est = estimate_delta(
        int(cal["n_replications"]),
        model,
        claims,
        confidence=float(cal["confidence"]),
        seed=[cfg["seed"], 1],
        dt=float(cal["dt"]),
        clock=cal["clock"],
    )
    return model, est


def _calib_summary(est, seed):
    d = est.to_dict()
    d["seed"] = seed
    d["confidence"] = est.confidence
    d["clock"] = est.clock
    return d


# ------------------------------------------------------------------ commands


def _two_point():
    return FiniteInstance([0, 1], [1.0, 0.0], [0.0, 1.0], [[0.0, 1.0], [1.0, 0.0]], 0.5)


def _cert_row(index, inst, tol):
    try:
        cert = duality_certificate(inst, tol)
    except SolverError as exc:
        raise SolverError(f"{exc}; instance {index}: {inst.to_json()}") from None
    return {
        "index": index,
        "n": inst.n,
        "delta": inst.delta,
        "lp_value": cert.lp_value,
        "dual_value": cert.dual_value,
        "gap": cert.gap,
        "lambda_star": cert.lambda_star,
        "budget_multiplier": cert.coupling.budget_multiplier,
        "cost_used": cert.coupling.cost_used,
    }


def cmd_verify_duality(cfg):
    """LP primal against the univariate dual on random or fixture instances."""
    flags = []
    fixture = cfg["fixture"]
    if fixture == "saturating":
        mu = EmpiricalMeasure([0.0])
        prob = InnerProblem.closed("saturating", saturating_objective, saturating_cost)
        sol = minimize_dual(mu, prob, 2.0, tol=cfg["tol"])
        if sol.attained_at_zero:
            flags.append("primal supremum not attained")
        rows = [
            {
                "index": 0,
                "n": 1,
                "delta": 2.0,
                "lp_value": None,
                "dual_value": sol.value,
                "gap": 0.0,
                "lambda_star": sol.lambda_star,
                "attained_at_zero": sol.attained_at_zero,
            }
        ]
        report = {"max_gap": 0.0, "max_scaled_gap": 0.0, "instances": rows, "flags": flags}
        checks = {"dual_value_one": abs(sol.value - 1.0) <= 1e-8, "attained_at_zero": sol.attained_at_zero}
        return report, checks

    if fixture == "two_point":
        insts = [_two_point()]
    elif fixture is not None:
        raise InvalidInput(f"unknown fixture {fixture!r}")
    elif cfg["instance_file"]:
        data = load_config(cfg["instance_file"])
        items = data if isinstance(data, list) else [data]
        insts = [FiniteInstance.from_dict(d) for d in items]
    else:
        if not 1 <= cfg["n_min"] <= cfg["n_max"]:
            raise InvalidInput("need 1 <= n_min <= n_max")
        rng = np.random.default_rng(cfg["seed"])
        insts = [random_instance(rng, cfg["n_max"], max(2, cfg["n_min"])) for _ in range(int(cfg["n_instances"]))]
    rows = [_cert_row(i, inst, cfg["tol"]) for i, inst in enumerate(insts)]
    scaled = [r["gap"] / (1.0 + abs(r["lp_value"])) for r in rows]
    report = {
        "max_gap": max(r["gap"] for r in rows),
        "max_scaled_gap": max(scaled),
        "instances": rows,
        "flags": flags,
    }
    return report, {"gap_within_tolerance": max(scaled) <= cfg["gap_tol"]}


def cmd_ruin1d(cfg):
    """Baseline and worst-case ruin probabilities over a list of reserves."""
    us = [float(u) for u in cfg["u"]]
    if not us or min(us) < 0:
        raise InvalidInput("u must be a nonempty list of reserves >= 0")
    if cfg["delta"] is None:
        model, est = calibration_pipeline(cfg)
        delta, calib = est.delta_hat, _calib_summary(est, cfg["seed"])
    else:
        claims = _claim_sample(cfg["claims"], cfg["seed"])
        model = _claim_model(cfg["model"], *_model_moments(cfg["claims"], claims))
        delta, calib = float(cfg["delta"]), None
        if delta < 0:
            raise InvalidInput("delta must be >= 0")
    T = model.horizon
    n_steps = cfg["n_steps"] or default_steps(T)
    sups = simulate_loss_sups(int(cfg["n_paths"]), T, int(n_steps), model.volatility, model.drift, [cfg["seed"], 2])
    rows = []
    for u in us:
        r = psi_rob_1d(u, model, delta, sups)
        rows.append({"u": u, "psi_B": r.psi_b, "u_tilde": r.u_tilde, "psi_rob": r.psi_rob, "lambda_star": r.lambda_star, "dual_value": r.dual_value})
    by_u = sorted(rows, key=lambda r: r["u"])
    checks = {
        "psi_rob_dominates_psi_B": all(r["psi_rob"] >= r["psi_B"] - 1e-15 for r in rows),
        "psi_rob_nonincreasing_in_u": all(a["psi_rob"] >= b["psi_rob"] for a, b in zip(by_u, by_u[1:])),
    }
    report = {"delta": delta, "m1": model.m1, "m2": model.m2, "calibration": calib, "rows": rows}
    return report, checks


def cmd_ruin2d(cfg):
    """Capital needed to hold the worst-case planar ruin probability at target."""
    m = cfg["model"]
    model = PlanarReserve(tuple(m["drift"]), tuple(map(tuple, m["cov_factor"])), tuple(m["split"]), float(m["horizon"]))
    beta = float(cfg["beta"])
    if not 0 <= beta <= 1:
        raise InvalidInput("beta must lie in [0, 1]")
    target = float(cfg["target"])
    if not 0 < target < 1:
        raise InvalidInput("target must be in (0, 1)")
    deltas = [float(d) for d in cfg["deltas"]]
    if not deltas or min(deltas) < 0:
        raise InvalidInput("deltas must be a nonempty list of values >= 0")
    I1, I2 = simulate_transfer_infima(model, beta, int(cfg["n_paths"]), int(cfg["n_steps"]), cfg["seed"])
    rows = [{"delta": d, "u_required": capital_requirement_2d(I1, I2, model, beta, d, target)} for d in deltas]
    order = sorted(rows, key=lambda r: r["delta"])
    checks = {
        "bracketed": all(math.isfinite(r["u_required"]) for r in rows),
        "nondecreasing_in_delta": all(a["u_required"] <= b["u_required"] for a, b in zip(order, order[1:])),
    }
    return {"beta": beta, "target": target, "rows": rows}, checks


def cmd_reinsurance(cfg):
    """Retention minimizing the worst-case expected maximal loss."""
    m = cfg["model"]
    model = ClaimModel(
        claim_rate=float(m["claim_rate"]),
        safety_loading=float(m["safety_loading"]),
        m1=float(m["m1"]),
        m2=float(m["m2"]),
        horizon=float(m["horizon"]),
        p=float(m["p"]),
        reinsurer_loading=m["reinsurer_loading"],
    )
    calib = None
    if cfg["delta"] is None:
        sample_model, est = calibration_pipeline(cfg)
        delta = brownian_units(est.delta_hat, sample_model)
        calib = dict(_calib_summary(est, cfg["seed"]), delta_reserve_units=est.delta_hat)
    else:
        delta = float(cfg["delta"])
    prob = ReinsuranceProblem(model, delta, float(cfg["b_step"]), cfg["method"], cfg["seed"], int(cfg["n_paths"]), int(cfg["n_steps"]))
    res = optimize_b(prob)
    report = {
        "b_star": res.b_star,
        "value": res.value,
        "delta": res.delta,
        "method": res.method,
        "grid_min": res.grid_min,
        "interior": res.interior,
        "calibration": calib,
    }
    return report, {"interior_minimum": res.interior}


def cmd_calibrate(cfg):
    """Transport budget from simulated Brownian embeddings of the claims."""
    model, est = calibration_pipeline(cfg)
    report = _calib_summary(est, cfg["seed"])
    report.update({"m1": model.m1, "m2": model.m2})
    return report, {"delta_hat_above_mean": est.delta_hat >= est.mean_cost}


COMMANDS = {
    "verify-duality": cmd_verify_duality,
    "ruin1d": cmd_ruin1d,
    "ruin2d": cmd_ruin2d,
    "reinsurance": cmd_reinsurance,
    "calibrate": cmd_calibrate,
}
CSV_COLUMNS = {"ruin1d": RUIN1D_COLUMNS, "ruin2d": RUIN2D_COLUMNS}


# ------------------------------------------------------------------ output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def run(command, cfg) -> dict:
    """Run one command on a resolved config and return the full report."""
    body, checks = COMMANDS[command](cfg)
    report = {"schema": SCHEMA_ID, "command": command, "seed": cfg["seed"], "config": cfg, "checks": checks}
    report.update(body)
    return _jsonable(report)


def dumps(report) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def csv_text(command, report) -> str:
    cols = CSV_COLUMNS[command]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in report["rows"]:
        w.writerow([r[c] if isinstance(r[c], str) else repr(r[c]) for c in cols])
    return buf.getvalue()


def write_outputs(command, report, out):
    """Write the JSON report to ``out`` (stdout if None) plus any CSV.

    The CSV goes next to the report with a ``.csv`` suffix; with no
    ``out`` it is printed after the JSON.
    """
    text = dumps(report)
    if out is None:
        sys.stdout.write(text)
        if command in CSV_COLUMNS:
            sys.stdout.write(csv_text(command, report))
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    if command in CSV_COLUMNS:
        out.with_suffix(".csv").write_text(csv_text(command, report), encoding="utf-8")


def build_parser():
    parser = argparse.ArgumentParser(prog="otrisk", description="Worst-case risk bounds over optimal-transport balls.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", help="JSON config file; missing keys use defaults")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="report path (.json); CSV tables go next to it")
        p.add_argument("--n-paths", type=int, dest="n_paths", help=f"override {N_PATHS_KEY[name]}")
        p.add_argument("--check", action="store_true", help="exit 4 if a self-test check fails")
        p.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(json.dumps(DEFAULTS[args.command], sort_keys=True, indent=2) + "\n")
        return EXIT_OK
    try:
        raw = load_config(args.config) if args.config else None
        cfg = resolve_config(args.command, raw, args.seed, args.n_paths)
        report = run(args.command, cfg)
    except (InvalidInput, ParseError) as exc:
        print(f"otrisk: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, TypeError) as exc:
        print(f"otrisk: invalid config: {exc!r}", file=sys.stderr)
        return EXIT_CONFIG
    except (OtriskError, FloatingPointError, ArithmeticError) as exc:
        print(f"otrisk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_outputs(args.command, report, args.out)
    failed = [k for k, ok in report["checks"].items() if not ok]
    if args.check and failed:
        print(f"otrisk: failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
