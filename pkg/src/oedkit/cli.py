"""Command-line frontend: problem files in, JSON/CSV artifacts out.

Exit status is 0 on success, 2 when a design or spectrum finishes without
passing its optimality certificate, and 1 on any error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import importlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import criteria, design, input_design, kriging, models, simulate, solvers
from .errors import OEDError, ParseError

log = logging.getLogger("oedkit")

TASKS = ("design", "certify", "round", "input-spectrum", "synthesize", "krige", "spacefill", "ego", "simulate", "discriminate")
MODEL_KINDS = ("linear", "polynomial", "weighing", "exponential", "compartment", "input")
SCENARIOS = ("lai-wei", "sto", "nfc", "sequential")
ALGORITHMS = ("fedorov_wynn", "multiplicative", "exchange", "robust")
OPTION_DEFAULTS = {
    "criterion": "D",
    "epsilon": 1e-4,
    "max_iter": 5000,
    "seed": 0,
    "step": "fedorov",
    "grid": None,
    "merge_tol": None,
    "refine": "final",
}
SCENARIO_DEFAULTS = {
    "lai-wei": {"theta": [1.0, 2.0], "c": 1.0, "N": 100_000, "sigma": 1.0},
    "sto": {"theta": [0.0, 1.0, -1.0], "sigma": 0.1, "N": 10_000, "delta": 0.1, "lower": -2.0, "upper": 2.0, "alpha": "log"},
    "nfc": {"theta": 1.0, "T": 0.01, "x0": 1.0, "sigma": 0.0, "a": 1.0, "theta0": 2.0, "controller": "nfc", "N": 1000, "threshold": 0.05},
    "sequential": {"theta_true": None, "theta0": None, "N": 50, "sigma": 0.01},
}


@dataclass
class ProblemSpec:
    model: dict | None
    task: dict
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"task": self.task, "options": self.options}
        if self.model is not None:
            out["model"] = self.model
        return out


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _numbers(v) -> bool:
    if isinstance(v, list):
        return all(_numbers(x) for x in v)
    return _is_number(v)


class _Checker:
    def __init__(self):
        self.errors = []

    def fail(self, path, msg):
        self.errors.append((path, msg))

    def number(self, block, key, path, required=False, positive=False, nonneg=False):
        if key not in block or block[key] is None:
            if required:
                self.fail(f"{path}.{key}", "required number is missing")
            return
        v = block[key]
        if not _is_number(v):
            self.fail(f"{path}.{key}", f"expected a finite number, got {type(v).__name__}")
        elif positive and not v > 0:
            self.fail(f"{path}.{key}", "must be positive")
        elif nonneg and v < 0:
            self.fail(f"{path}.{key}", "must be nonnegative")

    def integer(self, block, key, path, required=False, minimum=None):
        if key not in block or block[key] is None:
            if required:
                self.fail(f"{path}.{key}", "required integer is missing")
            return
        v = block[key]
        if not _is_int(v):
            self.fail(f"{path}.{key}", f"expected an integer, got {type(v).__name__}")
        elif minimum is not None and v < minimum:
            self.fail(f"{path}.{key}", f"must be at least {minimum}")

    def vector(self, block, key, path, required=False):
        if key not in block or block[key] is None:
            if required:
                self.fail(f"{path}.{key}", "required numeric array is missing")
            return
        if not isinstance(block[key], list) or not _numbers(block[key]):
            self.fail(f"{path}.{key}", "expected an array of finite numbers")

    def choice(self, block, key, path, allowed, required=False):
        if key not in block or block[key] is None:
            if required:
                self.fail(f"{path}.{key}", f"required; one of {', '.join(allowed)}")
            return
        if block[key] not in allowed:
            self.fail(f"{path}.{key}", f"unknown value {block[key]!r}; expected one of {', '.join(allowed)}")


def _fill_defaults(raw: dict) -> dict:
    data = copy.deepcopy(raw)
    opts = data.setdefault("options", {})
    if isinstance(opts, dict):
        for k, v in OPTION_DEFAULTS.items():
            opts.setdefault(k, v)
    task = data.setdefault("task", {})
    if isinstance(task, dict) and task.get("kind") == "simulate":
        scen = task.get("scenario")
        for k, v in SCENARIO_DEFAULTS.get(scen, {}).items():
            task.setdefault(k, v)
        task.setdefault("seeds", 1)
    if isinstance(task, dict) and task.get("kind") == "design":
        task.setdefault("algorithm", "fedorov_wynn")
    return data


def _check_space(ck, space, path):
    if not isinstance(space, dict):
        ck.fail(path, "expected an object with lower/upper or points")
        return
    if "points" in space:
        ck.vector(space, "points", path, required=True)
    else:
        ck.vector(space, "lower", path, required=True)
        ck.vector(space, "upper", path, required=True)


def _check_model(ck, model, path="model"):
    if not isinstance(model, dict):
        ck.fail(path, "expected an object")
        return
    kind = model.get("kind")
    ck.choice(model, "kind", path, MODEL_KINDS, required=True)
    if kind not in MODEL_KINDS:
        return
    if kind == "polynomial":
        ck.integer(model, "degree", path, required=True, minimum=0)
        ck.number(model, "lower", path)
        ck.number(model, "upper", path)
    elif kind == "linear":
        terms = model.get("terms")
        if not isinstance(terms, list) or not terms or not all(isinstance(t, list) and all(_is_int(e) and e >= 0 for e in t) for t in terms):
            ck.fail(f"{path}.terms", "expected a nonempty array of exponent arrays, e.g. [[0], [1]]")
        if "space" not in model:
            ck.fail(f"{path}.space", "linear models need a design space")
        else:
            _check_space(ck, model["space"], f"{path}.space")
    elif kind == "weighing":
        ck.integer(model, "n", path, minimum=1)
    elif kind == "exponential":
        ck.number(model, "lower", path)
        ck.number(model, "upper", path)
    elif kind == "compartment":
        ck.number(model, "h", path, positive=True)
        ck.number(model, "horizon", path, positive=True)
        ck.number(model, "lower", path, nonneg=True)
        inf = model.get("infusion")
        if inf is not None and not (
            isinstance(inf, list)
            and all(isinstance(s, list) and len(s) == 3 and all(x is None or _is_number(x) for x in s) for s in inf)
        ):
            ck.fail(f"{path}.infusion", "expected [[start, stop or null, rate], ...]")
    elif kind == "input":
        ck.integer(model, "nb", path, required=True, minimum=1)
        ck.integer(model, "na", path, minimum=0)
        ck.number(model, "sigma2", path, positive=True)
    if "theta" in model:
        ck.vector(model, "theta", path)


def _check_measure(ck, block, key, path):
    m = block.get(key)
    if not isinstance(m, dict):
        ck.fail(f"{path}.{key}", "expected an object with support and weights")
        return
    ck.vector(m, "support", f"{path}.{key}", required=True)
    ck.vector(m, "weights", f"{path}.{key}", required=True)


def _check_task(ck, task, model):
    path = "task"
    if not isinstance(task, dict):
        ck.fail(path, "expected an object")
        return
    kind = task.get("kind")
    ck.choice(task, "kind", path, TASKS, required=True)
    needs_model = kind in ("design", "certify", "input-spectrum", "discriminate") or (
        kind == "simulate" and task.get("scenario") == "sequential"
    )
    if needs_model and model is None:
        ck.fail("model", f"task {kind!r} needs a model block")
    if kind == "design":
        ck.choice(task, "algorithm", path, ALGORITHMS)
        if task.get("algorithm") == "exchange":
            ck.integer(task, "N", path, required=True, minimum=1)
            ck.integer(task, "restarts", path, minimum=1)
        if task.get("algorithm") == "robust":
            ths = task.get("thetas")
            if not isinstance(ths, list) or not ths or not all(isinstance(t, list) and _numbers(t) for t in ths):
                ck.fail(f"{path}.thetas", "expected a nonempty array of parameter vectors")
            ck.choice(task, "mode", path, ("average", "minimax"))
            ck.vector(task, "prior", path)
    elif kind == "certify":
        _check_measure(ck, task, "measure", path)
    elif kind == "round":
        _check_measure(ck, task, "measure", path)
        ck.integer(task, "N", path, required=True, minimum=1)
    elif kind == "input-spectrum":
        ck.number(task, "total_power", path, positive=True)
        if model is not None and model.get("kind") not in (None, "input"):
            ck.fail("model.kind", "input-spectrum needs an 'input' model")
    elif kind == "synthesize":
        sp = task.get("spectrum")
        if not isinstance(sp, dict):
            ck.fail(f"{path}.spectrum", "expected an object with omega and power")
        else:
            ck.vector(sp, "omega", f"{path}.spectrum", required=True)
            ck.vector(sp, "power", f"{path}.spectrum", required=True)
        ck.integer(task, "duration", path, required=True, minimum=1)
    elif kind == "krige":
        kern = task.get("kernel", {})
        if not isinstance(kern, dict):
            ck.fail(f"{path}.kernel", "expected an object")
        else:
            ck.choice(kern, "family", f"{path}.kernel", ("squared_exponential", "exponential"))
            ck.number(kern, "lengthscale", f"{path}.kernel", positive=True)
            ck.number(kern, "sigma_p2", f"{path}.kernel", positive=True)
            ck.number(kern, "noise", f"{path}.kernel", nonneg=True)
        data = task.get("data")
        if "data_csv" not in task:
            if not isinstance(data, dict):
                ck.fail(f"{path}.data", "expected {sites, y} or a data_csv path")
            else:
                ck.vector(data, "sites", f"{path}.data", required=True)
                ck.vector(data, "y", f"{path}.data", required=True)
        ck.vector(task, "points", path, required=True)
    elif kind == "spacefill":
        ck.integer(task, "N", path, required=True, minimum=1)
        ck.choice(task, "method", path, ("maximin", "minimax", "lhs"), required=True)
        if "space" not in task:
            ck.fail(f"{path}.space", "required design space is missing")
        else:
            _check_space(ck, task["space"], f"{path}.space")
    elif kind == "ego":
        if not isinstance(task.get("objective"), str):
            ck.fail(f"{path}.objective", "expected a builtin name or 'module:function'")
        ck.integer(task, "budget", path, required=True, minimum=1)
        ck.number(task, "ei_tol", path, nonneg=True)
        if "space" not in task:
            ck.fail(f"{path}.space", "required design space is missing")
        else:
            _check_space(ck, task["space"], f"{path}.space")
    elif kind == "simulate":
        ck.choice(task, "scenario", path, SCENARIOS, required=True)
        ck.integer(task, "seeds", path, minimum=1)
        ck.integer(task, "N", path, minimum=1)
        ck.number(task, "sigma", path, nonneg=True)
        if task.get("scenario") == "nfc":
            ck.choice(task, "controller", path, ("nfc", "fce_ef", "switch"))
    elif kind == "discriminate":
        _check_model(ck, task.get("model_b"), f"{path}.model_b")
        ck.integer(task, "N", path, required=True, minimum=1)
        ck.number(task, "sigma", path, nonneg=True)


def _check_options(ck, opts):
    path = "options"
    if not isinstance(opts, dict):
        ck.fail(path, "expected an object")
        return
    ck.choice(opts, "criterion", path, ("D", "A", "E", "L", "G"))
    ck.number(opts, "epsilon", path, positive=True)
    ck.integer(opts, "max_iter", path, minimum=0)
    ck.integer(opts, "seed", path, minimum=0)
    ck.choice(opts, "step", path, ("fedorov", "wynn"))
    ck.choice(opts, "refine", path, ("final", "each", "none"))
    ck.number(opts, "merge_tol", path, nonneg=True)
    g = opts.get("grid")
    if g is not None:
        if isinstance(g, dict):
            if "step" in g:
                ck.number(g, "step", f"{path}.grid", positive=True)
            elif "n" in g:
                ck.integer(g, "n", f"{path}.grid", minimum=1)
            else:
                ck.fail(f"{path}.grid", "expected {step}, {n} or an array of points")
        elif not (isinstance(g, list) and g and _numbers(g)):
            ck.fail(f"{path}.grid", "expected {step}, {n} or an array of points")


def parse_problem(text) -> ProblemSpec:
    """Validate a JSON problem; every problem found is reported in one ParseError."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError([("$", f"not valid UTF-8: {exc}")]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError([("$", f"invalid JSON: {exc.msg} at line {exc.lineno} column {exc.colno}")]) from exc
    if not isinstance(raw, dict):
        raise ParseError([("$", "top level must be an object")])
    ck = _Checker()
    for key in raw:
        if key not in ("model", "task", "options"):
            ck.fail(key, "unknown top-level field")
    data = _fill_defaults(raw)
    model = data.get("model")
    if model is not None:
        _check_model(ck, model)
    _check_task(ck, data.get("task"), model)
    _check_options(ck, data.get("options"))
    if ck.errors:
        raise ParseError(ck.errors)
    return ProblemSpec(model, data["task"], data["options"])


def serialize(spec: ProblemSpec) -> str:
    return json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n"


def normalize(raw) -> str:
    """Canonical text of a problem (JSON text or dict) with defaults filled, without validation."""
    if isinstance(raw, (bytes, bytearray)):
        raw = raw.decode("utf-8")
    if isinstance(raw, str):
        raw = json.loads(raw)
    return json.dumps(_fill_defaults(raw), sort_keys=True, indent=2) + "\n"


# building objects from validated blocks


def _space(block):
    if "points" in block:
        return design.FiniteCandidateSet(block["points"])
    return design.BoxBounds(block["lower"], block["upper"])


def _monomials(terms):
    exps = np.array(terms, dtype=float)

    def regressor(u):
        return np.prod(np.asarray(u, dtype=float)[None, :] ** exps, axis=1)

    return regressor


def build_model(block: dict):
    kind = block["kind"]
    if kind == "polynomial":
        return models.PolynomialModel(block["degree"], block.get("lower", -1.0), block.get("upper", 1.0))
    if kind == "linear":
        space = _space(block["space"])
        return models.LinearModel(_monomials(block["terms"]), len(block["terms"]), space, name="linear")
    if kind == "weighing":
        return models.WeighingModel(block.get("n", 8))
    if kind == "exponential":
        return models.ExponentialModel(block.get("lower", 0.0), block.get("upper", 10.0))
    if kind == "compartment":
        inf = block.get("infusion")
        infusion = models.PK_INFUSION if inf is None else tuple((a, math.inf if b is None else b, r) for a, b, r in inf)
        return models.CompartmentModel(infusion, block.get("h", 0.05), block.get("horizon", 720.0), block.get("lower", 1.0))
    if kind == "input":
        return input_design.InputModel(block["nb"], block.get("na", 0), sigma2=block.get("sigma2", 1.0))
    raise ValueError(f"unknown model kind {kind!r}")


def _theta(block, model):
    if "theta" in block:
        return np.asarray(block["theta"], dtype=float)
    if isinstance(model, models.CompartmentModel):
        return np.asarray(models.PK_THETA)
    return np.zeros(model.p)


def _grid(opts, space):
    g = opts.get("grid")
    if g is None:
        return solvers.default_grid(space)
    if isinstance(g, dict):
        if "step" in g:
            return space.grid(step=g["step"])
        return space.grid(n=g["n"])
    return design.as_points(g, space.dim)


def _solver_options(opts, grid):
    return solvers.SolverOptions(
        step=opts["step"],
        max_iter=opts["max_iter"],
        epsilon=opts["epsilon"],
        merge_tol=opts["merge_tol"],
        grid=grid,
        seed=opts["seed"],
        refine=opts["refine"],
    )


# output helpers


def _dumps(obj) -> str:
    return json.dumps(simulate._jsonable(obj), sort_keys=True, indent=2) + "\n"


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _d_plot_csv(grid, d) -> str:
    dim = grid.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(([f"u{i}" for i in range(dim)] if dim > 1 else ["u"]) + ["d"])
    for row, val in zip(grid, d):
        w.writerow([repr(float(v)) for v in row] + [repr(float(val))])
    return buf.getvalue()


# task runners; each returns the exit code


def _run_design(spec, out):
    model = build_model(spec.model)
    theta = _theta(spec.model, model)
    opts = spec.options
    grid = _grid(opts, model.space)
    algo = spec.task.get("algorithm", "fedorov_wynn")
    if algo == "exchange":
        res = solvers.exchange_exact(model, theta, spec.task["N"], design.FiniteCandidateSet(grid), spec.task.get("restarts", 20), opts["seed"])
        _write(out, "exact_design.json", _dumps({"points": res.design.points.tolist(), "log_det": res.log_det}))
        return 0
    if algo == "robust":
        rs = solvers.RobustSpec(spec.task["thetas"], spec.task.get("mode", "average"), spec.task.get("prior"))
        res = solvers.robust_solve(model, rs, _solver_options(opts, grid))
        _write(out, "measure.json", _dumps(res.measure.to_dict()))
        _write(out, "trace.csv", solvers.trace_to_csv(res.trace))
        _write(out, "robust.json", _dumps(res.flags))
        return 0 if res.certified else 2
    if algo == "multiplicative":
        res = solvers.multiplicative_solve(model, theta, grid, opts["max_iter"], opts["epsilon"])
    else:
        res = solvers.fedorov_wynn(model, theta, _solver_options(opts, grid))
    _write(out, "measure.json", _dumps(res.measure.to_dict()))
    _write(out, "certificate.json", _dumps(res.certificate.to_dict()))
    _write(out, "trace.csv", solvers.trace_to_csv(res.trace))
    d = criteria.variance_function_many(model, theta, res.measure, grid)
    _write(out, "d_plot.csv", _d_plot_csv(grid, d))
    crit = opts.get("criterion", "D")
    if crit in ("A", "E", "D"):
        M = criteria.info_matrix(model, theta, res.measure)
        _write(out, "criterion.json", _dumps({"criterion": crit, "value": criteria.criterion_value(criteria.Criterion(crit), M)}))
    return 0 if res.certificate.certified else 2


def _run_certify(spec, out):
    model = build_model(spec.model)
    theta = _theta(spec.model, model)
    m = spec.task["measure"]
    measure = design.new_measure(design.as_points(m["support"], model.dim), m["weights"])
    grid = _grid(spec.options, model.space)
    cert = criteria.equivalence_certificate(model, theta, measure, grid, spec.options["epsilon"])
    _write(out, "certificate.json", _dumps(cert.to_dict()))
    _write(out, "d_plot.csv", _d_plot_csv(grid, criteria.variance_function_many(model, theta, measure, grid)))
    if not cert.certified:
        print(f"not certified: max d = {cert.max_d:.6g}, p = {cert.p}, gap = {cert.gap:.6g}", file=sys.stderr)
        return 2
    return 0


def _run_round(spec, out):
    m = spec.task["measure"]
    measure = design.new_measure(m["support"], m["weights"])
    exact = design.round_to_exact(measure, spec.task["N"])
    _write(out, "exact_design.json", _dumps(exact.to_dict()))
    return 0


def _run_input_spectrum(spec, out):
    model = build_model(spec.model)
    theta = _theta(spec.model, model)
    opts = spec.options
    grid = opts.get("grid")
    if grid is None:
        grid = np.linspace(0, math.pi, 513)[1:]
    elif isinstance(grid, dict):
        n = grid.get("n") or int(round(math.pi / grid["step"]))
        grid = np.linspace(0, math.pi, n + 1)[1:]
    sopts = _solver_options(opts, None)
    spectrum, cert = input_design.optimal_spectrum(model, theta, grid, spec.task.get("total_power", 1.0), sopts)
    _write(out, "spectrum.json", _dumps(spectrum.to_dict()))
    _write(out, "certificate.json", _dumps(cert.to_dict()))
    return 0 if cert.certified else 2


def _run_synthesize(spec, out):
    sp = input_design.Spectrum.from_dict(spec.task["spectrum"])
    u = input_design.synthesize_multisine(sp, spec.task["duration"], spec.options["seed"])
    _write(out, "signal.csv", "u\n" + "".join(repr(float(v)) + "\n" for v in u))
    return 0


def _read_data_csv(path, dim):
    rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))
    if rows and not all(_maybe_float(x) for x in rows[0]):
        rows = rows[1:]
    arr = np.array([[float(x) for x in r] for r in rows if r])
    if arr.ndim != 2 or arr.shape[1] != dim + 1:
        raise ValueError(f"data CSV must have {dim + 1} columns (coordinates then y)")
    return arr[:, :dim], arr[:, dim]


def _maybe_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _run_krige(spec, out):
    task = spec.task
    kern = task.get("kernel", {})
    kernel = kriging.Kernel(
        kern.get("family", "squared_exponential"), kern.get("lengthscale", 0.2), kern.get("sigma_p2", 1.0), kern.get("noise", 0.0)
    )
    pts_raw = task["points"]
    if "data_csv" in task:
        dim = int(task.get("dim", 1))
        sites, y = _read_data_csv(task["data_csv"], dim)
    else:
        sites, y = design.as_points(task["data"]["sites"]), np.asarray(task["data"]["y"], dtype=float)
        dim = sites.shape[1]
    if task.get("fit_lengthscale"):
        kernel = kriging.profile_lengthscale(kernel, sites, y)
    model = kriging.KrigingModel(kernel, sites, y)
    pts = design.as_points(pts_raw, dim)
    pred = model.predict(pts)
    y_max = float(np.max(y))
    ei = kriging.expected_improvement(pred.mean, pred.mse, y_max)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(([f"u{i}" for i in range(dim)] if dim > 1 else ["u"]) + ["mean", "mse", "ei"])
    for p, m, s, e in zip(pts, pred.mean, pred.mse, ei):
        w.writerow([repr(float(v)) for v in p] + [repr(float(m)), repr(float(s)), repr(float(e))])
    _write(out, "predictions.csv", buf.getvalue())
    return 0


def _run_spacefill(spec, out):
    task = spec.task
    space = _space(task["space"])
    cands = task.get("candidates")
    ex = kriging.space_fill(space, task["N"], task["method"], cands, spec.options["seed"])
    _write(out, "design.json", _dumps(ex.to_dict()))
    return 0


BUILTIN_OBJECTIVES = {
    "sin10": lambda u: float(np.sin(10 * np.asarray(u)).sum() + np.asarray(u).sum()),
    "neg_quadratic": lambda u: -float(np.sum((np.asarray(u) - 0.7) ** 2)),
}


def _objective(name):
    if name in BUILTIN_OBJECTIVES:
        return BUILTIN_OBJECTIVES[name]
    if ":" not in name:
        raise ValueError(f"unknown objective {name!r}; use a builtin ({', '.join(BUILTIN_OBJECTIVES)}) or 'module:function'")
    mod, fn = name.split(":", 1)
    return getattr(importlib.import_module(mod), fn)


def _run_ego(spec, out):
    task = spec.task
    space = _space(task["space"])
    res = kriging.ego_optimize(
        _objective(task["objective"]), space, task["budget"], kernel=None, ei_tol=task.get("ei_tol", 1e-6), seed=spec.options["seed"]
    )
    _write(out, "result.json", _dumps({"best_point": res.best_point.tolist(), "best_value": res.best_value, "evaluations": res.evaluations}))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter"] + [f"u{i}" for i in range(space.dim)] + ["y", "max_ei", "perturbed"])
    for row in res.trace:
        w.writerow([row["iter"]] + [repr(float(v)) for v in row["u"]] + [repr(row["y"]), repr(row["max_ei"]), row["perturbed"]])
    _write(out, "trace.csv", buf.getvalue())
    return 0


def _simulate_one(args):
    scenario, task, model_block, seed = args
    if scenario == "lai-wei":
        return simulate.simulate_lai_wei(task["theta"], task["c"], task["N"], seed, task["sigma"])
    if scenario == "sto":
        return simulate.simulate_sto_aw(
            task["theta"], task["sigma"], task["N"], task["delta"], seed, task["lower"], task["upper"], alpha=task["alpha"]
        )
    if scenario == "nfc":
        plant = simulate.ScalarPlant(task["theta"], task["T"], task["x0"], task["sigma"])
        return simulate.simulate_nfc(plant, task["a"], task["theta0"], task["controller"], task["N"], seed, task["threshold"])
    model = build_model(model_block)
    truth = task["theta_true"] if task["theta_true"] is not None else _theta(model_block, model)
    start = task["theta0"] if task["theta0"] is not None else truth
    return simulate.sequential_design(model, truth, start, task["N"], task["sigma"], seed)


def _checks(scenario, task, trace):
    if scenario == "lai-wei":
        return {"slope_near_limit": abs(trace.last("theta2") - trace.meta["slope_limit"]) <= 0.05}
    if scenario == "sto":
        u = trace["u"]
        tail = u[-max(1, len(u) // 10) :]
        return {"tail_near_optimum": abs(float(tail.mean()) - trace.meta["u_star"]) <= 0.05}
    if scenario == "nfc":
        est = trace["theta_tilde" if task["controller"] == "fce_ef" else "theta_hat"]
        spread = simulate.dispersion(est, 500, center=task["theta"])
        return {
            "state_regulated": abs(trace.last("x")) <= 1e-3,
            "estimate_close": abs(est[-1] - task["theta"]) <= 0.05,
            "non_convergence": spread >= simulate.NON_CONVERGENCE_LEVEL,
        }
    ld = trace["log_det"]
    return {"log_det_nondecreasing": bool(np.all(np.diff(ld[np.isfinite(ld)]) >= -1e-9))}


def _run_simulate(spec, out, threads=1):
    task = spec.task
    scenario = task["scenario"]
    seed0 = spec.options["seed"]
    seeds = [seed0 + i for i in range(task.get("seeds", 1))]
    jobs = [(scenario, task, spec.model, s) for s in seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(_simulate_one, jobs))
    else:
        traces = [_simulate_one(j) for j in jobs]
    runs = []
    for s, tr in zip(seeds, traces):
        _write(out, f"trace_seed{s}.csv", tr.to_csv())
        summ = tr.summary()
        summ["seed"] = s
        summ["checks"] = _checks(scenario, task, tr)
        runs.append(summ)
    _write(out, "summary.json", _dumps({"scenario": scenario, "runs": runs}))
    return 0


def _run_discriminate(spec, out):
    model_a = build_model(spec.model)
    model_b = build_model(spec.task["model_b"])
    truth = _theta(spec.model, model_a)
    grid = _grid(spec.options, model_a.space)
    tr = simulate.discriminate_sequential(model_a, model_b, truth, grid, spec.task["N"], spec.task.get("sigma", 0.1), spec.options["seed"])
    _write(out, "trace.csv", tr.to_csv())
    _write(out, "summary.json", _dumps(tr.summary()))
    return 0


RUNNERS = {
    "design": _run_design,
    "certify": _run_certify,
    "round": _run_round,
    "input-spectrum": _run_input_spectrum,
    "synthesize": _run_synthesize,
    "krige": _run_krige,
    "spacefill": _run_spacefill,
    "ego": _run_ego,
    "discriminate": _run_discriminate,
}


def run(spec: ProblemSpec, out, threads: int = 1) -> int:
    out = Path(out)
    kind = spec.task["kind"]
    if kind == "simulate":
        return _run_simulate(spec, out, threads)
    return RUNNERS[kind](spec, out)


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Subcommands repeat the global flags without defaults so a flag given
    # before the subcommand is not reset by the subparser.
    def default(v):
        return argparse.SUPPRESS if suppress else v

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default(None))
    common.add_argument("--epsilon", type=float, default=default(None))
    common.add_argument("--max-iter", type=int, default=default(None))
    common.add_argument("--grid", default=default(None), help="points per axis (integer) or 'step=H'")
    common.add_argument("--out", default=default("."), help="output directory")
    common.add_argument("--threads", type=int, default=default(1), help="worker cap for multi-seed runs")
    return common


def _build_parser() -> argparse.ArgumentParser:
    top = _global_flags(False)
    common = _global_flags(True)
    parser = argparse.ArgumentParser(prog="oedkit", description="Optimal experimental design toolkit", parents=[top])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in TASKS:
        if name == "simulate":
            continue
        p = sub.add_parser(name, parents=[common])
        p.add_argument("problem", help="JSON problem file ('-' for stdin)")
    sim = sub.add_parser("simulate", parents=[common])
    sim.add_argument("scenario", choices=SCENARIOS)
    sim.add_argument("problem", nargs="?", help="optional JSON problem file")
    sim.add_argument("--sigma", type=float)
    sim.add_argument("--seeds", type=int)
    sim.add_argument("--N", type=int, dest="steps")
    sim.add_argument("--controller", choices=("nfc", "fce_ef", "switch"))
    return parser


def _apply_flags(raw: dict, args, command: str) -> dict:
    raw = copy.deepcopy(raw)
    task = raw.setdefault("task", {})
    if isinstance(task, dict):
        if task.get("kind") is None:
            task["kind"] = command
        if command == "simulate":
            task.setdefault("scenario", args.scenario)
            for flag, key in (("sigma", "sigma"), ("seeds", "seeds"), ("steps", "N"), ("controller", "controller")):
                v = getattr(args, flag, None)
                if v is not None:
                    task[key] = v
    opts = raw.setdefault("options", {})
    if isinstance(opts, dict):
        if args.seed is not None:
            opts["seed"] = args.seed
        if args.epsilon is not None:
            opts["epsilon"] = args.epsilon
        if args.max_iter is not None:
            opts["max_iter"] = args.max_iter
        if args.grid is not None:
            g = args.grid
            opts["grid"] = {"step": float(g.split("=", 1)[1])} if g.startswith("step=") else {"n": int(g)}
    return raw


def _read_problem(path):
    if path is None:
        return {}
    data = sys.stdin.buffer.read() if path == "-" else Path(path).read_bytes()
    try:
        raw = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        parse_problem(data)  # raises a ParseError with the details
        raise
    return raw


def main(argv=None) -> int:
    level = os.environ.get("OEDKIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        raw = _read_problem(args.problem)
        if not isinstance(raw, dict):
            raise ParseError([("$", "top level must be an object")])
        raw = _apply_flags(raw, args, args.command)
        if raw["task"].get("kind") != args.command:
            raise ParseError([("task.kind", f"problem file describes {raw['task'].get('kind')!r}, not {args.command!r}")])
        spec = parse_problem(json.dumps(raw))
        return run(spec, args.out, max(1, args.threads))
    except ParseError as exc:
        for path, msg in exc.errors:
            print(f"oedkit: problem: {path}: {msg}", file=sys.stderr)
        return 1
    except (OEDError, ValueError, OSError) as exc:
        module = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"oedkit: {module}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
