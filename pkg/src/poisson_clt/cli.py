"""Batch experiment runner.

Configuration is a YAML file whose keys are validated against
:data:`SCHEMA`; an unknown key or a wrongly typed value exits with code 2.
Every output is a pure function of the configuration and the root seed, and
the worker count does not change a single byte.

Exit codes: 0 when every enabled check passes, 1 when a check fails or an
estimator flags instability, 2 for configuration or input errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import bounds as bnd
from .core import CarrierSpace, GaussianTarget, MarkSpace, gaussian_target_from
from .distances import (DistanceEstimate, estimate_dconvex, estimate_dHl, estimate_dK,
                        load_witness, null_calibration, replay_witness)
from .gammas import NestedMcPlan, estimate_all, poincare_check, sample_functional
from .sampler import RngStream, points_to_csv, sample_poisson_process
from .testfns import DEFAULT_GAUSS_N, DEFAULT_GAUSS_SEED

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Raised for schema violations; maps to exit code 2."""


# A leaf is a type or tuple of types; a dict is a nested section.
SCHEMA: dict[str, Any] = {
    "model": {"id": str, "params": dict},
    "scales": list,
    "target": str,
    "seed": int,
    "out": str,
    "plan": {"n_outer": int, "n_inner": int, "n_samples": int, "n_cov": int,
             "budget": int, "gauss_n": int, "l": int, "calibrate": bool},
    "bounds": list,
    "bound_params": {"rho": (int, float), "lambda_A": (int, float),
                     "tail_integral": (int, float)},
    "distances": list,
    "checks": list,
    "stein": {"t": (int, float), "n_inner": int, "n_y": int, "n_functions": int},
}

MODEL_PARAMS: dict[str, dict[str, Any]] = {
    "compound_sum": {"marks": str, "a": (int, float), "b": (int, float)},
    "wiener_ito_constant": {"value": (int, float)},
    "count": {"d": int},
    "isolated_count": {"theta": (int, float), "components": list},
    "boolean": {"gamma": (int, float), "r_min": (int, float), "r_max": (int, float),
                "h": (int, float)},
}

BOUND_KINDS = ("d3", "d2", "dHl", "dconvex", "d3_compound")
DISTANCE_KINDS = ("dK", "dHl", "dconvex")
CHECK_KINDS = ("poincare", "stein", "bound_vs_distance")


def _validate(node: Any, schema: Any, path: str) -> None:
    if isinstance(schema, dict):
        if not isinstance(node, dict):
            raise ConfigError(f"{path or 'config'}: expected a mapping")
        for k, v in node.items():
            if k not in schema:
                raise ConfigError(f"unknown key {path + '.' if path else ''}{k}")
            _validate(v, schema[k], f"{path + '.' if path else ''}{k}")
        return
    if isinstance(node, bool) and schema is not bool and bool not in (
            schema if isinstance(schema, tuple) else (schema,)):
        raise ConfigError(f"{path}: expected {schema}, got a boolean")
    if not isinstance(node, schema):
        raise ConfigError(f"{path}: expected {schema}, got {type(node).__name__}")


@dataclass
class Plan:
    n_outer: int = 200
    n_inner: int = 50
    n_samples: int = 10_000
    n_cov: int = 2000
    budget: int = 200
    gauss_n: int = DEFAULT_GAUSS_N
    l: int = 2
    calibrate: bool = True


@dataclass
class ExperimentConfig:
    model: str
    params: dict
    scales: list[float]
    target: str = "analytic"
    seed: int = 0
    out: str = "results"
    plan: Plan = field(default_factory=Plan)
    bounds: list[str] = field(default_factory=lambda: ["d3"])
    bound_params: dict = field(default_factory=dict)
    distances: list[str] = field(default_factory=list)
    checks: list[str] = field(default_factory=list)
    stein: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, raw: Any) -> "ExperimentConfig":
        if raw is None:
            raise ConfigError("empty configuration")
        _validate(raw, SCHEMA, "")
        for req in ("model", "scales"):
            if req not in raw:
                raise ConfigError(f"missing required key {req}")
        model = raw["model"]
        if "id" not in model:
            raise ConfigError("missing required key model.id")
        mid = model["id"]
        if mid not in MODEL_PARAMS:
            raise ConfigError(f"model.id must be one of {sorted(MODEL_PARAMS)}, got {mid!r}")
        params = model.get("params", {}) or {}
        _validate(params, MODEL_PARAMS[mid], "model.params")
        scales = raw["scales"]
        if not scales or not all(isinstance(s, (int, float)) and not isinstance(s, bool)
                                 and s > 0 for s in scales):
            raise ConfigError("scales must be a nonempty list of positive numbers")
        target = raw.get("target", "analytic")
        if target not in ("analytic", "estimated"):
            raise ConfigError("target must be 'analytic' or 'estimated'")
        for key, allowed in (("bounds", BOUND_KINDS), ("distances", DISTANCE_KINDS),
                             ("checks", CHECK_KINDS)):
            bad = [v for v in raw.get(key, []) if v not in allowed]
            if bad:
                raise ConfigError(f"{key}: unknown entries {bad}; allowed {list(allowed)}")
        plan = Plan(**raw.get("plan", {}))
        if plan.n_outer < 2 or plan.n_inner < 1 or plan.n_samples < 3 or plan.n_cov < 3:
            raise ConfigError("plan sizes too small (n_outer >= 2, n_inner >= 1, "
                              "n_samples >= 3, n_cov >= 3)")
        stein = raw.get("stein", {})
        if "t" in stein and not 0 < stein["t"] < 1:
            raise ConfigError("stein.t must lie in (0, 1)")
        return cls(mid, dict(params), [float(s) for s in scales], target,
                   int(raw.get("seed", 0)), raw.get("out", "results"), plan,
                   list(raw.get("bounds", ["d3"])), dict(raw.get("bound_params", {})),
                   list(raw.get("distances", [])), list(raw.get("checks", [])), dict(stein))


def load_config(path: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return ExperimentConfig.from_mapping(raw)


# ---------------------------------------------------------------- models

def build_model(cfg: ExperimentConfig, scale: float):
    """Return ``(model, analytic covariance or None)``."""
    from . import zoo
    p = cfg.params
    if cfg.model == "compound_sum":
        kind = p.get("marks", "rademacher")
        if kind == "rademacher":
            marks, second = MarkSpace.rademacher(), 1.0
        elif kind == "normal":
            marks, second = MarkSpace.standard_normal(), 1.0
        elif kind == "uniform":
            a, b = float(p.get("a", -1.0)), float(p.get("b", 1.0))
            marks, second = MarkSpace.uniform(a, b), (a * a + a * b + b * b) / 3
        else:
            raise ConfigError("model.params.marks must be rademacher, normal or uniform")
        model = zoo.CompoundSumModel(scale, marks, sigma=np.array([[second]]))
        return model, model.sigma
    if cfg.model == "wiener_ito_constant":
        carrier = CarrierSpace.unit_cube(1, scale)
        model = zoo.WienerItoModel.constant(float(p.get("value", 1.0)), carrier)
        return model, model.covariance()
    if cfg.model == "count":
        model = zoo.CountModel(CarrierSpace.unit_cube(int(p.get("d", 1)), scale),
                               normalised=True)
        return model, np.eye(1)
    if cfg.model == "isolated_count":
        comps = p.get("components", list(zoo.IsolatedCountModel.COMPONENTS))
        try:
            model = zoo.IsolatedCountModel(scale, float(p.get("theta", 1.0)), comps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return model, None
    if cfg.model == "boolean":
        from .boolean import BooleanModel2D
        kw = {k: float(p[k]) for k in ("r_min", "r_max", "h") if k in p}
        return BooleanModel2D(scale, float(p.get("gamma", 40.0)), **kw), None
    raise ConfigError(f"unknown model {cfg.model}")


# ---------------------------------------------------------------- per-scale work

def scale_seed(root: int, index: int) -> int:
    return RngStream(root, (index,)).stream_id % (2 ** 63)


def scale_tag(scale: float) -> str:
    return f"s{scale:g}"


def _csv(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass
class ScaleResult:
    scale: float
    files: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)


def _centred_samples(model, n: int, seed: int) -> np.ndarray:
    x = sample_functional(model, n, seed)
    mu = model.mean_vector
    return x - (x.mean(axis=0) if mu is None else mu)


def _resolve_target(cfg, model, analytic, seed) -> tuple[GaussianTarget, str]:
    if cfg.target == "analytic" and analytic is not None:
        return gaussian_target_from(analytic), "analytic"
    if cfg.target == "analytic":
        raise ConfigError(f"model {cfg.model} has no analytic covariance; "
                          "set target: estimated")
    x = sample_functional(model, cfg.plan.n_cov, seed, tag=31)
    return gaussian_target_from(np.cov(x.T, ddof=1).reshape(model.m, model.m)), "estimated"


def run_scale(cfg: ExperimentConfig, index: int, stages: tuple[str, ...]) -> ScaleResult:
    scale = cfg.scales[index]
    seed = scale_seed(cfg.seed, index)
    tag = scale_tag(scale)
    res = ScaleResult(scale)
    model, analytic = build_model(cfg, scale)
    plan = cfg.plan

    if "simulate" in stages:
        eta = sample_poisson_process(model.carrier, model.marks, RngStream(seed, (1,)))
        res.files[f"points_{tag}.csv"] = points_to_csv(eta)
        x = sample_functional(model, plan.n_samples, seed)
        res.files[f"values_{tag}.csv"] = _csv([f"F{i + 1}" for i in range(model.m)],
                                              [[repr(float(v)) for v in row] for row in x])

    need_target = any(s in stages for s in ("gammas", "bounds", "distances"))
    target, source = (_resolve_target(cfg, model, analytic, seed) if need_target
                      else (None, ""))

    report = None
    if "gammas" in stages or "bounds" in stages:
        nplan = NestedMcPlan(plan.n_outer, plan.n_inner, seed)
        report = estimate_all(model, nplan, plan.n_cov, target.sigma)
        res.files[f"gammas_{tag}.csv"] = report.to_csv()
        for name in ("gamma1", "gamma2", "gamma3", "gamma4", "gamma5"):
            est = getattr(report, name)
            res.metrics[name] = est.value
            if est.extras.get("unstable"):
                res.failures.append(f"{tag}: {name} flagged unstable")

    if "bounds" in stages:
        ing = bnd.Ingredients.from_report(report)
        m = model.m
        out = []
        for kind in cfg.bounds:
            try:
                if kind == "d3":
                    b = bnd.bound_d3(ing, m)
                elif kind == "d2":
                    b = bnd.bound_d2(ing, target, m)
                elif kind == "dHl":
                    b = bnd.bound_dHl(ing, target, m, plan.l)
                elif kind == "dconvex":
                    bp = cfg.bound_params
                    b = bnd.bound_dconvex(ing, target, m, bp.get("rho"),
                                          float(bp.get("lambda_A", model.carrier.total_mass)),
                                          float(bp.get("tail_integral", 0.0)))
                else:
                    if cfg.model != "compound_sum":
                        raise ValueError("d3_compound applies to compound sums only")
                    third = abs_third_moment(cfg)
                    b = bnd.bound_d3_compound([third], scale, m)
            except ValueError as exc:
                res.failures.append(f"{tag}: bound {kind} not available: {exc}")
                continue
            out.append(b.to_csv().split("\n", 1)[1])
            res.metrics[f"bound_{kind}"] = b.total
        res.files[f"bounds_{tag}.csv"] = "bound_id,distance,quantity,value,std_error\n" \
            + "".join(out)

    if "distances" in stages and cfg.distances:
        x = _centred_samples(model, plan.n_samples, seed)
        res.files[f"samples_{tag}.csv"] = _csv([f"F{i + 1}" for i in range(model.m)],
                                               [[repr(float(v)) for v in row] for row in x])
        rows = []
        dhl: Optional[DistanceEstimate] = None
        for kind in cfg.distances:
            if kind == "dK":
                if model.m != 1:
                    res.failures.append(f"{tag}: dK needs m = 1")
                    continue
                est = estimate_dK(x[:, 0], math.sqrt(target.sigma[0, 0]), plan.gauss_n)
                cal = None
            elif kind == "dHl":
                est = estimate_dHl(x, target, plan.l, plan.budget, seed, plan.gauss_n)
                dhl = est
                cal = (null_calibration(target, x.shape[0], estimate_dHl, seed=seed,
                                        l=plan.l, budget=plan.budget, gauss_n=plan.gauss_n)
                       if plan.calibrate else None)
            else:
                est = estimate_dconvex(x, target, plan.budget, seed, plan.l, dhl, plan.gauss_n)
                cal = (null_calibration(target, x.shape[0], estimate_dconvex, seed=seed,
                                        l=plan.l, budget=plan.budget, gauss_n=plan.gauss_n)
                       if plan.calibrate else None)
            wname = f"witness_{kind}_{tag}.txt"
            res.files[wname] = est.witness_text(target)
            rows.append([kind, repr(est.value), str(est.n_samples), repr(est.gaussian_prob_se),
                         repr(est.empirical), repr(est.gaussian), str(plan.budget),
                         str(est.gauss_n), str(est.gauss_seed),
                         "" if cal is None else repr(cal), source, wname])
            res.metrics[f"distance_{kind}"] = est.value
        res.files[f"distances_{tag}.csv"] = _csv(
            ["kind", "value", "n_samples", "gaussian_prob_se", "empirical", "gaussian",
             "budget", "gauss_n", "gauss_seed", "null_calibration", "target", "witness_file"],
            rows)

    if "checks" in stages and "poincare" in cfg.checks:
        pc = poincare_check(model, plan.n_samples, seed)
        rows = [[f"poincare_F{i + 1}", repr(float(pc.variance[i])),
                 repr(float(pc.integral[i])), repr(float(pc.integral[i] - pc.variance[i])),
                 repr(float(math.hypot(pc.variance_se[i], pc.integral_se[i]))),
                 "true" if pc.passed[i] else "false"] for i in range(model.m)]
        res.files[f"poincare_{tag}.csv"] = _csv(["check", "lhs", "rhs", "margin", "se", "pass"],
                                                rows)
        if not pc.all_passed:
            res.failures.append(f"{tag}: Poincare check failed")
    return res


def abs_third_moment(cfg: ExperimentConfig) -> float:
    kind = cfg.params.get("marks", "rademacher")
    if kind == "rademacher":
        return 1.0
    if kind == "normal":
        return 2.0 * math.sqrt(2.0 / math.pi)
    a, b = float(cfg.params.get("a", -1.0)), float(cfg.params.get("b", 1.0))
    if a >= 0 or b <= 0:
        return abs(b ** 4 - a ** 4) / (4 * (b - a))
    return (a ** 4 + b ** 4) / (4 * (b - a))


# ---------------------------------------------------------------- stein checks

def run_stein_checks(cfg: ExperimentConfig) -> tuple[str, bool]:
    from . import stein
    from .testfns import halfspace
    model, analytic = build_model(cfg, cfg.scales[0])
    seed = scale_seed(cfg.seed, 0)
    target, _ = _resolve_target(cfg, model, analytic, seed)
    t = float(cfg.stein.get("t", 0.3))
    n_inner = int(cfg.stein.get("n_inner", 20_000))
    n_y = int(cfg.stein.get("n_y", 5))
    n_fun = int(cfg.stein.get("n_functions", 3))
    m = target.m
    report = stein.CheckReport()
    gen = RngStream(cfg.seed, (61,)).generator()
    for k, h in enumerate(stein.random_halfspaces(m, n_fun, 1, gen)):
        sol = stein.SteinSolution(h, t, target, n_inner=n_inner, seed=seed + k)
        for j, y in enumerate(gen.normal(size=(n_y, m)) * 1.5):
            r = stein.stein_residual(sol, y)
            report.add(f"residual_h{k}_y{j}", abs(r.residual), max(3 * r.combined_se, 5e-3),
                       r.combined_se, passed=r.passes())
    ys = stein.sample_targets(target, n_y, seed)
    stein.check_derivative_bounds(target, t, halfspace(np.eye(m)[0], 0.0), ys,
                                  n_inner=min(n_inner, 4000), seed=seed, report=report)
    stein.check_hessian_null(target, seed=seed, report=report)
    report.add(f"M2_m{m}", stein.constant_M2(m), m * m)
    m3 = stein.constant_M3(m, seed=seed)
    report.add(f"M3_m{m}", m3.value, math.sqrt(6) * m ** 1.5, m3.std_error)
    stein.check_inverse_distance_moment(0.5, stein.default_inverse_distance_catalog(m), m,
                                        seed=seed, report=report)
    stein.strip_probability_rows(report=report)
    return report.to_csv(), report.all_passed


# ---------------------------------------------------------------- driver

STAGES = {
    "simulate": ("simulate",),
    "gammas": ("gammas",),
    "bounds": ("bounds",),
    "distances": ("distances",),
    "rates": ("bounds", "distances", "checks"),
}


def _run_scales(cfg: ExperimentConfig, stages: tuple[str, ...], workers: int) -> list[ScaleResult]:
    idx = range(len(cfg.scales))
    if workers <= 1 or len(cfg.scales) == 1:
        return [run_scale(cfg, i, stages) for i in idx]
    with cf.ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(run_scale, cfg, i, stages) for i in idx]
        return [f.result() for f in futs]


def summarise(cfg: ExperimentConfig, results: list[ScaleResult]) -> tuple[str, list[str]]:
    """Rate-slope fits per metric and bound-versus-distance comparisons."""
    rows, failures = [], []
    keys = sorted({k for r in results for k in r.metrics})
    for key in keys:
        pts = [(r.scale, r.metrics[key]) for r in results if key in r.metrics]
        if len(pts) >= 3 and all(v > 0 for _, v in pts):
            try:
                fit = bnd.rate_slope(pts, seed=cfg.seed)
            except ValueError as exc:
                rows.append([key, "slope", "", "", "", "", str(len(pts)), str(exc)])
                continue
            rows.append([key, "slope", repr(fit.slope), repr(fit.intercept),
                         repr(fit.ci_low), repr(fit.ci_high), str(fit.n_points), ""])
    if "bound_vs_distance" in cfg.checks:
        for r in results:
            for kind in ("dHl", "dconvex"):
                d, b = r.metrics.get(f"distance_{kind}"), r.metrics.get(f"bound_{kind}")
                if d is None or b is None:
                    continue
                ok = d <= b
                rows.append([f"{kind}_{scale_tag(r.scale)}", "estimate_le_bound", repr(d),
                             repr(b), "", "", "1", "pass" if ok else "fail"])
                if not ok:
                    failures.append(f"{scale_tag(r.scale)}: {kind} estimate exceeds bound")
    text = _csv(["quantity", "kind", "slope_or_lhs", "intercept_or_rhs", "ci_low", "ci_high",
                 "n_points", "note"], rows)
    return text, failures


def _write(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        with open(out / name, "w", newline="") as fh:
            fh.write(text)


def run_experiment(cfg: ExperimentConfig, command: str, workers: int = 1) -> int:
    out = Path(cfg.out)
    failures: list[str] = []
    if command == "stein-checks":
        text, ok = run_stein_checks(cfg)
        _write(out, {"stein_checks.csv": text})
        if not ok:
            failures.append("stein checks failed")
    else:
        results = _run_scales(cfg, STAGES[command], workers)
        for r in results:
            _write(out, r.files)
            failures.extend(r.failures)
        if command == "rates":
            text, fails = summarise(cfg, results)
            _write(out, {"summary.csv": text})
            failures.extend(fails)
            if "stein" in cfg.checks:
                text, ok = run_stein_checks(cfg)
                _write(out, {"stein_checks.csv": text})
                if not ok:
                    failures.append("stein checks failed")
    for f in failures:
        print(f, file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


def read_samples(path: str) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read samples: {exc}") from exc
    if len(rows) < 2:
        raise ConfigError("samples file has no data rows")
    try:
        return np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"malformed samples file: {exc}") from exc


def replay(witness_path: str, samples_path: str) -> int:
    try:
        stored = load_witness(Path(witness_path).read_text())
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"malformed witness file: {exc}") from exc
    x = read_samples(samples_path)
    gap = replay_witness(stored, x)
    print(f"replayed={gap!r} recorded={stored.value!r}")
    return EXIT_OK if gap == stored.value else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poisson-clt",
                                description="Normal-approximation experiments for "
                                            "Poisson functionals")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "gammas", "bounds", "distances", "stein-checks", "rates"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", default=None, help="overrides the config output directory")
    rp = sub.add_parser("replay")
    rp.add_argument("--witness", required=True)
    rp.add_argument("--samples", required=True)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "replay":
            return replay(args.witness, args.samples)
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        return run_experiment(cfg, args.command, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
