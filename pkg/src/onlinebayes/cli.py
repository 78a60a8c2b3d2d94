"""File-based experiment runner.

Every run validates a YAML experiment document, dispatches to one module
operation, and writes CSV tables plus ``report.json`` into its own output
directory. Exit codes: 0 all checks pass, 1 a check failed, 2 the config
could not be parsed, 3 the config (or the data it points to) is invalid.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform as _platform
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__, acceptance, ddp, dirichlet, gp, inversion, supervised
from . import rng as rngmod
from .config import (
    ConfigParseError,
    ConfigValidationError,
    exact_number,
    parse_text,
    echo,
    read_document,
    set_path,
    validate,
)
from .measure import FiniteSpace, ScalarMode, max_abs_diff
from .model import SupervisedModel, load_model, sampling_operator

EXIT_OK, EXIT_CHECK, EXIT_PARSE, EXIT_INVALID = 0, 1, 2, 3
BRUTE_FORCE_LIMIT = 100_000


class DataError(ValueError):
    """Input data referenced by a valid config is unusable."""


# output helpers


def fmt(value: Any) -> str:
    """CSV cell text: 17 significant digits for floats, exact text for rationals."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer, str)):
        return str(value)
    if isinstance(value, tuple):
        return json.dumps(_jsonable(value), separators=(",", ":"))
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    if value is None or isinstance(value, str):
        return value
    return str(value)


@dataclass
class Check:
    name: str
    ok: bool
    deviation: Any = None
    tolerance: Any = None


@dataclass
class RunReport:
    config: dict
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    files: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    version: str = __version__
    platform: str = field(default_factory=_platform.platform)
    python: str = field(default_factory=_platform.python_version)
    rng: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "ok": self.ok,
                "config": self.config,
                "checks": [c.__dict__ for c in self.checks],
                "results": self.results,
                "warnings": self.warnings,
                "files": self.files,
                "timing": self.timing,
                "version": self.version,
                "platform": self.platform,
                "python": self.python,
                "rng": self.rng,
            }
        )


class Recorder:
    """Collects checks and results; writes tables into the run directory."""

    def __init__(self, out: Path, report: RunReport):
        self.out = out
        self.report = report

    def check(self, name: str, ok: bool, deviation=None, tolerance=None) -> None:
        self.report.checks.append(Check(name, bool(ok), deviation, tolerance))

    def result(self, **values) -> None:
        self.report.results.update(values)

    def warn(self, message: str) -> None:
        self.report.warnings.append(message)

    def table(self, name: str, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
        path = self.out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
        self.report.files.append(name)
        return path


def read_pairs(path: str) -> list[tuple[str, str]]:
    """Two-column CSV with header ``x,y``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    if not rows or [c.strip() for c in rows[0]] != ["x", "y"]:
        raise DataError(f"{path}: expected header 'x,y'")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise DataError(f"{path}: line {i}: expected 2 fields, got {len(row)}")
        out.append((row[0], row[1]))
    return out


# finite models


def _resolve(label: Any, space: FiniteSpace, what: str):
    if isinstance(label, list):
        label = tuple(label)
    if label in space:
        return label
    by_text = {fmt(lab): lab for lab in space.labels}
    if str(label) in by_text:
        return by_text[str(label)]
    raise DataError(f"{what} {label!r} is not one of {[fmt(lab) for lab in space.labels]}")


def _load_finite(p) -> tuple[SupervisedModel, supervised.TrainingSample, tuple]:
    try:
        text = Path(p.model).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{p.model}: {exc.strerror}") from None
    try:
        model = load_model(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{p.model}: not a valid model file: {exc}") from None
    pairs = read_pairs(p.sample) if isinstance(p.sample, str) else p.sample
    sample = supervised.TrainingSample(
        tuple((_resolve(x, model.inputs, "input"), _resolve(y, model.labels, "label")) for x, y in pairs)
    )
    test = tuple(_resolve(x, model.inputs, "test input") for x in p.test)
    return model, sample, test


def _random_cases(cfg):
    r = cfg.params.random
    return acceptance.finite_cases(
        cfg.seed, r.count, r.mode, r.max_theta, r.max_inputs, r.max_labels, r.max_n, r.max_m
    )


def _exact_tol(model: SupervisedModel, tol) -> float:
    return 0.0 if model.mode is ScalarMode.EXACT else tol.float_abs


def _weight_rows(dist) -> list[tuple]:
    return [(lab, w, float(w)) for lab, w in zip(dist.space.labels, dist.weights)]


def finite_invert(cfg, rec: Recorder) -> None:
    tol = cfg.tolerances
    if cfg.params.random is not None:
        rows, worst, worst_op = [], 0.0, 0.0
        for i, case in enumerate(_random_cases(cfg)):
            b = inversion.batch_invert(case.model, case.sample.inputs, case.sample.outputs)
            s = inversion.sequential_invert(case.model, case.sample)
            d = float(max_abs_diff(b.weights, s.weights))
            op = 0.0
            if len(case.sample):
                p = sampling_operator(case.model, case.sample.inputs)
                q = inversion.brute_force_invert(p, case.model.prior)
                op = float(inversion.verify_inversion(q.kernel, p, case.model.prior).deviation)
            m = case.model
            rows.append((i, m.theta.size, m.inputs.size, m.labels.size, len(case.sample), d, op))
            worst, worst_op = max(worst, d), max(worst_op, op)
        limit = 0.0 if cfg.params.random.mode == "exact-rational" else tol.float_abs
        rec.table("cases.csv", ("case", "n_theta", "n_inputs", "n_labels", "n", "batch_vs_sequential", "operator_equation"), rows)
        rec.check("batch_equals_sequential", worst <= limit, worst, limit)
        rec.check("operator_equation", worst_op <= limit, worst_op, limit)
        rec.result(models=len(rows))
        return
    model, sample, _ = _load_finite(cfg.params)
    limit = _exact_tol(model, tol)
    b = inversion.batch_invert(model, sample.inputs, sample.outputs)
    s = inversion.sequential_invert(model, sample)
    d = float(max_abs_diff(b.weights, s.weights))
    rec.check("batch_equals_sequential", d <= limit, d, limit)
    if len(sample) and model.labels.size ** len(sample) <= BRUTE_FORCE_LIMIT:
        p = sampling_operator(model, sample.inputs)
        q = inversion.brute_force_invert(p, model.prior)
        v = inversion.verify_inversion(q.kernel, p, model.prior)
        rec.check("operator_equation", v.ok, float(v.deviation), limit)
        key = sample.outputs[0] if len(sample) == 1 else sample.outputs
        dq = float(max_abs_diff(q.posterior(key).weights, b.weights))
        rec.check("batch_matches_brute_force", dq <= limit, dq, limit)
    elif len(sample):
        rec.warn(f"brute-force inversion skipped: {model.labels.size}^{len(sample)} outcomes")
    rec.table("posterior.csv", ("theta", "weight", "weight_float"), _weight_rows(b))
    rec.result(mode=model.mode.value, n=len(sample))


def _predictive_rows(dist, m: int) -> list[tuple]:
    rows = []
    for lab, w in zip(dist.space.labels, dist.weights):
        labs = lab if m > 1 else (lab,)
        rows.append(tuple(labs) + (w, float(w)))
    return rows


def finite_predict(cfg, rec: Recorder) -> None:
    tol = cfg.tolerances
    if cfg.params.random is not None:
        rows, worst = [], 0.0
        for i, case in enumerate(_random_cases(cfg)):
            b = supervised.posterior_predictive_batch(case.model, case.sample, case.test)
            r = supervised.posterior_predictive_recursive(case.model, case.sample, case.test)
            c = supervised.posterior_predictive_conditional(case.model, case.sample, case.test)
            d = float(max(max_abs_diff(b.weights, r.weights), max_abs_diff(b.weights, c.weights)))
            rows.append((i, len(case.sample), len(case.test), d))
            worst = max(worst, d)
        limit = 0.0 if cfg.params.random.mode == "exact-rational" else tol.float_abs
        rec.table("cases.csv", ("case", "n", "m", "max_route_deviation"), rows)
        rec.check("predictive_routes_agree", worst <= limit, worst, limit)
        rec.result(models=len(rows))
        return
    model, sample, test = _load_finite(cfg.params)
    limit = _exact_tol(model, tol)
    b = supervised.posterior_predictive_batch(model, sample, test)
    r = supervised.posterior_predictive_recursive(model, sample, test)
    c = supervised.posterior_predictive_conditional(model, sample, test)
    rec.check("recursive_equals_batch", max_abs_diff(b.weights, r.weights) <= limit, float(max_abs_diff(b.weights, r.weights)), limit)
    rec.check("conditional_equals_batch", max_abs_diff(b.weights, c.weights) <= limit, float(max_abs_diff(b.weights, c.weights)), limit)
    header = tuple(f"y{i + 1}" for i in range(len(test))) + ("weight", "weight_float")
    rec.table("predictive.csv", header, _predictive_rows(b, len(test)))
    rec.result(test=[fmt(x) for x in test], n=len(sample))


def finite_consistency(cfg, rec: Recorder) -> None:
    if cfg.params.random is not None:
        cases = [(c.model, c.sample, c.test) for c in _random_cases(cfg)]
        limit = 0.0 if cfg.params.random.mode == "exact-rational" else cfg.tolerances.float_abs
    else:
        model, sample, test = _load_finite(cfg.params)
        cases = [(model, sample, test[:-1])]
        limit = _exact_tol(model, cfg.tolerances)
    rows, worst = [], 0.0
    for i, (model, sample, test) in enumerate(cases):
        extra = cfg.params.test[-1] if cfg.params.random is None else model.inputs.labels[len(test) % model.inputs.size]
        extra = _resolve(extra, model.inputs, "test input")
        big = supervised.posterior_predictive_batch(model, sample, tuple(test) + (extra,))
        small = supervised.posterior_predictive_batch(model, sample, test)
        marg = np.asarray(big.weights).reshape((model.labels.size,) * (len(test) + 1)).sum(axis=-1).reshape(-1)
        d = float(max_abs_diff(marg, np.asarray(small.weights).reshape(-1)))
        rows.append((i, len(test), d))
        worst = max(worst, d)
    rec.table("consistency.csv", ("case", "m", "deviation"), rows)
    rec.check("marginal_consistency", worst <= limit, worst, limit)


# gaussian processes


def _gp_prior(p) -> gp.GpPrior:
    cov = gp.KERNELS[p.kernel](p.lengthscale or 1.0, p.variance or 1.0)
    return gp.GpPrior(cov_fn=cov, noise_var_fn=gp.constant_noise(p.noise or 0.1))


def _gp_instance(cfg, index: int = 0, n: int | None = None) -> gp.GpInstance:
    p = cfg.params
    if p.data is not None:
        pairs = read_pairs(p.data)
        try:
            xs = np.array([float(x) for x, _ in pairs])
            ys = np.array([float(y) for _, y in pairs])
        except ValueError as exc:
            raise DataError(f"{p.data}: {exc}") from None
        return gp.GpInstance(_gp_prior(p), np.asarray(p.test, dtype=float), xs, ys)
    g = rngmod.generator(cfg.seed, index)
    return gp.random_instance(g, p.n if n is None else n, p.m, p.kernel, p.lengthscale, p.noise, p.domain, p.variance)


def _belief_tables(rec: Recorder, inst: gp.GpInstance, belief: gp.GaussianBelief) -> None:
    rec.table("predictive.csv", ("x", "mean", "variance"), list(zip(inst.test, belief.mean, np.diag(belief.cov))))
    m = belief.dim
    rec.table("covariance.csv", ("i", "j", "value"), [(i, j, belief.cov[i, j]) for i in range(m) for j in range(m)])


def _valid(belief: gp.GaussianBelief) -> tuple[bool, str]:
    try:
        belief.validate()
    except ValueError as exc:
        return False, str(exc)
    return True, ""


def gp_single(cfg, rec: Recorder) -> None:
    inst = _gp_instance(cfg)
    route = gp.batch_predictive if cfg.operation == "batch" else gp.recursive_predictive
    belief = route(inst.prior, inst.test, inst.sample)
    ok, why = _valid(belief)
    rec.check("covariance_valid", ok)
    if why:
        rec.warn(why)
    _belief_tables(rec, inst, belief)
    rec.result(route=cfg.operation, n=len(inst.train_x), m=len(inst.test))


def gp_compare(cfg, rec: Recorder) -> None:
    tol = cfg.tolerances
    count = 1 if cfg.params.data is not None else cfg.params.instances
    rows, wm, wc, ws = [], 0.0, 0.0, 0.0
    for i in range(count):
        inst = _gp_instance(cfg, i)
        b = gp.batch_predictive(inst.prior, inst.test, inst.sample)
        r = gp.recursive_predictive(inst.prior, inst.test, inst.sample)
        s = gp.StreamingGp(inst.prior, inst.test)
        for x, y in inst.sample:
            s.append(x, y)
        dm = acceptance.gp_relative_mean_deviation(b.mean, r.mean)
        dc = float(np.max(np.abs(b.cov - r.cov)))
        ds = max(acceptance.gp_relative_mean_deviation(b.mean, s.belief.mean), float(np.max(np.abs(b.cov - s.belief.cov))))
        rows.append((i, len(inst.train_x), len(inst.test), dm, dc, ds))
        wm, wc, ws = max(wm, dm), max(wc, dc), max(ws, ds)
        if i == 0:
            _belief_tables(rec, inst, b)
    rec.table("compare.csv", ("instance", "n", "m", "mean_rel_deviation", "cov_abs_deviation", "streaming_deviation"), rows)
    rec.check("mean_batch_vs_recursive", wm <= tol.gp_mean_rel, wm, tol.gp_mean_rel)
    rec.check("cov_batch_vs_recursive", wc <= tol.gp_cov_abs, wc, tol.gp_cov_abs)
    rec.check("streaming_vs_batch", ws <= tol.gp_cov_abs, ws, tol.gp_cov_abs)


def gp_stream(cfg, rec: Recorder) -> None:
    inst = _gp_instance(cfg)
    refit, stream = gp.streaming_times(inst)
    cross = gp.crossover(refit, stream)
    n = np.arange(1, len(refit) + 1)
    rec.table("stream_timing.csv", ("n", "refit_cumulative_s", "recursive_cumulative_s"), list(zip(n, np.cumsum(refit), np.cumsum(stream))))
    rec.check("streaming_eventually_faster", cross is not None)
    rec.report.timing["crossover_n"] = cross


def gp_bench(cfg, rec: Recorder) -> None:
    rows = gp.benchmark(lambda n: _gp_instance(cfg, n, n), cfg.params.sizes, cfg.params.reps)
    rec.table("bench.csv", gp.BENCH_HEADER, rows)
    ns = [r[0] for r in rows[::2]]
    rec.check("n_strictly_ascending", all(b > a for a, b in zip(ns, ns[1:])))
    methods = {}
    for n, method, *_ in rows:
        methods.setdefault(n, set()).add(method)
    rec.check("both_methods_per_n", all(v == {"batch-refit", "recursive"} for v in methods.values()))


# dirichlet processes


def _label(v):
    return tuple(v) if isinstance(v, list) else v


def _alpha(p) -> dirichlet.DirichletMeasure:
    a = p.alpha
    base = None
    if a.base is not None:
        spec = a.base.model_dump()
        if spec["family"] == "uniform":
            spec["low"], spec["high"] = exact_number(spec["low"]), exact_number(spec["high"])
        base = dirichlet.base_from_spec(spec)
    atoms = tuple((_point(loc), exact_number(w)) for loc, w in a.atoms)
    return dirichlet.DirichletMeasure(atoms, base, exact_number(a.mass))


def _point(v):
    """Observation or atom location: numeric strings such as ``"1/3"`` become exact numbers."""
    if isinstance(v, str):
        try:
            return exact_number(v)
        except (ValueError, ZeroDivisionError):
            return v
    return _label(v)


def _partition(p):
    if p.cuts is not None:
        return dirichlet.IntervalPartition(tuple(exact_number(c) for c in p.cuts))
    if p.cells is not None:
        return dirichlet.LabelPartition(tuple(frozenset(_point(y) for y in cell) for cell in p.cells))
    return None


def _cell_names(part) -> list:
    if isinstance(part, dirichlet.IntervalPartition):
        return [part.bounds(i) for i in range(part.size)]
    return [("|".join(sorted(fmt(y) for y in cell)), "") for cell in part.cells]


def dp_posterior_op(cfg, rec: Recorder) -> None:
    p = cfg.params
    alpha = _alpha(p)
    obs = [_point(y) for y in p.observations]
    post = dirichlet.dp_posterior(alpha, obs)
    rec.table("posterior_atoms.csv", ("location", "weight"), [(loc, w) for loc, w in post.atoms])
    rec.result(diffuse_mass=str(post.diffuse_mass), total_mass=str(post.total_mass), observations=len(obs))
    part = _partition(p)
    if part is not None:
        lhs = dirichlet.project(post, part)
        rhs = dirichlet.count_update(dirichlet.project(alpha, part), [part.cell_of(y) for y in obs])
        dev = max(abs(a - b) for a, b in zip(lhs.params, rhs.params))
        rec.check("projection_commutes_with_update", dev == 0 if _all_exact(lhs.params) else dev <= cfg.tolerances.float_abs, float(dev), 0.0)


def _all_exact(values) -> bool:
    return all(isinstance(v, (int, Fraction)) for v in values)


def dp_project_op(cfg, rec: Recorder) -> None:
    p = cfg.params
    alpha = _alpha(p)
    part = _partition(p)
    obs = [_point(y) for y in p.observations]
    d = dirichlet.project(dirichlet.dp_posterior(alpha, obs), part)
    names = _cell_names(part)
    rows = [(i, lo, hi, prm, m, v) for i, ((lo, hi), prm, m, v) in enumerate(zip(names, d.params, d.mean(), d.var()))]
    rec.table("projection.csv", ("cell", "lower", "upper", "parameter", "mean", "variance"), rows)
    rec.result(total=str(d.total))


def dp_sample_op(cfg, rec: Recorder) -> None:
    p = cfg.params
    alpha = dirichlet.dp_posterior(_alpha(p), [_point(y) for y in p.observations])
    n = p.truncation or dirichlet.truncation_for(float(alpha.total_mass), p.bias)
    part = _partition(p)
    rows, proj, worst = [], [], 0.0
    for r in range(p.reps):
        draw = dirichlet.stick_breaking_sample(alpha, n, cfg.seed + r)
        worst = max(worst, abs(float(draw.weights.sum()) - 1.0))
        rows.extend((r, i, a, w) for i, (a, w) in enumerate(zip(draw.atoms, draw.weights)))
        if part is not None:
            proj.extend((r, c, mass) for c, mass in enumerate(draw.mass_in(part)))
    rec.table("sample.csv", ("draw", "index", "atom", "weight"), rows)
    if part is not None:
        rec.table("sample_projected.csv", ("draw", "cell", "mass"), proj)
    rec.check("weights_sum_to_one", worst <= cfg.tolerances.float_abs, worst, cfg.tolerances.float_abs)
    rec.result(truncation=n, truncation_bias=dirichlet.truncation_bias(float(alpha.total_mass), n))


def dp_check_op(cfg, rec: Recorder) -> None:
    p = cfg.params
    if p.chain is not None:
        chain = [dirichlet.IntervalPartition(tuple(exact_number(c) for c in cuts)) for cuts in p.chain]
        try:
            report = dirichlet.check_projective(_alpha(p), chain, [_point(y) for y in p.observations])
        except ValueError as exc:
            raise DataError(str(exc)) from None
        rows = [(0, report.checks, report.max_deviation)]
    else:
        rows = []
        for i in range(p.random_chains):
            g = rngmod.generator(cfg.seed, i)
            alpha, obs = acceptance.random_dirichlet_case(g)
            rep = dirichlet.check_projective(alpha, acceptance._random_chain(g), obs)
            rows.append((i, rep.checks, rep.max_deviation))
    rec.table("projective.csv", ("chain", "diagram_checks", "max_deviation"), rows)
    worst = max(float(r[2]) for r in rows)
    exact = _all_exact([r[2] for r in rows])
    limit = 0.0 if exact else cfg.tolerances.float_abs
    rec.check("projective_diagrams_commute", worst <= limit, worst, limit)


# dependent dirichlet processes


def _copula(c) -> ddp.CopulaSpec:
    if c.kind == "independent":
        return ddp.independent()
    if c.kind == "comonotone":
        return ddp.comonotone()
    if c.kind == "exponential":
        return ddp.exponential_correlation(c.lengthscale)
    return ddp.constant_correlation(c.rho)


def _ddp_spec(p) -> ddp.DdpSpec:
    a0, a1 = p.alpha.intercept, p.alpha.slope
    b = p.base
    if b.family == "normal":
        base_fn = lambda x: dirichlet.NormalBase(b.loc_intercept + b.loc_slope * x, b.scale)  # noqa: E731
    else:
        base_fn = lambda x: dirichlet.UniformBase(  # noqa: E731
            b.center_intercept + b.center_slope * x - b.half_width, b.center_intercept + b.center_slope * x + b.half_width
        )
    sites = list(p.sites) + [x for x, _ in p.sample] + list(p.test or [])
    n = p.truncation or dirichlet.truncation_for(max(a0 + a1 * x for x in sites), p.bias)
    return ddp.DdpSpec(lambda x: a0 + a1 * x, base_fn, _copula(p.copula_v), _copula(p.copula_theta), n)


def ddp_sample_op(cfg, rec: Recorder) -> None:
    spec = _ddp_spec(cfg.params)
    path = ddp.sample_path(spec, cfg.params.sites, cfg.seed)
    rows = [(x, i, path.atoms[s, i], path.weights[s, i]) for s, x in enumerate(path.xs) for i in range(spec.truncation)]
    rec.table("sample.csv", ("site", "index", "atom", "weight"), rows)
    worst = float(np.max(np.abs(path.weights.sum(axis=1) - 1.0)))
    rec.check("weights_sum_to_one", worst <= cfg.tolerances.float_abs, worst, cfg.tolerances.float_abs)
    _truncation_results(rec, spec, path.xs)


def _truncation_results(rec: Recorder, spec: ddp.DdpSpec, xs) -> None:
    rec.result(
        truncation=spec.truncation,
        truncation_bias={fmt(x): dirichlet.truncation_bias(spec.alpha_fn(x), spec.truncation) for x in xs},
    )


def ddp_project_op(cfg, rec: Recorder) -> None:
    p, tol = cfg.params, cfg.tolerances
    spec = _ddp_spec(p)
    part = dirichlet.IntervalPartition(tuple(p.cuts))
    s = ddp.finite_projection(spec, p.sites, part, cfg.seed, p.reps)
    rows = []
    for i, x in enumerate(s.xs):
        for c, (lo, hi) in enumerate(_cell_names(part)):
            rows.append(
                (x, c, lo, hi, s.mean[i, c], s.var[i, c], s.se_mean[i, c], s.se_var[i, c],
                 s.target_mean[i, c], s.target_var[i, c], s.z_mean[i, c], s.z_var[i, c])
            )
    header = ("site", "cell", "lower", "upper", "mean", "variance", "se_mean", "se_variance",
              "target_mean", "target_variance", "z_mean", "z_variance")
    rec.table("projection.csv", header, rows)
    live = s.target_var > 0
    z = np.concatenate([s.z_mean[live], s.z_var[live]])
    frac = float(np.mean(z <= tol.z_max)) if z.size else 1.0
    rec.check("dirichlet_marginals", frac >= tol.z_fraction, frac, tol.z_fraction)
    rec.result(reps=p.reps, max_z=float(z.max()) if z.size else 0.0)
    _truncation_results(rec, spec, s.xs)


def ddp_mean_check_op(cfg, rec: Recorder) -> None:
    p = cfg.params
    spec = _ddp_spec(p)
    part = dirichlet.IntervalPartition(tuple(p.cuts))
    r = ddp.mean_measure_check(spec, p.sites, part, cfg.seed, p.reps)
    targets = ddp.base_cell_probs(spec, p.sites, part)
    rows = [(x, c, targets[i, c], r.z_scores[i, c]) for i, x in enumerate(p.sites) for c in range(part.size)]
    rec.table("mean_check.csv", ("site", "cell", "target_mean", "z"), rows)
    rec.check("mean_measure", r.ok, r.max_z, 3.0)
    _truncation_results(rec, spec, p.sites)


def ddp_predict_op(cfg, rec: Recorder) -> None:
    p = cfg.params
    spec = _ddp_spec(p)
    part = dirichlet.IntervalPartition(tuple(p.cuts))
    r = ddp.ddp_predictive_mc(spec, p.sample, p.test, part, cfg.seed, p.reps, cfg.tolerances.min_ess)
    k = part.size
    cells = list(np.ndindex(*(k,) * len(r.test)))
    header = tuple(f"cell{i + 1}" for i in range(len(r.test))) + ("probability", "se")
    rec.table("predictive.csv", header, [c + (pr, se) for c, pr, se in zip(cells, r.probs, r.se)])
    rec.result(ess=r.ess, low_ess=r.low_ess, reps=p.reps, approximate=True)
    if r.low_ess:
        rec.warn(f"effective sample size {r.ess:.1f} is below {cfg.tolerances.min_ess}")
    _truncation_results(rec, spec, tuple(dict.fromkeys(tuple(p.test) + tuple(x for x, _ in p.sample))))


HANDLERS: dict[tuple[str, str], Callable[[Any, Recorder], None]] = {
    ("finite", "invert"): finite_invert,
    ("finite", "predict"): finite_predict,
    ("finite", "consistency"): finite_consistency,
    ("gp", "batch"): gp_single,
    ("gp", "recursive"): gp_single,
    ("gp", "compare"): gp_compare,
    ("gp", "stream"): gp_stream,
    ("gp", "bench"): gp_bench,
    ("dp", "posterior"): dp_posterior_op,
    ("dp", "project"): dp_project_op,
    ("dp", "sample"): dp_sample_op,
    ("dp", "check"): dp_check_op,
    ("ddp", "sample"): ddp_sample_op,
    ("ddp", "project"): ddp_project_op,
    ("ddp", "mean-check"): ddp_mean_check_op,
    ("ddp", "predict"): ddp_predict_op,
}


def execute(cfg, out: str | Path | None = None) -> RunReport:
    """Run a validated config and write its outputs."""
    out = Path(out or cfg.output or f"runs/{cfg.family}-{cfg.operation}")
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(config=echo(cfg), rng={"algorithm": rngmod.ALGORITHM, "seed": cfg.seed})
    rec = Recorder(out, report)
    t0 = time.perf_counter()
    try:
        HANDLERS[(cfg.family, cfg.operation)](cfg, rec)
    except (KeyError, ValueError, np.linalg.LinAlgError) as exc:
        raise DataError(str(exc)) from exc
    report.timing["seconds"] = time.perf_counter() - t0
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return report


DATA_KEYS = ("model", "sample", "data")


def _anchor_paths(doc: dict, base: Path) -> None:
    """Relative data file paths are taken relative to the config file."""
    params = doc.get("params")
    if not isinstance(params, dict):
        return
    for key in DATA_KEYS:
        v = params.get(key)
        if isinstance(v, str) and not Path(v).is_absolute():
            params[key] = str(base / v)


def load_config(path: str | None, family: str | None = None, operation: str | None = None, overrides: Sequence[str] = ()):
    doc = read_document(path) if path else {}
    if path:
        _anchor_paths(doc, Path(path).parent)
    if family is not None:
        if doc.get("family", family) != family:
            raise ConfigValidationError(f"family: config is for {doc['family']!r}, this subcommand runs {family!r}")
        doc["family"] = family
    if operation is not None:
        doc["operation"] = operation
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ConfigParseError(f"--set {item!r}: expected key=value")
        set_path(doc, key, parse_text(f"v: {text}", f"--set {key}")["v"])
    return validate(doc)


def run(config_path: str, out: str | None = None) -> RunReport:
    """Validate the YAML document at ``config_path``, execute it, and return the report."""
    return execute(load_config(config_path), out)


# command line


FAMILY_COMMANDS = {
    "predict": ("finite", "predict"),
    "invert": ("finite", "invert"),
    "gp": ("gp", None),
    "dp": ("dp", None),
    "ddp": ("ddp", None),
    "bench": ("gp", "bench"),
}

GP_FLAGS = {"kernel": str, "lengthscale": float, "noise": float, "n": int, "m": int}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onlinebayes", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment document")
    r.add_argument("config")
    _common_flags(r)

    for name, (family, op) in FAMILY_COMMANDS.items():
        p = sub.add_parser(name, help=f"{family} experiment" + (f" ({op})" if op else ""))
        p.add_argument("config", nargs="?", help="YAML experiment document")
        if op is None:
            p.add_argument("--op", "--mode", dest="op", help="operation to run")
        _common_flags(p)
        if family == "gp":
            for flag, typ in GP_FLAGS.items():
                p.add_argument(f"--{flag}", type=typ)
        if name == "bench":
            p.add_argument("--sizes", type=lambda s: [int(v) for v in s.split(",")], help="comma-separated n values")
            p.add_argument("--reps", type=int)

    s = sub.add_parser("selftest", help="run every acceptance check")
    s.add_argument("--seed", type=int, default=acceptance.DEFAULT_SEED)
    s.add_argument("--out", help="directory for selftest tables")
    return ap


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry, e.g. params.n=50")


def _overrides(args) -> list[str]:
    items = []
    if args.seed is not None:
        items.append(f"seed={args.seed}")
    for flag in GP_FLAGS:
        v = getattr(args, flag, None)
        if v is not None:
            items.append(f"params.{flag}={v}")
    if getattr(args, "sizes", None) is not None:
        items.append(f"params.sizes=[{','.join(map(str, args.sizes))}]")
    if getattr(args, "reps", None) is not None:
        items.append(f"params.reps={args.reps}")
    return items + list(args.set)


def selftest(seed: int, out: str | None, echo_line: Callable[[str], None] = print) -> int:
    results = acceptance.run_all(seed, echo_line)
    passed = sum(r.ok for r in results)
    echo_line(f"{passed}/{len(results)} criteria passed (seed {seed})")
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        rec = Recorder(d, RunReport(config={"command": "selftest", "seed": seed}))
        rec.table(
            "selftest.csv",
            ("criterion", "title", "ok", "deviation", "tolerance"),
            [(r.number, r.title, r.ok, r.deviation, r.tolerance) for r in results],
        )
        with open(d / "selftest.json", "w", encoding="utf-8") as fh:
            json.dump(_jsonable({"seed": seed, "rng": rngmod.ALGORITHM, "checks": [r.stable() for r in results]}), fh, indent=2)
            fh.write("\n")
        with open(d / "timing.json", "w", encoding="utf-8") as fh:
            json.dump(_jsonable({r.number: r.timing for r in results}), fh, indent=2)
            fh.write("\n")
    return EXIT_OK if passed == len(results) else EXIT_CHECK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "selftest":
        return selftest(args.seed, args.out)
    try:
        if args.command == "run":
            cfg = load_config(args.config, overrides=_overrides(args))
        else:
            family, op = FAMILY_COMMANDS[args.command]
            op = op or args.op
            if op is None and args.config is None:
                op = {"gp": "compare"}.get(family)
            cfg = load_config(args.config, family, op, _overrides(args))
        report = execute(cfg, args.out)
    except ConfigParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigValidationError, DataError) as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    for c in report.checks:
        line = f"{'PASS' if c.ok else 'FAIL'} {c.name}"
        if c.deviation is not None:
            line += f": {fmt(c.deviation)}"
        print(line)
    for w in report.warnings:
        print(f"warning: {w}")
    return EXIT_OK if report.ok else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
