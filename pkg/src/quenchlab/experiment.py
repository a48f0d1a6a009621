"""Quenched averages over disorder realizations and the bound experiments built on them.

Every (grid point, realization index) pair is an independent task. Its
disorder is drawn from the stream ``(master seed, role, point, index)`` and
its sampler (if any) from ``(master seed, SAMPLER, point, index)``, so results
do not depend on task order or on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import bits, bounds, disorder, observables
from .errors import ContractViolation, DomainError
from .gibbs import (ExactEngine, McmcEngine, ReplicaFunctional, build_exact, exact_average, gibbs_expectation)
from .model import (MixedPSpin, QuenchedRealization, base_measure, build_family, coupled_pspin, realize,
                    realize_coupled, spec_from_config)

SCHEMA = 1
EXPERIMENTS = ("selfavg", "chaos", "universality", "interpolation", "ultrametric", "temperature_chaos")

# stream roles
Y, G, SAMPLER, CONTROL = 1, 2, 3, 4

DEFAULT_REALIZATIONS = {"exact": 200, "mcmc": 50}


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SamplerParams:
    """MCMC settings, and the i.i.d. draw count when an exact engine is sampled."""

    sweeps: int = 4000
    burn_in: int = 1000
    thinning: int = 1
    inner_samples: int = 4000

    def to_dict(self) -> dict:
        return {"sweeps": self.sweeps, "burn_in": self.burn_in, "thinning": self.thinning,
                "inner_samples": self.inner_samples}


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything needed to reproduce one experiment.

    ``model`` is a model config tree (see :func:`quenchlab.model.spec_from_config`);
    for mixed p-spin models each value in ``n_values`` overrides its ``N``.
    ``model2`` gives the second system of a coupled experiment (defaults to
    ``model``). ``disorder`` maps roles to laws: ``y`` (the law under study),
    ``g`` (reference, Gaussian by default), and ``first``/``second`` for the
    private components of coupled systems (default ``y``).
    """

    experiment: str
    model: Mapping
    disorder: Mapping[str, disorder.DisorderDistribution]
    n_values: tuple = ()
    t_values: tuple = ()
    eps_values: tuple = ()
    s_values: tuple = ()
    functional: Mapping = field(default_factory=lambda: {"name": "overlap_indicator", "threshold": 0.5})
    model2: Mapping | None = None
    order: int | None = None
    control: bool = False
    realizations: int | None = None
    seed: int = 0
    engine: str = "exact"
    sampler: SamplerParams = SamplerParams()
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ContractViolation(f"unknown experiment {self.experiment!r}")
        if self.engine not in ("exact", "mcmc"):
            raise ContractViolation(f"engine must be 'exact' or 'mcmc', got {self.engine!r}")
        if self.realizations is not None and self.realizations < 2:
            raise DomainError("need at least 2 realizations for an error bar")
        if "y" not in self.disorder:
            raise ContractViolation("plan needs a 'y' disorder law")

    @property
    def n_realizations(self) -> int:
        return self.realizations if self.realizations is not None else DEFAULT_REALIZATIONS[self.engine]

    def law(self, role: str) -> disorder.DisorderDistribution:
        if role in self.disorder:
            return self.disorder[role]
        if role == "g":
            return disorder.gaussian()
        return self.disorder["y"]

    def spec(self, N=None, second: bool = False):
        cfg = dict(self.model2 if (second and self.model2 is not None) else self.model)
        if N is not None:
            if cfg.get("model") != "mixed_pspin":
                raise ContractViolation("an N grid applies to mixed p-spin models only")
            cfg["N"] = int(N)
        return spec_from_config(cfg)

    def with_overrides(self, **kw) -> "ExperimentPlan":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "model": _plain(self.model),
            "model2": _plain(self.model2),
            "disorder": {k: v.to_config() for k, v in sorted(self.disorder.items())},
            "grid": {k: list(v) for k, v in (("N", self.n_values), ("t", self.t_values),
                                             ("eps", self.eps_values), ("s", self.s_values)) if v},
            "functional": _plain(self.functional),
            "order": self.order,
            "control": self.control,
            "realizations": self.n_realizations,
            "seed": self.seed,
            "engine": self.engine,
            "sampler": self.sampler.to_dict(),
        }


def _plain(x):
    if isinstance(x, Mapping):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------
@dataclass
class ResultRecord:
    """Quenched estimate of one statistic at one grid point.

    ``stderr`` is the realization-level standard error. ``inner_var`` is the
    mean within-realization sampling variance (0 for exact engines), reported
    so the outer/inner split is visible.
    """

    experiment: str
    point: dict
    statistic: str
    values: np.ndarray
    inner_var: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def stderr(self) -> float:
        v = np.asarray(self.values, dtype=float)
        if len(v) < 2:
            return 0.0
        return float(np.std(v, ddof=1) / math.sqrt(len(v)))

    @property
    def outer_var(self) -> float:
        v = np.asarray(self.values, dtype=float)
        return float(np.var(v, ddof=1)) if len(v) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "point": _plain(self.point),
            "statistic": self.statistic,
            "mean": self.mean,
            "stderr": self.stderr,
            "realizations": int(len(self.values)),
            "outer_var": self.outer_var,
            "inner_var": float(self.inner_var),
            "diagnostics": _plain(self.diagnostics),
        }


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    records: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    trends: dict = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return all(r.satisfied for r in self.reports)

    def record(self, statistic: str, **point) -> ResultRecord:
        for r in self.records:
            if r.statistic == statistic and all(r.point.get(k) == v for k, v in point.items()):
                return r
        raise KeyError((statistic, point))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "plan": self.plan.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "reports": [r.to_dict() for r in self.reports],
            "trends": _plain(self.trends),
            "satisfied": self.satisfied,
        }


CSV_COLUMNS = ("experiment", "kind", "name", "params", "seed", "realizations", "value", "stderr", "rhs",
               "satisfied")


def csv_rows(result: ExperimentResult) -> list[dict]:
    """One row per grid point per statistic, then one per bound report."""
    seed, R = result.plan.seed, result.plan.n_realizations
    rows = []
    for r in result.records:
        rows.append({"experiment": r.experiment, "kind": "statistic", "name": r.statistic,
                     "params": bounds.format_params(r.point), "seed": seed, "realizations": len(r.values),
                     "value": repr(r.mean), "stderr": repr(r.stderr), "rhs": "", "satisfied": ""})
    for b in result.reports:
        row = b.to_row()
        rows.append({"experiment": result.plan.experiment, "kind": "bound", "name": row["name"],
                     "params": row["params"], "seed": seed, "realizations": R, "value": row["lhs"],
                     "stderr": row["stderr"], "rhs": row["rhs"], "satisfied": row["satisfied"]})
    return rows


def format_csv(rows: Sequence[Mapping], columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA}\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="raise")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def format_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_outputs(result: ExperimentResult, directory, stem: str | None = None):
    """Write ``<stem>.csv`` and ``<stem>.json``; returns the two paths."""
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = stem or result.plan.experiment
    csv_path, json_path = d / f"{stem}.csv", d / f"{stem}.json"
    csv_path.write_text(format_csv(csv_rows(result)))
    json_path.write_text(format_json(result.to_dict()))
    return csv_path, json_path


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------
def parallel_map(fn: Callable, tasks: Sequence, threads: int = 1) -> list:
    """``[fn(t) for t in tasks]``, optionally on a thread pool; order is preserved."""
    if threads <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def make_functional(cfg: Mapping) -> ReplicaFunctional:
    """Named replica functionals available to plans."""
    cfg = dict(cfg)
    name = cfg.pop("name", None)
    if name == "overlap_indicator":
        return observables.overlap_indicator(float(cfg.pop("threshold", 0.5)))
    elif name == "overlap":
        out = observables.overlap_functional()
    elif name == "overlap_sq":
        out = observables.overlap_functional(lambda q: q**2, name="R12^2")
    elif name == "magnetization_sq":
        out = observables.magnetization_functional(2)
    elif name == "constant":
        out = observables.constant(float(cfg.pop("value", 1.0)))
    elif name == "ultrametric":
        out = observables.ultrametric_functional(float(cfg.pop("eps", 0.1)))
    else:
        raise ContractViolation(f"unknown functional {name!r}")
    if cfg:
        raise ContractViolation(f"unused functional parameters {sorted(cfg)}")
    return out


def best_truncation(rhs: Callable[[float], float], laws) -> tuple[float, float]:
    """Minimize a truncated-form right-hand side over the level K >= 1.

    Candidates are a grid on [1, 20] plus the point just past each bounded
    support, where the truncated moments drop to zero.
    """
    cands = list(np.round(np.linspace(1.0, 20.0, 381), 12))
    for d in laws:
        r = d.support_radius
        if math.isfinite(r) and r >= 1:
            cands.append(float(np.nextafter(r, np.inf)))
    best = min((rhs(K), K) for K in sorted(set(cands)))
    return best


def _uniform_gamma(family) -> float:
    g = np.abs(family.gamma_vector())
    if g.size == 0 or not np.all(g == g[0]) or g[0] <= 0:
        raise DomainError("this bound needs one common coefficient gamma > 0 on every feature")
    return float(g[0])


def _mixed_beta(spec) -> dict:
    return {int(p): float(b) for p, b in spec.beta.items() if float(b) != 0.0}


def universality_bound(spec, family, dist, n: int):
    """Best available right-hand side for |E<L>_g - E<L>_y| and its name.

    Mixed p-spin models use the four-moment form when four moments match, or
    the third-moment form when beta_2 = beta_3 = 0; other models use the
    B_{k+1} form at the highest usable matching order.
    """
    k = dist.matched_order()
    if isinstance(spec, MixedPSpin):
        beta = _mixed_beta(spec)
        if k >= 4:
            return bounds.pspin_universality_rhs_fourmoment(n, beta, dist, spec.N), "fourmoment"
        if not beta.get(2) and not beta.get(3):
            return bounds.pspin_universality_rhs_third(n, beta, dist.moment_abs(3), spec.N), "third"
        raise DomainError(f"{dist.name} matches {k} moments; mixed p-spin universality needs 4, "
                          "or 3 with beta_2 = beta_3 = 0")
    if k < 2:
        raise DomainError(f"{dist.name} matches fewer than 2 Gaussian moments")
    k = min(k, disorder.MAX_ORDER - 1)
    return bounds.universality_rhs_moment(k, n, family.gamma_vector(), dist), f"moment_k{k}"


class _Inner:
    """Evaluates <L> for one realization with the plan's engine choice."""

    def __init__(self, plan: ExperimentPlan):
        self.plan = plan

    def average(self, family, realization, base, L: ReplicaFunctional, stream, engine=None):
        """Returns (value, inner variance, diagnostics)."""
        p = self.plan
        if p.engine == "exact":
            eng = engine or build_exact(family, realization, base)
            if L.xor_table is not None or L.arity * eng.n_spins <= 24:
                return exact_average(eng, L), 0.0, {}
            v, se = gibbs_expectation(eng, L, p.sampler.inner_samples, p.seed, stream)
            return v, se * se, {}
        mc = McmcEngine(family, realization, base, n_replicas=L.arity)
        run = mc.run(p.sampler.sweeps, p.sampler.burn_in, p.sampler.thinning, p.seed, stream)
        v, se = run.estimate(L)
        return v, se * se, run.diagnostics()


def _merge_diag(diags):
    diags = [d for d in diags if d]
    if not diags:
        return {}
    acc = np.mean([d["acceptance"] for d in diags], axis=0)
    exch = np.mean([d["exchange"] for d in diags], axis=0) if diags[0]["exchange"] else []
    return {"mean_acceptance": [float(a) for a in acc], "mean_exchange": [float(a) for a in exch],
            "sweeps": diags[0]["sweeps"], "burn_in": diags[0]["burn_in"], "thinning": diags[0]["thinning"]}


def _tasks(points, R):
    return [(i, r) for i in range(len(points)) for r in range(R)]


def _variance_of(series):
    v = np.asarray(series, dtype=float)
    return float(np.var(v))


def _batched_var_stderr(series):
    """Plug-in variance of a chain and a batch-means error for it."""
    from .gibbs import batch_stderr

    v = np.asarray(series, dtype=float)
    dev = (v - v.mean()) ** 2
    return float(dev.mean()), (batch_stderr(dev) if np.ptp(dev) > 0 else 0.0)


def _monotone_decreasing(means, errs, sigmas=2.0) -> bool:
    """True when no step increases by more than ``sigmas`` combined standard errors."""
    return all(b - a <= sigmas * math.hypot(ea, eb) for a, b, ea, eb in zip(means, means[1:], errs, errs[1:]))


# ---------------------------------------------------------------------------
# self-averaging
# ---------------------------------------------------------------------------
def run_selfavg(plan: ExperimentPlan) -> ExperimentResult:
    """Quenched Gibbs variance of M(sigma) = |E|^-1 sum_e f_e(sigma), against both bound forms."""
    points = list(plan.n_values) or [None]
    specs = [plan.spec(N) for N in points]
    fams = [build_family(s) for s in specs]
    bases = [base_measure(s) for s in specs]
    gammas = [_uniform_gamma(f) for f in fams]
    dist = plan.law("y")
    R = plan.n_realizations
    tables = {}

    def task(ir):
        i, r = ir
        fam, base = fams[i], bases[i]
        real = realize(fam, dist, plan.seed, (Y, i, r))
        if plan.engine == "exact":
            eng = build_exact(fam, real, base)
            return observables.gibbs_variance(eng, tables[i]), 0.0, {}
        mc = McmcEngine(fam, real, base, n_replicas=1)
        run = mc.run(plan.sampler.sweeps, plan.sampler.burn_in, plan.sampler.thinning, plan.seed, (SAMPLER, i, r))
        spins = run.replicas()[:, 0]
        v, se = _batched_var_stderr(observables.feature_magnetization(fam, spins))
        return v, se * se, run.diagnostics()

    if plan.engine == "exact":
        for i, fam in enumerate(fams):
            tables[i] = fam.mean_feature_table()
    out = parallel_map(task, _tasks(points, R), plan.threads)
    res = ExperimentResult(plan)
    for i, N in enumerate(points):
        chunk = out[i * R : (i + 1) * R]
        n = fams[i].n_spins
        pt = {"N": n, "gamma": gammas[i], "E": fams[i].size, "disorder": dist.name}
        rec = ResultRecord("selfavg", pt, "gibbs_var_M", np.array([c[0] for c in chunk]),
                           float(np.mean([c[1] for c in chunk])), _merge_diag([c[2] for c in chunk]))
        res.records.append(rec)
        g, E = gammas[i], fams[i].size
        third = bounds.selfavg_rhs_third(g, E, dist.moment_abs(3))
        trunc, K = best_truncation(lambda K: bounds.selfavg_rhs_truncated(g, E, dist, K), [dist])
        res.reports.append(bounds.BoundReport("selfavg_third", rec.mean, rec.stderr, third,
                                              {**pt, "B3": dist.moment_abs(3)}))
        res.reports.append(bounds.BoundReport("selfavg_truncated", rec.mean, rec.stderr, trunc, {**pt, "K": K}))
    if len(points) > 1:
        means = [r.mean for r in res.records]
        errs = [r.stderr for r in res.records]
        res.trends["lhs_decreasing_in_N"] = _monotone_decreasing(means, errs)
        res.trends["lhs_by_N"] = {str(r.point["N"]): r.mean for r in res.records}
    return res


# ---------------------------------------------------------------------------
# disorder chaos
# ---------------------------------------------------------------------------
def _coupled_setup(plan: ExperimentPlan, N, t_by_order):
    s1, s2 = plan.spec(N), plan.spec(N, second=True)
    if not isinstance(s1, MixedPSpin) or not isinstance(s2, MixedPSpin):
        raise ContractViolation("coupled experiments use mixed p-spin models")
    return s1, s2, coupled_pspin(s1, s2, t_by_order)


def run_chaos(plan: ExperimentPlan) -> ExperimentResult:
    """Quenched Gibbs variance of the cross overlap Q_{1,1} of two coupled systems, per t."""
    if not plan.t_values:
        raise DomainError("chaos experiment needs a t grid")
    for t in plan.t_values:
        if not 0 <= t < 1:
            raise DomainError(f"t must lie in [0, 1), got {t}")
    N = plan.n_values[0] if plan.n_values else None
    if len(plan.n_values) > 1:
        raise ContractViolation("chaos experiment takes a single N")
    s1, s2, _ = _coupled_setup(plan, N, {})
    orders = sorted(int(q) for q in set(s1.beta) | set(s2.beta))
    p = plan.order if plan.order is not None else (orders[0] if len(orders) == 1 else None)
    if p is None or p not in orders:
        raise ContractViolation("choose the disordered order p (plan key 'order') among the model's orders")
    setups = [_coupled_setup(plan, N, {q: (t if q == p else 1.0) for q in orders})[2] for t in plan.t_values]
    block = f"p{p}"
    fam_p = setups[0].family.subfamily(block)
    n = fam_p.n_spins
    g1 = float(setups[0].gamma1[block])
    g2 = float(setups[0].gamma2[block])
    # the bound needs gamma_1, gamma_2 > 0; without it only the statistics are emitted
    bounded = g1 > 0 and g2 > 0
    qtab = fam_p.mean_feature_table() if n <= bits.MAX_ENUM_SPINS else None
    rtab = bits.site_overlap_values(n) ** p if n <= bits.MAX_ENUM_SPINS else None
    shared, d1, d2 = plan.law("shared"), plan.law("first"), plan.law("second")
    R = plan.n_realizations

    def task(jr):
        j, r = jr
        cs = setups[j]
        r1, r2 = realize_coupled(cs, shared, d1, d2, plan.seed, (Y, j, r))
        if plan.engine == "exact":
            e1 = build_exact(cs.family1, r1, cs.base1)
            e2 = build_exact(cs.family2, r2, cs.base2)
            corr = bits.fwht(bits.fwht(e1.probs) * bits.fwht(e2.probs)) / (1 << n)
            q1, q2 = float(corr @ qtab), float(corr @ qtab**2)
            a1, a2 = float(corr @ rtab), float(corr @ rtab**2)
            return max(q2 - q1 * q1, 0.0), max(a2 - a1 * a1, 0.0), 0.0, {}
        runs = []
        for which, (fam, real, base) in enumerate(((cs.family1, r1, cs.base1), (cs.family2, r2, cs.base2))):
            mc = McmcEngine(fam, real, base, n_replicas=1)
            runs.append(mc.run(plan.sampler.sweeps, plan.sampler.burn_in, plan.sampler.thinning,
                               plan.seed, (SAMPLER, j, r, which)))
        rho, tau = runs[0].replicas()[:, 0], runs[1].replicas()[:, 0]
        m = min(len(rho), len(tau))
        q = observables.cross_overlap(fam_p, rho[:m], tau[:m])
        v, se = _batched_var_stderr(q)
        a = _variance_of(observables.overlap(rho[:m], tau[:m]) ** p)
        return v, a, se * se, _merge_diag([x.diagnostics() for x in runs])

    out = parallel_map(task, _tasks(plan.t_values, R), plan.threads)
    res = ExperimentResult(plan)
    b13, b23 = d1.moment_abs(3), d2.moment_abs(3)
    for j, t in enumerate(plan.t_values):
        chunk = out[j * R : (j + 1) * R]
        pt = {"N": n, "p": p, "t": float(t), "gamma1": g1, "gamma2": g2, "E": fam_p.size}
        rec = ResultRecord("chaos", pt, "gibbs_var_Q11", np.array([c[0] for c in chunk]),
                           float(np.mean([c[2] for c in chunk])), _merge_diag([c[3] for c in chunk]))
        rec_r = ResultRecord("chaos", pt, f"gibbs_var_R11^{p}", np.array([c[1] for c in chunk]))
        res.records += [rec, rec_r]
        if not bounded:
            continue
        third = bounds.chaos_rhs_third(g1, g2, t, fam_p.size, b13, b23)
        trunc, K = best_truncation(lambda K: bounds.chaos_rhs_truncated(g1, g2, t, fam_p.size, d1, d2, K), [d1, d2])
        res.reports.append(bounds.BoundReport("chaos_third", rec.mean, rec.stderr, third,
                                              {**pt, "B13": b13, "B23": b23}))
        res.reports.append(bounds.BoundReport("chaos_truncated", rec.mean, rec.stderr, trunc, {**pt, "K": K}))
    return res


# ---------------------------------------------------------------------------
# universality
# ---------------------------------------------------------------------------
def _gap(a: ResultRecord, b: ResultRecord) -> tuple[float, float]:
    """Difference of two independent quenched means and its standard error."""
    return a.mean - b.mean, math.hypot(a.stderr, b.stderr)


def run_universality_gap(plan: ExperimentPlan, L: ReplicaFunctional | None = None) -> ExperimentResult:
    """|E<L>_g - E<L>_y| from independent realization sets, against the universality bound.

    Gaussian and matched runs share sampler seeds but not disorder. With
    ``plan.control`` a second, independent Gaussian set gives a null gap.
    """
    L = L or make_functional(plan.functional)
    if L.bound > 1 + 1e-12:
        raise DomainError("universality bounds assume ||L|| <= 1")
    points = list(plan.n_values) or [None]
    specs = [plan.spec(N) for N in points]
    fams = [build_family(s) for s in specs]
    bases = [base_measure(s) for s in specs]
    dy, dg = plan.law("y"), plan.law("g")
    rhs = [universality_bound(s, f, dy, L.arity) for s, f in zip(specs, fams)]
    roles = [("y", Y, dy), ("g", G, dg)] + ([("control", CONTROL, dg)] if plan.control else [])
    inner = _Inner(plan)
    R = plan.n_realizations

    def task(ir):
        i, r = ir
        vals = []
        for _, role, dist in roles:
            real = realize(fams[i], dist, plan.seed, (role, i, r))
            vals.append(inner.average(fams[i], real, bases[i], L, (SAMPLER, i, r)))
        return vals

    out = parallel_map(task, _tasks(points, R), plan.threads)
    res = ExperimentResult(plan)
    for i, N in enumerate(points):
        chunk = out[i * R : (i + 1) * R]
        n = fams[i].n_spins
        recs = {}
        for k, (label, _, dist) in enumerate(roles):
            pt = {"N": n, "functional": L.name, "disorder": dist.name, "set": label}
            recs[label] = ResultRecord("universality", pt, "quenched_L", np.array([c[k][0] for c in chunk]),
                                       float(np.mean([c[k][1] for c in chunk])), _merge_diag([c[k][2] for c in chunk]))
            res.records.append(recs[label])
        gap, se = _gap(recs["g"], recs["y"])
        pt = {"N": n, "functional": L.name, "n": L.arity, "y": dy.name, "g": dg.name, "form": rhs[i][1]}
        res.records.append(ResultRecord("universality", pt, "gap", np.array([gap])))
        res.records[-1].diagnostics = {"gap": gap, "stderr": se}
        res.reports.append(bounds.BoundReport("universality_gap", abs(gap), se, rhs[i][0], pt))
        if plan.control:
            cgap, cse = _gap(recs["g"], recs["control"])
            res.trends.setdefault("control", {})[str(n)] = {
                "gap": cgap, "stderr": cse, "within_3_stderr": abs(cgap) <= 3 * cse}
    if len(points) > 1:
        gaps = [r.lhs for r in res.reports]
        res.trends["gap_by_N"] = {str(fams[i].n_spins): gaps[i] for i in range(len(points))}
    return res


def run_interpolation(plan: ExperimentPlan, L: ReplicaFunctional | None = None) -> ExperimentResult:
    """phi(s) = E<L>_s along sqrt(s) g + sqrt(1-s) y, one (g, y) pair per realization index."""
    L = L or make_functional(plan.functional)
    s_grid = [float(s) for s in plan.s_values]
    if not s_grid or s_grid[0] != 0.0 or s_grid[-1] != 1.0 or any(b <= a for a, b in zip(s_grid, s_grid[1:])):
        raise DomainError("s grid must increase from 0 to 1")
    if len(plan.n_values) > 1:
        raise ContractViolation("interpolation takes a single N")
    spec = plan.spec(plan.n_values[0] if plan.n_values else None)
    fam, base = build_family(spec), base_measure(spec)
    dy, dg = plan.law("y"), plan.law("g")
    rhs, form = universality_bound(spec, fam, dy, L.arity)
    inner = _Inner(plan)
    R = plan.n_realizations

    def task(r):
        y = realize(fam, dy, plan.seed, (Y, 0, r))
        g = realize(fam, dg, plan.seed, (G, 0, r))
        vals = []
        for s in s_grid:
            # endpoints reuse the pure realizations so they reproduce them bit for bit
            if s == 0.0:
                v = y
            elif s == 1.0:
                v = g
            else:
                v = QuenchedRealization(math.sqrt(s) * g.values + math.sqrt(1 - s) * y.values,
                                        f"interp:{dg.name}/{dy.name}", plan.seed, (s,))
            vals.append(inner.average(fam, v, base, L, (SAMPLER, 0, r))[0])
        return vals

    out = np.array(parallel_map(task, list(range(R)), plan.threads))
    res = ExperimentResult(plan)
    n = fam.n_spins
    for j, s in enumerate(s_grid):
        res.records.append(ResultRecord("interpolation", {"N": n, "s": s, "functional": L.name}, "phi", out[:, j]))
    diffs = np.diff(out, axis=1)
    dmean = diffs.mean(axis=0)
    dse = diffs.std(axis=0, ddof=1) / math.sqrt(R)
    tv = float(np.sum(np.abs(dmean)))
    tv_se = float(math.sqrt(np.sum(dse**2)))
    slopes = np.abs(dmean) / np.diff(s_grid)
    pt = {"N": n, "functional": L.name, "n": L.arity, "y": dy.name, "g": dg.name, "form": form}
    res.reports.append(bounds.BoundReport("interpolation_total_variation", tv, tv_se, rhs, pt))
    res.trends.update({"max_abs_slope": float(np.max(slopes)), "slope_bound": rhs,
                       "phi": {repr(s): float(out[:, j].mean()) for j, s in enumerate(s_grid)}})
    return res


# ---------------------------------------------------------------------------
# ultrametricity
# ---------------------------------------------------------------------------
def run_ultrametricity(plan: ExperimentPlan) -> ExperimentResult:
    """Defect E<1{R_23 + eps <= min(R_12, R_13)}> for Gaussian and matched disorder, per eps."""
    eps_grid = [float(e) for e in plan.eps_values]
    if not eps_grid:
        raise DomainError("ultrametricity experiment needs an eps grid")
    points = list(plan.n_values) or [None]
    specs = [plan.spec(N) for N in points]
    fams = [build_family(s) for s in specs]
    bases = [base_measure(s) for s in specs]
    dy, dg = plan.law("y"), plan.law("g")
    rhs = [universality_bound(s, f, dy, 3) for s, f in zip(specs, fams)]
    R = plan.n_realizations
    samples = plan.sampler.inner_samples

    def defects(fam, real, base, stream):
        if plan.engine == "exact":
            eng = build_exact(fam, real, base)
            exact = fam.n_spins <= 8
            return [observables.ultrametricity_defect(eng, e, n_samples=None if exact else samples,
                                                      seed=plan.seed, stream=stream)[0] for e in eps_grid]
        mc = McmcEngine(fam, real, base, n_replicas=3)
        run = mc.run(plan.sampler.sweeps, plan.sampler.burn_in, plan.sampler.thinning, plan.seed, stream)
        reps = run.replicas()
        return [float(np.mean(observables.ultrametric_functional(e)(reps))) for e in eps_grid]

    def task(ir):
        i, r = ir
        dy_vals = defects(fams[i], realize(fams[i], dy, plan.seed, (Y, i, r)), bases[i], (SAMPLER, i, r))
        dg_vals = defects(fams[i], realize(fams[i], dg, plan.seed, (G, i, r)), bases[i], (SAMPLER, i, r))
        return dy_vals, dg_vals

    out = parallel_map(task, _tasks(points, R), plan.threads)
    res = ExperimentResult(plan)
    for i in range(len(points)):
        chunk = out[i * R : (i + 1) * R]
        n = fams[i].n_spins
        for j, e in enumerate(eps_grid):
            ry = ResultRecord("ultrametric", {"N": n, "eps": e, "disorder": dy.name}, "defect",
                              np.array([c[0][j] for c in chunk]))
            rg = ResultRecord("ultrametric", {"N": n, "eps": e, "disorder": dg.name}, "defect",
                              np.array([c[1][j] for c in chunk]))
            res.records += [ry, rg]
            gap, se = _gap(rg, ry)
            pt = {"N": n, "eps": e, "n": 3, "y": dy.name, "g": dg.name, "form": rhs[i][1]}
            res.reports.append(bounds.BoundReport("ultrametric_transfer", abs(gap), se, rhs[i][0], pt))
    return res


# ---------------------------------------------------------------------------
# temperature chaos
# ---------------------------------------------------------------------------
def check_temperature_pattern(beta1: Mapping[int, float], beta2: Mapping[int, float]) -> int:
    """Validate the two-temperature pattern; returns p0.

    Both mixtures vanish below p0, differ (both nonzero) at p0 and agree
    (nonzero) at every listed order above it. Only finitely many orders are
    representable, so the condition is checked on the listed ones.
    """
    b1 = {int(p): float(v) for p, v in beta1.items()}
    b2 = {int(p): float(v) for p, v in beta2.items()}
    orders = sorted(p for p in set(b1) | set(b2) if b1.get(p, 0) or b2.get(p, 0))
    if not orders:
        raise DomainError("both mixtures vanish")
    p0 = orders[0]
    if not (b1.get(p0, 0) and b2.get(p0, 0)) or b1.get(p0) == b2.get(p0):
        raise DomainError(f"temperatures must differ at p0={p0}, both nonzero")
    for p in orders[1:]:
        if b1.get(p, 0) != b2.get(p, 0) or not b1.get(p, 0):
            raise DomainError(f"temperatures must agree (nonzero) above p0, differ at p={p}")
    return p0


def temperature_moment_hypothesis(p0: int | None, dist) -> bool:
    """Four matched moments, or p0 >= 4 (finite third moment always holds here)."""
    return dist.matched_order() >= 4 or (p0 is not None and p0 >= 4)


def run_temperature_chaos(plan: ExperimentPlan) -> ExperimentResult:
    """Law of Q_{1,1} = N^-1 sum rho_i tau_i for two temperature sets sharing disorder.

    Emits the pooled histogram, a pooled mean labelled ``q_estimate`` (the
    limit constant is not known in closed form and is never asserted) and the
    concentration diagnostic E<1{|Q_{1,1} - q_estimate| >= eps}> per eps.
    Trend output only; nothing here is pass/fail. Whether the disorder meets
    the moment hypothesis under which the concentration transfers from the
    Gaussian case is recorded, not enforced.
    """
    if len(plan.n_values) > 1:
        raise ContractViolation("temperature chaos takes a single N")
    N = plan.n_values[0] if plan.n_values else None
    s1, s2 = plan.spec(N), plan.spec(N, second=True)
    if not isinstance(s1, MixedPSpin) or not isinstance(s2, MixedPSpin):
        raise ContractViolation("temperature chaos uses mixed p-spin models")
    if s1.h != s2.h:
        raise DomainError("both systems need the same external field")
    dist = plan.law("y")
    identical = _mixed_beta(s1) == _mixed_beta(s2)
    p0 = None if identical else check_temperature_pattern(s1.beta, s2.beta)
    orders = sorted(set(_mixed_beta(s1)) | set(_mixed_beta(s2)))
    cs = coupled_pspin(s1, s2, {p: 1.0 for p in orders})
    n = cs.family.n_spins
    R = plan.n_realizations
    values = np.linspace(-1, 1, n + 1)

    def task(r):
        r1, r2 = realize_coupled(cs, dist, dist, dist, plan.seed, (Y, 0, r))
        if plan.engine == "exact":
            e1 = build_exact(cs.family1, r1, cs.base1)
            e2 = build_exact(cs.family2, r2, cs.base2)
            return observables.overlap_distribution(e1, e2)[1]
        runs = []
        for which, (fam, real, base) in enumerate(((cs.family1, r1, cs.base1), (cs.family2, r2, cs.base2))):
            mc = McmcEngine(fam, real, base, n_replicas=1)
            runs.append(mc.run(plan.sampler.sweeps, plan.sampler.burn_in, plan.sampler.thinning,
                               plan.seed, (SAMPLER, 0, r, which)))
        rho, tau = runs[0].replicas()[:, 0], runs[1].replicas()[:, 0]
        m = min(len(rho), len(tau))
        agree = np.sum(rho[:m] == tau[:m], axis=1)  # Q = (2*agree - n)/n
        return np.bincount(agree, minlength=n + 1) / m

    hists = np.array(parallel_map(task, list(range(R)), plan.threads))
    pooled = hists.mean(axis=0)
    q_hat = float(pooled @ values)
    res = ExperimentResult(plan)
    pt = {"N": n, "p0": p0, "beta1": _mixed_beta(s1), "beta2": _mixed_beta(s2)}
    res.records.append(ResultRecord("temperature_chaos", pt, "Q11_mean", hists @ values))
    for e in plan.eps_values or (0.1, 0.2, 0.5):
        far = (np.abs(values - q_hat) >= float(e) - 1e-12).astype(float)
        res.records.append(ResultRecord("temperature_chaos", {**pt, "eps": float(e)}, "concentration_defect",
                                        hists @ far))
    res.trends.update({"q_estimate": q_hat, "moment_hypothesis": temperature_moment_hypothesis(p0, dist), "q_estimate_note": "pooled empirical mean of Q11, not the limit q",
                       "histogram": {repr(float(v)): float(p) for v, p in zip(values, pooled)}})
    return res


RUNNERS = {
    "selfavg": run_selfavg,
    "chaos": run_chaos,
    "universality": run_universality_gap,
    "interpolation": run_interpolation,
    "ultrametric": run_ultrametricity,
    "temperature_chaos": run_temperature_chaos,
}


def run(plan: ExperimentPlan) -> ExperimentResult:
    return RUNNERS[plan.experiment](plan)
