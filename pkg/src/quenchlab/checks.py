"""Standalone verification checks that are not quenched-average experiments.

Each check returns a list of :class:`BoundReport` objects, so the CLI can
treat them exactly like the experiment bounds. A comparison with no
theoretical slack (an identity, or MCMC against enumeration) is reported with
``rhs = 0`` or a round-off tolerance.
"""

from __future__ import annotations

import math

import numpy as np

from . import bits, bounds, disorder, observables
from .bounds import BoundReport
from .gibbs import McmcEngine, ReplicaFunctional, build_exact, exact_average
from .model import RFIM, MixedPSpin, base_measure, build_family, realize
from .rng import make_rng

ROUNDOFF = 1e-12


def oracle_check(seed: int = 0, n_instances: int = 20, n_spins: int = 8, sweeps: int = 20000,
                 burn_in: int = 2000) -> list[BoundReport]:
    """MCMC against exact enumeration for <m>, <R12>, <R12^2> on random 2-spin instances.

    Each report has ``lhs = |mcmc - exact|`` and ``rhs = 0``, so it passes when
    the difference is within 4 batch-means standard errors.
    """
    spec = MixedPSpin({2: 1.0}, 0.0, n_spins)
    fam, base = build_family(spec), base_measure(spec)
    funcs = {
        "m": observables.magnetization_functional(1),
        "R12": observables.overlap_functional(),
        "R12^2": observables.overlap_functional(lambda q: q**2, name="R12^2"),
    }
    out = []
    for i in range(n_instances):
        real = realize(fam, disorder.rademacher(), seed, (11, i))
        eng = build_exact(fam, real, base)
        run = McmcEngine(fam, real, base, n_replicas=2).run(sweeps, burn_in, 1, seed, (12, i))
        for name, L in funcs.items():
            exact = exact_average(eng, L)
            est, se = run.estimate(L)
            out.append(BoundReport("mcmc_vs_exact", abs(est - exact), se, 0.0,
                                   {"instance": i, "N": n_spins, "observable": name, "exact": exact, "mcmc": est}))
    return out


AIBP_FUNCTIONS = ("sin", "cos", "tanh", "gauss")
AIBP_LAWS = ("rademacher", "uniform", "threepoint")
AIBP_LEVELS = (1.0, 2.0, 4.0)


def aibp_check(functions=AIBP_FUNCTIONS, laws=AIBP_LAWS, levels=AIBP_LEVELS) -> list[BoundReport]:
    """Gap |E yF(y) - E F'(y)| against both lemma bounds on the full grid.

    k runs over 2..matched_order of each law (capped at 5, the highest
    derivative the test functions carry beyond k).
    """
    out = []
    for fname in functions:
        F = bounds.test_function(fname)
        for lname in laws:
            d = disorder.from_config(lname)
            gap = bounds.aibp_gap(F, d)
            for k in range(2, min(d.matched_order(), bounds.MAX_DERIV) + 1):
                moment = bounds.aibp_rhs_moment(F, d, k)
                for K in levels:
                    pt = {"F": fname, "disorder": lname, "k": k, "K": K}
                    out.append(BoundReport("aibp_truncated", gap, 0.0, bounds.aibp_rhs_truncated(F, d, k, K), pt))
                    out.append(BoundReport("aibp_moment", gap, 0.0, moment, pt))
    return out


def _feature_functional(table, name):
    """Single-replica functional reading a per-configuration table."""
    table = np.asarray(table, dtype=float)

    def fn(r):
        codes = np.sum((r[:, 0] < 0) * (1 << np.arange(r.shape[-1])), axis=-1)
        return table[codes]

    return ReplicaFunctional(1, fn, bound=float(np.max(np.abs(table))), name=name)


def derivative_check(seed: int = 0, n_instances: int = 20, max_spins: int = 6, orders=(1, 2, 3),
                     arities=(1, 2)) -> list[BoundReport]:
    """|d^k/dx^k <L>| at x = y_e against gamma_e^k C_{k,n} on random small instances.

    Instances are mixed {2,3}-spin models with random temperatures and field,
    Gaussian disorder and a random feature e. L is f_e(sigma^1) for n = 1 and
    R_{1,2} for n = 2. The finite-difference error estimate is added to the
    pass margin.
    """
    out = []
    for i in range(n_instances):
        rng = make_rng(seed, 21, i)
        n = int(rng.integers(2, max_spins + 1))
        beta = {2: float(rng.uniform(0.3, 2.0)), 3: float(rng.uniform(0.0, 1.5))}
        spec = MixedPSpin(beta, float(rng.uniform(-0.5, 0.5)), n)
        fam = build_family(spec)
        real = realize(fam, disorder.gaussian(), seed, (22, i))
        eng = build_exact(fam, real, base_measure(spec))
        e = int(rng.integers(fam.size))
        funcs = {1: _feature_functional(fam.feature_table(e), "f_e"), 2: observables.overlap_functional()}
        for arity in arities:
            for k in orders:
                chk = bounds.derivative_bound_check(eng, funcs[arity], e, k)
                pt = {"instance": i, "N": n, "e": e, "k": k, "n": arity, "gamma": chk.gamma}
                out.append(BoundReport("derivative_bound", chk.lhs, 0.0, chk.rhs, {**pt, "fd_error": chk.error},
                                       margin_extra=chk.error))
    return out


def fkg_check(seed: int = 0, n_realizations: int = 50, dims=(3, 4), beta: float = 0.5,
              gamma: float = 1.0) -> list[BoundReport]:
    """RFIM pair correlations: lhs = max(0, -min_{i<j} cov) against a round-off tolerance."""
    spec = RFIM(tuple(dims), beta, gamma)
    fam, base = build_family(spec), base_measure(spec)
    out = []
    for r in range(n_realizations):
        real = realize(fam, disorder.gaussian(), seed, (31, r))
        eng = build_exact(fam, real, base, model_kind="rfim")
        d = observables.fkg_defect(eng)
        out.append(BoundReport("fkg", max(-d, 0.0), 0.0, ROUNDOFF,
                               {"realization": r, "dims": list(dims), "beta": beta, "gamma": gamma, "min_cov": d}))
    return out


def identity_check(seed: int = 0, max_spins: int = 10, orders=(2, 3, 4), n_tuples: int = 100_000,
                   n_replicas: int = 4, tuple_spins: int = 16) -> list[BoundReport]:
    """M(sigma) = m(sigma)^p on every configuration, and overlap-matrix invariants."""
    out = []
    for p in orders:
        for n in range(1, max_spins + 1):
            if n**p > 10**6:
                continue
            fam = build_family(MixedPSpin({p: 1.0}, 0.0, n))
            spins = bits.all_configs(n)
            m = observables.magnetization(spins)
            M = observables.feature_magnetization(fam, spins)
            table = fam.mean_feature_table()
            err = max(float(np.max(np.abs(M - m**p))), float(np.max(np.abs(table - m**p))))
            out.append(BoundReport("M_equals_m^p", err, 0.0, ROUNDOFF, {"N": n, "p": p}))
    rng = make_rng(seed, 41)
    reps = 1 - 2 * rng.integers(0, 2, size=(n_tuples, n_replicas, tuple_spins), dtype=np.int8)
    Q = observables.overlap_matrix(reps)
    diag = float(np.max(np.abs(np.diagonal(Q, axis1=-2, axis2=-1) - 1)))
    sym = float(np.max(np.abs(Q - np.swapaxes(Q, -1, -2))))
    rng_viol = float(np.max(np.maximum(np.abs(Q) - 1, 0)))
    lattice = float(np.max(np.abs(Q * tuple_spins - np.round(Q * tuple_spins))))
    pt = {"tuples": n_tuples, "replicas": n_replicas, "N": tuple_spins}
    out.append(BoundReport("overlap_diagonal", diag, 0.0, ROUNDOFF, pt))
    out.append(BoundReport("overlap_symmetry", sym, 0.0, ROUNDOFF, pt))
    out.append(BoundReport("overlap_range", rng_viol, 0.0, ROUNDOFF, pt))
    out.append(BoundReport("overlap_lattice", lattice, 0.0, ROUNDOFF * tuple_spins, pt))
    return out
