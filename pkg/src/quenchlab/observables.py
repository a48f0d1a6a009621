"""Replica observables: magnetizations, overlaps and the functionals built on them."""

from __future__ import annotations

import numpy as np

from . import bits
from .errors import CapacityError, ContractViolation, DomainError
from .gibbs import ExactEngine, ReplicaFunctional, exact_average, sample_exact, _iid_estimate
from .model import FeatureFamily

# Overlaps are multiples of 2/N; this absorbs float error when testing ties.
_TIE = 1e-12


def magnetization(sigma) -> np.ndarray | float:
    """m(sigma) = N^-1 sum_i sigma_i over the last axis."""
    out = np.mean(np.asarray(sigma, dtype=float), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def feature_magnetization(family: FeatureFamily, sigma):
    """M(sigma) = |E|^-1 sum_e f_e(sigma), summed feature by feature."""
    spins = np.atleast_2d(np.asarray(sigma))
    total = np.zeros(spins.shape[0])
    for b, _, idx in family.chunks():
        total += b.values_at(spins, idx).sum(axis=1)
    out = total / family.size
    return float(out[0]) if np.ndim(sigma) == 1 else out


def _same_shape(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ContractViolation(f"configurations differ in length ({a.shape[-1]} vs {b.shape[-1]})")
    return a, b


def overlap(a, b):
    """R(a, b) = N^-1 sum_i a_i b_i over the last axis."""
    a, b = _same_shape(a, b)
    out = np.mean(a * b, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


site_overlap = overlap


def cross_overlap(family: FeatureFamily, rho, tau):
    """Feature-space overlap Q = |E|^-1 sum_e f_e(rho) f_e(tau)."""
    rho, tau = _same_shape(rho, tau)
    r, t = np.atleast_2d(rho), np.atleast_2d(tau)
    total = np.zeros(r.shape[0])
    for b, _, idx in family.chunks():
        total += np.sum(b.values_at(r, idx) * b.values_at(t, idx), axis=1)
    out = total / family.size
    return float(out[0]) if np.ndim(rho) == 1 else out


def bond_overlap(rho, tau, edges):
    """|edges|^-1 sum_{(i,j)} rho_i rho_j tau_i tau_j."""
    rho, tau = _same_shape(rho, tau)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = rho.shape[-1]
    if e.size == 0 or e.min() < 0 or e.max() >= n:
        raise ContractViolation("edges must reference valid sites")
    prod = rho[..., e[:, 0]] * rho[..., e[:, 1]] * tau[..., e[:, 0]] * tau[..., e[:, 1]]
    out = prod.mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def overlap_matrix(replicas) -> np.ndarray:
    """Pairwise overlaps of replicas shaped (..., n, N) -> (..., n, n)."""
    s = np.asarray(replicas, dtype=float)
    return np.einsum("...ai,...bi->...ab", s, s) / s.shape[-1]


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------
def constant(c: float, arity: int = 1, coupled: bool = False) -> ReplicaFunctional:
    return ReplicaFunctional(arity, lambda r: np.full(r.shape[0], float(c)), bound=abs(c), coupled=coupled,
                             name=f"const({c})")


def magnetization_functional(power: int = 1) -> ReplicaFunctional:
    return ReplicaFunctional(1, lambda r: magnetization(r[:, 0]) ** power, name=f"m^{power}")


def overlap_functional(g=lambda q: q, name="R12", bound: float = 1.0) -> ReplicaFunctional:
    """g(R_{1,2}) for a vectorized g bounded by ``bound`` on [-1, 1]."""
    return ReplicaFunctional(
        2,
        lambda r: g(overlap(r[:, 0], r[:, 1])),
        bound=bound,
        xor_table=lambda n: g(bits.site_overlap_values(n)),
        name=name,
    )


def overlap_indicator(threshold: float) -> ReplicaFunctional:
    """1{R_{1,2} >= threshold}."""
    g = lambda q: (np.asarray(q) >= threshold - _TIE).astype(float)
    return overlap_functional(g, name=f"1(R12>={threshold})")


def cross_overlap_functional(family: FeatureFamily, g=lambda q: q, name="Q11") -> ReplicaFunctional:
    """g(Q_{1,1}) with Q in feature space, for a coupled pair (rho^1, tau^1)."""
    mean_table = {}

    def table(n):
        if n not in mean_table:
            mean_table[n] = family.mean_feature_table()
        return g(mean_table[n])

    return ReplicaFunctional(
        1,
        lambda r: g(cross_overlap(family, r[:, 0, 0], r[:, 0, 1])),
        coupled=True,
        xor_table=table,
        name=name,
    )


def site_cross_functional(g=lambda q: q, name="Q11s") -> ReplicaFunctional:
    """g(N^-1 sum_i rho_i tau_i) for a coupled pair."""
    return ReplicaFunctional(
        1,
        lambda r: g(overlap(r[:, 0, 0], r[:, 0, 1])),
        coupled=True,
        xor_table=lambda n: g(bits.site_overlap_values(n)),
        name=name,
    )


def _ultra_indicator(r12, r13, r23, eps, literal):
    lhs = (r13 if literal else r23) + eps
    return (lhs <= np.minimum(r12, r13) + _TIE).astype(float)


def ultrametric_functional(eps: float, literal: bool = False) -> ReplicaFunctional:
    """1{R_{2,3} + eps <= min(R_{1,2}, R_{1,3})} over three replicas.

    ``literal=True`` compares R_{1,3} + eps instead; that form is identically
    zero for eps > 0 and is kept only for comparison.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")

    def fn(r):
        r12 = overlap(r[:, 0], r[:, 1])
        r13 = overlap(r[:, 0], r[:, 2])
        r23 = overlap(r[:, 1], r[:, 2])
        return _ultra_indicator(r12, r13, r23, eps, literal)

    return ReplicaFunctional(3, fn, name=f"ultra(eps={eps}{',literal' if literal else ''})")


# ---------------------------------------------------------------------------
# engine-level observables
# ---------------------------------------------------------------------------
def ultrametricity_defect(engine: ExactEngine, eps: float, literal: bool = False, n_samples: int | None = None,
                          seed: int = 0, stream=0, max_exact_spins: int = 8) -> tuple[float, float]:
    """Gibbs defect <1{R_{2,3} + eps <= min(R_{1,2}, R_{1,3})}> for one engine.

    Exact (stderr 0) when N <= ``max_exact_spins`` and ``n_samples`` is None;
    otherwise estimated from ``n_samples`` i.i.d. replica triples.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    n = engine.n_spins
    if n_samples is None:
        if n > max_exact_spins:
            raise CapacityError(f"exact three-replica sum limited to N <= {max_exact_spins}; pass n_samples")
        q = bits.site_overlap_values(n)
        codes = np.arange(1 << n)
        O = q[codes[:, None] ^ codes[None, :]]
        p = engine.probs
        total = 0.0
        for a in range(1 << n):
            if p[a] == 0:
                continue
            ind = _ultra_indicator(O[a][:, None], O[a][None, :], O, eps, literal)
            total += p[a] * float(p @ ind @ p)
        return total, 0.0
    stream = stream if isinstance(stream, tuple) else (stream,)
    draws = np.stack([sample_exact(engine, seed, n_samples, stream + (j,)) for j in range(3)], axis=1)
    vals = ultrametric_functional(eps, literal)(draws)
    return _iid_estimate(vals)


def pair_correlation_gap(engine: ExactEngine, i: int, j: int) -> float:
    """<sigma_i sigma_j> - <sigma_i><sigma_j>."""
    s = bits.all_configs(engine.n_spins).astype(float)
    p = engine.probs
    mi, mj = p @ s[:, i], p @ s[:, j]
    return float(p @ (s[:, i] * s[:, j]) - mi * mj)


def fkg_defect(engine: ExactEngine) -> float:
    """Minimum over site pairs i < j of <sigma_i sigma_j> - <sigma_i><sigma_j>.

    Only meaningful for ferromagnetic models, so only RFIM engines are accepted.
    """
    if engine.model_kind != "rfim":
        raise ContractViolation(f"FKG is only guaranteed for RFIM engines, got {engine.model_kind!r}")
    n = engine.n_spins
    if n < 2:
        return pair_correlation_gap(engine, 0, 0)
    m = engine.spin_means()
    gap = engine.pair_correlations() - np.outer(m, m)
    iu = np.triu_indices(n, 1)
    return float(np.min(gap[iu]))


def gg_residual(engines, psi, n: int, f: ReplicaFunctional | None = None, cap: int = 24) -> float:
    """Finite-n Ghirlanda-Guerra residual, averaged over the given realizations.

    E<f psi(R_{1,n+1})> - (1/n) E<f> E<psi(R_{1,2})> - (1/n) sum_{l=2..n} E<f psi(R_{1,l})>

    ``f`` is a functional of n replicas (default 1), ``psi`` a vectorized
    bounded function on [-1, 1]. Every term is computed by exact enumeration.
    """
    if n < 2:
        raise DomainError("n must be >= 2")
    if isinstance(engines, ExactEngine):
        engines = [engines]
    f = f if f is not None else constant(1.0, n)
    if f.arity > n:
        raise ContractViolation("f may depend on at most n replicas")
    fbound = f.bound
    psi_bound = float(np.max(np.abs(psi(np.linspace(-1, 1, 2001)))))

    def f_psi(l):
        def fn(r):
            return f(r[:, :n]) * psi(overlap(r[:, 0], r[:, l - 1]))
        return ReplicaFunctional(max(n, l), fn, bound=fbound * psi_bound)

    psi12 = overlap_functional(psi, bound=psi_bound)
    terms = []
    for eng in engines:
        if (n + 1) * eng.n_spins > cap:
            raise CapacityError(f"(n+1)*N = {(n + 1) * eng.n_spins} exceeds enumeration cap {cap}")
        a = exact_average(eng, f_psi(n + 1), cap=cap)
        ef = exact_average(eng, f, cap=cap)
        ep = exact_average(eng, psi12, cap=cap)
        rest = sum(exact_average(eng, f_psi(l), cap=cap) for l in range(2, n + 1))
        terms.append((a, ef, ep, rest))
    t = np.mean(np.asarray(terms), axis=0)
    return float(t[0] - t[1] * t[2] / n - t[3] / n)


def overlap_distribution(engine: ExactEngine, other: ExactEngine | None = None):
    """Exact law of the site overlap between two independent replicas.

    Returns ``(values, probs)`` over the N+1 attainable overlaps. With ``other``
    the second replica comes from that engine (cross overlap).
    """
    n = engine.n_spins
    p2 = (other or engine).probs
    corr = bits.fwht(bits.fwht(engine.probs) * bits.fwht(p2)) / (1 << n)
    d = bits.popcount(np.arange(1 << n))
    probs = np.bincount(d, corr, minlength=n + 1)
    values = 1.0 - 2.0 * np.arange(n + 1) / n
    return values[::-1], np.clip(probs[::-1], 0.0, None)


def gibbs_variance(engine: ExactEngine, table) -> float:
    """<g^2> - <g>^2 for a single-replica table g."""
    m = engine.expect(table)
    return max(engine.expect(np.asarray(table) ** 2) - m * m, 0.0)

