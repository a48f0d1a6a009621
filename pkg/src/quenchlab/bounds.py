"""Right-hand sides of the proven inequalities, and standalone lemma checks.

Each ``*_rhs*`` function evaluates a closed-form bound. :class:`BoundReport`
pairs such a value with a statistical estimate of the left-hand side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import sympy
from scipy import integrate, optimize

from .disorder import DisorderDistribution
from .errors import ContractViolation, DomainError
from .gibbs import ExactEngine, ReplicaFunctional, exact_average

PASS_SIGMAS = 4.0


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------
@dataclass
class BoundReport:
    """Estimated left-hand side next to the exact right-hand side."""

    name: str
    lhs: float
    stderr: float
    rhs: float
    params: dict = field(default_factory=dict)
    margin_extra: float = 0.0

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.rhs + PASS_SIGMAS * self.stderr + self.margin_extra

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": dict(self.params),
            "lhs": self.lhs,
            "stderr": self.stderr,
            "rhs": self.rhs,
            "margin": self.margin,
            "satisfied": self.satisfied,
        }

    def to_row(self) -> dict:
        return {
            "name": self.name,
            "params": format_params(self.params),
            "lhs": repr(float(self.lhs)),
            "stderr": repr(float(self.stderr)),
            "rhs": repr(float(self.rhs)),
            "satisfied": str(self.satisfied).lower(),
        }


def format_params(params: Mapping) -> str:
    return ";".join(f"{k}={_fmt(v)}" for k, v in params.items())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return str(v)


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------
def c_constant(k: int, n: int) -> float:
    """C_{k,n} = 2^{k(k+1)/2} n^k, the derivative constant for n-replica functionals."""
    if k < 1 or n < 1:
        raise DomainError("C_{k,n} needs k >= 1 and n >= 1")
    if k * (k + 1) // 2 > 60:
        raise DomainError("k too large for C_{k,n}")
    return float(2 ** (k * (k + 1) // 2) * n**k)


def _positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise DomainError(f"{name} must be > 0, got {v}")


def _dists(dist, size):
    """Per-index laws: a single law (i.i.d.) or an explicit sequence of length ``size``."""
    if isinstance(dist, DisorderDistribution):
        return None
    dist = list(dist)
    if len(dist) != size:
        raise ContractViolation("per-index law list must have one entry per index")
    return dist


def _mean_truncated(dist, size, k, K):
    per = _dists(dist, size)
    if per is None:
        return dist.truncated_moment(k, K)
    return sum(d.truncated_moment(k, K) for d in per) / size


# ---------------------------------------------------------------------------
# self-averaging of the magnetization
# ---------------------------------------------------------------------------
def selfavg_rhs_truncated(gamma: float, size_e: int, dist, K: float) -> float:
    """(8/|E|) sum_e E[y_e^2; |y_e| >= K] + 9 gamma K + 1/(gamma sqrt|E|)."""
    _positive(gamma=gamma)
    if K < 1:
        raise DomainError("truncation level K must be >= 1")
    trunc = _mean_truncated(dist, size_e, 2, K)
    return 8.0 * trunc + 9.0 * gamma * K + 1.0 / (gamma * math.sqrt(size_e))


def selfavg_rhs_third(gamma: float, size_e: int, b3: float) -> float:
    """9 B_3 gamma + 1/(gamma sqrt|E|)."""
    _positive(gamma=gamma)
    if not math.isfinite(b3):
        raise DomainError("B_3 must be finite")
    return 9.0 * b3 * gamma + 1.0 / (gamma * math.sqrt(size_e))


# ---------------------------------------------------------------------------
# disorder chaos
# ---------------------------------------------------------------------------
def _chaos_tail(g1, g2, t, size_e):
    _positive(gamma1=g1, gamma2=g2)
    if not 0 <= t < 1:
        raise DomainError(f"t must lie in [0, 1), got {t}")
    return 4.0 * (g1 + g2) / (g1 * g2 * math.sqrt(size_e * (1.0 - t)))


def chaos_rhs_truncated(g1: float, g2: float, t: float, size_e: int, dist1, dist2, K: float) -> float:
    """(16/|E|) sum_e (trunc_1 + trunc_2) + 36 K (g1+g2) sqrt(1-t) + 4(g1+g2)/(g1 g2 sqrt(|E|(1-t)))."""
    tail = _chaos_tail(g1, g2, t, size_e)
    if K < 1:
        raise DomainError("truncation level K must be >= 1")
    trunc = _mean_truncated(dist1, size_e, 2, K) + _mean_truncated(dist2, size_e, 2, K)
    return 16.0 * trunc + 36.0 * K * (g1 + g2) * math.sqrt(1.0 - t) + tail


def chaos_rhs_third(g1: float, g2: float, t: float, size_e: int, b13: float, b23: float) -> float:
    """36 (B_{1,3} g1 + B_{2,3} g2) sqrt(1-t) + 4(g1+g2)/(g1 g2 sqrt(|E|(1-t)))."""
    tail = _chaos_tail(g1, g2, t, size_e)
    return 36.0 * (b13 * g1 + b23 * g2) * math.sqrt(1.0 - t) + tail


# ---------------------------------------------------------------------------
# universality of Gibbs averages
# ---------------------------------------------------------------------------
def _check_matching(dist, k):
    if k < 2:
        raise DomainError("moment-matching order k must be >= 2")
    if k + 1 > 8:
        raise DomainError("k + 1 must not exceed the supported moment order 8")
    if dist.matched_order() < k:
        raise DomainError(f"{dist.name} matches {dist.matched_order()} Gaussian moments, need {k}")


def universality_rhs(k: int, n: int, gammas, dist: DisorderDistribution, K) -> float:
    """Truncated bound on |E<L>_g - E<L>_y| for an n-replica L with ||L|| <= 1.

    4n C_{k-1,2n}/(k-2)! sum gamma_e^k E[|y|^k; |y| >= K_e]
    + (k+1) n C_{k,2n}/k! sum gamma_e^{k+1} K_e E|y|^k
    """
    _check_matching(dist, k)
    g = np.abs(np.asarray(gammas, dtype=float))
    K = np.broadcast_to(np.asarray(K, dtype=float), g.shape)
    if np.any(K < 1):
        raise DomainError("every K_e must be >= 1")
    if not np.any(g):
        return 0.0
    uniq, inv = np.unique(K, return_inverse=True)
    trunc = np.array([dist.truncated_moment(k, kk) for kk in uniq])[inv.ravel()]
    first = 4 * n * c_constant(k - 1, 2 * n) / math.factorial(k - 2) * float(np.sum(g**k * trunc))
    second = (k + 1) * n * c_constant(k, 2 * n) / math.factorial(k) * float(np.sum(g ** (k + 1) * K)) * dist.moment_abs(k)
    return first + second


def universality_rhs_moment(k: int, n: int, gammas, dist: DisorderDistribution) -> float:
    """(k+1) n C_{k,2n} B_{k+1} / k! * sum gamma_e^{k+1}."""
    _check_matching(dist, k)
    g = np.abs(np.asarray(gammas, dtype=float))
    b = dist.moment_abs(k + 1)
    return (k + 1) * n * c_constant(k, 2 * n) * b / math.factorial(k) * float(np.sum(g ** (k + 1)))


def _betas(beta: Mapping[int, float]):
    return {int(p): float(v) for p, v in beta.items() if float(v) != 0.0}


def pspin_universality_rhs_third(n: int, beta: Mapping[int, float], b3: float, N: int) -> float:
    """3n C_{2,2n} E|y|^3 / (2 sqrt N) * sum_{p>=4} beta_p^3; requires beta_2 = beta_3 = 0."""
    beta = _betas(beta)
    if beta.get(2, 0) or beta.get(3, 0):
        raise DomainError("third-moment form requires beta_2 = beta_3 = 0")
    s = sum(v**3 for p, v in beta.items() if p >= 4)
    return 3 * n * c_constant(2, 2 * n) * b3 / (2 * math.sqrt(N)) * s


def pspin_universality_rhs_fourmoment(n: int, beta: Mapping[int, float], dist: DisorderDistribution, N: int) -> float:
    """2n C_{3,2n} E[|y|^4; |y| >= N^{1/4}] sum beta_p^4 + 5n C_{4,2n} E|y|^4/(24 N^{1/4}) sum beta_p^5."""
    if dist.matched_order() < 4:
        raise DomainError(f"four-moment form needs 4 matched moments, {dist.name} has {dist.matched_order()}")
    beta = _betas(beta)
    q = N**0.25
    s4 = sum(v**4 for v in beta.values())
    s5 = sum(v**5 for v in beta.values())
    return (2 * n * c_constant(3, 2 * n) * dist.truncated_moment(4, q) * s4
            + 5 * n * c_constant(4, 2 * n) * dist.moment_abs(4) / (24 * q) * s5)


def coupled_universality_rhs(k: int, n: int, gamma1, gamma2, dist1: DisorderDistribution,
                             dist2: DisorderDistribution, K1, K2) -> float:
    """Truncated bound for functionals of n coupled replica pairs (rho^l, tau^l).

    8n C_{k-1,2n}/(k-2)! sum_e sum_j (g1+g2)^k E[|y_j|^k; |y_j| >= K_j]
    + 2(k+1) n C_{k,2n}/k! sum_e sum_j (g1+g2)^{k+1} K_j E|y_j|^k
    """
    _check_matching(dist1, k)
    _check_matching(dist2, k)
    s = np.abs(np.asarray(gamma1, dtype=float)) + np.abs(np.asarray(gamma2, dtype=float))
    total = 0.0
    for dist, K in ((dist1, K1), (dist2, K2)):
        K = np.broadcast_to(np.asarray(K, dtype=float), s.shape)
        if np.any(K < 1):
            raise DomainError("every K_e must be >= 1")
        uniq, inv = np.unique(K, return_inverse=True)
        trunc = np.array([dist.truncated_moment(k, kk) for kk in uniq])[inv.ravel()]
        total += 8 * n * c_constant(k - 1, 2 * n) / math.factorial(k - 2) * float(np.sum(s**k * trunc))
        total += (2 * (k + 1) * n * c_constant(k, 2 * n) / math.factorial(k)
                  * float(np.sum(s ** (k + 1) * K)) * dist.moment_abs(k))
    return total


def coupled_universality_rhs_moment(k: int, n: int, gamma1, gamma2, dists: Sequence[DisorderDistribution]) -> float:
    """2(k+1) n C_{k,2n} B_{k+1}/k! sum_e (g1+g2)^{k+1}, B over all three disorder families."""
    for d in dists:
        _check_matching(d, k)
    s = np.abs(np.asarray(gamma1, dtype=float)) + np.abs(np.asarray(gamma2, dtype=float))
    b = max(d.moment_abs(k + 1) for d in dists)
    return 2 * (k + 1) * n * c_constant(k, 2 * n) * b / math.factorial(k) * float(np.sum(s ** (k + 1)))


def coupled_pspin_rhs_third(n: int, beta1: Mapping[int, float], beta2: Mapping[int, float], b3: float, N: int) -> float:
    """3n C_{2,2n} E|y|^3 / sqrt N * sum_{p>=4} (beta_{1,p} + beta_{2,p})^3."""
    b1, b2 = _betas(beta1), _betas(beta2)
    if any(b.get(p, 0) for b in (b1, b2) for p in (2, 3)):
        raise DomainError("coupled third-moment form requires beta_{j,2} = beta_{j,3} = 0")
    orders = set(b1) | set(b2)
    s = sum((b1.get(p, 0.0) + b2.get(p, 0.0)) ** 3 for p in orders if p >= 4)
    return 3 * n * c_constant(2, 2 * n) * b3 / math.sqrt(N) * s


def coupled_pspin_rhs_fourmoment(n: int, beta1: Mapping[int, float], beta2: Mapping[int, float],
                                 dist: DisorderDistribution, N: int) -> float:
    """4n C_{3,2n} E[|y|^4; |y| >= N^{1/4}] sum (b1+b2)^4 + 5n C_{4,2n} E|y|^4/(12 N^{1/4}) sum (b1+b2)^5."""
    if dist.matched_order() < 4:
        raise DomainError(f"four-moment form needs 4 matched moments, {dist.name} has {dist.matched_order()}")
    b1, b2 = _betas(beta1), _betas(beta2)
    orders = set(b1) | set(b2)
    q = N**0.25
    s4 = sum((b1.get(p, 0.0) + b2.get(p, 0.0)) ** 4 for p in orders)
    s5 = sum((b1.get(p, 0.0) + b2.get(p, 0.0)) ** 5 for p in orders)
    return (4 * n * c_constant(3, 2 * n) * dist.truncated_moment(4, q) * s4
            + 5 * n * c_constant(4, 2 * n) * dist.moment_abs(4) / (12 * q) * s5)


# ---------------------------------------------------------------------------
# approximate integration by parts
# ---------------------------------------------------------------------------
MAX_DERIV = 5


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A smooth F with derivative evaluators F^{(0..5)} and their sup norms."""

    __test__ = False  # not a pytest class

    name: str
    derivatives: tuple
    sup_norms: tuple

    def __call__(self, y):
        return self.derivatives[0](y)

    def derivative(self, j: int) -> Callable:
        if j > MAX_DERIV or j >= len(self.derivatives):
            raise ContractViolation(f"{self.name} carries derivatives up to order {len(self.derivatives) - 1}")
        return self.derivatives[j]

    def sup_norm(self, j: int) -> float:
        self.derivative(j)
        return self.sup_norms[j]


_SYMBOLIC = {
    "sin": lambda y: sympy.sin(y),
    "cos": lambda y: sympy.cos(y),
    "tanh": lambda y: sympy.tanh(y),
    "gauss": lambda y: sympy.exp(-y**2),
}


def _sup_norm(f, lo=-12.0, hi=12.0, points=240_001):
    """sup |f| on the real line for functions whose extrema lie in [lo, hi]."""
    x = np.linspace(lo, hi, points)
    v = np.abs(f(x))
    i = int(np.argmax(v))
    step = x[1] - x[0]
    res = optimize.minimize_scalar(lambda t: -abs(float(f(t))), bounds=(x[i] - step, x[i] + step),
                                   method="bounded", options={"xatol": 1e-13})
    # limits at +-infinity (tanh approaches its supremum only there)
    far = float(np.max(np.abs(f(np.array([-1e3, 1e3])))))
    return max(float(v[i]), -float(res.fun), far)


def test_function(name: str) -> TestFunction:
    """One of ``sin``, ``cos``, ``tanh``, ``gauss`` (exp(-y^2))."""
    if name not in _SYMBOLIC:
        raise DomainError(f"unknown test function {name!r}")
    y = sympy.Symbol("y", real=True)
    expr = _SYMBOLIC[name](y)
    derivs, norms = [], []
    for j in range(MAX_DERIV + 1):
        fn = sympy.lambdify(y, expr, "numpy")
        vec = (lambda f: lambda v: np.asarray(f(np.asarray(v, dtype=float)), dtype=float) + 0.0 * np.asarray(v, dtype=float))(fn)
        derivs.append(vec)
        # sin/cos and their derivatives all attain sup norm exactly 1
        norms.append(1.0 if name in ("sin", "cos") else _sup_norm(vec))
        expr = sympy.diff(expr, y)
    return TestFunction(name, tuple(derivs), tuple(norms))


_LEGENDRE_NODES = 96


def _expect(dist: DisorderDistribution, g: Callable) -> float:
    if dist.is_discrete:
        a, p = np.asarray(dist.atoms), np.asarray(dist.probs)
        return float(np.sum(p * g(a)))
    if dist.kind == "uniform":
        # Gauss-Legendre is exact to round-off for these entire integrands
        r = math.sqrt(3.0)
        x, w = np.polynomial.legendre.leggauss(_LEGENDRE_NODES)
        return float(np.dot(w, g(r * x))) / 2.0
    if dist.kind == "gaussian":
        c = 1.0 / math.sqrt(2 * math.pi)
        f = lambda v: float(g(v)) * c * math.exp(-0.5 * v * v)
        val = 0.0
        for lo, hi in ((-40.0, -10.0), (-10.0, 0.0), (0.0, 10.0), (10.0, 40.0)):
            part, _ = integrate.quad(f, lo, hi, epsabs=1e-15, epsrel=1e-13, limit=400)
            val += part
        return val
    raise ContractViolation(f"no expectation rule for {dist.kind}")


def aibp_gap(F: TestFunction, dist: DisorderDistribution) -> float:
    """|E y F(y) - E F'(y)|."""
    f0, f1 = F.derivative(0), F.derivative(1)
    return abs(_expect(dist, lambda v: v * f0(v) - f1(v)))


def aibp_rhs_truncated(F: TestFunction, dist: DisorderDistribution, k: int, K: float) -> float:
    """4||F^{(k-1)}||/(k-2)! E[|y|^k; |y| >= K] + (k+1) K/k! ||F^{(k)}|| E|y|^k."""
    _check_matching(dist, k)
    if K < 1:
        raise DomainError("truncation level K must be >= 1")
    return (4 * F.sup_norm(k - 1) / math.factorial(k - 2) * dist.truncated_moment(k, K)
            + (k + 1) * K / math.factorial(k) * F.sup_norm(k) * dist.moment_abs(k))


def aibp_rhs_moment(F: TestFunction, dist: DisorderDistribution, k: int) -> float:
    """(k+1)/k! ||F^{(k)}|| E|y|^{k+1}."""
    _check_matching(dist, k)
    return (k + 1) / math.factorial(k) * F.sup_norm(k) * dist.moment_abs(k + 1)


# ---------------------------------------------------------------------------
# derivative bound for single-entry perturbations
# ---------------------------------------------------------------------------
_STENCILS = {
    1: ({-1: -0.5, 1: 0.5}),
    2: ({-1: 1.0, 0: -2.0, 1: 1.0}),
    3: ({-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5}),
    4: ({-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0}),
}
MIN_STEP = 1e-3


@dataclass
class DerivativeCheck:
    lhs: float
    rhs: float
    error: float
    k: int
    n: int
    gamma: float

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.rhs + self.error


def finite_difference(f: Callable[[float], float], x: float, k: int, steps=(1e-2, 5e-3)) -> tuple[float, float]:
    """k-th derivative of f at x by central differences with Richardson extrapolation.

    Returns ``(estimate, error_bound)``; the bound adds the two-step discrepancy
    to a round-off allowance.
    """
    if k not in _STENCILS:
        raise DomainError("derivative order must be 1..4")
    if min(steps) < MIN_STEP:
        raise DomainError(f"finite-difference step must be >= {MIN_STEP}")
    cache = {}

    def val(z):
        if z not in cache:
            cache[z] = float(f(z))
        return cache[z]

    stencil = _STENCILS[k]
    est = []
    for h in steps:
        est.append(sum(c * val(x + j * h) for j, c in stencil.items()) / h**k)
    h1, h2 = steps
    ratio = (h1 / h2) ** 2
    rich = est[1] + (est[1] - est[0]) / (ratio - 1)
    scale = max(abs(v) for v in cache.values()) or 1.0
    roundoff = 64 * np.finfo(float).eps * scale * sum(abs(c) for c in stencil.values()) / min(steps) ** k
    return rich, abs(est[1] - est[0]) + roundoff


def derivative_bound_check(engine: ExactEngine, L: ReplicaFunctional, e: int, k: int,
                           steps=(1e-2, 5e-3)) -> DerivativeCheck:
    """Compare |d^k/dx^k <L>_x| at x = y_e with gamma_e^k C_{k,n}."""
    if k > 4:
        raise DomainError("derivative order limited to 4")
    if engine.y is None:
        raise ContractViolation("engine lacks its realization")
    x0 = float(engine.y[e])
    gamma = abs(engine.family.gamma_of(e))
    n = L.arity
    if gamma == 0.0:
        return DerivativeCheck(0.0, 0.0, 0.0, k, n, gamma)
    d, err = finite_difference(lambda x: exact_average(engine.perturbed(e, x), L), x0, k, steps)
    return DerivativeCheck(abs(d), gamma**k * c_constant(k, n), err, k, n, gamma)
