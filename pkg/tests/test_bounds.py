import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate, optimize, special

from quenchlab import bounds as B, disorder as D, gibbs as G, model as M, observables as O
from quenchlab.errors import ContractViolation, DomainError

RAD, UNI, THREE, GAUSS = D.rademacher(), D.uniform(), D.threepoint(), D.gaussian()


def test_bound_report_pass_rule():
    r = B.BoundReport("x", 1.3, 0.1, 1.0, {"a": 1})
    assert r.satisfied and r.margin == pytest.approx(-0.3)
    assert not B.BoundReport("x", 1.5, 0.1, 1.0, {}).satisfied
    assert B.BoundReport("x", 1.5, 0.1, 1.0, {}, margin_extra=0.2).satisfied
    row = r.to_row()
    assert row["name"] == "x" and row["satisfied"] in (True, "true", "True")


@pytest.mark.parametrize("k,n,value", [(1, 1, 2), (2, 2, 32), (3, 2, 512)])
def test_c_constant_examples(k, n, value):
    assert B.c_constant(k, n) == value


def test_c_constant_big_integer_oracle():
    for k in range(1, 7):
        for n in range(1, 7):
            assert B.c_constant(k, n) == 2 ** (k * (k + 1) // 2) * n**k
    with pytest.raises(DomainError):
        B.c_constant(11, 1)
    with pytest.raises(DomainError):
        B.c_constant(0, 1)


def test_universality_constants_big_integer_oracle():
    g = [0.3, 0.1, 0.25]
    for k in range(2, 7):
        for n in (1, 2):
            c = Fraction(2 ** (k * (k + 1) // 2) * (2 * n) ** k)
            b = Fraction(GAUSS.moment_abs(k + 1))
            s = sum(Fraction(x) ** (k + 1) for x in g)
            oracle = Fraction(k + 1) * n * c * b / math.factorial(k) * s
            assert B.universality_rhs_moment(k, n, g, GAUSS) == pytest.approx(float(oracle), rel=1e-13)


def test_selfavg_examples():
    assert B.selfavg_rhs_truncated(0.1, 100, RAD, 2.0) == pytest.approx(2.8, abs=1e-12)
    assert B.selfavg_rhs_third(0.1, 100, 1.0) == pytest.approx(1.9, abs=1e-12)
    # E[y^2; |y| >= 1] = 2 Gamma(3/2, 1/2) / sqrt(pi) for a standard Gaussian
    trunc = 2 * special.gammaincc(1.5, 0.5) * special.gamma(1.5) / math.sqrt(math.pi)
    assert trunc == pytest.approx(0.8012519569, abs=1e-10)
    assert B.selfavg_rhs_truncated(0.01, 10_000, GAUSS, 1.0) == pytest.approx(8 * trunc + 1.09, abs=1e-10)
    assert B.selfavg_rhs_truncated(0.01, 10_000, GAUSS, 1.0) == pytest.approx(7.50001565, abs=1e-7)
    with pytest.raises(DomainError):
        B.selfavg_rhs_truncated(0.0, 100, RAD, 2.0)
    with pytest.raises(DomainError):
        B.selfavg_rhs_truncated(0.1, 100, RAD, 0.5)


def test_selfavg_third_minimizer():
    b3, size = GAUSS.moment_abs(3), 400
    assert b3 == pytest.approx(2 * math.sqrt(2 / math.pi))
    res = optimize.minimize_scalar(lambda g: B.selfavg_rhs_third(g, size, b3), bounds=(1e-4, 10),
                                   method="bounded", options={"xatol": 1e-12})
    assert res.x == pytest.approx((9 * b3) ** -0.5 * size**-0.25, rel=1e-5)
    assert res.fun == pytest.approx(6 * math.sqrt(b3) * size**-0.25, rel=1e-9)


def test_truncated_forms_increase_in_k_beyond_support():
    Ks = [2.0, 3.0, 5.0, 10.0]
    sa = [B.selfavg_rhs_truncated(0.1, 100, THREE, K) for K in Ks]
    ch = [B.chaos_rhs_truncated(0.1, 0.2, 0.5, 100, THREE, RAD, K) for K in Ks]
    assert np.all(np.diff(sa) > 0) and np.all(np.diff(ch) > 0)


def test_chaos_examples():
    v = B.chaos_rhs_truncated(0.1, 0.1, 0.99, 10_000, RAD, RAD, 2.0)
    assert v == pytest.approx(9.44, abs=1e-10)
    a = B.chaos_rhs_third(0.1, 0.3, 0.4, 100, 1.0, 1.5)
    assert a == pytest.approx(B.chaos_rhs_third(0.3, 0.1, 0.4, 100, 1.5, 1.0))
    assert B.chaos_rhs_third(0.1, 0.1, 1 - 1e-12, 100, 1, 1) > 1e6
    with pytest.raises(DomainError):
        B.chaos_rhs_third(0.1, 0.1, 1.0, 100, 1, 1)
    with pytest.raises(DomainError):
        B.chaos_rhs_truncated(0.1, 0.1, -0.1, 100, RAD, RAD, 2.0)


def test_universality_examples():
    assert B.universality_rhs(2, 1, [0.1], RAD, 2.0) == pytest.approx(0.096, abs=1e-12)
    assert B.universality_rhs(2, 1, [0.0, 0.0], RAD, 2.0) == 0.0
    with pytest.raises(DomainError):
        B.universality_rhs(4, 1, [0.1], RAD, 2.0)
    with pytest.raises(DomainError):
        B.universality_rhs_moment(1, 1, [0.1], RAD)


@pytest.mark.parametrize("p", [4, 5])
def test_pspin_gamma_cubes_collapse(p):
    N, beta = 5, 1.3
    g = M.build_family(M.MixedPSpin({p: beta}, 0.0, N)).gamma_vector()
    s = float(np.sum(g**3))
    assert s == pytest.approx(beta**3 * N ** -(3 * (p - 1) / 2 - p))
    assert s <= beta**3 / math.sqrt(N) + 1e-12


def test_pspin_universality_examples():
    assert B.pspin_universality_rhs_third(1, {4: 1.0}, 1.0, 100) == pytest.approx(4.8)
    c42 = B.c_constant(4, 2)
    assert B.pspin_universality_rhs_fourmoment(1, {2: 1.0}, THREE, 10**4) == pytest.approx(5 * c42 * 3 / 240)
    assert B.pspin_universality_rhs_fourmoment(1, {2: 1.0}, THREE, 10**4) == pytest.approx(1024)
    # bounded support: only the N^{-1/4} term survives once N^{1/4} > sqrt(3)
    far = [B.pspin_universality_rhs_fourmoment(1, {2: 1.0}, THREE, 10**j) for j in (4, 8, 12, 16)]
    assert np.allclose(far, 1024 * 10.0 ** -np.arange(4))
    with pytest.raises(DomainError):
        B.pspin_universality_rhs_third(1, {2: 1.0, 4: 1.0}, 1.0, 100)
    with pytest.raises(DomainError):
        B.pspin_universality_rhs_fourmoment(1, {2: 1.0}, RAD, 100)


def test_coupled_examples():
    assert B.coupled_pspin_rhs_third(1, {4: 1.0}, {4: 1.0}, 1.0, 100) == pytest.approx(76.8)
    g1, g2 = [0.1, 0.2], [0.05, 0.3]
    single = B.universality_rhs_moment(2, 1, g1, RAD)
    assert B.coupled_universality_rhs_moment(2, 1, g1, [0, 0], [RAD, RAD, RAD]) == pytest.approx(2 * single)
    a = B.coupled_universality_rhs(2, 1, g1, g2, RAD, THREE, 2.0, 3.0)
    b = B.coupled_universality_rhs(2, 1, g2, g1, THREE, RAD, 3.0, 2.0)
    assert a == pytest.approx(b)
    assert B.coupled_pspin_rhs_third(1, {4: 1.0, 5: 0.5}, {4: 0.2}, 1.0, 50) == pytest.approx(
        B.coupled_pspin_rhs_third(1, {4: 0.2}, {4: 1.0, 5: 0.5}, 1.0, 50))
    with pytest.raises(DomainError):
        B.coupled_pspin_rhs_third(1, {3: 1.0}, {4: 1.0}, 1.0, 100)


# ---------------------------------------------------------------------------
# test functions and approximate integration by parts
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("name", ["sin", "cos", "tanh", "gauss"])
def test_test_function_derivatives_by_finite_differences(name):
    F = B.test_function(name)
    x = np.random.default_rng(0).uniform(-4, 4, 100)
    h = 1e-4
    for j in range(B.MAX_DERIV):
        f = F.derivative(j)
        fd = (f(x + h) - f(x - h)) / (2 * h)
        assert np.max(np.abs(fd - F.derivative(j + 1)(x))) < 1e-5
    with pytest.raises(ContractViolation):
        F.derivative(B.MAX_DERIV + 1)


def test_sup_norms():
    g = B.test_function("gauss")
    assert g.sup_norm(0) == pytest.approx(1.0)
    assert g.sup_norm(1) == pytest.approx(math.sqrt(2) * math.exp(-0.5), rel=1e-10)
    t = B.test_function("tanh")
    assert t.sup_norm(0) == pytest.approx(1.0) and t.sup_norm(1) == pytest.approx(1.0)
    assert t.sup_norm(2) == pytest.approx(4 / (3 * math.sqrt(3)), rel=1e-10)
    assert B.test_function("sin").sup_norm(3) == 1.0
    with pytest.raises(DomainError):
        B.test_function("exp")


def test_aibp_gap_examples():
    sin = B.test_function("sin")
    assert B.aibp_gap(sin, RAD) == pytest.approx(abs(math.sin(1) - math.cos(1)), abs=1e-14)
    assert B.aibp_rhs_moment(sin, RAD, 2) == pytest.approx(1.5)
    assert B.aibp_gap(sin, GAUSS) <= 1e-10
    assert B.aibp_gap(sin, UNI) == pytest.approx(abs(math.cos(math.sqrt(3))), abs=1e-12)
    ident = B.TestFunction("identity", (lambda y: np.asarray(y, float), lambda y: np.ones_like(y, dtype=float))
                           + (lambda y: np.zeros_like(y, dtype=float),) * 4, (math.inf, 1.0, 0, 0, 0, 0))
    for d in (RAD, UNI, THREE, GAUSS):
        assert B.aibp_gap(ident, d) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("name", ["cos", "tanh", "gauss"])
def test_aibp_gap_against_quadrature_for_uniform(name):
    F = B.test_function(name)
    r = math.sqrt(3)
    val, _ = integrate.quad(lambda v: (v * F(v) - F.derivative(1)(v)) / (2 * r), -r, r, epsabs=1e-13, limit=200)
    assert B.aibp_gap(F, UNI) == pytest.approx(abs(val), abs=1e-11)


def test_aibp_rhs_requires_matching():
    sin = B.test_function("sin")
    with pytest.raises(DomainError):
        B.aibp_rhs_moment(sin, RAD, 4)
    with pytest.raises(DomainError):
        B.aibp_rhs_truncated(sin, RAD, 2, 0.5)


# ---------------------------------------------------------------------------
# derivative bound
# ---------------------------------------------------------------------------
def test_finite_difference_on_exponential():
    for k in range(1, 5):
        est, err = B.finite_difference(math.exp, 0.3, k)
        assert abs(est - math.exp(0.3)) <= max(err, 1e-6)
    with pytest.raises(DomainError):
        B.finite_difference(math.exp, 0.0, 1, steps=(1e-2, 1e-4))
    with pytest.raises(DomainError):
        B.finite_difference(math.exp, 0.0, 5)


def _instance(n=4, seed=0):
    spec = M.MixedPSpin({2: 1.2, 3: 0.7}, 0.2, n)
    fam = M.build_family(spec)
    real = M.realize(fam, GAUSS, seed)
    return fam, G.build_exact(fam, real, M.base_measure(spec))


def _feature(fam, e):
    table = fam.feature_table(e)
    weights = 1 << np.arange(fam.n_spins)
    return G.ReplicaFunctional(1, lambda r: table[(r[:, 0] < 0) @ weights])


def test_first_derivative_is_gibbs_variance():
    fam, eng = _instance()
    e = 7
    table = fam.feature_table(e)
    gamma = fam.gamma_of(e)
    expected = gamma * (eng.expect(table**2) - eng.expect(table) ** 2)
    chk = B.derivative_bound_check(eng, _feature(fam, e), e, 1)
    assert chk.lhs == pytest.approx(expected, abs=max(chk.error, 1e-8))
    assert 0 <= expected <= 2 * gamma
    assert chk.rhs == pytest.approx(2 * gamma) and chk.satisfied


def test_zero_coupling_gives_zero_derivative():
    fam = M.FeatureFamily(2, (M.FeatureBlock("field", 2, 1, 0.0, sites=np.array([[0], [1]])),))
    eng = G.build_exact(fam, np.array([0.4, -1.0]))
    chk = B.derivative_bound_check(eng, O.magnetization_functional(), 0, 2)
    assert chk.lhs == 0.0 and chk.rhs == 0.0 and chk.satisfied


def test_second_derivative_two_replicas():
    fam, eng = _instance(seed=3)
    for e in (0, 11, 40):
        chk = B.derivative_bound_check(eng, O.overlap_functional(), e, 2)
        assert chk.rhs == pytest.approx(32 * fam.gamma_of(e) ** 2)
        assert chk.satisfied


def test_derivative_step_guard():
    fam, eng = _instance()
    with pytest.raises(DomainError):
        B.derivative_bound_check(eng, O.overlap_functional(), 0, 1, steps=(1e-2, 1e-4))
    with pytest.raises(DomainError):
        B.derivative_bound_check(eng, O.overlap_functional(), 0, 5)
