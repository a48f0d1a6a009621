import itertools

import numpy as np
import pytest

from quenchlab import bits, disorder as D, gibbs as G, model as M, observables as O
from quenchlab.errors import ContractViolation, DomainError


def engine_for(spec, law=None, seed=0, kind=""):
    fam, base = M.build_family(spec), M.base_measure(spec)
    real = M.realize(fam, law or D.gaussian(), seed)
    return fam, G.build_exact(fam, real, base, model_kind=kind)


def test_magnetization_examples():
    assert O.magnetization(np.ones(5)) == 1.0
    assert O.magnetization(np.array([1, -1, 1, -1])) == 0.0
    assert O.magnetization(np.array([1, 1, -1])) == pytest.approx(1 / 3)


@pytest.mark.parametrize("p", [2, 3, 4])
def test_feature_magnetization_is_power_of_magnetization(p):
    fam = M.build_family(M.MixedPSpin({p: 1.0}, 0.0, 4))
    spins = bits.all_configs(4)
    assert np.allclose(O.feature_magnetization(fam, spins), O.magnetization(spins) ** p, atol=1e-14)
    assert O.feature_magnetization(fam, np.ones(4)) == pytest.approx(1.0)


def test_feature_magnetization_of_field_family():
    fam = M.build_family(M.EAGraph(5, ((0, 1), (1, 2)), 1.0, 1.0)).subfamily("field")
    spins = bits.all_configs(5)
    assert np.allclose(O.feature_magnetization(fam, spins), O.magnetization(spins))


def test_overlap_examples_and_length_check():
    s = np.array([1, -1, -1, 1, 1])
    assert O.overlap(s, s) == 1.0
    assert O.overlap(s, -s) == -1.0
    with pytest.raises(ContractViolation):
        O.overlap(s, s[:4])


@pytest.mark.parametrize("p", [2, 3])
def test_cross_overlap_is_power_of_site_overlap(p):
    fam = M.build_family(M.MixedPSpin({p: 1.0}, 0.0, 5))
    spins = bits.all_configs(5)
    rng = np.random.default_rng(1)
    a, b = spins[rng.integers(32, size=20)], spins[rng.integers(32, size=20)]
    assert np.allclose(O.cross_overlap(fam, a, b), O.overlap(a, b) ** p, atol=1e-14)


def test_cross_overlap_matches_xor_table():
    fam = M.build_family(M.MixedPSpin({2: 0.7, 3: 1.1}, 0.0, 4))
    spins = bits.all_configs(4)
    table = fam.mean_feature_table()
    for a, b in [(0, 0), (3, 9), (15, 6), (5, 10)]:
        assert O.cross_overlap(fam, spins[a], spins[b]) == pytest.approx(table[a ^ b], abs=1e-14)


def test_bond_overlap_examples():
    rho = np.array([1, -1, 1, 1])
    edges = [(0, 1), (1, 2), (2, 3)]
    assert O.bond_overlap(rho, rho, edges) == 1.0
    assert O.bond_overlap(rho, -rho, edges) == 1.0
    assert O.site_overlap(rho, -rho) == -1.0
    with pytest.raises(ContractViolation):
        O.bond_overlap(rho, rho, [(0, 4)])


def test_bond_overlap_against_naive_loop():
    rng = np.random.default_rng(2)
    rho, tau = 1 - 2 * rng.integers(0, 2, size=(2, 12))
    edges = M.grid_edges((3, 4))[1]
    naive = sum(rho[i] * rho[j] * tau[i] * tau[j] for i, j in edges) / len(edges)
    assert O.bond_overlap(rho, tau, edges) == pytest.approx(naive, abs=1e-12)


def test_overlap_matrix_invariants():
    rng = np.random.default_rng(3)
    reps = 1 - 2 * rng.integers(0, 2, size=(50, 4, 9))
    Q = O.overlap_matrix(reps)
    assert np.allclose(np.diagonal(Q, axis1=-2, axis2=-1), 1.0)
    assert np.allclose(Q, np.swapaxes(Q, -1, -2))
    assert O.overlap(reps[7, 1], reps[7, 3]) == pytest.approx(Q[7, 1, 3])


def _naive_ultra(eng, eps, literal=False):
    n = eng.n_spins
    spins = bits.all_configs(n)
    p = eng.probs
    total = 0.0
    for a, b, c in itertools.product(range(1 << n), repeat=3):
        r12 = O.overlap(spins[a], spins[b])
        r13 = O.overlap(spins[a], spins[c])
        r23 = O.overlap(spins[b], spins[c])
        lhs = (r13 if literal else r23) + eps
        total += p[a] * p[b] * p[c] * (lhs <= min(r12, r13) + 1e-12)
    return total


@pytest.mark.parametrize("eps", [0.5, 1.0])
def test_ultrametricity_defect_against_triple_enumeration(eps):
    _, eng = engine_for(M.MixedPSpin({2: 1.5, 3: 1.0}, 0.1, 3), seed=4)
    est, se = O.ultrametricity_defect(eng, eps)
    assert se == 0.0
    assert est == pytest.approx(_naive_ultra(eng, eps), abs=1e-12)
    assert est == pytest.approx(G.exact_average(eng, O.ultrametric_functional(eps)), abs=1e-12)


def test_ultrametricity_defect_edge_cases():
    _, eng = engine_for(M.MixedPSpin({2: 1.0}, 0.0, 4), seed=5)
    assert O.ultrametricity_defect(eng, 2.5)[0] == 0.0
    assert O.ultrametricity_defect(eng, 0.5, literal=True)[0] == 0.0
    with pytest.raises(DomainError):
        O.ultrametricity_defect(eng, 0.0)


def test_ultrametricity_defect_vanishes_for_frozen_ferromagnet():
    spec = M.MixedPSpin({2: 20.0}, 2.0, 5)
    fam = M.build_family(spec)
    eng = G.build_exact(fam, np.ones(fam.size), M.base_measure(spec))
    assert O.ultrametricity_defect(eng, 0.1)[0] < 1e-8


def test_ultrametricity_sampled_matches_exact():
    _, eng = engine_for(M.MixedPSpin({2: 0.0}, 0.0, 6))
    exact, _ = O.ultrametricity_defect(eng, 0.2)
    est, se = O.ultrametricity_defect(eng, 0.2, n_samples=40_000, seed=7)
    assert abs(est - exact) <= 4 * se


def test_fkg_defect_rfim():
    for seed in range(10):
        _, eng = engine_for(M.RFIM((2, 2), 0.8, 1.0), seed=seed, kind="rfim")
        assert O.fkg_defect(eng) >= -1e-12
    _, eng = engine_for(M.RFIM((2, 3), 0.0, 1.0), seed=1, kind="rfim")
    assert O.fkg_defect(eng) == pytest.approx(0.0, abs=1e-14)
    m = eng.spin_means()
    assert O.pair_correlation_gap(eng, 2, 2) == pytest.approx(1 - m[2] ** 2)


def test_fkg_defect_rejects_other_models():
    _, eng = engine_for(M.MixedPSpin({2: 1.0}, 0.0, 4))
    with pytest.raises(ContractViolation):
        O.fkg_defect(eng)


def test_gg_residual_trivial_cases():
    _, eng = engine_for(M.MixedPSpin({2: 1.3}, 0.2, 4), seed=2)
    assert O.gg_residual(eng, lambda q: np.ones_like(q), 2) == pytest.approx(0.0, abs=1e-14)
    # f = 1: R_{1,3} and R_{1,2} share one law
    assert O.gg_residual(eng, lambda q: q, 2) == pytest.approx(0.0, abs=1e-14)
    _, flat = engine_for(M.MixedPSpin({2: 0.0}, 0.0, 4))
    assert O.gg_residual(flat, lambda q: q, 2) == 0.0
    # independent spins: only the E<R12^2> = 1/N term survives
    f = O.overlap_functional()
    assert O.gg_residual(flat, lambda q: q, 2, f=f) == pytest.approx(-1 / 8, abs=1e-14)


def test_gg_residual_against_enumeration():
    _, eng = engine_for(M.MixedPSpin({2: 1.3, 3: 0.6}, 0.2, 3), seed=6)
    n = 3
    spins = bits.all_configs(n).astype(float)
    p = eng.probs
    R = spins @ spins.T / n
    e_r12r13 = np.einsum("a,b,c,ab,ac->", p, p, p, R, R)
    e_r12 = p @ R @ p
    e_r12sq = p @ (R**2) @ p
    expected = e_r12r13 - 0.5 * e_r12 * e_r12 - 0.5 * e_r12sq
    got = O.gg_residual(eng, lambda q: q, 2, f=O.overlap_functional())
    assert got == pytest.approx(expected, abs=1e-13)
    assert abs(got) <= 2.0


def test_overlap_distribution_against_naive():
    _, eng = engine_for(M.MixedPSpin({2: 1.1}, 0.3, 4), seed=8)
    _, other = engine_for(M.MixedPSpin({2: 0.6}, 0.0, 4), seed=9)
    spins = bits.all_configs(4).astype(float)
    R = spins @ spins.T / 4
    for second in (None, other):
        values, probs = O.overlap_distribution(eng, second)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        q = eng.probs
        w = np.outer(q, (second or eng).probs)
        naive = [w[np.isclose(R, v)].sum() for v in values]
        assert np.allclose(probs, naive, atol=1e-13)
    assert np.allclose(values, np.linspace(-1, 1, 5))


def test_gibbs_variance_matches_direct_formula():
    fam, eng = engine_for(M.MixedPSpin({2: 1.0}, 0.0, 5), seed=10)
    table = fam.mean_feature_table()
    p = eng.probs
    assert O.gibbs_variance(eng, table) == pytest.approx(p @ table**2 - (p @ table) ** 2, abs=1e-14)
