import itertools
import math

import numpy as np
import pytest

from quenchlab import bits, disorder as D, model as M
from quenchlab.errors import CapacityError, ConfigError, ContractViolation, DomainError


def naive_pspin_energy(beta, h, n, y_blocks, sigma):
    """Direct sum over index tuples, the textbook mixed p-spin Hamiltonian."""
    total = h * sum(sigma)
    for p, b in beta.items():
        y = y_blocks[p]
        for e, idx in enumerate(itertools.product(range(n), repeat=p)):
            total += b * n ** (-(p - 1) / 2) * y[e] * math.prod(sigma[i] for i in idx)
    return total


def test_full_tensor_size_and_order():
    fam = M.build_family(M.MixedPSpin({2: 1.0, 3: 0.5}, 0.0, 4))
    assert fam.size == 16 + 64
    assert fam.block("p2").sites_at(np.array([0, 1, 4, 15])).tolist() == [[0, 0], [0, 1], [1, 0], [3, 3]]
    assert fam.gamma_of(0) == pytest.approx(0.5)
    assert fam.gamma_of(16) == pytest.approx(0.5 / 4)


def test_pspin_energy_matches_naive_sum():
    beta, h, n = {2: 1.3, 3: 0.7}, 0.4, 4
    spec = M.MixedPSpin(beta, h, n)
    fam, base = M.build_family(spec), M.base_measure(spec)
    real = M.realize(fam, D.gaussian(), 3)
    y_blocks = {2: real.values[:16], 3: real.values[16:]}
    configs = bits.all_configs(n)
    got = M.energy(fam, real, configs, base)
    want = [naive_pspin_energy(beta, h, n, y_blocks, c.tolist()) for c in configs]
    assert np.allclose(got, want, atol=1e-12)


def test_multilinear_transform_matches_streamed_energy():
    spec = M.MixedPSpin({2: 1.0, 3: 1.0, 4: 0.5}, 0.0, 5)
    fam = M.build_family(spec)
    real = M.realize(fam, D.threepoint(), 1)
    dense = fam.multilinear(real.values, dense=True)
    assert np.allclose(bits.fwht(dense), fam.energy(real.values, bits.all_configs(5)), atol=1e-12)
    masks, coefs = fam.multilinear(real.values)
    assert np.all(np.diff(masks.astype(np.int64)) > 0)
    assert np.allclose(dense[masks.astype(np.int64)], coefs)


def test_repeated_indices_cancel():
    # sigma_0 sigma_0 = 1, so the (0, 0) feature is constant
    fam = M.build_family(M.MixedPSpin({2: 1.0}, 0.0, 3))
    assert np.all(fam.feature_table(0) == 1.0)
    assert fam.block("p2").masks_at(np.array([0, 4, 8])).tolist() == [0, 0, 0]


def test_ea_energy_matches_naive():
    n, edges = M.grid_edges((2, 3))
    spec = M.EAGraph(n, edges, 0.8, 0.3)
    fam = M.build_family(spec)
    real = M.realize(fam, D.rademacher(), 5)
    yb, yf = real.values[: len(edges)], real.values[len(edges):]
    for s in bits.all_configs(n):
        want = 0.8 * sum(yb[k] * s[i] * s[j] for k, (i, j) in enumerate(edges)) + 0.3 * sum(yf * s)
        assert M.energy(fam, real, s) == pytest.approx(want, abs=1e-12)


def test_grid_edges():
    n, edges = M.grid_edges((3, 4))
    assert n == 12 and len(edges) == 3 * 3 + 2 * 4
    _, periodic = M.grid_edges((3, 4), periodic=True)
    assert len(periodic) == 24
    _, ring2 = M.grid_edges((2,), periodic=True)
    assert ring2 == ((0, 1),)


def test_rfim_deterministic_bonds_in_base():
    spec = M.RFIM((2, 2), 0.5, 1.5)
    fam, base = M.build_family(spec), M.base_measure(spec)
    assert [b.name for b in fam.blocks] == ["field"]
    real = M.realize(fam, D.gaussian(), 2)
    for s in bits.all_configs(4):
        want = 0.5 * sum(s[i] * s[j] for i, j in spec.edges) + 1.5 * real.values @ s
        assert M.energy(fam, real, s, base) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("p", [2, 3, 4])
def test_mean_feature_table_is_m_to_the_p(p):
    n = 5
    fam = M.build_family(M.MixedPSpin({p: 1.0}, 0.0, n))
    m = bits.all_configs(n).mean(axis=1)
    assert np.allclose(fam.mean_feature_table(), m**p, atol=1e-13)


def test_mean_feature_table_sparse_block():
    n, edges = M.grid_edges((2, 2))
    fam = M.build_family(M.EAGraph(n, edges, 1.0, 0.0))
    configs = bits.all_configs(n)
    want = fam.feature_values(configs).mean(axis=1)
    assert np.allclose(fam.mean_feature_table(), want)


def test_realize_is_reproducible_and_stream_keyed():
    fam = M.build_family(M.MixedPSpin({2: 1.0}, 0.0, 6))
    a = M.realize(fam, D.gaussian(), 11, (1, 2))
    b = M.realize(fam, D.gaussian(), 11, (1, 2))
    c = M.realize(fam, D.gaussian(), 11, (1, 3))
    assert np.array_equal(a.values, b.values) and not np.array_equal(a.values, c.values)
    assert len(a) == 36


def test_coupled_endpoints():
    spec = M.MixedPSpin({2: 1.0}, 0.0, 4)
    same = M.coupled_pspin(spec, spec, {2: 1.0})
    r1, r2 = M.realize_coupled(same, D.gaussian(), D.gaussian(), D.gaussian(), 3)
    assert np.array_equal(r1.values, r2.values)
    apart = M.coupled_pspin(spec, spec, {2: 0.0})
    s1, s2 = M.realize_coupled(apart, D.gaussian(), D.gaussian(), D.gaussian(), 3)
    assert not np.allclose(s1.values, s2.values)
    # the shared component is the same draw in both cases
    half = M.coupled_pspin(spec, spec, {2: 0.5})
    h1, h2 = M.realize_coupled(half, D.gaussian(), D.gaussian(), D.gaussian(), 3)
    assert np.allclose((h1.values + h2.values) / 2 - math.sqrt(0.5) * r1.values,
                       math.sqrt(0.5) * (s1.values + s2.values) / 2)


def test_coupled_t_outside_unit_interval():
    spec = M.MixedPSpin({2: 1.0}, 0.0, 3)
    cs = M.coupled_pspin(spec, spec, {2: 1.5})
    with pytest.raises(DomainError):
        cs.t_vector()


def test_coupled_gammas():
    a, b = M.MixedPSpin({2: 1.0, 3: 0.5}, 0.0, 4), M.MixedPSpin({2: 2.0}, 0.0, 4)
    cs = M.coupled_pspin(a, b, {})
    assert cs.gamma1 == {"p2": 0.5, "p3": 0.5 / 4}
    assert cs.gamma2 == {"p2": 1.0, "p3": 0.0}


def test_spec_from_config_strict():
    spec = M.spec_from_config({"model": "mixed_pspin", "N": 5, "beta": {"2": 1.0}})
    assert spec == M.MixedPSpin({2: 1.0}, 0.0, 5)
    with pytest.raises(ConfigError):
        M.spec_from_config({"model": "mixed_pspin", "N": 5, "beta": {"2": 1.0}, "temperature": 1})
    with pytest.raises(ConfigError):
        M.spec_from_config({"model": "potts"})
    with pytest.raises(ConfigError):
        M.spec_from_config({"model": "rfim", "dims": [2, 2], "beta": 1.0})
    grid = M.spec_from_config({"model": "ea_grid", "dims": [2, 3], "beta": 1.0, "gamma": 0.5})
    assert grid.n_vertices == 6


def test_guards():
    with pytest.raises(CapacityError):
        M.build_family(M.MixedPSpin({5: 1.0}, 0.0, 60))
    with pytest.raises(DomainError):
        M.build_family(M.MixedPSpin({1: 1.0}, 0.0, 3))
    with pytest.raises(ContractViolation):
        M.build_family(M.EAGraph(3, ((0, 3),), 1.0, 0.0))
    fam = M.build_family(M.MixedPSpin({2: 1.0}, 0.0, 3))
    with pytest.raises(ContractViolation):
        fam.energy(np.zeros(9), np.ones(4))


def test_zero_beta_orders_are_dropped():
    fam = M.build_family(M.MixedPSpin({2: 1.0, 3: 0.0}, 0.0, 3))
    assert [b.name for b in fam.blocks] == ["p2"]
