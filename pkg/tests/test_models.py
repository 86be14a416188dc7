import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vqephase.models import (HamiltonianSpec, ModelError, build_cluster_ising, build_cluster_yy,
                             build_tfim, energy_discrepancy, exact_ground, ground_energy,
                             lanczos_ground, magnetization, site_z, string_order,
                             string_order_operator, z_profile)
from vqephase.statevec import StateVector


def test_tfim_terms():
    h = build_tfim(3, 0.0)
    assert len(h) == 3
    strings = {s for _, s in h.terms}
    assert strings == {((0, "Z"), (1, "Z")), ((1, "Z"), (2, "Z")), ((0, "Z"), (2, "Z"))}
    assert len(build_tfim(4, 0.5, "periodic")) == 8
    assert len(build_tfim(4, 0.5, "open")) == 7


def test_tfim_dense_oracle():
    h = build_tfim(4, 1.0)
    np.testing.assert_allclose(oracles.dense_hamiltonian(h), oracles.tfim_dense(4, 1.0), atol=1e-14)
    # frozen from a dense eigensolver at dimension 16
    assert ground_energy(h) == pytest.approx(-5.226251859505501, abs=1e-10)


def test_cluster_ising_terms():
    h = build_cluster_ising(5, 0.3, -1.0)
    zxz = [s for c, s in h.terms if len(s) == 3]
    assert len(zxz) == 3 and len(h) == 3 + 5 + 4


def test_cluster_yy_ring_terms():
    h = build_cluster_yy(5, 0.5)
    assert ((0, "Z"), (1, "X"), (4, "X")) in {s for _, s in h.terms}
    assert len(h) == 10


def test_small_chain_rejected():
    with pytest.raises(ModelError):
        build_tfim(2, 1.0)
    with pytest.raises(ModelError):
        HamiltonianSpec("tfim", 4, {"h1": 1.0})
    with pytest.raises(ModelError):
        HamiltonianSpec("cluster_yy", 5, {"lambda": 1.0}, "open")


def test_penalty_selects_branch():
    gs = exact_ground(build_tfim(3, 0.0), 0.01)
    assert gs.energy == pytest.approx(-3.01, abs=1e-12)
    assert gs.energy_unpenalized == pytest.approx(-3.0, abs=1e-12)
    # +0.01 Z_0 favours Z_0 = -1, ie the all-ones basis state
    assert abs(gs.state.amplitudes[7]) == pytest.approx(1.0)


@pytest.mark.parametrize("n", [8, 10])
def test_lanczos_matches_dense(n):
    for h in (build_tfim(n, 1.0), build_cluster_ising(n, 0.6, -0.4), build_cluster_yy(n, 1.3)):
        d = exact_ground(h, method="dense")
        lz = exact_ground(h, method="lanczos")
        assert lz.energy == pytest.approx(d.energy, abs=1e-9)
        assert abs(np.vdot(lz.state.amplitudes, d.state.amplitudes)) == pytest.approx(1.0, abs=1e-7)


def test_tfim10_frozen():
    # dense eigensolver at dimension 1024
    assert ground_energy(build_tfim(10, 1.0), method="lanczos") == pytest.approx(
        -12.784906442999308, abs=1e-9)


def test_lanczos_on_diagonal_operator():
    d = np.arange(50, dtype=float)
    e, v, _ = lanczos_ground(lambda x: d * x, 50)
    assert e == pytest.approx(0.0, abs=1e-9)


def test_observables_on_basis_states():
    up = StateVector.zero(5)
    assert magnetization(up) == 1.0
    s = StateVector.basis(5, 0b00101)
    np.testing.assert_allclose(z_profile(s), [-1, 1, -1, 1, 1])
    assert site_z(s, 0) == -1.0
    with pytest.raises(ModelError):
        site_z(s, 5)


def test_string_order_operator_form():
    op = string_order_operator(7)
    (coef, string), = op.terms
    assert [a for _, a in string] == list("XYZZZYX")


def test_string_order_cluster_limit():
    gs = exact_ground(build_cluster_yy(7, 0.0), 0.0)
    assert abs(string_order(gs.state)) == pytest.approx(1.0, abs=1e-9)


def test_string_order_finite_size_at_lambda_two():
    # dense oracle at n=7; the finite ring is far from the thermodynamic value of zero
    gs = exact_ground(build_cluster_yy(7, 2.0), 0.0)
    assert string_order(gs.state) == pytest.approx(0.27622559278674186, abs=1e-8)


def test_energy_discrepancy_zero_for_exact_state():
    h = build_tfim(6, 0.7)
    gs = exact_ground(h, 0.0)
    from vqephase.statevec import expectation

    assert energy_discrepancy(expectation(gs.state, h), h) == pytest.approx(0.0, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 2.0), st.integers(0, 2**31 - 1))
def test_variational_bound(h, seed):
    from vqephase.ansatz import tfim_ansatz
    from vqephase.statevec import expectation, run_circuit

    ham = build_tfim(4, h)
    t = tfim_ansatz(4, 1)
    th = np.random.default_rng(seed).uniform(-np.pi, np.pi, t.n_params)
    assert expectation(run_circuit(t, th), ham) >= ground_energy(ham) - 1e-10
