import numpy as np
import pytest

import oracles
from vqephase.ansatz import (ParameterVector, build_ansatz, cluster_ansatz, flatten, tfim_ansatz,
                             unflatten)
from vqephase.statevec import CircuitError, run_circuit


@pytest.mark.parametrize("n,blocks,count", [(12, 4, 288), (16, 4, 384), (11, 11, 726), (8, 4, 192)])
def test_tfim_param_count(n, blocks, count):
    assert tfim_ansatz(n, blocks).n_params == count


@pytest.mark.parametrize("n,blocks,count", [(15, 15, 240), (3, 1, 6), (9, 9, 90), (7, 7, 56)])
def test_cluster_param_count(n, blocks, count):
    assert cluster_ansatz(n, blocks).n_params == count


def test_tfim_block_structure():
    t = tfim_ansatz(4, 1)
    kinds = [g.kind for g in t.gates]
    assert kinds[:12] == ["RZ"] * 4 + ["RX"] * 4 + ["RZ"] * 4
    cz = [g.qubits for g in t.gates if g.kind == "CZ"]
    assert cz == [(0, 1), (2, 3), (1, 2)]


def test_cluster_alternating_pairs():
    t = cluster_ansatz(5, 2)
    cz = [g.qubits for g in t.gates if g.kind == "CZ"]
    assert cz == [(0, 1), (2, 3), (1, 2), (3, 4)]


def test_cluster_matches_matrix_chain():
    t = cluster_ansatz(3, 1)
    th = np.ones(t.n_params)
    np.testing.assert_allclose(run_circuit(t, th).amplitudes, oracles.circuit_state(t, th),
                               atol=1e-14)


def test_tfim_matches_matrix_chain():
    t = tfim_ansatz(3, 2)
    th = np.random.default_rng(0).uniform(-np.pi, np.pi, t.n_params)
    np.testing.assert_allclose(run_circuit(t, th).amplitudes, oracles.circuit_state(t, th),
                               atol=1e-13)


def test_layout_id_distinguishes_layouts():
    ids = {tfim_ansatz(4, 1).layout_id, tfim_ansatz(4, 2).layout_id, cluster_ansatz(4, 1).layout_id}
    assert len(ids) == 3
    assert tfim_ansatz(4, 1).layout_id == tfim_ansatz(4, 1).layout_id


def test_flatten_round_trip_and_mismatch():
    t = tfim_ansatz(3, 1)
    v = np.arange(t.n_params, dtype=float)
    pv = unflatten(v, t)
    np.testing.assert_array_equal(flatten(pv, t), v)
    with pytest.raises(CircuitError):
        flatten(ParameterVector(v, "deadbeef"), t)
    with pytest.raises(CircuitError):
        unflatten(v[:-1], t)


@pytest.mark.parametrize("args", [("tfim", 1, 1), ("tfim", 3, 0), ("nope", 3, 1)])
def test_bad_sizes(args):
    with pytest.raises(CircuitError):
        build_ansatz(*args)
