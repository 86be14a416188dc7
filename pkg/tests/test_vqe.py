import numpy as np
import pytest

from vqephase.ansatz import CircuitTemplate, cluster_ansatz, tfim_ansatz
from vqephase.models import build_tfim, ground_energy
from vqephase.statevec import Gate, PauliSum
from vqephase.vqe import (VqeConfig, VqeError, linear_grid, make_grid, minimize, minimize_batch,
                          sweep, theta_hash)

RX = CircuitTemplate.from_gates(1, [Gate("RX", (0,), 0)])


def test_already_at_minimum():
    rec = minimize(RX, PauliSum(1, ((-1.0, ((0, "Z"),)),)), [0.0], VqeConfig())
    assert rec.converged and rec.iters_used == 0
    assert rec.final_energy == pytest.approx(-1.0)


def test_cosine_landscape():
    # E(theta) = cos(theta), minimum at +-pi
    rec = minimize(RX, PauliSum(1, ((1.0, ((0, "Z"),)),)), [0.5],
                   VqeConfig(learning_rate=0.05, max_iters=3000))
    assert rec.final_energy == pytest.approx(-1.0, abs=1e-8)
    assert abs(abs(rec.theta_star[0]) - np.pi) < 1e-3


def test_gd_optimizer():
    rec = minimize(RX, PauliSum(1, ((1.0, ((0, "Z"),)),)), [0.5],
                   VqeConfig(optimizer="gd", learning_rate=0.5, max_iters=500))
    assert rec.final_energy == pytest.approx(-1.0, abs=1e-8)


def test_config_validation():
    for kw in (dict(learning_rate=0), dict(max_iters=0), dict(grad_tol=-1), dict(optimizer="sgd"),
               dict(init="normal")):
        with pytest.raises(ValueError):
            VqeConfig(**kw)


def test_batch_matches_single_runs():
    t = tfim_ansatz(3, 1)
    cfg = VqeConfig(max_iters=150, seed=3)
    hams = [build_tfim(3, h) for h in (0.3, 1.4)]
    th0 = cfg.initial_theta(t)
    batch = minimize_batch(t, hams, th0, cfg)
    for rec, h in zip(batch, hams):
        single = minimize(t, h, th0, cfg)
        np.testing.assert_allclose(rec.theta_star, single.theta_star, atol=1e-12)


def test_best_so_far_nonincreasing_and_variational():
    t = tfim_ansatz(4, 1)
    h = build_tfim(4, 0.8)
    rec = minimize(t, h, VqeConfig(seed=1).initial_theta(t), VqeConfig(max_iters=300),
                   keep_history=True)
    best = np.minimum.accumulate(rec.history)
    assert np.all(np.diff(best) <= 0)
    assert rec.final_energy >= ground_energy(h) - 1e-9


def test_non_finite_init_rejected():
    with pytest.raises(VqeError):
        minimize(RX, PauliSum(1, ((1.0, ((0, "Z"),)),)), [0.0, 1.0], VqeConfig())


def test_sweep_shared_init_and_determinism():
    t = cluster_ansatz(4, 2)
    cfg = VqeConfig(max_iters=50, init="constant", init_value=1.0)
    grid = make_grid("cluster_ising", "h2", [-1.0, 0.0, 1.0], {"h1": 0.5})
    a = sweep("cluster_ising", grid, t, cfg, with_exact=True)
    b = sweep("cluster_ising", grid, t, cfg, with_exact=True)
    assert a.metadata["theta0_hash"] == theta_hash(np.ones(t.n_params))
    assert all(r.theta_star.tobytes() == s.theta_star.tobytes() for r, s in zip(a.records, b.records))
    assert [r.x["h2"] for r in a.records] == [-1.0, 0.0, 1.0]
    for r in a.records:
        assert r.final_energy >= r.exact_energy - 1e-9
        assert 0.0 <= r.fidelity <= 1.0 + 1e-12


def test_empty_sweep():
    ds = sweep("tfim", [], tfim_ansatz(3, 1), VqeConfig())
    assert len(ds) == 0 and ds.metadata["layout_id"] == tfim_ansatz(3, 1).layout_id


def test_grids():
    assert len(linear_grid(0, 2, 0.001)) == 2001
    assert len(linear_grid(-2.3, 1.6, 0.001)) == 3901
    assert len(linear_grid(-2.3, 1.6, 0.01)) == 391
    g = linear_grid(0, 2, 0.01)
    assert g[0] == 0.0 and g[-1] == 2.0 and g[100] == 1.0
    with pytest.raises(ValueError):
        make_grid("tfim", "lambda", [0.1])
