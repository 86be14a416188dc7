"""Adam/GD minimisation of circuit energies and shared-init parameter sweeps.

A sweep optimises every grid point from the same initial angles. Points are
simulated together as one batch of state vectors; each point keeps its own
optimizer state and stops independently once its gradient is small enough.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, models
from .ansatz import CircuitTemplate, ParameterVector
from .statevec import PauliOperator, PauliSum, StateVector, energy_and_grad_batch, energy_batch, \
    run_batch

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "gd")
INITS = ("uniform_pi", "constant")


class VqeError(RuntimeError):
    pass


@dataclass
class VqeConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.01
    max_iters: int = 2000
    grad_tol: float = 1e-6
    seed: int = 0
    init: str = "uniform_pi"
    init_value: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol < 0:
            raise ValueError("grad_tol must be >= 0")

    def initial_theta(self, template: CircuitTemplate) -> ParameterVector:
        if self.init == "constant":
            values = np.full(template.n_params, float(self.init_value))
        else:
            values = np.random.default_rng(self.seed).uniform(-np.pi, np.pi, template.n_params)
        return ParameterVector(values, template.layout_id)


@dataclass
class VqeRecord:
    x: dict
    theta_star: np.ndarray
    final_energy: float
    iters_used: int
    converged: bool
    exact_energy: float | None = None
    fidelity: float | None = None
    error: str | None = None
    generated: bool = False
    label: int | None = None
    history: np.ndarray | None = field(default=None, repr=False)


def theta_hash(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()[:16]


@dataclass
class SweepDataset:
    metadata: dict
    records: list

    @property
    def layout_id(self) -> str:
        return self.metadata["layout_id"]

    def thetas(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.metadata.get("n_params", 0)))
        return np.vstack([r.theta_star for r in self.records])

    def xs(self, name: str | None = None) -> np.ndarray:
        name = name or self.metadata["grid"]["scan"]
        return np.array([r.x[name] for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)


def _adam_minimize(template: CircuitTemplate, op: PauliOperator, theta0: np.ndarray,
                   cfg: VqeConfig, keep_history: bool = False):
    B = op.batch
    d = template.n_params
    theta = np.tile(np.asarray(theta0, dtype=np.float64), (B, 1))
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    active = np.arange(B)
    iters = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    errors: list[str | None] = [None] * B
    history = np.full((B, cfg.max_iters), np.nan) if keep_history else None
    if d == 0:
        converged[:] = True
        active = active[:0]
    for it in range(1, cfg.max_iters + 1):
        if active.size == 0:
            break
        energies, grads = energy_and_grad_batch(template, theta[active], op, rows=active)
        if keep_history:
            history[active, it - 1] = energies
        bad = ~(np.isfinite(energies) & np.all(np.isfinite(grads), axis=1))
        for b in active[bad]:
            errors[b] = f"non-finite energy at iteration {it}"
            logger.error("point %d: %s", b, errors[b])
        small = np.max(np.abs(grads), axis=1, initial=0.0) < cfg.grad_tol
        converged[active[small & ~bad]] = True
        step = ~(small | bad)
        rows, g = active[step], grads[step]
        if cfg.optimizer == "adam":
            m[rows] = cfg.beta1 * m[rows] + (1 - cfg.beta1) * g
            v[rows] = cfg.beta2 * v[rows] + (1 - cfg.beta2) * g * g
            mhat = m[rows] / (1 - cfg.beta1 ** it)
            vhat = v[rows] / (1 - cfg.beta2 ** it)
            theta[rows] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
        else:
            theta[rows] -= cfg.learning_rate * g
        iters[rows] = it
        active = rows
    return theta, iters, converged, errors, history


def minimize_batch(template: CircuitTemplate, hams: list, theta0, cfg: VqeConfig,
                   keep_history: bool = False) -> list:
    """Optimise ``theta0`` independently against each Hamiltonian in ``hams``."""
    values = np.asarray(getattr(theta0, "values", theta0), dtype=np.float64)
    if values.shape != (template.n_params,):
        raise VqeError(f"theta0 has shape {values.shape}, template needs {template.n_params}")
    if not hams:
        return []
    for h in hams:
        if h.n_qubits != template.n_qubits:
            raise VqeError("Hamiltonian and template qubit counts differ")
    op = PauliOperator(hams)
    theta, iters, converged, errors, history = _adam_minimize(template, op, values, cfg,
                                                              keep_history)
    final = energy_batch(template, theta, op)
    out = []
    for b in range(len(hams)):
        if errors[b] is None and not math.isfinite(final[b]):
            errors[b] = "non-finite final energy"
        out.append(VqeRecord(
            x={}, theta_star=theta[b].copy(), final_energy=float(final[b]),
            iters_used=int(iters[b]), converged=bool(converged[b]), error=errors[b],
            history=None if history is None else history[b, : max(int(iters[b]), 1)],
        ))
    return out


def minimize(template: CircuitTemplate, h: PauliSum, theta0, cfg: VqeConfig,
             keep_history: bool = False) -> VqeRecord:
    rec = minimize_batch(template, [h], theta0, cfg, keep_history)[0]
    if rec.error:
        raise VqeError(rec.error)
    return rec


def final_states(template: CircuitTemplate, thetas: np.ndarray) -> np.ndarray:
    return run_batch(template, np.atleast_2d(thetas))


def attach_exact(records: list, hams: list, template: CircuitTemplate,
                 penalty: float = models.DEFAULT_PENALTY) -> None:
    """Fill ``exact_energy`` (unpenalised) and ``fidelity`` (vs penalised ground state)."""
    for rec, h in zip(records, hams):
        if rec.error:
            continue
        psi = StateVector(template.n_qubits, final_states(template, rec.theta_star)[0])
        gs = models.exact_ground(h, penalty)
        rec.exact_energy = models.ground_energy(h) if penalty else gs.energy
        rec.fidelity = float(abs(np.vdot(gs.state.amplitudes, psi.amplitudes)) ** 2)


def sweep(family: str, grid: list, template: CircuitTemplate, cfg: VqeConfig, *,
          boundary: str = "periodic", with_exact: bool = False,
          penalty: float = models.DEFAULT_PENALTY, chunk_size: int = 512,
          ansatz: dict | None = None, grid_spec: dict | None = None) -> SweepDataset:
    """Run one VQE per grid point from a single shared initialisation.

    ``grid`` is an ordered list of parameter dicts for ``family``; the optional
    ``grid_spec`` is echoed into the metadata.
    """
    theta0 = cfg.initial_theta(template)
    specs = [models.HamiltonianSpec(family, template.n_qubits, dict(x), boundary) for x in grid]
    hams = [s.build() for s in specs]
    records: list[VqeRecord] = []
    for start in range(0, len(hams), chunk_size):
        chunk = hams[start:start + chunk_size]
        recs = minimize_batch(template, chunk, theta0, cfg)
        if with_exact:
            attach_exact(recs, chunk, template, penalty)
        for rec, x in zip(recs, grid[start:start + chunk_size]):
            rec.x = {k: float(v) for k, v in x.items()}
        records.extend(recs)
        logger.info("sweep: %d/%d points done", len(records), len(hams))
    names = models.FAMILIES[family]
    meta = {
        "family": family,
        "n_qubits": template.n_qubits,
        "boundary": boundary,
        "layout_id": template.layout_id,
        "n_params": template.n_params,
        "ansatz": ansatz or {},
        "grid": dict(grid_spec or {"scan": names[-1]}),
        "vqe": asdict(cfg),
        "theta0_hash": theta_hash(theta0.values),
        "with_exact": bool(with_exact),
        "penalty": penalty if with_exact else None,
        "qubit_order": "little-endian",
        "code_version": __version__,
    }
    meta["grid"].setdefault("scan", names[-1])
    meta["grid"]["n_points"] = len(grid)
    return SweepDataset(meta, records)


def linear_grid(start: float, stop: float, step: float) -> np.ndarray:
    """Closed grid ``start, start+step, ..., stop`` without float drift."""
    n = int(round((stop - start) / step))
    return np.round(start + step * np.arange(n + 1), 12)


def make_grid(family: str, scan: str, values, fixed: dict | None = None) -> list:
    fixed = dict(fixed or {})
    names = models.FAMILIES[family]
    if scan not in names:
        raise ValueError(f"{family} has no parameter {scan!r}")
    grid = []
    for v in values:
        x = dict(fixed)
        x[scan] = float(v)
        if set(x) != set(names):
            raise ValueError(f"grid points need exactly {names}, got {sorted(x)}")
        grid.append({k: x[k] for k in names})
    return grid
