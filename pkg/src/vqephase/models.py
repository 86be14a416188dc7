"""Spin-chain Hamiltonians, exact ground states and validation observables."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .statevec import PauliOperator, PauliSum, StateVector

logger = logging.getLogger(__name__)

FAMILIES = {
    "tfim": ("h",),
    "cluster_ising": ("h1", "h2"),
    "cluster_yy": ("lambda",),
}
BOUNDARIES = ("open", "periodic")
DEFAULT_PENALTY = 0.01


class ModelError(ValueError):
    pass


class LanczosError(RuntimeError):
    pass


@dataclass(frozen=True)
class HamiltonianSpec:
    family: str
    n_qubits: int
    params: dict = field(default_factory=dict)
    boundary: str = "periodic"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}; expected one of {sorted(FAMILIES)}")
        _check_n(self.n_qubits)
        missing = set(FAMILIES[self.family]) - set(self.params)
        extra = set(self.params) - set(FAMILIES[self.family])
        if missing or extra:
            raise ModelError(
                f"{self.family} takes params {FAMILIES[self.family]}, got {sorted(self.params)}"
            )
        if self.boundary not in BOUNDARIES:
            raise ModelError(f"boundary must be one of {BOUNDARIES}")
        if self.family == "cluster_yy" and self.boundary != "periodic":
            raise ModelError("cluster_yy is defined on a ring only")

    def build(self) -> PauliSum:
        p = self.params
        if self.family == "tfim":
            return build_tfim(self.n_qubits, p["h"], self.boundary)
        if self.family == "cluster_ising":
            return build_cluster_ising(self.n_qubits, p["h1"], p["h2"])
        return build_cluster_yy(self.n_qubits, p["lambda"])


def _check_n(n: int) -> None:
    if int(n) != n or n < 3:
        raise ModelError(f"chain needs at least 3 sites, got {n}")


def build_tfim(n: int, h: float, boundary: str = "periodic") -> PauliSum:
    """``H = -sum Z_i Z_{i+1} - h sum X_i``."""
    _check_n(n)
    if boundary not in BOUNDARIES:
        raise ModelError(f"boundary must be one of {BOUNDARIES}")
    n_bonds = n if boundary == "periodic" else n - 1
    terms = [(-1.0, ((i, "Z"), ((i + 1) % n, "Z"))) for i in range(n_bonds)]
    terms += [(-h, ((i, "X"),)) for i in range(n)]
    return PauliSum(n, tuple(terms))


def build_cluster_ising(n: int, h1: float, h2: float) -> PauliSum:
    """Open chain ``-sum ZXZ - h1 sum X - h2 sum XX``."""
    _check_n(n)
    terms = [(-1.0, ((i, "Z"), (i + 1, "X"), (i + 2, "Z"))) for i in range(n - 2)]
    terms += [(-h1, ((i, "X"),)) for i in range(n)]
    terms += [(-h2, ((i, "X"), (i + 1, "X"))) for i in range(n - 1)]
    return PauliSum(n, tuple(terms))


def build_cluster_yy(n: int, lam: float) -> PauliSum:
    """Ring ``sum (X_{i-1} Z_i X_{i+1} + lam Y_i Y_{i+1})``."""
    _check_n(n)
    terms = [(1.0, (((i - 1) % n, "X"), (i, "Z"), ((i + 1) % n, "X"))) for i in range(n)]
    terms += [(lam, ((i, "Y"), ((i + 1) % n, "Y"))) for i in range(n)]
    return PauliSum(n, tuple(terms))


# ---------------------------------------------------------------------------
# Exact ground states
# ---------------------------------------------------------------------------


@dataclass
class GroundState:
    energy: float
    energy_unpenalized: float
    state: StateVector
    penalty: float
    method: str
    iterations: int = 0


def with_penalty(h: PauliSum, penalty_coeff: float) -> PauliSum:
    return h + PauliSum(h.n_qubits, ((penalty_coeff, ((0, "Z"),)),))


def lanczos_ground(matvec, dim: int, *, real: bool = True, krylov_dim: int = 64,
                   tol: float = 1e-10, max_restarts: int = 500, seed: int = 0):
    """Lowest eigenpair of a Hermitian operator given only ``matvec``.

    Fully reorthogonalised Lanczos restarted from the current Ritz vector until
    the residual norm drops below ``tol * max(1, |E|)``.
    """
    rng = np.random.default_rng(seed)
    dtype = np.float64 if real else np.complex128
    v = rng.standard_normal(dim)
    if not real:
        v = v + 1j * rng.standard_normal(dim)
    v = v.astype(dtype)
    v /= np.linalg.norm(v)
    m = min(krylov_dim, dim)
    basis = np.zeros((m, dim), dtype=dtype)
    for restart in range(max_restarts):
        alpha = np.zeros(m)
        beta = np.zeros(m)
        basis[0] = v
        k_used = m
        for k in range(m):
            w = matvec(basis[k])
            alpha[k] = np.vdot(basis[k], w).real
            # two passes of classical Gram-Schmidt against the whole basis
            for _ in range(2):
                w -= basis[: k + 1].T @ (basis[: k + 1].conj() @ w)
            beta[k] = np.linalg.norm(w)
            if k == m - 1 or beta[k] < 1e-13:
                k_used = k + 1
                break
            basis[k + 1] = w / beta[k]
        evals, evecs = eigh_tridiagonal(alpha[:k_used], beta[: k_used - 1],
                                        select="i", select_range=(0, 0))
        energy = float(evals[0])
        s = evecs[:, 0]
        v = s @ basis[:k_used]
        v /= np.linalg.norm(v)
        resid = np.linalg.norm(matvec(v) - energy * v)
        if resid < tol * max(1.0, abs(energy)):
            return energy, v, restart + 1
    raise LanczosError(f"Lanczos did not converge in {max_restarts} restarts (residual {resid:.3e})")


def exact_ground(h: PauliSum, penalty_coeff: float = DEFAULT_PENALTY, *, method: str = "auto",
                 krylov_dim: int = 64, tol: float = 1e-10, max_restarts: int = 500,
                 seed: int = 0) -> GroundState:
    """Lowest eigenpair of ``h + penalty_coeff * Z_0``.

    ``method`` is ``"dense"``, ``"lanczos"`` or ``"auto"`` (dense up to 10 qubits).
    """
    n = h.n_qubits
    if n > 16:
        raise ModelError("exact diagonalisation is limited to 16 qubits")
    if method == "auto":
        method = "dense" if n <= 10 else "lanczos"
    hp = with_penalty(h, penalty_coeff) if penalty_coeff else h
    op = PauliOperator([hp])
    iterations = 0
    if method == "dense":
        evals, evecs = np.linalg.eigh(op.dense(0))
        energy, vec = float(evals[0]), evecs[:, 0]
    elif method == "lanczos":
        def matvec(x):
            return op.apply(x[None, :])[0]

        energy, vec, iterations = lanczos_ground(
            matvec, 1 << n, real=op.is_real, krylov_dim=krylov_dim, tol=tol,
            max_restarts=max_restarts, seed=seed)
    else:
        raise ModelError(f"unknown method {method!r}")
    vec = np.asarray(vec, dtype=np.complex128)
    # fix the global phase: largest amplitude real positive
    k = int(np.argmax(np.abs(vec)))
    vec = vec * (abs(vec[k]) / vec[k])
    state = StateVector(n, vec)
    e_plain = float(PauliOperator([h]).expectation(vec[None, :])[0]) if h.terms else 0.0
    return GroundState(energy, e_plain, state, float(penalty_coeff), method, iterations)


def ground_energy(h: PauliSum, **kwargs) -> float:
    """Unpenalised ground energy (no degeneracy lifting)."""
    return exact_ground(h, 0.0, **kwargs).energy


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------


def _z_profile(amps: np.ndarray, n: int) -> np.ndarray:
    probs = np.abs(amps) ** 2
    idx = np.arange(probs.shape[-1])
    return np.stack([probs @ (1.0 - 2.0 * ((idx >> i) & 1)) for i in range(n)], axis=-1)


def site_z(state: StateVector, i: int) -> float:
    if not 0 <= i < state.n_qubits:
        raise ModelError(f"site {i} out of range")
    return float(_z_profile(state.amplitudes, state.n_qubits)[i])


def z_profile(state: StateVector) -> np.ndarray:
    return _z_profile(state.amplitudes, state.n_qubits)


def magnetization(state: StateVector) -> float:
    return float(np.mean(_z_profile(state.amplitudes, state.n_qubits)))


def string_order_operator(n: int) -> PauliSum:
    """``X_0 Y_1 Z_2 ... Z_{n-3} Y_{n-2} X_{n-1}``."""
    if n < 5:
        raise ModelError("string order needs at least 5 sites")
    string = [(0, "X"), (1, "Y")] + [(k, "Z") for k in range(2, n - 2)] + [(n - 2, "Y"), (n - 1, "X")]
    return PauliSum(n, ((1.0, tuple(string)),))


def string_order(state: StateVector) -> float:
    op = PauliOperator([string_order_operator(state.n_qubits)])
    return float(op.expectation(state.amplitudes[None, :])[0])


def energy_discrepancy(vqe_energy: float, h: PauliSum, *, exact_energy: float | None = None,
                       **kwargs) -> float:
    """``vqe_energy`` minus the unpenalised exact ground energy."""
    if exact_energy is None:
        exact_energy = ground_energy(h, **kwargs)
    return float(vqe_energy - exact_energy)
