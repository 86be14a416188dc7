"""Dense state-vector simulation of rotation/CZ circuits.

Qubit 0 is the least-significant bit of the amplitude index. Rotations follow
``R_a(theta) = exp(-i theta sigma_a / 2)``.

Every kernel here works on a *batch* of states stored as a ``(B, 2**n)`` array
so that a whole parameter sweep can be simulated with one pass over the gate
list. The single-state public functions are thin wrappers around batches of
size one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import _kernels

if TYPE_CHECKING:  # pragma: no cover
    from .ansatz import CircuitTemplate

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("CZ",)
AXES = ("X", "Y", "Z")


class CircuitError(ValueError):
    """Invalid gate, circuit or operator arguments."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise CircuitError(
                f"expected {1 << self.n_qubits} amplitudes, got {self.amplitudes.shape}"
            )

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(1 << n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "StateVector":
        amps = np.zeros(1 << n_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amplitudes.copy())


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple
    param_index: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if self.kind == "CZ":
            if len(self.qubits) != 2 or self.qubits[0] == self.qubits[1]:
                raise CircuitError("CZ needs two distinct qubits")
            if self.param_index is not None:
                raise CircuitError("CZ takes no parameter")
        else:
            if len(self.qubits) != 1:
                raise CircuitError(f"{self.kind} acts on exactly one qubit")
            if self.param_index is None:
                raise CircuitError(f"{self.kind} needs a param_index")
        if any(q < 0 for q in self.qubits):
            raise CircuitError("negative qubit index")

    @property
    def is_rotation(self) -> bool:
        return self.kind != "CZ"

    @property
    def axis(self) -> str:
        return self.kind[1]


@dataclass(frozen=True)
class PauliSum:
    """Real-weighted sum of Pauli strings.

    ``terms`` holds ``(coefficient, ((site, axis), ...))`` pairs with sites
    strictly increasing inside each string. Zero coefficients are dropped at
    construction.
    """

    n_qubits: int
    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.n_qubits < 1:
            raise CircuitError("n_qubits must be positive")
        clean = []
        for coef, string in self.terms:
            coef = float(coef)
            if not math.isfinite(coef):
                raise CircuitError("non-finite coefficient")
            if coef == 0.0:
                continue
            ops = tuple(sorted((int(s), str(a).upper()) for s, a in string))
            sites = [s for s, _ in ops]
            if len(set(sites)) != len(sites):
                raise CircuitError(f"repeated site in Pauli string {string!r}")
            for s, a in ops:
                if a not in AXES:
                    raise CircuitError(f"unknown Pauli axis {a!r}")
                if not 0 <= s < self.n_qubits:
                    raise CircuitError(f"site {s} out of range for {self.n_qubits} qubits")
            clean.append((coef, ops))
        object.__setattr__(self, "terms", tuple(clean))

    @classmethod
    def from_terms(cls, n_qubits: int, terms: Iterable) -> "PauliSum":
        return cls(n_qubits, tuple(terms))

    def __len__(self):
        return len(self.terms)

    def __mul__(self, c: float) -> "PauliSum":
        return PauliSum(self.n_qubits, tuple((c * k, s) for k, s in self.terms))

    __rmul__ = __mul__

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if other.n_qubits != self.n_qubits:
            raise CircuitError("qubit count mismatch")
        return PauliSum(self.n_qubits, self.terms + other.terms)

    def label(self, string) -> str:
        return " ".join(f"{a}{s}" for s, a in string) or "I"

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "terms": [[c, [[s, a] for s, a in string]] for c, string in self.terms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PauliSum":
        return cls(int(d["n_qubits"]), tuple((c, tuple(map(tuple, s))) for c, s in d["terms"]))


# ---------------------------------------------------------------------------
# Pauli operators in bit-mask form
# ---------------------------------------------------------------------------


def _masks(string) -> tuple[int, int, int]:
    flip = phase = ny = 0
    for site, axis in string:
        bit = 1 << site
        if axis in ("X", "Y"):
            flip |= bit
        if axis in ("Y", "Z"):
            phase |= bit
        if axis == "Y":
            ny += 1
    return flip, phase, ny


def _parity(indices: np.ndarray, mask: int) -> np.ndarray:
    """(-1) ** popcount(indices & mask) as float64."""
    x = indices & mask
    par = np.zeros_like(x)
    while mask:
        low = mask & -mask
        par ^= (x & low) != 0
        mask ^= low
    return 1.0 - 2.0 * par


class PauliOperator:
    """A batch of Pauli sums sharing a qubit count, compiled for fast action.

    Strings sharing a flip mask are merged, so applying ``H`` costs one gather
    and one multiply per distinct flip mask:
    ``(P psi)[j] = (-i)**nY * (-1)**popcount(j & phase_mask) * psi[j ^ flip_mask]``.
    """

    def __init__(self, hams: Sequence[PauliSum]):
        hams = list(hams)
        if not hams:
            raise CircuitError("need at least one PauliSum")
        n = hams[0].n_qubits
        if any(h.n_qubits != n for h in hams):
            raise CircuitError("all operators in a batch must share n_qubits")
        self.n_qubits = n
        self.batch = len(hams)
        dim = 1 << n
        idx = np.arange(dim, dtype=np.int64)
        groups: dict[int, dict] = {}
        for b, h in enumerate(hams):
            for coef, string in h.terms:
                flip, phase, ny = _masks(string)
                g = groups.setdefault(flip, {})
                g.setdefault((phase, ny), np.zeros(self.batch))[b] += coef
        self.flips = []
        self.diags = []
        self.is_real = True
        for flip in sorted(groups):
            diag = np.zeros((self.batch, dim), dtype=np.complex128)
            for (phase, ny), coefs in groups[flip].items():
                diag += np.outer(coefs * (-1j) ** ny, _parity(idx, phase))
            if np.all(diag.imag == 0):
                diag = diag.real.copy()
            else:
                self.is_real = False
            self.flips.append(flip)
            self.diags.append(diag)
        self._perm = [idx ^ f if f else None for f in self.flips]

    def apply(self, psi: np.ndarray, rows=None) -> np.ndarray:
        """Return ``H_b psi_b`` for every batch row ``b`` (or the chosen rows)."""
        out = np.zeros(psi.shape, dtype=np.result_type(psi.dtype, *[d.dtype for d in self.diags]))
        for diag, perm in zip(self.diags, self._perm):
            d = diag if rows is None else diag[rows]
            out += d * (psi if perm is None else psi[:, perm])
        return out

    def expectation(self, psi: np.ndarray, rows=None) -> np.ndarray:
        hpsi = self.apply(psi, rows)
        return np.einsum("bj,bj->b", psi.conj(), hpsi).real

    def dense(self, b: int = 0) -> np.ndarray:
        """Dense matrix of operator ``b`` (row k of the product is ``H e_k``)."""
        eye = np.eye(1 << self.n_qubits, dtype=np.complex128)
        out = np.zeros_like(eye)
        for diag, perm in zip(self.diags, self._perm):
            out += diag[b] * (eye if perm is None else eye[:, perm])
        return out.T


# ---------------------------------------------------------------------------
# Batched gate kernels (in place on (B, 2**n) arrays)
# ---------------------------------------------------------------------------


def _pair_view(psi: np.ndarray, n: int, q: int):
    v = psi.reshape(psi.shape[0], 1 << (n - q - 1), 2, 1 << q)
    return v[:, :, 0, :], v[:, :, 1, :]


def _rotate(psi: np.ndarray, n: int, q: int, axis: str, theta) -> None:
    if _kernels.AVAILABLE:
        th = np.ascontiguousarray(np.broadcast_to(
            np.asarray(theta, dtype=np.float64).reshape(-1), (psi.shape[0],)))
        _kernels.apply_2x2(psi, q, *_kernels.rotation_entries(axis, th, not np.iscomplexobj(psi)))
        return
    _rotate_numpy(psi, n, q, axis, theta)


def _rotate_numpy(psi: np.ndarray, n: int, q: int, axis: str, theta) -> None:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 1, 1)
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    a0, a1 = _pair_view(psi, n, q)
    if axis == "Z":
        ph = c - 1j * s
        a0 *= ph
        a1 *= ph.conj()
        return
    b0 = a0.copy()
    if axis == "X":
        a0 *= c
        a0 -= 1j * s * a1
        a1 *= c
        a1 -= 1j * s * b0
    else:  # Y
        a0 *= c
        a0 -= s * a1
        a1 *= c
        a1 += s * b0


def _cz(psi: np.ndarray, n: int, q1: int, q2: int) -> None:
    lo, hi = sorted((q1, q2))
    v = psi.reshape(psi.shape[0], 1 << (n - hi - 1), 2, 1 << (hi - lo - 1), 2, 1 << lo)
    v[:, :, 1, :, 1, :] *= -1


def _sigma_overlap(lam: np.ndarray, mu: np.ndarray, n: int, q: int, axis: str) -> np.ndarray:
    """Im <lam| sigma_axis(q) |mu> per batch row."""
    if _kernels.AVAILABLE:
        out = np.empty(lam.shape[0])
        _kernels.sigma_overlap(lam, mu, q, _kernels.AXIS_CODE[axis], out)
        return out
    return _sigma_overlap_numpy(lam, mu, n, q, axis)


def _sigma_overlap_numpy(lam: np.ndarray, mu: np.ndarray, n: int, q: int, axis: str) -> np.ndarray:
    l0, l1 = _pair_view(lam, n, q)
    m0, m1 = _pair_view(mu, n, q)
    B = lam.shape[0]
    if axis == "X":
        return (_rowdot(l0, m1, B) + _rowdot(l1, m0, B)).imag
    if axis == "Y":
        return (_rowdot(l1, m0, B) - _rowdot(l0, m1, B)).real
    return (_rowdot(l0, m0, B) - _rowdot(l1, m1, B)).imag


def _rowdot(a: np.ndarray, b: np.ndarray, B: int) -> np.ndarray:
    return np.einsum("bij,bij->b", a.conj(), b)


def _check_gate(gate: Gate, n: int) -> None:
    if any(q >= n for q in gate.qubits):
        raise CircuitError(f"gate {gate.kind}{gate.qubits} exceeds {n} qubits")


def _apply(psi: np.ndarray, n: int, gate: Gate, theta=None) -> None:
    if gate.kind == "CZ":
        _cz(psi, n, *gate.qubits)
    else:
        _rotate(psi, n, gate.qubits[0], gate.axis, theta)


def _can_stay_real(template: "CircuitTemplate", op: PauliOperator | None, init: np.ndarray) -> bool:
    if np.iscomplexobj(init) and np.any(init.imag != 0):
        return False
    if op is not None and not op.is_real:
        return False
    return all(g.kind in ("RY", "CZ") for g in template.gates)


# ---------------------------------------------------------------------------
# Batched circuit execution and gradients
# ---------------------------------------------------------------------------


def run_batch(template: "CircuitTemplate", thetas: np.ndarray, init: np.ndarray | None = None,
              real: bool = False) -> np.ndarray:
    """Simulate ``template`` for each row of ``thetas`` (shape ``(B, n_params)``)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    n = template.n_qubits
    if thetas.shape[1] != template.n_params:
        raise CircuitError(f"theta length {thetas.shape[1]} != n_params {template.n_params}")
    if not np.all(np.isfinite(thetas)):
        raise CircuitError("non-finite circuit parameter")
    dtype = np.float64 if real else np.complex128
    B = thetas.shape[0]
    if init is None:
        psi = np.zeros((B, 1 << n), dtype=dtype)
        psi[:, 0] = 1.0
    else:
        init = np.asarray(init)
        psi = np.array(np.broadcast_to(init, (B, 1 << n)), dtype=dtype)
    for gate in template.gates:
        _apply(psi, n, gate, None if gate.kind == "CZ" else thetas[:, gate.param_index])
    return psi


def energy_and_grad_batch(template: "CircuitTemplate", thetas: np.ndarray, op: PauliOperator,
                          rows=None, init: np.ndarray | None = None):
    """Energies and adjoint gradients for a batch of parameter vectors.

    ``rows`` selects which operators of ``op`` pair with the rows of ``thetas``.
    Returns ``(energies (B,), grads (B, n_params))``.
    """
    thetas = np.atleast_2d(thetas)
    n = template.n_qubits
    init_arr = np.zeros(1 << n) if init is None else np.asarray(init)
    if init is None:
        init_arr[0] = 1.0
    real = _can_stay_real(template, op, init_arr)
    psi = run_batch(template, thetas, init_arr, real=real)
    lam = op.apply(psi, rows)
    energies = np.einsum("bj,bj->b", psi.conj(), lam).real
    grads = np.zeros(thetas.shape)
    for gate in reversed(template.gates):
        if gate.kind == "CZ":
            _cz(psi, n, *gate.qubits)
            _cz(lam, n, *gate.qubits)
            continue
        q = gate.qubits[0]
        j = gate.param_index
        # d<H>/dtheta = 2 Re <lam| (-i/2) sigma |mu> with mu the post-gate state
        grads[:, j] = _sigma_overlap(lam, psi, n, q, gate.axis)
        _rotate(psi, n, q, gate.axis, -thetas[:, j])
        _rotate(lam, n, q, gate.axis, -thetas[:, j])
    return energies, grads


def energy_batch(template: "CircuitTemplate", thetas: np.ndarray, op: PauliOperator, rows=None,
                 init: np.ndarray | None = None) -> np.ndarray:
    n = template.n_qubits
    init_arr = np.zeros(1 << n) if init is None else np.asarray(init)
    if init is None:
        init_arr[0] = 1.0
    psi = run_batch(template, thetas, init_arr, real=_can_stay_real(template, op, init_arr))
    return op.expectation(psi, rows)


# ---------------------------------------------------------------------------
# Single-state public API
# ---------------------------------------------------------------------------


def apply_gate(state: StateVector, gate: Gate, theta: float | None = None) -> StateVector:
    """Return ``gate`` applied to ``state``; the input is left untouched."""
    _check_gate(gate, state.n_qubits)
    if gate.is_rotation:
        if theta is None:
            raise CircuitError(f"{gate.kind} needs an angle")
        if not math.isfinite(theta):
            raise CircuitError("non-finite rotation angle")
    elif theta is not None:
        raise CircuitError("CZ takes no angle")
    psi = state.amplitudes.copy()[None, :]
    _apply(psi, state.n_qubits, gate, theta)
    return StateVector(state.n_qubits, psi[0])


def _theta_array(template: "CircuitTemplate", theta) -> np.ndarray:
    values = getattr(theta, "values", theta)
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.shape[0] != template.n_params:
        raise CircuitError(f"theta length {values.shape[0]} != n_params {template.n_params}")
    return values


def run_circuit(template: "CircuitTemplate", theta, init: StateVector | None = None) -> StateVector:
    values = _theta_array(template, theta)
    for gate in template.gates:
        _check_gate(gate, template.n_qubits)
    if init is None:
        init = StateVector.zero(template.n_qubits)
    if init.n_qubits != template.n_qubits:
        raise CircuitError("initial state qubit count differs from template")
    psi = run_batch(template, values[None, :], init.amplitudes)
    return StateVector(template.n_qubits, psi[0])


def expectation(state: StateVector, h: PauliSum) -> float:
    if state.n_qubits != h.n_qubits:
        raise CircuitError(f"state has {state.n_qubits} qubits, operator {h.n_qubits}")
    if not h.terms:
        return 0.0
    op = PauliOperator([h])
    return float(op.expectation(state.amplitudes[None, :])[0])


def grad_adjoint(template: "CircuitTemplate", theta, h: PauliSum) -> np.ndarray:
    """Exact gradient of <H> from one forward and one reverse sweep."""
    values = _theta_array(template, theta)
    if h.n_qubits != template.n_qubits:
        raise CircuitError("operator and template qubit counts differ")
    if not h.terms:
        return np.zeros(template.n_params)
    _, g = energy_and_grad_batch(template, values[None, :], PauliOperator([h]))
    return g[0]


def grad_parameter_shift(template: "CircuitTemplate", theta, h: PauliSum) -> np.ndarray:
    """Gradient via ``[E(theta_j + pi/2) - E(theta_j - pi/2)] / 2`` for every j."""
    values = _theta_array(template, theta)
    if h.n_qubits != template.n_qubits:
        raise CircuitError("operator and template qubit counts differ")
    d = template.n_params
    if d == 0 or not h.terms:
        return np.zeros(d)
    shifts = np.vstack([np.tile(values, (d, 1)) + (np.pi / 2) * np.eye(d),
                        np.tile(values, (d, 1)) - (np.pi / 2) * np.eye(d)])
    op = PauliOperator([h])
    e = energy_batch(template, shifts, op, rows=np.zeros(2 * d, dtype=int))
    return 0.5 * (e[:d] - e[d:])


def fidelity(a: StateVector, b: StateVector) -> float:
    if a.n_qubits != b.n_qubits:
        raise CircuitError("qubit count mismatch")
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)
