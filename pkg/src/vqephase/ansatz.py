"""Circuit templates for the TFIM brickwork and RY/CZ cluster ansätze."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .statevec import CircuitError, Gate


@dataclass(frozen=True)
class CircuitTemplate:
    n_qubits: int
    gates: tuple
    n_params: int
    layout_id: str

    @classmethod
    def from_gates(cls, n_qubits: int, gates) -> "CircuitTemplate":
        gates = tuple(gates)
        indices = [g.param_index for g in gates if g.is_rotation]
        if indices != list(range(len(indices))):
            raise CircuitError("rotation param_index values must run 0..d-1 in gate order")
        for g in gates:
            if any(q >= n_qubits for q in g.qubits):
                raise CircuitError(f"gate {g.kind}{g.qubits} exceeds {n_qubits} qubits")
        return cls(n_qubits, gates, len(indices), layout_hash(n_qubits, gates))

    def rotation_gates(self):
        return [g for g in self.gates if g.is_rotation]


def layout_hash(n_qubits: int, gates) -> str:
    text = f"n={n_qubits};" + ";".join(
        f"{g.kind}:{','.join(map(str, g.qubits))}:{'' if g.param_index is None else g.param_index}"
        for g in gates
    )
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class ParameterVector:
    values: np.ndarray
    layout_id: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.values)):
            raise CircuitError("parameter vector contains non-finite values")

    def __len__(self):
        return self.values.shape[0]


def _check_sizes(n: int, blocks: int) -> None:
    if int(n) != n or n < 2:
        raise CircuitError(f"need n >= 2 qubits, got {n}")
    if int(blocks) != blocks or blocks < 1:
        raise CircuitError(f"need blocks >= 1, got {blocks}")


def _cz_layer(n: int, start: int):
    return [Gate("CZ", (q, q + 1)) for q in range(start, n - 1, 2)]


def tfim_ansatz(n: int, blocks: int) -> CircuitTemplate:
    """Blocks of RZ-RX-RZ, even-start CZ, RZ-RX-RZ, odd-start CZ.

    Each block carries ``6 * n`` angles.
    """
    _check_sizes(n, blocks)
    gates, k = [], 0
    for _ in range(blocks):
        for start in (0, 1):
            for kind in ("RZ", "RX", "RZ"):
                for q in range(n):
                    gates.append(Gate(kind, (q,), k))
                    k += 1
            gates.extend(_cz_layer(n, start))
    return CircuitTemplate.from_gates(n, gates)


def cluster_ansatz(n: int, blocks: int) -> CircuitTemplate:
    """An RY layer followed by ``blocks`` of (CZ layer, RY layer).

    The CZ pairing alternates even-start / odd-start across blocks.
    """
    _check_sizes(n, blocks)
    gates, k = [], 0
    for q in range(n):
        gates.append(Gate("RY", (q,), k))
        k += 1
    for b in range(blocks):
        gates.extend(_cz_layer(n, b % 2))
        for q in range(n):
            gates.append(Gate("RY", (q,), k))
            k += 1
    return CircuitTemplate.from_gates(n, gates)


ANSATZE = {"tfim": tfim_ansatz, "cluster": cluster_ansatz}


def build_ansatz(kind: str, n: int, blocks: int) -> CircuitTemplate:
    try:
        return ANSATZE[kind](n, blocks)
    except KeyError:
        raise CircuitError(f"unknown ansatz {kind!r}; expected one of {sorted(ANSATZE)}") from None


def flatten(theta: ParameterVector, template: CircuitTemplate) -> np.ndarray:
    """Circuit parameters as the 1D feature vector (ordered by param_index)."""
    if theta.layout_id is not None and theta.layout_id != template.layout_id:
        raise CircuitError(
            f"parameter layout {theta.layout_id} does not match template {template.layout_id}"
        )
    if len(theta) != template.n_params:
        raise CircuitError(f"expected {template.n_params} parameters, got {len(theta)}")
    return theta.values.copy()


def unflatten(vector, template: CircuitTemplate) -> ParameterVector:
    vector = np.asarray(vector, dtype=np.float64).ravel()
    if vector.shape[0] != template.n_params:
        raise CircuitError(f"expected {template.n_params} values, got {vector.shape[0]}")
    return ParameterVector(vector.copy(), template.layout_id)
