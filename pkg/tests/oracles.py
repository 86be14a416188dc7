"""Independent dense references built from Kronecker products and matrix exponentials."""
from functools import reduce

import numpy as np
from scipy.linalg import expm

I2 = np.eye(2, dtype=complex)
PAULI = {
    "I": I2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def embed(n, ops):
    """Operator acting as ``ops[q]`` on qubit ``q`` (little-endian: qubit 0 is the last factor)."""
    mats = [ops.get(q, I2) for q in reversed(range(n))]
    return reduce(np.kron, mats)


def pauli_string(n, string):
    return embed(n, {s: PAULI[a] for s, a in string})


def dense_hamiltonian(h):
    dim = 1 << h.n_qubits
    out = np.zeros((dim, dim), dtype=complex)
    for coef, string in h.terms:
        out += coef * pauli_string(h.n_qubits, string)
    return out


def tfim_dense(n, h, periodic=True):
    H = np.zeros((1 << n, 1 << n), dtype=complex)
    bonds = n if periodic else n - 1
    for i in range(bonds):
        H -= embed(n, {i: PAULI["Z"], (i + 1) % n: PAULI["Z"]})
    for i in range(n):
        H -= h * embed(n, {i: PAULI["X"]})
    return H


def gate_matrix(n, gate, theta=None):
    if gate.kind == "CZ":
        a, b = gate.qubits
        diag = np.ones(1 << n, dtype=complex)
        idx = np.arange(1 << n)
        diag[((idx >> a) & 1) & ((idx >> b) & 1) == 1] = -1
        return np.diag(diag)
    sigma = PAULI[gate.kind[1]]
    return embed(n, {gate.qubits[0]: expm(-0.5j * theta * sigma)})


def circuit_state(template, theta, init=None):
    n = template.n_qubits
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1
    if init is not None:
        psi = np.asarray(init, dtype=complex)
    for g in template.gates:
        psi = gate_matrix(n, g, None if g.param_index is None else theta[g.param_index]) @ psi
    return psi


def energy(template, theta, H):
    psi = circuit_state(template, theta)
    return float(np.real(np.vdot(psi, H @ psi)))


def fd_grad(f, x, step=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g
