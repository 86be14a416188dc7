"""Compiled single-qubit kernels, used by ``statevec`` when numba is installed.

Every kernel works in place on a ``(B, 2**n)`` amplitude array, one
parameter per batch row. numba specialises each function for real and
complex inputs.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without the extra
    njit = None

AXIS_CODE = {"X": 0, "Y": 1, "Z": 2}

if njit is not None:

    @njit(cache=True, nogil=True)
    def apply_2x2(psi, q, m00, m01, m10, m11):
        B, D = psi.shape
        step = 1 << q
        for b in range(B):
            u00, u01, u10, u11 = m00[b], m01[b], m10[b], m11[b]
            for base in range(0, D, 2 * step):
                for k in range(base, base + step):
                    a0 = psi[b, k]
                    a1 = psi[b, k + step]
                    psi[b, k] = u00 * a0 + u01 * a1
                    psi[b, k + step] = u10 * a0 + u11 * a1

    @njit(cache=True, nogil=True)
    def sigma_overlap(lam, mu, q, axis, out):
        B, D = lam.shape
        step = 1 << q
        for b in range(B):
            acc = 0j
            for base in range(0, D, 2 * step):
                for k in range(base, base + step):
                    l0 = np.conj(lam[b, k])
                    l1 = np.conj(lam[b, k + step])
                    m0 = mu[b, k]
                    m1 = mu[b, k + step]
                    if axis == 0:
                        acc += l0 * m1 + l1 * m0
                    elif axis == 1:
                        acc += l1 * m0 - l0 * m1
                    else:
                        acc += l0 * m0 - l1 * m1
            out[b] = acc.real if axis == 1 else acc.imag

    AVAILABLE = True
else:  # pragma: no cover
    apply_2x2 = sigma_overlap = None
    AVAILABLE = False


def rotation_entries(axis: str, theta: np.ndarray, real: bool):
    """Per-row entries ``(m00, m01, m10, m11)`` of ``exp(-i theta sigma / 2)``."""
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    if axis == "Y":
        if real:
            return c, -s, s, c
        c, s = c.astype(np.complex128), s.astype(np.complex128)
        return c, -s, s, c
    if axis == "X":
        off = -1j * s
        return c.astype(np.complex128), off, off, c.astype(np.complex128)
    zero = np.zeros_like(c, dtype=np.complex128)
    return c - 1j * s, zero, zero, c + 1j * s
