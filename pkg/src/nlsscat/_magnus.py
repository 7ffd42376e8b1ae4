"""Fourth-order Magnus stepping for 2x2 trace-free linear systems.

Matrices are handled entry-wise as tuples ``(m11, m12, m21, m22)`` of
broadcastable arrays so that a whole (lambda, cell) block is processed at
once. Trace-free generators are triples ``(a, b, c)`` for
``[[a, b], [c, -a]]``.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import IntegrationError

SQRT3 = math.sqrt(3.0)
GAUSS_T = (0.5 - SQRT3 / 6, 0.5 + SQRT3 / 6)

# exp() of arguments beyond this would overflow the accumulated products
GROWTH_LIMIT = 600.0


STENCIL = np.arange(-2, 4)


def _lagrange_weights(t):
    """Weights of the quintic through nodes ``-2 .. 3`` evaluated at ``t``."""
    w = []
    for k in STENCIL:
        others = STENCIL[STENCIL != k]
        w.append(float(np.prod((t - others) / (k - others))))
    return w


def gauss_values(samples, piecewise_constant=False):
    """Values at the two Gauss points of every cell ``[x_j, x_{j+1}]``.

    Point samples are interpolated with the quintic through nodes
    ``j-2 .. j+3`` (zero beyond the grid). Piecewise-constant samples give
    the cell value at both points.
    """
    v = np.asarray(samples)
    if piecewise_constant:
        cell = v[:-1]
        return cell, cell
    padded = np.concatenate([[0, 0], v, [0, 0]])
    n = v.size - 1
    out = []
    for t in GAUSS_T:
        acc = np.zeros(n, dtype=v.dtype if np.iscomplexobj(v) else float)
        for k, w in enumerate(_lagrange_weights(t)):
            acc = acc + w * padded[k:k + n]
        out.append(acc)
    return out[0], out[1]


def commutator(x, y):
    a1, b1, c1 = x
    a2, b2, c2 = y
    return b1 * c2 - b2 * c1, 2 * (a1 * b2 - a2 * b1), 2 * (a2 * c1 - a1 * c2)


def magnus_omega(h, g1, g2):
    """Fourth-order Magnus exponent from generator values at the Gauss points."""
    k = SQRT3 / 12 * h * h
    ca, cb, cc = commutator(g2, g1)
    return (
        0.5 * h * (g1[0] + g2[0]) + k * ca,
        0.5 * h * (g1[1] + g2[1]) + k * cb,
        0.5 * h * (g1[2] + g2[2]) + k * cc,
    )


def expm_traceless(omega):
    """Closed-form exponential of ``[[a, b], [c, -a]]``.

    With ``s^2 = a^2 + b c`` the exponential is ``cosh(s) I + sinh(s)/s * Omega``;
    both coefficients are even in ``s``, so the square-root branch is irrelevant.
    """
    a, b, c = (np.asarray(v, dtype=complex) for v in omega)
    s2 = a * a + b * c
    s = np.sqrt(s2)
    small = np.abs(s2) < 1e-6
    with np.errstate(invalid="ignore", divide="ignore"):
        ch = np.where(small, 1 + s2 / 2 + s2**2 / 24 + s2**3 / 720, np.cosh(s))
        shc = np.where(small, 1 + s2 / 6 + s2**2 / 120 + s2**3 / 5040, np.sinh(s) / s)
    return ch + shc * a, shc * b, shc * c, ch - shc * a


def mul(x, y):
    """Entry-wise 2x2 product ``x @ y``."""
    x11, x12, x21, x22 = x
    y11, y12, y21, y22 = y
    return (
        x11 * y11 + x12 * y21,
        x11 * y12 + x12 * y22,
        x21 * y11 + x22 * y21,
        x21 * y12 + x22 * y22,
    )


def tree_product(m):
    """Ordered product ``M_{n-1} ... M_1 M_0`` over the last axis.

    Pairwise reduction in a fixed order (later cells on the left, an odd
    trailing factor carried to the next level), so the result does not
    depend on how callers chunk the other axes.
    """
    m = tuple(np.asarray(v) for v in m)
    if m[0].shape[-1] == 0:
        one = np.ones(m[0].shape[:-1], complex)
        zero = np.zeros_like(one)
        return one, zero, zero, one.copy()
    while m[0].shape[-1] > 1:
        n = m[0].shape[-1]
        even = n - n % 2
        left = tuple(v[..., 1:even:2] for v in m)
        right = tuple(v[..., 0:even:2] for v in m)
        prod = mul(left, right)
        if n % 2:
            prod = tuple(np.concatenate([p, v[..., -1:]], axis=-1) for p, v in zip(prod, m))
        m = prod
    return tuple(v[..., 0] for v in m)


def prefix_products(m):
    """Running products ``P_k = M_{k-1} ... M_0`` for k = 0..n (1-d cells)."""
    n = m[0].shape[-1]
    out = np.empty((n + 1, 2, 2), complex)
    cur = np.eye(2, dtype=complex)
    out[0] = cur
    mats = np.stack([np.stack([m[0], m[1]], -1), np.stack([m[2], m[3]], -1)], -2)
    for k in range(n):
        cur = mats[k] @ cur
        out[k + 1] = cur
    return out


def check_growth(rate, length, where):
    if abs(rate) * length > GROWTH_LIMIT:
        raise IntegrationError(
            f"exponential growth |Im| * length = {abs(rate) * length:.1f} exceeds {GROWTH_LIMIT:.0f}; "
            "evaluate closer to the real axis or shorten the truncation radius",
            location=where,
        )


def rk4_product(gen, x0, h, ncell):
    """Classical RK4 on the raw system; debugging oracle only.

    ``gen(x)`` returns the 2x2 generator at ``x``.
    """
    y = np.eye(2, dtype=complex)
    x = x0
    for _ in range(ncell):
        k1 = gen(x) @ y
        k2 = gen(x + h / 2) @ (y + h / 2 * k1)
        k3 = gen(x + h / 2) @ (y + h / 2 * k2)
        k4 = gen(x + h) @ (y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        x += h
    return y
