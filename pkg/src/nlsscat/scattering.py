"""Direct scattering for the Zakharov-Shabat (Dirac) system.

The spectral problem is ``Z' = [[-i lam/2, conj(q)], [q, i lam/2]] Z``; the
free solution is ``E(x, lam) = diag(exp(-i lam x/2), exp(i lam x/2))``.
Two independent routes produce the transition coefficients:

* transfer route: ``T = E(x_R)^-1 U(x_R, x_L) E(x_L)`` across the support,
  ``a = T11``, ``b = T21``;
* Krein route: half-line Krein systems on each side of the origin give the
  continuous Wall limits, combined as ``a = fa+ fa- - fb+ fb-``.

Krein systems run in the variable ``x = 2|xi|`` with spectral parameter
``mu = lam/2``; ``wall_limits`` takes ``mu`` directly.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _magnus as mg
from .errors import ConsistencyError, DomainError, GridError, IntegrationError, ParameterError
from .potentials import SampledPotential

UNITARITY_TOL = 1e-6
LOG_CLAMP = -50.0
# entries per (lambda, cell) block held in memory at once
BLOCK = 1 << 19


def default_lambda_grid(lmax=40.0, step=0.02):
    m = int(round(lmax / step))
    return step * np.arange(-m, m + 1)


@dataclass(frozen=True)
class MatrixTrajectory:
    xi: np.ndarray
    values: np.ndarray
    lam: complex

    @property
    def det_deviation(self) -> float:
        v = self.values
        det = v[:, 0, 0] * v[:, 1, 1] - v[:, 0, 1] * v[:, 1, 0]
        return float(np.max(np.abs(det - 1)))

    def at(self, x: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.xi - x)))
        if abs(self.xi[j] - x) > 1e-9 * max(1.0, abs(x)):
            raise ParameterError("x", f"{x} is not a trajectory node")
        return self.values[j]


@dataclass(frozen=True)
class WallLimits:
    a_plus: np.ndarray
    b_plus: np.ndarray
    a_minus: np.ndarray
    b_minus: np.ndarray
    mu: np.ndarray


@dataclass(frozen=True)
class ScatteringTable:
    lambda_grid: np.ndarray
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    a_at_i: complex
    truncation_radius: float
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lam = np.asarray(self.lambda_grid, float)
        a = np.asarray(self.a, complex)
        b = np.asarray(self.b, complex)
        r = np.asarray(self.r, complex)
        if not (lam.shape == a.shape == b.shape == r.shape) or lam.ndim != 1:
            raise ParameterError("lambda_grid", "table columns must be 1-d and of equal length")
        defect = np.abs(np.abs(a) ** 2 - np.abs(b) ** 2 - 1)
        if defect.size and defect.max() > UNITARITY_TOL:
            j = int(np.argmax(defect))
            raise ConsistencyError(
                f"| |a|^2 - |b|^2 - 1 | = {defect[j]:.3e} at lambda = {lam[j]}",
                values={"lambda": float(lam[j]), "defect": float(defect[j])},
            )
        if np.any(np.abs(r) >= 1):
            raise ConsistencyError("|r| >= 1 in scattering table")
        for name, v in (("lambda_grid", lam), ("a", a), ("b", b), ("r", r)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def unitarity_defect(self) -> float:
        if not self.a.size:
            return 0.0
        return float(np.max(np.abs(np.abs(self.a) ** 2 - np.abs(self.b) ** 2 - 1)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(
                f"# truncation_radius={self.truncation_radius!r},"
                f"integrator={self.diagnostics.get('integrator', 'magnus4')},"
                f"re_a_at_i={self.a_at_i.real!r},im_a_at_i={self.a_at_i.imag!r}\n"
            )
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "re_a", "im_a", "re_b", "im_b", "re_r", "im_r"])
            for row in zip(self.lambda_grid, self.a, self.b, self.r):
                lam, a, b, r = row
                w.writerow([f"{v:.17g}" for v in (lam, a.real, a.imag, b.real, b.imag, r.real, r.imag)])

    @classmethod
    def from_csv(cls, path) -> "ScatteringTable":
        meta = {}
        rows = []
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    for item in line[1:].strip().split(","):
                        k, _, v = item.partition("=")
                        meta[k.strip()] = v.strip()
                else:
                    rows.append(line)
        data = np.array([[float(x) for x in r.values()] for r in csv.DictReader(rows)]).reshape(-1, 7)
        return cls(
            data[:, 0],
            data[:, 1] + 1j * data[:, 2],
            data[:, 3] + 1j * data[:, 4],
            data[:, 5] + 1j * data[:, 6],
            complex(float(meta.get("re_a_at_i", "nan")), float(meta.get("im_a_at_i", "nan"))),
            float(meta.get("truncation_radius", "nan")),
            {"integrator": meta.get("integrator", "magnus4")},
        )


# ---------------------------------------------------------------- helpers


def _node(q: SampledPotential, x: float, key: str) -> int:
    j = q.node_index(x)
    if j is None:
        raise GridError(f"{key}={x} is not a node of the grid (dx={q.dx}, xi0={q.xi0})")
    return j


def _origin(q: SampledPotential) -> int:
    j = q.node_index(0.0)
    if j is None:
        raise GridError("the origin must be a grid node for half-line (Krein) computations")
    return j


def _support_radius(q: SampledPotential) -> float:
    if q.is_zero:
        return 0.0
    lo, hi = q.support
    return max(0.0, -lo, hi)


def _chunks(nlam, ncell):
    step = max(1, BLOCK // max(ncell, 1))
    for start in range(0, nlam, step):
        yield slice(start, min(nlam, start + step))


def _zs_product(v1, v2, lam, h, sign=1.0):
    """Product of ZS cell propagators for each lam (rows) over given cells."""
    lam = np.asarray(lam, complex)[:, None]
    g1 = (-0.5j * lam, np.conj(v1)[None, :], v1[None, :])
    g2 = (-0.5j * lam, np.conj(v2)[None, :], v2[None, :])
    om = mg.magnus_omega(h, g1, g2)
    if sign < 0:
        om = tuple(-w for w in om)
    return mg.tree_product(mg.expm_traceless(om))


# ---------------------------------------------------------------- transfer route


def node_trajectory(q: SampledPotential, span, generator, lam=0j, cells_fn=None) -> MatrixTrajectory:
    """Propagate ``Y' = G Y`` from ``Y(0) = I`` over the node interval ``span``.

    ``generator(v1, v2)`` maps potential values at the two Gauss points of
    a block of cells to the two generator triples. Nodes left of the origin
    are reached by backward steps.
    """
    lo, hi = span if span is not None else q.span
    if not lo <= 0 <= hi:
        raise ParameterError("span", f"span {span} must contain the origin")
    i0, ilo, ihi = _origin(q), _node(q, lo, "span[0]"), _node(q, hi, "span[1]")
    v1, v2 = mg.gauss_values(q.samples, q.piecewise_constant)

    def cells(js, backward):
        if cells_fn is not None:
            return cells_fn(js, backward)
        om = mg.magnus_omega(q.dx, *generator(v1[js], v2[js]))
        if backward:
            om = tuple(-w for w in om)
        return mg.expm_traceless(om)

    fwd = mg.prefix_products(cells(np.arange(i0, ihi), False))
    bwd = mg.prefix_products(cells(np.arange(i0 - 1, ilo - 1, -1), True))
    values = np.concatenate([bwd[:0:-1], fwd])
    if not np.all(np.isfinite(values)):
        raise IntegrationError("non-finite solution", location=(lo, hi))
    xi = q.xi0 + q.dx * np.arange(ilo, ihi + 1)
    return MatrixTrajectory(xi, values, lam)


def fundamental_matrix(q: SampledPotential, lam: complex, span=None, method: str = "magnus") -> MatrixTrajectory:
    """Solve ``Z' = G(xi, lam) Z`` with ``Z(0) = I`` on the node interval ``span``.

    ``span`` defaults to the whole grid and must contain the origin.
    ``method="rk4"`` switches to classical RK4 (8 substeps per cell), kept
    as an independent debugging oracle.
    """
    lam = complex(lam)
    if not np.isfinite(lam):
        raise ParameterError("lambda", "spectral parameter must be finite")
    if method not in ("magnus", "rk4"):
        raise ParameterError("method", f"unknown integrator {method!r}")
    lo, hi = span if span is not None else q.span
    mg.check_growth(lam.imag / 2, hi - lo, (lo, hi))

    def generator(v1, v2):
        a = np.full(v1.size, -0.5j * lam)
        return (a, np.conj(v1), v1), (a, np.conj(v2), v2)

    cells_fn = (lambda js, backward: _rk4_cells(q, lam, js, backward)) if method == "rk4" else None
    return node_trajectory(q, (lo, hi), generator, lam, cells_fn)


def _rk4_cells(q, lam, js, backward):
    out = [np.empty(js.size, complex) for _ in range(4)]
    f = q.samples

    def gen(x, cell):
        if q.piecewise_constant:
            v = f[cell]  # the cell value, also at the cell edges
        else:
            v = np.interp(x, q.xi, f.real) + 1j * np.interp(x, q.xi, f.imag)
        return np.array([[-0.5j * lam, np.conj(v)], [v, 0.5j * lam]])

    for k, j in enumerate(js):
        x0 = q.xi0 + j * q.dx
        cell_gen = functools.partial(gen, cell=j)
        if backward:
            m = np.linalg.inv(mg.rk4_product(cell_gen, x0, q.dx / 8, 8))
        else:
            m = mg.rk4_product(cell_gen, x0, q.dx / 8, 8)
        out[0][k], out[1][k], out[2][k], out[3][k] = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    return tuple(out)


def transfer_coefficients(q: SampledPotential, lambda_grid) -> tuple[np.ndarray, np.ndarray]:
    """``(a, b)`` from the transfer matrix across the support (any complex lam)."""
    lam = np.atleast_1d(np.asarray(lambda_grid, complex))
    if q.is_zero:
        return np.ones(lam.shape, complex), np.zeros(lam.shape, complex)
    lo, hi = q.support
    il = int(math.floor((lo - q.xi0) / q.dx + 1e-9))
    ir = int(math.ceil((hi - q.xi0) / q.dx - 1e-9))
    xl, xr = q.xi0 + il * q.dx, q.xi0 + ir * q.dx
    mg.check_growth(np.max(np.abs(lam.imag)) / 2, xr - xl, (xl, xr))
    v1, v2 = mg.gauss_values(q.samples, q.piecewise_constant)
    v1, v2 = v1[il:ir], v2[il:ir]
    a = np.empty(lam.shape, complex)
    b = np.empty(lam.shape, complex)
    for sl in _chunks(lam.size, ir - il):
        u11, _, u21, _ = _zs_product(v1, v2, lam[sl], q.dx)
        l = lam[sl]
        a[sl] = np.exp(0.5j * l * (xr - xl)) * u11
        b[sl] = np.exp(-0.5j * l * (xr + xl)) * u21
    return a, b


# ---------------------------------------------------------------- Krein route


@dataclass(frozen=True)
class _KreinCoefficient:
    """Krein coefficient A given by its values at the Gauss points of each cell."""

    g1: np.ndarray
    g2: np.ndarray
    h: float


def _krein_sides(q: SampledPotential, radius: float):
    """Gauss values of A+ and A- on x-cells of length 2 dx up to ``radius``."""
    i0 = _origin(q)
    v1, v2 = mg.gauss_values(q.samples, q.piecewise_constant)
    ncell = q.n - 1
    kp = min(ncell - i0, int(math.ceil(radius / q.dx - 1e-9)))
    km = min(i0, int(math.ceil(radius / q.dx - 1e-9)))
    plus = _KreinCoefficient(-np.conj(v1[i0:i0 + kp]) / 2, -np.conj(v2[i0:i0 + kp]) / 2, 2 * q.dx)
    # mirrored cells: the first Gauss point in x is the second one in xi
    mirror = np.arange(i0 - 1, i0 - 1 - km, -1, dtype=int)
    minus = _KreinCoefficient(v2[mirror] / 2, v1[mirror] / 2, 2 * q.dx)
    return plus, minus


def _krein_product(coef: _KreinCoefficient, mu):
    """Fundamental matrix U(X) of the Krein system for each mu (1-d array)."""
    mu = np.asarray(mu, complex)
    ncell = coef.g1.size
    length = ncell * coef.h
    mg.check_growth(np.max(np.abs(mu.imag)) if mu.size else 0.0, length, length)
    out = [np.empty(mu.shape, complex) for _ in range(4)]
    for sl in _chunks(mu.size, ncell):
        m = mu[sl][:, None]
        g1 = (0.5j * m, -np.conj(coef.g1)[None, :], -coef.g1[None, :])
        g2 = (0.5j * m, -np.conj(coef.g2)[None, :], -coef.g2[None, :])
        u = mg.tree_product(mg.expm_traceless(mg.magnus_omega(coef.h, g1, g2)))
        phase = np.exp(0.5j * mu[sl] * length)
        for k in range(4):
            out[k][sl] = phase * u[k]
    return tuple(out)


def krein_pair(A: Callable, lam: complex, L: float, h: float = 0.01) -> MatrixTrajectory:
    """Solve the Krein system and its dual on ``[0, L]`` from ``P = P_* = 1``.

    Krein: ``P' = i lam P - conj(A) P_*``, ``P_*' = -A P``; the dual system
    flips the sign of ``A``. ``values[j] = [[P, P_hat], [P_*, P_hat_*]]``.
    ``A`` is a vectorised function of ``x``; it is sampled at Gauss points.
    """
    lam = complex(lam)
    if not L > 0:
        raise ParameterError("L", f"length must be positive, got {L}")
    n = max(1, int(round(L / h)))
    h = L / n
    left = h * np.arange(n)
    g1 = np.asarray(A(left + mg.GAUSS_T[0] * h), complex) * np.ones(n)
    g2 = np.asarray(A(left + mg.GAUSS_T[1] * h), complex) * np.ones(n)
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
        raise IntegrationError("coefficient A is not finite on [0, L]")
    mg.check_growth(lam.imag, L, L)
    a = np.full(n, 0.5j * lam)
    om = mg.magnus_omega(h, (a, -np.conj(g1), -g1), (a, -np.conj(g2), -g2))
    u = mg.prefix_products(mg.expm_traceless(om))
    x = h * np.arange(n + 1)
    u *= np.exp(0.5j * lam * x)[:, None, None]
    # columns (1, 1) and (1, -1) of U give the Krein and dual solutions
    values = np.empty_like(u)
    values[:, 0, 0] = u[:, 0, 0] + u[:, 0, 1]
    values[:, 1, 0] = u[:, 1, 0] + u[:, 1, 1]
    values[:, 0, 1] = u[:, 0, 0] - u[:, 0, 1]
    values[:, 1, 1] = u[:, 1, 1] - u[:, 1, 0]
    return MatrixTrajectory(x, values, lam)


def krein_conjugation_residual(traj: MatrixTrajectory) -> float:
    """``max |P_* - exp(i lam x) conj(P)|`` (and the dual pair) for real lam."""
    v = traj.values
    ph = np.exp(1j * traj.lam * traj.xi)
    return float(max(
        np.max(np.abs(v[:, 1, 0] - ph * np.conj(v[:, 0, 0]))),
        np.max(np.abs(v[:, 1, 1] - ph * np.conj(v[:, 0, 1]))),
    ))


def _check_truncation(q, truncation):
    need = _support_radius(q)
    if truncation is None:
        return need
    truncation = float(truncation)
    if truncation < need - 1e-9 * max(1.0, need):
        raise ParameterError("truncation", f"radius {truncation} is inside the support; need at least {need}")
    return truncation


def wall_limits(q: SampledPotential, mu, truncation: float | None = None) -> WallLimits:
    """Continuous Wall limits ``fa+-, fb+-`` at Krein parameter ``mu``.

    Evaluated at the truncation edge, which is exact for compactly
    supported potentials: past the support the limits are constant.
    """
    radius = _check_truncation(q, truncation)
    mu = np.atleast_1d(np.asarray(mu, complex))
    plus, minus = _krein_sides(q, radius)
    _, _, up21, up22 = _krein_product(plus, mu)
    _, _, um21, um22 = _krein_product(minus, mu)
    return WallLimits(up22, up21, um22, um21, mu)


def _combine(w: WallLimits):
    a = w.a_plus * w.a_minus - w.b_plus * w.b_minus
    b = w.a_minus * np.conj(w.b_plus) - w.b_minus * np.conj(w.a_plus)
    return a, b


def transition_coefficients(q: SampledPotential, lambda_grid=None, truncation: float | None = None) -> ScatteringTable:
    """Transition coefficients on a real lambda grid via the Krein route."""
    lam = default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, float)
    if lam.ndim != 1 or not np.all(np.isfinite(lam)):
        raise ParameterError("lambda_grid", "must be a finite 1-d real array")
    radius = _check_truncation(q, truncation)
    w = wall_limits(q, lam / 2, radius)
    a, b = _combine(w)
    if np.any(np.abs(a) < 1 - UNITARITY_TOL):
        j = int(np.argmin(np.abs(a)))
        raise ConsistencyError(f"|a| = {abs(a[j]):.6f} < 1 at lambda = {lam[j]}", values={"a": a[j]})
    wall_defect = max(
        float(np.max(np.abs(np.abs(w.a_plus) ** 2 - np.abs(w.b_plus) ** 2 - 1), initial=0)),
        float(np.max(np.abs(np.abs(w.a_minus) ** 2 - np.abs(w.b_minus) ** 2 - 1), initial=0)),
    )
    a_i = a_upper_half(q, 1j, radius)
    diag = {"integrator": "magnus4", "wall_unitarity_defect": wall_defect}
    return ScatteringTable(lam, a, b, b / a, a_i, radius, diag)


def a_upper_half(q: SampledPotential, z: complex, truncation: float | None = None) -> complex:
    """``a(z)`` for ``Im z > 0`` from the Wall limits at complex parameter."""
    z = complex(z)
    if not z.imag > 0:
        raise DomainError(f"a_upper_half needs Im z > 0, got {z}")
    w = wall_limits(q, np.array([z / 2]), truncation)
    a = (w.a_plus * w.a_minus - w.b_plus * w.b_minus)[0]
    if not (np.isfinite(a) and a != 0):
        raise IntegrationError(f"a({z}) is not finite and nonzero")
    return complex(a)


# ---------------------------------------------------------------- outer route


@dataclass(frozen=True)
class OuterDiagnostics:
    tail: complex
    tail_fit: tuple[float, float]
    clamp_hits: int


def _tail_coefficient(lam, f):
    w = lam**-2.0
    return float(np.dot(f, w) / np.dot(w, w)) if lam.size else 0.0


def cauchy_integral(f, lambda_grid, z: complex):
    """``int f(lam)/(lam - z) d lam`` over the real line for real ``f``.

    Trapezoid rule on the grid; beyond it ``f`` is modelled as ``c/lam^2``
    with ``c`` fitted on the outer 10% of each side, integrated in closed
    form. Returns ``(value, tail, (c_minus, c_plus))``.
    """
    lam = np.asarray(lambda_grid, float)
    f = np.asarray(f, float)
    body = np.trapezoid(f / (lam - z), lam)
    tail = 0j
    fit = [0.0, 0.0]
    hi, lo = lam[-1], lam[0]
    if hi > 0:
        sel = lam >= 0.9 * hi
        c = _tail_coefficient(lam[sel], f[sel])
        fit[1] = c
        tail += c * (-np.log1p(-z / hi) / z**2 - 1 / (z * hi))
    if lo < 0:
        sel = lam <= 0.9 * lo
        c = _tail_coefficient(lam[sel], f[sel])
        fit[0] = c
        tail += c * (np.log1p(-z / lo) / z**2 + 1 / (z * lo))
    return complex(body + tail), complex(tail), (fit[0], fit[1])


def _check_grid(lam, n):
    if lam.ndim != 1 or lam.size < 2 or lam.size != n:
        raise ParameterError("lambda_grid", "values and lambda_grid must be equal-length 1-d arrays")
    if np.any(np.diff(lam) <= 0):
        raise ParameterError("lambda_grid", "must be strictly increasing")


def a_from_reflection(r, lambda_grid, z: complex, report: bool = False):
    """Outer function ``exp(-(1/2 pi i) int log(1-|r|^2)/(lam - z) d lam)``.

    ``log(1-|r|^2)`` is clamped at ``LOG_CLAMP``; the number of clamped
    grid points is reported.
    """
    z = complex(z)
    if not z.imag > 0:
        raise DomainError(f"need Im z > 0, got {z}")
    lam = np.asarray(lambda_grid, float)
    mod2 = np.abs(np.asarray(r, complex)) ** 2
    _check_grid(lam, mod2.size)
    if np.any(mod2 >= 1):
        j = int(np.argmax(mod2))
        raise DomainError(f"|r| = {math.sqrt(mod2[j]):.6f} >= 1 at lambda = {lam[j]}")
    f = np.log1p(-mod2)
    hits = int(np.count_nonzero(f < LOG_CLAMP))
    f = np.maximum(f, LOG_CLAMP)
    total, tail, fit = cauchy_integral(f, lam, z)
    value = complex(np.exp(-total / (2j * math.pi)))
    if report:
        return value, OuterDiagnostics(tail, fit, hits)
    return value
