"""H^-1 machinery: exponential smoothing, interval oscillations, tail averages.

Between samples a point-sampled ``f`` is modelled by the cubic through the
four nearest nodes; a piecewise-constant ``f`` by its cell value. All
integrals of the model (smoothing recurrences, antiderivatives) are exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .entropy import k_tilde
from .errors import CoverageError, GridError, NlsScatError, ParameterError
from .potentials import SampledPotential, sobolev_norm

GUARD_WINDOWS = 2
_NODES = np.array([-1.0, 0.0, 1.0, 2.0])


def _lagrange_coeffs():
    """Power-basis coefficients (ascending) of the cubic Lagrange basis on ``_NODES``."""
    out = []
    for k in _NODES:
        others = _NODES[_NODES != k]
        poly = np.poly(others) / np.prod(k - others)
        out.append(poly[::-1])
    return np.array(out)


_COEFFS = _lagrange_coeffs()


def _exp_moments(h, s, pmax=3, terms=40):
    """``int_0^s exp(-h (s - u)) u^p du`` for p = 0..pmax (series, stable for small h)."""
    out = []
    hs = h * s
    for p in range(pmax + 1):
        acc = 0.0
        term = 1.0 / (p + 1)  # p! m! / (p+m+1)! / m! at m = 0, times (-hs)^m
        for m in range(terms):
            acc += term
            term *= -hs / (p + m + 2)
        out.append(s ** (p + 1) * acc)
    return np.array(out)


def _weights(h, s):
    """Weights of ``f_{j-1..j+2}`` in ``int_0^{s h} exp(-(s h - t)) f(x_j + t) dt``."""
    return h * _COEFFS @ _exp_moments(h, s)


def _antiderivative_weights(h, s):
    """Weights of ``f_{j-1..j+2}`` in ``int_0^{s h} f(x_j + t) dt``."""
    powers = np.array([s ** (p + 1) / (p + 1) for p in range(4)])
    return h * _COEFFS @ powers


def _stencil(v):
    padded = np.concatenate([[0], v, [0, 0]])
    n = v.size
    return np.stack([padded[k:k + n] for k in range(4)])


def _smooth(samples, h, piecewise_constant):
    """Forward recurrence for ``o' + o = f`` from ``o = 0`` left of the grid.

    Returns node values and cell-midpoint values.
    """
    f = np.asarray(samples, complex)
    n = f.size
    decay, half = math.exp(-h), math.exp(-h / 2)
    if piecewise_constant:
        inc = f[:-1] * -math.expm1(-h)
        inc_half = f[:-1] * -math.expm1(-h / 2)
    else:
        st = _stencil(f)[:, :-1]
        inc = _weights(h, 1.0) @ st
        inc_half = _weights(h, 0.5) @ st
    o = np.empty(n, complex)
    o[0] = 0.0
    for j in range(n - 1):
        o[j + 1] = decay * o[j] + inc[j]
    mid = half * o[:-1] + inc_half
    return o, mid


@dataclass(frozen=True)
class SmoothedTrace:
    xi: np.ndarray
    o: np.ndarray
    residual: float
    norm_sq: float

    @property
    def l2_norm(self) -> float:
        return math.sqrt(self.norm_sq)


def exp_smoothing(f: SampledPotential) -> SmoothedTrace:
    """``o_f(x) = exp(-x) int_{-inf}^x f(y) exp(y) dy`` on the grid.

    ``norm_sq`` is ``||o_f||^2`` including the exact exponential tail
    beyond the grid. ``residual`` is the largest cell average of
    ``|o' + o - f|`` (Simpson with exact midpoints), relative to
    ``1 + max|f|``.
    """
    if f.samples[0] != 0:
        raise GridError("f must vanish at the left edge of the grid")
    h = f.dx
    o, mid = _smooth(f.samples, h, f.piecewise_constant)
    if not np.all(np.isfinite(o)):
        raise NlsScatError("non-finite smoothing recurrence")
    if f.piecewise_constant:
        f_int = f.samples[:-1] * h
    else:
        f_int = _antiderivative_weights(h, 1.0) @ _stencil(f.samples)[:, :-1]
    o_int = h / 6 * (o[:-1] + 4 * mid + o[1:])
    res = np.abs(o[1:] - o[:-1] + o_int - f_int) / h
    scale = 1 + float(np.max(np.abs(f.samples)))
    residual = float(np.max(res)) / scale if res.size else 0.0
    mod2 = np.abs(o) ** 2
    body = h / 6 * math.fsum(mod2[:-1] + 4 * np.abs(mid) ** 2 + mod2[1:])
    norm_sq = body + abs(o[-1]) ** 2 / 2
    return SmoothedTrace(f.xi, o, residual, norm_sq)


@dataclass(frozen=True)
class OscillationSum:
    windows: np.ndarray
    terms: np.ndarray
    total: float
    component_terms: np.ndarray = field(default=None)


def antiderivative(f: SampledPotential):
    """``g(x) = int_{x_min}^x f`` at nodes and cell midpoints (exact for the model)."""
    h = f.dx
    if f.piecewise_constant:
        cell = f.samples[:-1] * h
        half = f.samples[:-1] * h / 2
    else:
        st = _stencil(f.samples)[:, :-1]
        cell = _antiderivative_weights(h, 1.0) @ st
        half = _antiderivative_weights(h, 0.5) @ st
    g = np.concatenate([[0], np.cumsum(cell)])
    mid = g[:-1] + half
    return g, mid


def default_oscillation_windows(f: SampledPotential, offset=0.0, guard=GUARD_WINDOWS):
    if f.is_zero:
        return range(0, 0)
    lo, hi = f.support
    return range(math.floor(lo - offset) - 1 - guard, math.ceil(hi - offset) + guard + 1)


def oscillation_sum(f: SampledPotential, windows=None, offset: float = 0.0, g_shift: complex = 0.0,
                    extend: bool = True) -> OscillationSum:
    """``sum_k int_{I_k} |g - <g>_{I_k}|^2`` with ``I_k = [k + offset, k + offset + 2]``.

    ``g`` is the antiderivative fixed by ``g(x_min) = g_shift``; beyond the
    grid it is continued by constants (``f`` vanishes there). Each window
    integral uses Simpson on cells with exact midpoints, which is exact for
    piecewise-constant ``f``. ``component_terms`` splits every term into the
    real and imaginary parts of ``g``.
    """
    if windows is None:
        windows = default_oscillation_windows(f, offset)
    windows = np.array([int(k) for k in windows], dtype=int)
    h = f.dx
    m = 2.0 / h
    if abs(m - round(m)) > 1e-9 * m:
        raise GridError(f"grid spacing {h} does not divide the window length 2")
    m = int(round(m))
    g, gmid = antiderivative(f)
    g = g + g_shift
    gmid = gmid + g_shift
    n = g.size
    comp = np.zeros((windows.size, 2))
    missing = []
    for i, k in enumerate(windows):
        start = (k + offset - f.xi0) / h
        if abs(start - round(start)) > 1e-6:
            raise GridError(f"window start {k + offset} is not a grid node")
        idx = int(round(start)) + np.arange(m + 1)
        if (idx[0] < 0 or idx[-1] >= n) and not extend:
            missing.append(int(k))
            continue
        nodes = g[np.clip(idx, 0, n - 1)]
        cells = idx[:-1]
        mids = np.where(cells < 0, g[0], np.where(cells >= n - 1, g[-1], gmid[np.clip(cells, 0, n - 2)]))
        for c, part in enumerate((np.real, np.imag)):
            gn, gm = part(nodes), part(mids)
            mean = h / 6 * math.fsum(gn[:-1] + 4 * gm + gn[1:]) / 2
            dn, dm = (gn - mean) ** 2, (gm - mean) ** 2
            comp[i, c] = h / 6 * math.fsum(dn[:-1] + 4 * dm + dn[1:])
    if missing:
        raise CoverageError(f"windows {missing} extend beyond the grid", windows=tuple(missing))
    terms = comp.sum(axis=1)
    return OscillationSum(windows, terms, math.fsum(terms), comp)


@dataclass(frozen=True)
class TailAverage:
    xi: np.ndarray
    O: np.ndarray
    sup_norm: float


def tail_average(q: SampledPotential) -> TailAverage:
    """``O(x) = exp(x) int_x^inf exp(-s) Q(s) ds`` by backward recurrence.

    ``Q = [[-Im q, -Re q], [-Re q, Im q]]`` is linear in ``q``, so ``O`` is
    the same matrix built from the scalar ``exp(x) int_x^inf exp(-s) q ds``.
    Its operator norm equals the modulus of that scalar.
    """
    h = q.dx
    if q.samples[-1] != 0:
        raise GridError("q must vanish at the right edge of the grid")
    if q.piecewise_constant:
        inc = q.samples[:-1] * -math.expm1(-h)
        ob = np.empty(q.n, complex)
        ob[-1] = 0
        for j in range(q.n - 2, -1, -1):
            ob[j] = math.exp(-h) * ob[j + 1] + inc[j]
    else:
        ob = _smooth(q.samples[::-1], h, False)[0][::-1]
    O = np.empty((q.n, 2, 2))
    O[:, 0, 0] = -ob.imag
    O[:, 0, 1] = O[:, 1, 0] = -ob.real
    O[:, 1, 1] = ob.imag
    return TailAverage(q.xi, O, float(np.max(np.abs(ob))))


# ---------------------------------------------------------------- equivalence


@dataclass
class EquivalenceReport:
    l2_norm: float
    h_fourier: float = math.nan
    h_smoothing: float = math.nan
    h_oscillation: float = math.nan
    k_tilde: float = math.nan
    ratio_ktilde: float = math.nan
    ratio_oscillation: float = math.nan
    failures: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def equivalence_report(q: SampledPotential, offset: float = 0.0) -> EquivalenceReport:
    """``||q||^2_{H^-1}`` by three routes plus ``K~_Q``; failed routes are tagged."""
    rep = EquivalenceReport(q.l2_norm())
    routes = {
        "h_fourier": lambda: sobolev_norm(q, -1.0) ** 2,
        "h_smoothing": lambda: exp_smoothing(q).norm_sq,
        "h_oscillation": lambda: oscillation_sum(q, offset=offset).total,
        "k_tilde": lambda: k_tilde(q, offset=offset).K_tilde,
    }
    for name, fn in routes.items():
        try:
            setattr(rep, name, float(fn()))
        except NlsScatError as exc:
            rep.failures[name] = f"{type(exc).__name__}: {exc}"
    if rep.h_fourier > 0:
        rep.ratio_ktilde = rep.k_tilde / rep.h_fourier
        rep.ratio_oscillation = rep.h_oscillation / rep.h_fourier
    else:
        rep.failures.setdefault("ratios", "undefined: zero H^-1 norm")
    return rep


def fit_envelope(R, ratios):
    """Constants ``C1, C2 >= 0`` with ``-C1 R <= log(ratio/rho0) <= C2 R``.

    ``rho0`` is the ratio at the smallest ``R``; points are (R, ratio) pairs
    from an amplitude sweep of one potential shape.
    """
    R = np.asarray(R, float)
    ratios = np.asarray(ratios, float)
    if R.size < 2 or np.any(R <= 0) or np.any(ratios <= 0):
        raise ParameterError("R", "envelope fit needs at least two positive (R, ratio) points")
    order = np.argsort(R)
    R, ratios = R[order], ratios[order]
    dev = np.log(ratios) - math.log(ratios[0])
    c2 = max(0.0, float(np.max(dev[1:] / R[1:])))
    c1 = max(0.0, float(np.max(-dev[1:] / R[1:])))
    return c1, c2, float(ratios[0])
