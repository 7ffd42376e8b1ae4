"""Entropy of the Dirac operator and the window functional built from H = N*N.

Here the spectral variable is the Dirac-operator one: ``D_Q X = z X`` with
``D_Q X = J X' + Q X``, ``J = [[0, -1], [1, 0]]`` and
``Q = [[-Im q, -Re q], [-Re q, Im q]]``. It equals the Krein parameter, so
``K_Q(z) = 2 log|a_K(z)|`` where ``a_K(mu) = fa+ fa- - fb+ fb-``; in the
variable of ``scattering.transition_coefficients`` this is
``2 log|a(2z)|``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import scattering as sc
from .errors import AccuracyWarning, ConsistencyError, CoverageError, GridError, IntegrationError, ParameterError
from .potentials import SampledPotential

GUARD_WINDOWS = 2
ROUTE_TOL = 0.05


@dataclass(frozen=True)
class HamiltonianTrace:
    xi: np.ndarray
    H: np.ndarray
    det_residual: float

    @property
    def dx(self) -> float:
        return float(self.xi[1] - self.xi[0])


@dataclass
class EntropyReport:
    K_full: float = math.nan
    K_tilde: float = math.nan
    window_terms: dict = field(default_factory=dict)
    K_plus: float = math.nan
    K_minus: float = math.nan
    splitting_residual: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["window_terms"] = {str(k): v for k, v in sorted(self.window_terms.items())}
        return json.dumps(d, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x)}")


# ---------------------------------------------------------------- N_Q and H_Q


def szego_solution(q: SampledPotential, span=None, z: complex = 0.0) -> sc.MatrixTrajectory:
    """Solution of ``J N' + Q N = z N``, ``N(0) = I`` on the node interval ``span``.

    Equivalently ``N' = J (Q - z) N`` with
    ``J (Q - z) = [[Re q, -Im q + z], [-Im q - z, -Re q]]``. For real ``z``
    the solution is real.
    """
    z = complex(z)
    lo, hi = span if span is not None else q.span
    sc.mg.check_growth(z.imag, hi - lo, (lo, hi))

    def generator(v1, v2):
        return ((v1.real, -v1.imag + z, -v1.imag - z), (v2.real, -v2.imag + z, -v2.imag - z))

    traj = sc.node_trajectory(q, (lo, hi), generator, z)
    if z.imag == 0:
        traj = sc.MatrixTrajectory(traj.xi, traj.values.real.copy(), z)
    return traj


def hamiltonian(N: sc.MatrixTrajectory) -> HamiltonianTrace:
    """``H = N* N`` at every node, with symmetry and determinant checks."""
    v = np.asarray(N.values)
    H = np.einsum("nji,njk->nik", v.conj(), v)
    if np.iscomplexobj(H):
        if np.max(np.abs(H.imag)) > 1e-10 * max(1.0, np.max(np.abs(H.real))):
            raise ParameterError("N", "Hamiltonian is not real; N must be real")
        H = H.real
    det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0]
    res = float(np.max(np.abs(det - 1)))
    if res > 1e-6:
        raise IntegrationError(f"det H deviates from 1 by {res:.3e}; upstream integration is inaccurate")
    H = 0.5 * (H + np.swapaxes(H, 1, 2))
    # project back onto det H = 1 so accumulated roundoff does not bias window terms
    H = H / np.sqrt(H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0])[:, None, None]
    return HamiltonianTrace(np.asarray(N.xi, float), H, res)


def _simpson_weights(m, h):
    if m % 2:
        raise GridError(f"Simpson needs an even number of cells per window, got {m}")
    w = np.full(m + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    # exact total length so that constant H gives an exactly vanishing term
    return w * (m * h / math.fsum(w))


def ktilde(H: HamiltonianTrace, windows, offset: float = 0.0, extend: bool = False) -> EntropyReport:
    """Window terms ``det(int_{k+o}^{k+o+2} H) - 4`` by composite Simpson.

    With ``extend=True`` the trace is continued by its edge values, which is
    exact when the generating potential vanishes beyond the trace.
    """
    windows = [int(k) for k in windows]
    dx = H.dx
    m = 2.0 / dx
    if abs(m - round(m)) > 1e-9 * m:
        raise GridError(f"grid spacing {dx} does not divide the window length 2")
    m = int(round(m))
    w = _simpson_weights(m, 2.0 / m)
    x0 = float(H.xi[0])
    n = H.xi.size
    missing = []
    terms = {}
    for k in windows:
        start = (k + offset - x0) / dx
        if abs(start - round(start)) > 1e-6:
            raise GridError(f"window start {k + offset} is not a grid node")
        idx = int(round(start)) + np.arange(m + 1)
        if (idx[0] < 0 or idx[-1] >= n) and not extend:
            missing.append(k)
            continue
        block = H.H[np.clip(idx, 0, n - 1)]
        integral = np.tensordot(w, block, axes=(0, 0))
        terms[k] = float(integral[0, 0] * integral[1, 1] - integral[0, 1] * integral[1, 0] - 4.0)
    if missing:
        raise CoverageError(f"windows {missing} extend beyond the trace", windows=tuple(missing))
    total = math.fsum(terms[k] for k in windows)
    return EntropyReport(K_tilde=total, window_terms=terms)


def default_windows(q: SampledPotential, offset: float = 0.0, guard: int = GUARD_WINDOWS):
    """Integers ``k`` whose window ``[k+o, k+o+2]`` meets the support, plus guards."""
    if q.is_zero:
        return range(0, 0)
    lo, hi = q.support
    first = math.floor(lo - offset) - 1 - guard
    last = math.ceil(hi - offset) + guard
    return range(first, last + 1)


def k_tilde(q: SampledPotential, windows=None, offset: float = 0.0) -> EntropyReport:
    """``K~_Q`` from the Szego solution over the grid (constant continuation outside)."""
    if windows is None:
        windows = default_windows(q, offset)
    if q.is_zero:
        return EntropyReport(K_tilde=0.0, window_terms={int(k): 0.0 for k in windows})
    N = szego_solution(q)
    return ktilde(hamiltonian(N), windows, offset, extend=True)


# ---------------------------------------------------------------- K_Q and Weyl functions


def a_dirac(q: SampledPotential, z: complex) -> complex:
    """``a_K(z) = fa+ fa- - fb+ fb-`` at Krein parameter ``z``."""
    return sc.a_upper_half(q, 2 * complex(z))


def entropy_kq(q: SampledPotential, table: sc.ScatteringTable | None = None, z: complex = 1j,
               report: bool = False):
    """``K_Q(z) = 2 log|a_K(z)|``, cross-checked against the outer-function route.

    Raises ConsistencyError when the two values of ``|a|`` differ by more
    than 5 %.
    """
    z = complex(z)
    ode = a_dirac(q, z)
    if table is None:
        table = sc.transition_coefficients(q)
    outer, diag = sc.a_from_reflection(table.r, table.lambda_grid, 2 * z, report=True)
    rel = abs(abs(outer) / abs(ode) - 1)
    if rel > ROUTE_TOL:
        raise ConsistencyError(
            f"|a| routes disagree by {rel:.2%}", values={"ode": ode, "outer": outer}
        )
    value = 2 * math.log(abs(ode))
    if report:
        return value, {"a_ode": ode, "a_outer": outer, "route_rel_diff": rel,
                       "clamp_hits": diag.clamp_hits, "outer_tail": diag.tail}
    return value


def weyl_pair(q: SampledPotential, z: complex):
    """Half-line Weyl functions ``m_+- = i (fa - fb)/(fa + fb)`` at ``z``."""
    z = complex(z)
    if not z.imag > 0:
        raise ParameterError("z", f"need Im z > 0, got {z}")
    w = sc.wall_limits(q, np.array([z]))
    m_plus = complex(1j * (w.a_plus[0] - w.b_plus[0]) / (w.a_plus[0] + w.b_plus[0]))
    m_minus = complex(1j * (w.a_minus[0] - w.b_minus[0]) / (w.a_minus[0] + w.b_minus[0]))
    if not (m_plus.imag > 0 and m_minus.imag > 0):
        raise ConsistencyError(
            f"Weyl function left the upper half-plane: m+ = {m_plus}, m- = {m_minus}",
            values={"m_plus": m_plus, "m_minus": m_minus},
        )
    return m_plus, m_minus


def poisson_integral(f, grid, z: complex):
    """``(1/pi) int f(t) Im z / |t - z|^2 dt`` and its tail part."""
    total, tail, _ = sc.cauchy_integral(f, grid, z)
    return total.imag / math.pi, tail.imag / math.pi


def entropy_split(q: SampledPotential, z: complex = 1j, grid=None, K_full: float | None = None) -> EntropyReport:
    """Half-line entropies ``K+-`` at ``z`` and the splitting residual.

    ``K+-(z) = log Im m+-(z) - P[log Im m+-](z)`` with ``P`` the Poisson
    integral; on the real line ``Im m = 1/|fa + fb|^2``.
    """
    z = complex(z)
    grid = sc.default_lambda_grid() if grid is None else np.asarray(grid, float)
    m_plus, m_minus = weyl_pair(q, z)
    w = sc.wall_limits(q, grid)
    out = {}
    tails = {}
    for side, fa, fb, m in (("plus", w.a_plus, w.b_plus, m_plus), ("minus", w.a_minus, w.b_minus, m_minus)):
        log_im = -2 * np.log(np.abs(fa + fb))
        p, tail = poisson_integral(log_im, grid, z)
        value = math.log(m.imag) - p
        if abs(tail) > 0.01 * abs(value) and abs(tail) > 1e-8:
            warnings.warn(f"Poisson tail {tail:.2e} is large relative to K_{side} = {value:.3e}",
                          AccuracyWarning, stacklevel=2)
        out[side] = value
        tails[side] = tail
    if K_full is None:
        K_full = 2 * math.log(abs(a_dirac(q, z)))
    det_im = 4 * m_plus.imag * m_minus.imag / abs(m_plus + m_minus) ** 2
    residual = out["plus"] + out["minus"] - math.log(det_im) - K_full
    return EntropyReport(
        K_full=K_full,
        K_plus=out["plus"],
        K_minus=out["minus"],
        splitting_residual=residual,
        diagnostics={"m_plus": m_plus, "m_minus": m_minus, "poisson_tail_plus": tails["plus"],
                     "poisson_tail_minus": tails["minus"]},
    )


def entropy_report(q: SampledPotential, z: complex = 1j, table: sc.ScatteringTable | None = None) -> EntropyReport:
    """Full report: ``K_Q``, ``K~_Q`` with window terms, ``K+-`` and the residual."""
    K, route = entropy_kq(q, table, z, report=True)
    split = entropy_split(q, z, K_full=K)
    kt = k_tilde(q)
    diag = dict(route)
    diag.update(split.diagnostics)
    return EntropyReport(K, kt.K_tilde, kt.window_terms, split.K_plus, split.K_minus,
                         split.splitting_residual, diag)
