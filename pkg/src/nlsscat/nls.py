"""Defocusing NLS ``i q_t = -q_xx + 2|q|^2 q`` by Strang split-step Fourier.

The potential grid is the periodic box. Over a substep ``tau`` the
nonlinear flow is ``q -> q exp(-2i |q|^2 tau)``, exact because it preserves
``|q|``; the linear flow is the Fourier multiplier ``exp(-i eta^2 tau)``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import scattering as sc
from .errors import BoxSizeError, ParameterError
from .potentials import SampledPotential, check_sobolev_index, sobolev_norm

log = logging.getLogger(__name__)

GUARD_FRACTION = 1 / 16
LEAK_TOL = 1e-8
SNAPSHOT_CUTOFF = 1e-10
MONITOR_EVERY = 10


@dataclass
class EvolutionLog:
    times: np.ndarray
    l2_norm: np.ndarray
    log_a_i: np.ndarray
    hs_norms: dict = field(default_factory=dict)
    window_flags: dict = field(default_factory=dict)
    r_mismatch: np.ndarray | None = None
    discarded_mass: np.ndarray | None = None
    leaked_mass: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ParameterError("times", "log times must be strictly increasing")
        for name in ("l2_norm", "log_a_i"):
            v = np.asarray(getattr(self, name), float)
            if v.shape != self.times.shape:
                raise ParameterError(name, "must have one entry per log time")
            setattr(self, name, v)

    def l2_drift(self) -> float:
        return float(np.max(np.abs(self.l2_norm / self.l2_norm[0] - 1))) if self.l2_norm[0] > 0 else 0.0

    def log_a_drift(self) -> float:
        return float(np.max(np.abs(self.log_a_i - self.log_a_i[0])))

    def columns(self):
        cols = {"time": self.times, "l2": self.l2_norm, "log_a_i": self.log_a_i}
        for s in sorted(self.hs_norms):
            cols[f"h_s={s!r}"] = np.asarray(self.hs_norms[s], float)
        if self.r_mismatch is not None:
            cols["r_mismatch"] = np.asarray(self.r_mismatch, float)
        if self.discarded_mass is not None:
            cols["discarded_mass"] = np.asarray(self.discarded_mass, float)
        return cols

    def to_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            fh.write(f"# leaked_mass={self.leaked_mass!r}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([f"{v:.17g}" for v in row])

    def to_json(self) -> str:
        d = {k: v.tolist() for k, v in self.columns().items()}
        d["window_flags"] = {repr(s): np.asarray(f, bool).tolist() for s, f in sorted(self.window_flags.items())}
        d["leaked_mass"] = self.leaked_mass
        return json.dumps(d, indent=2, sort_keys=True)


# ---------------------------------------------------------------- grids


def periodic_box(q0: SampledPotential, factor: float = 8.0) -> SampledPotential:
    """Embed ``q0`` in a zero-padded box at least ``factor`` times its support width.

    The spacing is kept, the origin stays a node, and the box length is a
    power of two in samples.
    """
    if q0.piecewise_constant:
        raise ParameterError("q0", "split-step evolution needs point samples")
    if q0.is_zero:
        return q0
    lo, hi = q0.support
    width = max(hi - lo, q0.dx)
    center = 0.5 * (lo + hi)
    need = max(factor * width, q0.span[1] - q0.span[0])
    n = 1 << int(math.ceil(math.log2(need / q0.dx + 1)))
    start = round((center - 0.5 * n * q0.dx - q0.xi0) / q0.dx)
    xi0 = q0.xi0 + start * q0.dx
    out = np.zeros(n, complex)
    src = np.arange(q0.n)
    dst = src - start
    ok = (dst >= 0) & (dst < n)
    if np.any(q0.samples[~ok] != 0):
        raise BoxSizeError("support does not fit the padded box", leaked_mass=float("nan"))
    out[dst[ok]] = q0.samples[src[ok]]
    return SampledPotential(out, q0.dx, xi0, label=q0.label)


def _guard_mass(q, band):
    m = np.abs(q) ** 2
    return float((m[:band].sum() + m[-band:].sum()) / max(m.sum(), 1e-300))


def _step_schedule(t_final, dt, times):
    if not dt > 0:
        raise ParameterError("dt", f"time step must be positive, got {dt}")
    if t_final == 0:
        return 0, 0.0, [0 for _ in times]
    nsteps = int(math.ceil(abs(t_final) / dt - 1e-9))
    h = t_final / nsteps
    marks = []
    for t in times:
        k = t / h
        if abs(k - round(k)) > 1e-6 or not 0 <= round(k) <= nsteps:
            raise ParameterError("times", f"log time {t} is not on the step grid of size {abs(h)}")
        marks.append(int(round(k)))
    return nsteps, h, marks


def _evolve(q0: SampledPotential, t_final: float, dt: float, times, monitor: bool = True):
    """Yield ``(t, samples)`` at each requested time (sorted by |t|)."""
    nsteps, h, marks = _step_schedule(t_final, dt, times)
    q = np.array(q0.samples, complex)
    eta = 2 * math.pi * np.fft.fftfreq(q0.n, q0.dx)
    lin = np.exp(-1j * eta**2 * h)
    band = max(1, int(q0.n * GUARD_FRACTION))
    leaked = _guard_mass(q, band) if monitor and np.any(q) else 0.0
    pending = sorted(zip(marks, times))
    while pending and pending[0][0] == 0:
        yield pending.pop(0)[1], q.copy(), leaked
    for k in range(1, nsteps + 1):
        q *= np.exp(-1j * np.abs(q) ** 2 * h)
        q = np.fft.ifft(lin * np.fft.fft(q))
        q *= np.exp(-1j * np.abs(q) ** 2 * h)
        if monitor and (k % MONITOR_EVERY == 0 or k == nsteps):
            leaked = max(leaked, _guard_mass(q, band))
            if leaked > LEAK_TOL:
                raise BoxSizeError(
                    f"mass fraction {leaked:.2e} reached the guard bands at t = {k * h:.4g}; enlarge the box",
                    leaked_mass=leaked,
                )
        while pending and pending[0][0] == k:
            yield pending.pop(0)[1], q.copy(), leaked


def evolve_split_step(q0: SampledPotential, t_final: float, dt: float, monitor: bool = True):
    """Evolve to ``t_final`` (may be negative); returns ``(q(t_final), log)``.

    The log holds the L2 norm at ``0`` and ``t_final``; ``log_a_i`` is left
    as NaN (see ``conservation_report``). With ``monitor`` the outer
    ``1/16`` of the box on each side must keep less than ``1e-8`` of the mass.
    """
    times = [0.0, float(t_final)] if t_final != 0 else [0.0]
    out = {}
    leaked = 0.0
    for t, q, leaked in _evolve(q0, t_final, dt, times, monitor):
        out[t] = q
    final = q0.replace(out[times[-1]], support=(q0.span[0], q0.span[1]))
    l2 = [math.sqrt(q0.dx * np.sum(np.abs(out[t]) ** 2)) for t in times]
    order = np.argsort(times)
    ev = EvolutionLog(np.array(times)[order], np.array(l2)[order], np.full(len(times), np.nan),
                      leaked_mass=leaked)
    return final, ev


def evolve_spectral(table: sc.ScatteringTable, t: float) -> sc.ScatteringTable:
    """``r(lam, t) = exp(-i lam^2 t) r(lam, 0)``; ``a`` unchanged, ``b = r a``."""
    phase = np.exp(-1j * table.lambda_grid**2 * t)
    r = table.r * phase
    return sc.ScatteringTable(table.lambda_grid, table.a.copy(), table.a * r, r, table.a_at_i,
                              table.truncation_radius, dict(table.diagnostics))


# ---------------------------------------------------------------- diagnostics


def truncate_snapshot(q: SampledPotential, cutoff: float = SNAPSHOT_CUTOFF):
    """Zero samples below ``cutoff * max|q|``; returns ``(potential, discarded L2 mass)``."""
    v = np.array(q.samples)
    mag = np.abs(v)
    if not mag.any():
        return q.replace(v, support=None), 0.0
    small = mag < cutoff * mag.max()
    discarded = float(q.dx * np.sum(mag[small] ** 2))
    v[small] = 0
    return q.replace(v, support=None), discarded


def window_flag(norm_t: float, norm_0: float, s: float, R: float, kappa=(1.0, 1.0), slack: float = 1e-6) -> bool:
    """Whether ``||q(t)||_{H^s}`` lies in the configured Sobolev window.

    For ``s`` in ``[-1, 0]``: ``ratio in [k1 (1+R)^{2s}, k2 (1+R)^{-2s}]``.
    For ``s`` in ``(0, 1/2)``: ``||q(t)|| <= k2 (R^{1+2s} + ||q0||)``.
    ``slack`` is a relative allowance for discretisation error.
    """
    k1, k2 = kappa
    if s <= 0:
        if norm_0 == 0:
            return norm_t == 0
        ratio = norm_t / norm_0
        lo = k1 * (1 + R) ** (2 * s) * (1 - slack)
        hi = k2 * (1 + R) ** (-2 * s) * (1 + slack)
        return bool(lo <= ratio <= hi)
    return bool(norm_t <= k2 * (R ** (1 + 2 * s) + norm_0) * (1 + slack))


def conservation_report(q0: SampledPotential, times, dt: float = 5e-4, s_list=(), lambda_grid=None,
                        kappa=(1.0, 1.0), monitor: bool = True, snapshots: dict | None = None) -> EvolutionLog:
    """Evolve ``q0`` and record invariants at each time in ``times``.

    Per time: L2 norm, ``log|a(i)|`` from scattering of the truncated
    snapshot, ``H^s`` norms and window flags for ``s_list``. With
    ``lambda_grid`` also the sup mismatch between the directly computed
    ``r(lam, t)`` and ``exp(-i lam^2 t) r(lam, 0)``, relative to
    ``sup |r(lam, 0)|``. Snapshots are stored in ``snapshots`` if given.
    """
    times = [float(t) for t in times]
    if not times:
        raise ParameterError("times", "need at least one log time")
    s_list = [check_sobolev_index(s) for s in s_list]
    t_final = max(times, key=abs)
    if any(t * t_final < 0 for t in times):
        raise ParameterError("times", "log times must share one sign")
    r0_table = None
    rows = []
    leaked = 0.0
    for t, v, leaked in _evolve(q0, t_final, dt, times, monitor):
        snap, discarded = truncate_snapshot(q0.replace(v, support=(q0.span[0], q0.span[1])))
        if discarded:
            log.info("t=%g: discarded L2 mass %.3e below cutoff", t, discarded)
        if snapshots is not None:
            snapshots[t] = snap
        l2 = math.sqrt(q0.dx * np.sum(np.abs(v) ** 2))
        if snap.is_zero:
            log_a = 0.0
        else:
            log_a = math.log(abs(sc.a_upper_half(snap, 1j)))
        hs = {s: sobolev_norm(snap, s) for s in s_list}
        mismatch = math.nan
        if lambda_grid is not None:
            tab = sc.transition_coefficients(snap, lambda_grid)
            if r0_table is None:
                r0_table = tab if t == 0 else None
            if r0_table is None:
                raise ParameterError("times", "the r comparison needs t = 0 among the log times")
            ref = evolve_spectral(r0_table, t).r
            scale = float(np.max(np.abs(r0_table.r)))
            mismatch = float(np.max(np.abs(tab.r - ref)) / scale) if scale > 0 else 0.0
        rows.append((t, l2, log_a, hs, mismatch, discarded))
    rows.sort(key=lambda row: row[0])
    ts = np.array([row[0] for row in rows])
    ev = EvolutionLog(
        ts,
        np.array([row[1] for row in rows]),
        np.array([row[2] for row in rows]),
        {s: np.array([row[3][s] for row in rows]) for s in s_list},
        r_mismatch=np.array([row[4] for row in rows]) if lambda_grid is not None else None,
        discarded_mass=np.array([row[5] for row in rows]),
        leaked_mass=leaked,
    )
    R = q0.l2_norm()
    for s in s_list:
        norms = ev.hs_norms[s]
        ref = sobolev_norm(q0, s)
        ev.window_flags[s] = np.array([window_flag(nt, ref, s, R, kappa) for nt in norms])
    return ev


def sobolev_window_check(q0: SampledPotential, s: float, times, dt: float = 5e-4, kappa=(1.0, 1.0)):
    """Per-time window flags for one Sobolev index (violations are data)."""
    s = check_sobolev_index(s)
    ev = conservation_report(q0, times, dt, s_list=[s], kappa=kappa)
    return ev.window_flags[s]
