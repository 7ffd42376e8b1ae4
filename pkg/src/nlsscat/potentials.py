"""Sampled potentials, Fourier-side Sobolev norms and scattering symmetries.

A potential is stored on a uniform grid ``xi_j = xi0 + j*dx``. Two sample
models are supported:

* point samples (default): ``samples[j] = q(xi_j)`` of a smooth function;
* piecewise constant: ``samples[j]`` is the value of ``q`` on the cell
  ``[xi_j, xi_j + dx)``. Box potentials use this model so that the
  integrators and norms treat them exactly.

The Fourier transform is the unitary one, ``(Fq)(eta) = (2 pi)^(-1/2)
int q(x) exp(-i eta x) dx``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import GridAdequacyWarning, GridError, ParameterError

FAMILIES = ("zero", "gaussian", "box", "modulated_gaussian", "random_bandlimited")
SYMMETRIES = ("dilate", "conjugate", "translate", "modulate", "rotate")

# Gaussian tails below this fraction of the peak are set to exactly zero.
GAUSSIAN_CUTOFF = 1e-18


@dataclass(frozen=True)
class SampledPotential:
    """Complex potential on a uniform grid.

    ``support`` is the closed interval outside of which every sample is
    exactly zero, or ``None`` for the zero potential.
    """

    samples: np.ndarray
    dx: float
    xi0: float
    support: tuple[float, float] | None = None
    piecewise_constant: bool = False
    label: str = field(default="", compare=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=complex)
        if samples.ndim != 1 or samples.size < 2:
            raise ParameterError("samples", "need a 1-d array with at least 2 samples")
        if not (self.dx > 0 and math.isfinite(self.dx)):
            raise ParameterError("dx", f"grid spacing must be positive, got {self.dx}")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("samples", "non-finite sample values")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "xi0", float(self.xi0))
        tight = _tight_support(samples, self.dx, self.xi0, self.piecewise_constant)
        if self.support is None:
            object.__setattr__(self, "support", tight)
        elif tight is not None:
            lo, hi = self.support
            slack = 1e-9 * self.dx
            if tight[0] < lo - slack or tight[1] > hi + slack:
                raise ParameterError(
                    "support", f"nonzero samples on {tight} outside declared support {self.support}"
                )

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def xi(self) -> np.ndarray:
        return self.xi0 + self.dx * np.arange(self.n)

    @property
    def span(self) -> tuple[float, float]:
        return self.xi0, self.xi0 + (self.n - 1) * self.dx

    @property
    def is_zero(self) -> bool:
        return self.support is None

    def l2_norm(self) -> float:
        """Discrete L2 norm ``(dx * sum |q_j|^2)^(1/2)``.

        Exact for the piecewise-constant model; for point samples of a
        compactly supported function it is the trapezoid rule.
        """
        return float(math.sqrt(self.dx * np.sum(np.abs(self.samples) ** 2)))

    def node_index(self, x: float) -> int | None:
        """Index of the grid node at ``x``, or None if ``x`` is not a node."""
        j = (x - self.xi0) / self.dx
        jr = round(j)
        if abs(j - jr) > 1e-9 or not (0 <= jr < self.n):
            return None
        return int(jr)

    def replace(self, samples, support=None, piecewise_constant=None, label=None) -> "SampledPotential":
        return SampledPotential(
            samples,
            self.dx,
            self.xi0,
            support=support,
            piecewise_constant=self.piecewise_constant if piecewise_constant is None else piecewise_constant,
            label=self.label if label is None else label,
        )


def _tight_support(samples, dx, xi0, piecewise_constant):
    nz = np.flatnonzero(samples)
    if nz.size == 0:
        return None
    lo = xi0 + nz[0] * dx
    hi = xi0 + nz[-1] * dx
    if piecewise_constant:
        hi += dx
    return float(lo), float(hi)


@dataclass(frozen=True)
class FrequencyGrid:
    eta: np.ndarray
    d_eta: float

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if eta.ndim != 1 or eta.size < 2 or self.d_eta <= 0:
            raise ParameterError("eta", "need a 1-d grid and positive spacing")
        if not np.allclose(np.diff(eta), self.d_eta, rtol=1e-9, atol=1e-12 * self.d_eta):
            raise ParameterError("eta", "frequency grid must be uniform and increasing")
        object.__setattr__(self, "eta", eta)


@dataclass(frozen=True)
class GridReport:
    support_fraction: float
    tail_mass: float
    edge_mass: float
    adequate: bool
    reasons: tuple[str, ...] = ()


def check_sobolev_index(s: float) -> float:
    s = float(s)
    if not (-1.0 <= s < 0.5):
        raise ParameterError("s", f"Sobolev index {s} outside supported range [-1, 1/2)")
    return s


# ---------------------------------------------------------------- construction


def _amplitude(params, key="amp", default=1.0) -> complex:
    value = params.get(key, default)
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ParameterError(key, "complex amplitude must be a [re, im] pair")
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, complex):
        return value
    try:
        return complex(float(value))
    except (TypeError, ValueError):
        raise ParameterError(key, f"not a number: {value!r}") from None


def _positive(params, key, default):
    value = params.get(key, default)
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ParameterError(key, f"not a number: {value!r}") from None
    if not value > 0:
        raise ParameterError(key, f"must be positive, got {value}")
    return value


def _real(params, key, default):
    value = params.get(key, default)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ParameterError(key, f"not a number: {value!r}") from None


_ALLOWED = {
    "zero": set(),
    "gaussian": {"amp", "width", "center"},
    "box": {"amp", "left", "right"},
    "modulated_gaussian": {"amp", "width", "center", "beta"},
    "random_bandlimited": {"amp", "left", "right", "cutoff", "seed"},
}


def make_potential(family: str, params: Mapping | None = None, grid=(0.01, -20.0, 4001)) -> SampledPotential:
    """Build a potential from a named family on the grid ``(dx, xi0, n)``.

    Families and parameters (defaults in brackets):

    * ``zero``
    * ``gaussian``: amp [1], width [1], center [0]; ``amp*exp(-(x-c)^2/(2 w^2))``
    * ``box``: amp [1], left [0], right [1]; piecewise constant, a cell
      belongs to the box when its midpoint lies in ``[left, right)``
    * ``modulated_gaussian``: gaussian times ``exp(-i*beta*x)``, beta [0]
    * ``random_bandlimited``: amp [1], left [-4], right [4], cutoff [4],
      seed (required); random trigonometric sum with frequencies below
      ``cutoff`` under a smooth compact taper, normalised to L2 norm ``|amp|``
    """
    params = dict(params or {})
    if family not in _ALLOWED:
        raise ParameterError("family", f"unknown family {family!r}; expected one of {FAMILIES}")
    unknown = set(params) - _ALLOWED[family]
    if unknown:
        raise ParameterError(sorted(unknown)[0], f"not a parameter of family {family!r}")
    try:
        dx, xi0, n = grid
    except (TypeError, ValueError):
        raise ParameterError("grid", "expected (dx, xi0, n)") from None
    n = int(n)
    if n < 2:
        raise ParameterError("n", f"need at least 2 grid points, got {n}")
    if not dx > 0:
        raise ParameterError("dx", f"must be positive, got {dx}")
    xi = xi0 + dx * np.arange(n)

    if family == "zero":
        return SampledPotential(np.zeros(n, complex), dx, xi0, label="zero")

    if family in ("gaussian", "modulated_gaussian"):
        amp = _amplitude(params)
        width = _positive(params, "width", 1.0)
        center = _real(params, "center", 0.0)
        envelope = np.exp(-((xi - center) ** 2) / (2 * width**2))
        envelope[envelope < GAUSSIAN_CUTOFF] = 0.0
        q = amp * envelope
        if family == "modulated_gaussian":
            beta = _real(params, "beta", 0.0)
            q = q * np.exp(-1j * beta * xi)
        q[np.abs(q) == 0] = 0
        return SampledPotential(q, dx, xi0, label=family)

    if family == "box":
        amp = _amplitude(params)
        left = _real(params, "left", 0.0)
        right = _real(params, "right", 1.0)
        if not right > left:
            raise ParameterError("right", f"must exceed left ({left}), got {right}")
        mid = xi + 0.5 * dx
        inside = (mid >= left) & (mid < right)
        if inside[-1]:
            raise ParameterError("right", "box must end inside the grid")
        q = np.where(inside, amp, 0.0).astype(complex)
        return SampledPotential(q, dx, xi0, piecewise_constant=True, label="box")

    # random_bandlimited
    if "seed" not in params:
        raise ParameterError("seed", "random_bandlimited requires an explicit seed")
    seed = int(params["seed"])
    if not 0 <= seed < 2**64:
        raise ParameterError("seed", "seed must be a 64-bit unsigned integer")
    amp = _amplitude(params)
    left = _real(params, "left", -4.0)
    right = _real(params, "right", 4.0)
    cutoff = _positive(params, "cutoff", 4.0)
    if not right > left:
        raise ParameterError("right", f"must exceed left ({left}), got {right}")
    length = right - left
    rng = np.random.Generator(np.random.PCG64(seed))
    kmax = int(math.floor(cutoff * length / (2 * math.pi)))
    freqs = 2 * math.pi * np.arange(-kmax, kmax + 1) / length
    coeffs = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
    u = (xi - left) / length
    inside = (u > 0) & (u < 1)
    taper = np.where(inside, np.sin(np.pi * np.clip(u, 0, 1)) ** 4, 0.0)
    q = np.zeros(n, complex)
    q[inside] = (coeffs[None, :] * np.exp(1j * np.outer(xi[inside] - left, freqs))).sum(axis=1)
    q *= taper
    norm = math.sqrt(dx * np.sum(np.abs(q) ** 2))
    if norm > 0:
        q *= abs(amp) / norm * (amp / abs(amp) if amp != 0 else 0)
    return SampledPotential(q, dx, xi0, label="random_bandlimited")


def potential_from_function(f: Callable, grid, piecewise_constant=False, label="") -> SampledPotential:
    dx, xi0, n = grid
    xi = xi0 + dx * np.arange(int(n))
    where = xi + 0.5 * dx if piecewise_constant else xi
    return SampledPotential(np.asarray(f(where), complex), dx, xi0,
                            piecewise_constant=piecewise_constant, label=label)


# ---------------------------------------------------------------- Fourier side


def _padded_length(n, pad):
    return 1 << int(math.ceil(math.log2(max(pad * n, 16))))


def frequency_grid(q: SampledPotential, pad: int = 4) -> FrequencyGrid:
    m = _padded_length(q.n, pad)
    d_eta = 2 * math.pi / (m * q.dx)
    eta = d_eta * (np.arange(m) - m // 2)
    return FrequencyGrid(eta, d_eta)


def fourier_power(q: SampledPotential, pad: int = 4):
    """Return ``(grid, |D(eta)|^2 dx^2/(2 pi))`` on the band, ordered by eta.

    For point samples this is ``|Fq|^2`` to spectral accuracy. For the
    piecewise-constant model the exact transform is this quantity times
    ``sinc^2(eta dx/2)`` plus aliases, which ``weighted_energy`` accounts for.
    """
    grid = frequency_grid(q, pad)
    m = grid.eta.size
    d = np.fft.fftshift(np.fft.fft(q.samples, m))
    return grid, (np.abs(d) ** 2) * q.dx**2 / (2 * math.pi)


def _step_weight(weight, eta, dx, s_hint, n_alias=64):
    omega = 2 * math.pi / dx
    total = np.zeros_like(eta)
    for m in range(-n_alias, n_alias + 1):
        shifted = eta + m * omega
        total += weight(shifted) * np.sinc(shifted * dx / (2 * math.pi)) ** 2
    # remaining aliases behave like |m omega|^(2s) * (2/(m omega dx))^2 sin^2(eta dx/2)
    tail = 2 * omega ** (2 * s_hint - 2) * (n_alias + 0.5) ** (2 * s_hint - 1) / (1 - 2 * s_hint)
    total += tail * 4 / dx**2 * np.sin(eta * dx / 2) ** 2
    return total


def weighted_energy(q: SampledPotential, weight: Callable, pad: int = 4, s_hint: float = -1.0) -> float:
    """``int weight(eta) |Fq(eta)|^2 d eta`` with a fixed summation order."""
    grid, power = fourier_power(q, pad)
    if q.piecewise_constant:
        w = _step_weight(weight, grid.eta, q.dx, s_hint)
    else:
        w = weight(grid.eta)
    return float(math.fsum(w * power) * grid.d_eta)


def grid_report(q: SampledPotential, pad: int = 4) -> GridReport:
    """Grid adequacy: support within 3/4 of the window, negligible Nyquist tail."""
    lo, hi = q.span
    reasons = []
    if q.is_zero:
        return GridReport(0.0, 0.0, 0.0, True)
    s_lo, s_hi = q.support
    frac = (s_hi - s_lo) / (hi - lo)
    total = np.sum(np.abs(q.samples) ** 2)
    edge = float((abs(q.samples[0]) ** 2 + abs(q.samples[-1]) ** 2) / total)
    if frac > 0.75:
        reasons.append(f"support occupies {frac:.3f} of the window (> 3/4)")
    if q.piecewise_constant:
        tail = 0.0  # aliases are summed exactly by weighted_energy
    else:
        grid, power = fourier_power(q, pad)
        nyq = math.pi / q.dx
        tail = float(power[np.abs(grid.eta) > 0.9 * nyq].sum() / power.sum())
        if tail > 1e-6:
            reasons.append(f"spectral mass near Nyquist {tail:.2e} (> 1e-6)")
    if edge > 0:
        reasons.append("nonzero samples at the grid edge")
    return GridReport(frac, tail, edge, not reasons, tuple(reasons))


def _require_grid(q: SampledPotential):
    rep = grid_report(q)
    if rep.edge_mass > 0:
        raise GridError("potential support reaches the grid edge; norm would be truncated",
                        tail_mass=rep.edge_mass)
    if not rep.adequate:
        warnings.warn("; ".join(rep.reasons), GridAdequacyWarning, stacklevel=3)
    return rep


def sobolev_norm(q: SampledPotential, s: float, pad: int = 4) -> float:
    """``||q||_{H^s} = (int (1+eta^2)^s |Fq(eta)|^2 d eta)^(1/2)``."""
    s = check_sobolev_index(s)
    if q.is_zero:
        return 0.0
    _require_grid(q)
    return math.sqrt(weighted_energy(q, lambda e: (1 + e**2) ** s, pad, s_hint=s))


def shifted_h_minus_one(q: SampledPotential, v: float, pad: int = 4) -> float:
    """``(int |Fq(eta)|^2 / (1 + (eta+v)^2) d eta)^(1/2)``.

    Equals the H^-1 norm of ``exp(i v x) q(x)``, i.e. of
    ``apply_symmetry(q, "modulate", -v)``.
    """
    if q.is_zero:
        return 0.0
    _require_grid(q)
    v = float(v)
    return math.sqrt(weighted_energy(q, lambda e: 1.0 / (1 + (e + v) ** 2), pad))


# ---------------------------------------------------------------- symmetries


def trig_interpolate(q: SampledPotential, x: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Evaluate the trigonometric interpolant of point samples at ``x``.

    Points outside the grid span evaluate to zero.
    """
    x = np.asarray(x, float)
    n = q.n
    d = np.fft.fft(q.samples)
    k = np.fft.fftfreq(n) * n
    if n % 2 == 0:
        # split the Nyquist mode symmetrically so the interpolant is real for real data
        nyq = n // 2
        d = np.append(d, d[nyq] / 2)
        d[nyq] /= 2
        k = np.append(k, nyq)
        k[nyq] = -nyq
    eta = 2 * math.pi * k / (n * q.dx)
    out = np.zeros(x.shape, complex)
    lo, hi = q.span
    inside = np.flatnonzero((x >= lo - 1e-12) & (x <= hi + 1e-12))
    for start in range(0, inside.size, chunk):
        idx = inside[start:start + chunk]
        phase = np.exp(1j * np.outer(x[idx] - q.xi0, eta))
        out[idx] = phase @ d / n
    return out


def step_evaluate(q: SampledPotential, x: np.ndarray) -> np.ndarray:
    """Evaluate a piecewise-constant potential (cells ``[xi_j, xi_j+dx)``)."""
    j = np.floor((np.asarray(x, float) - q.xi0) / q.dx + 1e-12).astype(int)
    ok = (j >= 0) & (j < q.n)
    out = np.zeros(j.shape, complex)
    out[ok] = q.samples[j[ok]]
    return out


def apply_symmetry(q: SampledPotential, op: str, value=None) -> SampledPotential:
    """Apply one of the scattering symmetries on the same grid.

    * ``dilate``, alpha > 0: ``alpha * q(alpha x)``; r becomes ``r(lambda/alpha)``
    * ``conjugate``: ``conj(q)``; r becomes ``conj(r(-lambda))``
    * ``translate``, l: ``q(x - l)``; r becomes ``r * exp(-i lambda l)``
    * ``modulate``, beta: ``exp(-i beta x) q(x)``; r becomes ``r(lambda + beta)``
    * ``rotate``, mu with |mu| = 1: ``mu q``; r becomes ``mu r``

    Translation by a multiple of dx is an exact shift. Other shifts and
    dilations of point samples use band-limited (trigonometric)
    interpolation.
    """
    if op not in SYMMETRIES:
        raise ParameterError("op", f"unknown symmetry {op!r}; expected one of {SYMMETRIES}")
    xi = q.xi
    label = f"{q.label}|{op}"
    if op == "conjugate":
        return q.replace(np.conj(q.samples), label=label)
    if op == "rotate":
        mu = complex(value)
        if abs(abs(mu) - 1) > 1e-12:
            raise ParameterError("mu", f"rotation factor must be unimodular, |mu| = {abs(mu)}")
        return q.replace(mu * q.samples, label=label)
    if op == "modulate":
        beta = float(value)
        where = xi + 0.5 * q.dx if q.piecewise_constant else xi
        return q.replace(q.samples * np.exp(-1j * beta * where), label=label)
    if op == "translate":
        shift = float(value)
        steps = shift / q.dx
        if abs(steps - round(steps)) < 1e-9:
            return _shift_samples(q, int(round(steps)), label)
        if q.piecewise_constant:
            raise ParameterError("l", "piecewise-constant potentials translate only by multiples of dx")
        m = _padded_length(q.n, 2)
        d = np.fft.fft(q.samples, m)
        eta = 2 * math.pi * np.fft.fftfreq(m, q.dx)
        shifted = np.fft.ifft(d * np.exp(-1j * eta * shift))[: q.n]
        lo, hi = q.support if q.support else (0.0, 0.0)
        if lo + shift < q.span[0] or hi + shift > q.span[1]:
            raise GridError(f"translation by {shift} moves the support off the grid")
        new_lo, new_hi = lo + shift, hi + shift
        # outside the shifted support keep exact zeros
        shifted[(xi < new_lo - 3 * q.dx) | (xi > new_hi + 3 * q.dx)] = 0
        return q.replace(shifted, label=label)
    # dilate
    alpha = float(value)
    if not alpha > 0:
        raise ParameterError("alpha", f"dilation factor must be positive, got {alpha}")
    if q.is_zero:
        return q.replace(q.samples.copy(), label=label)
    lo, hi = q.support
    if lo / alpha < q.span[0] or hi / alpha > q.span[1]:
        raise GridError(f"dilation by {alpha} moves the support off the grid")
    if q.piecewise_constant:
        new = alpha * step_evaluate(q, alpha * (xi + 0.5 * q.dx))
    else:
        new = np.zeros(q.n, complex)
        keep = (xi >= lo / alpha - q.dx) & (xi <= hi / alpha + q.dx)
        new[keep] = alpha * trig_interpolate(q, alpha * xi[keep])
    return q.replace(new, label=label)


def _shift_samples(q, steps, label):
    out = np.zeros(q.n, complex)
    if steps >= 0:
        dropped = q.samples[q.n - steps:] if steps else np.zeros(0)
        out[steps:] = q.samples[: q.n - steps]
    else:
        dropped = q.samples[:-steps]
        out[:steps] = q.samples[-steps:]
    if np.any(dropped != 0):
        raise GridError(f"translation by {steps} cells moves the support off the grid")
    return q.replace(out, label=label)


# ---------------------------------------------------------------- CSV


def save_potential_csv(q: SampledPotential, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# dx={q.dx!r},xi0={q.xi0!r},piecewise_constant={int(q.piecewise_constant)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["xi", "re_q", "im_q"])
        for x, v in zip(q.xi, q.samples):
            w.writerow([f"{x:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}"])


def load_potential_csv(path) -> SampledPotential:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                for item in line[1:].strip().split(","):
                    k, _, v = item.partition("=")
                    meta[k.strip()] = v.strip()
                continue
            rows.append(line)
    reader = csv.DictReader(rows)
    data = [(float(r["xi"]), complex(float(r["re_q"]), float(r["im_q"]))) for r in reader]
    if len(data) < 2:
        raise ParameterError("samples", f"{path}: need at least 2 rows")
    xi = np.array([d[0] for d in data])
    dx = float(meta["dx"]) if "dx" in meta else float(xi[1] - xi[0])
    xi0 = float(meta["xi0"]) if "xi0" in meta else float(xi[0])
    if not np.allclose(np.diff(xi), dx, rtol=1e-9):
        raise ParameterError("xi", f"{path}: grid is not uniform")
    pc = bool(int(meta.get("piecewise_constant", "0")))
    return SampledPotential(np.array([d[1] for d in data]), dx, xi0, piecewise_constant=pc)
