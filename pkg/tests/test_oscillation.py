import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from nlsscat import oscillation as osc
from nlsscat.errors import CoverageError, GridError, ParameterError
from nlsscat.potentials import SampledPotential, make_potential, sobolev_norm

from conftest import CANONICAL, canonical

GAUSSIAN_H1 = math.pi * math.e * special.erfc(1)
# measured once over the canonical family (gaussian 0.827 ... modulated 2.010)
RHO_MIN, RHO_MAX = 0.8267, 2.0104


# ---------------------------------------------------------------- smoothing


def test_smoothing_zero():
    tr = osc.exp_smoothing(make_potential("zero"))
    assert not np.any(tr.o) and tr.norm_sq == 0


def test_smoothing_gaussian_norm():
    oracle = integrate.quad(lambda e: math.exp(-e * e) / (1 + e * e), -np.inf, np.inf, epsabs=1e-14)[0]
    assert oracle == pytest.approx(GAUSSIAN_H1, rel=1e-12)
    assert osc.exp_smoothing(make_potential("gaussian")).norm_sq == pytest.approx(oracle, rel=1e-8)


def test_smoothing_indicator_closed_form():
    f = make_potential("box", {"amp": 1.0, "left": 0.0, "right": 1.0})
    tr = osc.exp_smoothing(f)
    x = tr.xi
    expected = np.where(x <= 0, 0.0, np.where(x <= 1, 1 - np.exp(-x), (math.e - 1) * np.exp(-x)))
    np.testing.assert_allclose(tr.o, expected, atol=1e-12)
    # ||o||^2 = int_0^1 (1-e^-x)^2 + (e-1)^2 int_1^inf e^-2x
    exact = (1 - 2 * (1 - math.exp(-1)) + (1 - math.exp(-2)) / 2) + (math.e - 1) ** 2 * math.exp(-2) / 2
    # node values are exact; the L2 norm carries the O(h^4) Simpson error
    assert tr.norm_sq == pytest.approx(exact, rel=1e-9)


@pytest.mark.parametrize("name", sorted(CANONICAL))
def test_smoothing_residual(name):
    f = canonical(name)
    tr = osc.exp_smoothing(f)
    assert tr.residual <= 1e-6 * (1 + np.max(np.abs(f.samples)))


def test_smoothing_needs_zero_left_edge():
    f = SampledPotential(np.ones(10, complex), 0.1, 0.0)
    with pytest.raises(GridError):
        osc.exp_smoothing(f)


@pytest.mark.parametrize("name", [n for n in sorted(CANONICAL) if n != "zero"])
def test_route_identity(name):
    f = canonical(name)
    h_fourier = sobolev_norm(f, -1) ** 2
    assert abs(osc.exp_smoothing(f).norm_sq - h_fourier) <= 1e-3 * h_fourier


@given(amp=st.floats(0.05, 2.0), width=st.floats(0.3, 1.3), center=st.floats(-4, 4))
def test_route_identity_property(amp, width, center):
    f = make_potential("gaussian", {"amp": amp, "width": width, "center": center})
    h_fourier = sobolev_norm(f, -1) ** 2
    assert osc.exp_smoothing(f).norm_sq == pytest.approx(h_fourier, rel=1e-3)


# ---------------------------------------------------------------- oscillation sums


def test_oscillation_zero():
    assert osc.oscillation_sum(make_potential("zero"), windows=range(-3, 3)).total == 0


def test_oscillation_constant_window():
    f = make_potential("box", {"amp": 1.0, "left": 0.0, "right": 2.0})
    rep = osc.oscillation_sum(f, windows=[0])
    assert rep.terms[0] == pytest.approx(2 / 3, abs=1e-8)


def test_oscillation_bookkeeping(gaussian):
    rep = osc.oscillation_sum(gaussian)
    assert np.all(rep.terms >= 0)
    assert rep.total == math.fsum(rep.terms)
    np.testing.assert_allclose(rep.component_terms.sum(axis=1), rep.terms, rtol=1e-15)


def test_oscillation_complex_components():
    f = make_potential("gaussian", {"amp": [0.0, 1.0]})
    rep = osc.oscillation_sum(f)
    assert np.all(rep.component_terms[:, 0] == 0)
    real = osc.oscillation_sum(make_potential("gaussian"))
    np.testing.assert_allclose(rep.component_terms[:, 1], real.component_terms[:, 0], rtol=1e-15)


@pytest.mark.parametrize("name", [n for n in sorted(CANONICAL) if n != "zero"])
def test_oscillation_two_sided(name):
    f = canonical(name)
    ratio = osc.oscillation_sum(f).total / sobolev_norm(f, -1) ** 2
    assert 0.8 * RHO_MIN <= ratio <= 1.2 * RHO_MAX


@given(shift=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))
def test_constant_shift_invariance(shift):
    f = canonical("random")
    a = osc.oscillation_sum(f)
    b = osc.oscillation_sum(f, g_shift=shift)
    np.testing.assert_allclose(b.terms, a.terms, rtol=1e-9, atol=1e-12 * (1 + abs(shift)) ** 2)


@given(lo=st.integers(-15, 0), hi=st.integers(0, 15), grow=st.integers(1, 5))
def test_monotone_truncation(lo, hi, grow):
    f = canonical("gaussian")
    small = osc.oscillation_sum(f, windows=range(lo, hi))
    large = osc.oscillation_sum(f, windows=range(lo - grow, hi + grow))
    assert large.total >= small.total


def test_oscillation_coverage():
    f = make_potential("gaussian", {}, (0.01, -10.0, 2001))
    with pytest.raises(CoverageError) as err:
        osc.oscillation_sum(f, windows=range(-12, 0), extend=False)
    assert list(err.value.windows) == [-12, -11]


def test_oscillation_grid_must_divide_window():
    f = make_potential("gaussian", {}, (0.03, -15.0, 1001))
    with pytest.raises(GridError):
        osc.oscillation_sum(f)


def test_antiderivative_exact_for_cubic():
    dx, x0, n = 0.1, -1.0, 41
    xi = x0 + dx * np.arange(n)
    f = SampledPotential(xi**3 - xi, dx, x0)
    g, mid = osc.antiderivative(f)
    prim = lambda x: x**4 / 4 - x**2 / 2  # noqa: E731
    # cells away from the zero-padded ends use full cubic stencils, exact for cubics
    inner = slice(1, n - 3)
    np.testing.assert_allclose(np.diff(g)[inner], (prim(xi[1:]) - prim(xi[:-1]))[inner], atol=1e-13)
    np.testing.assert_allclose((mid - g[:-1])[inner], (prim(xi[:-1] + dx / 2) - prim(xi[:-1]))[inner], atol=1e-13)


# ---------------------------------------------------------------- tail average


def test_tail_average_zero():
    ta = osc.tail_average(make_potential("zero"))
    assert not np.any(ta.O) and ta.sup_norm == 0


def test_tail_average_indicator():
    q = make_potential("box", {"amp": 1.0, "left": 0.0, "right": 1.0})
    ta = osc.tail_average(q)
    sym = np.array([[0.0, -1.0], [-1.0, 0.0]])
    left = ta.xi <= 0
    expected = np.exp(ta.xi[left])[:, None, None] * (1 - math.exp(-1)) * sym
    np.testing.assert_allclose(ta.O[left], expected, atol=1e-14)
    assert ta.sup_norm == pytest.approx(1 - math.exp(-1), rel=1e-12)


def test_tail_average_imaginary_symbol():
    q = make_potential("box", {"amp": [0.0, 1.0]})
    O = osc.tail_average(q).O[0]
    np.testing.assert_allclose(O, np.exp(-20.0) * (1 - math.exp(-1)) * np.diag([-1.0, 1.0]), atol=1e-20)


def test_tail_average_needs_zero_right_edge():
    with pytest.raises(GridError):
        osc.tail_average(SampledPotential(np.ones(5, complex), 0.1, 0.0))


TAIL_C = 0.5


@pytest.mark.parametrize("family", ["gaussian", "box", "random_bandlimited", "modulated_gaussian"])
@pytest.mark.parametrize("amp", [0.1, 0.5, 1.0])
def test_tail_average_bound(family, amp):
    params = {"amp": amp, "seed": 1} if family == "random_bandlimited" else {"amp": amp, "beta": 4.0}
    if family in ("gaussian", "box"):
        params.pop("beta")
    q = make_potential(family, params)
    rep = osc.equivalence_report(q)
    sup = osc.tail_average(q).sup_norm
    assert sup <= TAIL_C * rep.k_tilde**0.25 * math.exp(TAIL_C * (q.l2_norm() + rep.k_tilde))


# ---------------------------------------------------------------- equivalence


def test_equivalence_zero():
    rep = osc.equivalence_report(make_potential("zero"))
    assert rep.h_fourier == rep.h_smoothing == rep.h_oscillation == rep.k_tilde == 0
    assert math.isnan(rep.ratio_ktilde) and "ratios" in rep.failures


def test_equivalence_gaussian():
    rep = osc.equivalence_report(make_potential("gaussian", {"amp": 0.3}))
    assert rep.h_smoothing == pytest.approx(rep.h_fourier, rel=1e-3)
    assert rep.ratio_ktilde > 0 and rep.ratio_oscillation > 0
    data = json.loads(rep.to_json())
    assert data["failures"] == {}


def test_equivalence_partial_report():
    q = make_potential("gaussian", {}, (0.03, -15.0, 1001))
    rep = osc.equivalence_report(q)
    assert rep.h_fourier > 0 and rep.h_smoothing > 0
    assert set(rep.failures) == {"h_oscillation", "k_tilde"}
    assert rep.failures["h_oscillation"].startswith("GridError")
    assert math.isnan(rep.ratio_ktilde)


def test_fit_envelope():
    R = np.array([0.1, 0.5, 1.0])
    ratios = 2.0 * np.exp(np.array([0.0, 0.2, -0.3]))
    c1, c2, rho0 = osc.fit_envelope(R, ratios)
    assert rho0 == 2.0
    assert c2 == pytest.approx(0.4) and c1 == pytest.approx(0.3)
    with pytest.raises(ParameterError):
        osc.fit_envelope([1.0], [1.0])
