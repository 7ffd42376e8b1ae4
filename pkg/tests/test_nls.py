import json
import math

import numpy as np
import pytest

from nlsscat import nls
from nlsscat import scattering as sc
from nlsscat.errors import BoxSizeError, ParameterError
from nlsscat.potentials import SampledPotential, apply_symmetry, make_potential, sobolev_norm

GRID = (1 / 32, -40.0, 2561)
LAMBDA = sc.default_lambda_grid(10, 0.05)


@pytest.fixture(scope="module")
def q0():
    return nls.periodic_box(make_potential("gaussian", {"amp": 0.5}, GRID))


@pytest.fixture(scope="module")
def short_run(q0):
    return nls.conservation_report(q0, [0, 0.25, 0.5], 1e-3, s_list=[-1, -0.5, 0], lambda_grid=LAMBDA)


def test_periodic_box(q0):
    lo, hi = q0.support
    assert q0.n & (q0.n - 1) == 0
    assert q0.span[1] - q0.span[0] >= 8 * (hi - lo)
    assert q0.node_index(0.0) is not None
    assert q0.l2_norm() == make_potential("gaussian", {"amp": 0.5}, GRID).l2_norm()


def test_zero_solution():
    z = make_potential("zero", {}, (0.05, -10.0, 400))
    final, log = nls.evolve_split_step(z, 1.0, 1e-2)
    assert not np.any(final.samples)
    rep = nls.conservation_report(z, [0, 0.5, 1.0], 1e-2, s_list=[-1, 0])
    assert not np.any(rep.l2_norm) and not np.any(rep.log_a_i)


@pytest.mark.parametrize("A", [0.7, 0.3 - 0.4j])
def test_constant_solution(A):
    q = SampledPotential(np.full(256, A, complex), 0.1, -12.8)
    t = 0.75
    final, _ = nls.evolve_split_step(q, t, 1e-2, monitor=False)
    np.testing.assert_allclose(final.samples, A * np.exp(-2j * abs(A) ** 2 * t), rtol=0, atol=1e-13)


def test_l2_conservation(q0):
    final, log = nls.evolve_split_step(q0, 1.0, 1e-3)
    assert log.l2_drift() <= 1e-6
    assert log.leaked_mass < 1e-8
    assert final.l2_norm() == pytest.approx(q0.l2_norm(), rel=1e-6)


def test_box_size_error():
    q = make_potential("gaussian", {"amp": 0.5}, (1 / 16, -12.0, 385))
    with pytest.raises(BoxSizeError) as err:
        nls.evolve_split_step(q, 2.0, 1e-2)
    assert err.value.leaked_mass > 1e-8


def test_step_potentials_refused():
    with pytest.raises(ParameterError):
        nls.periodic_box(make_potential("box"))


def test_negative_time_and_bad_schedule(q0):
    final, log = nls.evolve_split_step(q0, -0.1, 1e-3)
    assert log.times.tolist() == [-0.1, 0.0]
    with pytest.raises(ParameterError):
        nls.conservation_report(q0, [0, 0.0015, 0.002], 1e-3)
    with pytest.raises(ParameterError):
        nls.evolve_split_step(q0, 0.1, 0.0)


# ---------------------------------------------------------------- spectral side


def test_spectral_identity_at_zero(q0):
    tab = sc.transition_coefficients(q0, LAMBDA)
    ev = nls.evolve_spectral(tab, 0.0)
    np.testing.assert_array_equal(ev.r, tab.r)
    np.testing.assert_array_equal(ev.a, tab.a)


@pytest.mark.parametrize("t", [0.3, -1.7, 12.0])
def test_spectral_modulus(q0, t):
    tab = sc.transition_coefficients(q0, LAMBDA)
    ev = nls.evolve_spectral(tab, t)
    np.testing.assert_allclose(np.abs(ev.r), np.abs(tab.r), rtol=4e-16, atol=0)
    assert ev.unitarity_defect <= 1e-6


def test_direct_vs_spectral(short_run):
    assert np.nanmax(short_run.r_mismatch) <= 0.02


def test_log_a_drift(short_run):
    assert short_run.log_a_drift() <= 1e-2
    assert short_run.l2_drift() <= 1e-6


def test_log_columns(short_run, tmp_path):
    cols = short_run.columns()
    assert list(cols)[:3] == ["time", "l2", "log_a_i"]
    assert {"h_s=-1.0", "h_s=-0.5", "h_s=0.0", "r_mismatch"} <= set(cols)
    assert all(len(v) == 3 for v in cols.values())
    path = tmp_path / "log.csv"
    short_run.to_csv(path)
    assert path.read_text().splitlines()[1].startswith("time,l2,log_a_i,h_s=")
    data = json.loads(short_run.to_json())
    assert data["window_flags"]["0.0"] == [True, True, True]


def test_convergence_order(q0):
    runs = [nls.conservation_report(q0, [0, 0.5], dt, lambda_grid=LAMBDA) for dt in (2e-3, 1e-3)]
    mismatch = [r.r_mismatch[-1] for r in runs]
    drift = [r.log_a_drift() for r in runs]
    assert math.log2(mismatch[0] / mismatch[1]) >= 1.9
    assert math.log2(drift[0] / drift[1]) >= 1.9


# ---------------------------------------------------------------- Sobolev windows


def test_window_flag_rules():
    assert nls.window_flag(1.0, 1.0, 0.0, 5.0)
    assert not nls.window_flag(1.01, 1.0, 0.0, 5.0)
    R = 0.5
    assert nls.window_flag(1.5 ** 2 * 0.999, 1.0, -1.0, R)
    assert not nls.window_flag(1.5 ** 2 * 1.01, 1.0, -1.0, R)
    assert not nls.window_flag(1.5 ** -2 * 0.99, 1.0, -1.0, R)
    assert nls.window_flag(2.0, 1.0, 0.25, 1.0)
    assert not nls.window_flag(2.1, 1.0, 0.25, 1.0)


def test_s_zero_always_passes(short_run):
    assert np.all(short_run.window_flags[0.0])
    np.testing.assert_allclose(short_run.hs_norms[0.0] / short_run.hs_norms[0.0][0], 1, atol=1e-6)


def test_h_minus_one_window(short_run):
    assert np.all(short_run.window_flags[-1.0])
    assert np.all(short_run.window_flags[-0.5])


def test_modulated_window():
    q = nls.periodic_box(make_potential("modulated_gaussian", {"amp": 0.5, "beta": 8.0}, GRID))
    flags = nls.sobolev_window_check(q, -1.0, [0, 0.5, 1.0], dt=1e-3)
    assert np.all(flags)


def test_sobolev_index_checked(q0):
    with pytest.raises(ParameterError):
        nls.sobolev_window_check(q0, -2.0, [0, 0.1])


# ---------------------------------------------------------------- NLS symmetries


def test_galilean(q0):
    v, t = 1.0, 0.5
    moving, _ = nls.evolve_split_step(apply_symmetry(q0, "modulate", -v), t, 1e-3)
    base, _ = nls.evolve_split_step(q0, t, 1e-3)
    shifted = np.roll(base.samples, int(round(2 * v * t / q0.dx)))
    np.testing.assert_allclose(moving.samples, np.exp(1j * (v * q0.xi - v * v * t)) * shifted, atol=1e-10)


def test_dilation(q0):
    alpha = 2.0
    fast, _ = nls.evolve_split_step(apply_symmetry(q0, "dilate", alpha), 0.1, 2.5e-4)
    slow, _ = nls.evolve_split_step(q0, alpha**2 * 0.1, 1e-3)
    np.testing.assert_allclose(fast.samples, apply_symmetry(slow, "dilate", alpha).samples, atol=1e-10)


def test_phase_rotation(q0):
    mu = np.exp(0.7j)
    a, _ = nls.evolve_split_step(apply_symmetry(q0, "rotate", mu), 0.2, 1e-3)
    b, _ = nls.evolve_split_step(q0, 0.2, 1e-3)
    np.testing.assert_allclose(a.samples, mu * b.samples, atol=1e-13)


def test_time_reversal(q0):
    fwd, _ = nls.evolve_split_step(q0, 0.5, 1e-3)
    bwd, _ = nls.evolve_split_step(q0, -0.5, 1e-3)
    np.testing.assert_allclose(fwd.samples, np.conj(bwd.samples), atol=1e-12)
    fwd, bwd = nls.truncate_snapshot(fwd)[0], nls.truncate_snapshot(bwd)[0]
    for s in (-1.0, -0.5, 0.0):
        assert sobolev_norm(fwd, s) == pytest.approx(sobolev_norm(bwd, s), rel=1e-10)


def test_truncate_snapshot():
    q = SampledPotential(np.array([0, 1e-12, 1.0, 1e-5, 0], complex), 0.5, -1.0, support=(-1.0, 1.0))
    out, discarded = nls.truncate_snapshot(q)
    assert out.samples.tolist() == [0, 0, 1.0, 1e-5, 0]
    assert discarded == pytest.approx(0.5 * 1e-24)
    assert out.support == (0.0, 0.5)
