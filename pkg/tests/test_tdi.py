import math

import numpy as np
import pytest

from pencilbench import methods as mth
from pencilbench import tdi
from pencilbench.analysis import distortion_report, stability_margin
from pencilbench.exceptions import SimulationError
from pencilbench.models import (
    DaeModel,
    dahlquist,
    find_equilibrium,
    fd_jacobian,
    linear_model,
    linearize,
    smib,
)

R_ITM = 0.95 / 1.05


def run(m, spec, h, t_end, x0, **kw):
    return tdi.simulate(m, tdi.SimulationConfig(h, t_end, spec, **kw), x0)


def zero_model(r=2):
    return linear_model(np.eye(r), np.zeros((r, r)))


# ---------------------------------------------------------------- closed forms


def test_itm_dahlquist_closed_form():
    traj = run(dahlquist(-1.0), mth.ITM, 0.1, 1.0, [1.0])
    assert len(traj.times) == 11 and traj.times[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(traj.variable(0), R_ITM ** np.arange(11), rtol=1e-12)
    assert traj.variable(0)[-1] == pytest.approx(0.367572542382868822, rel=1e-12)


@pytest.mark.parametrize("spec", [mth.FEM, mth.RK4, mth.BEM, mth.DIRK2S])
def test_one_step_methods_follow_growth_function(spec):
    lam, h = -2.0 + 3.0j, 0.05
    m = dahlquist(lam)
    traj = run(m, spec, h, 1.0, [1.0, 0.0])
    z = mth.growth_roots(spec, lam * h)[0]
    want = z ** np.arange(len(traj.times))
    np.testing.assert_allclose(traj.states[:, 0] + 1j * traj.states[:, 1], want, rtol=1e-8, atol=1e-12)


def test_bdf2_linear_recursion():
    lam, h = -1.0, 0.1
    traj = run(dahlquist(lam), mth.BDF2, h, 1.0, [1.0])
    x = [1.0, R_ITM]  # ITM start-up step
    for _ in range(9):
        x.append((4 / 3 * x[-1] - 1 / 3 * x[-2]) / (1 - 2 / 3 * h * lam))
    np.testing.assert_allclose(traj.variable(0), x, rtol=1e-10)


def test_fem_divergence_detected():
    traj = run(dahlquist(-1000.0), mth.FEM, 0.005, 1.0, [1.0])
    assert traj.diverged
    # |1 + lam h| = 4: 4^k > 1e12 first at k = 20
    assert traj.divergence_time == pytest.approx(20 * 0.005)
    assert "exceeded" in traj.message


@pytest.mark.parametrize("spec", list(mth.CATALOG.values()))
def test_zero_dynamics_constant(spec):
    traj = run(zero_model(), spec, 0.1, 1.0, [0.3, -2.0])
    assert np.all(traj.states == np.array([0.3, -2.0]))


# ---------------------------------------------------------------- reference


def test_reference_accuracy():
    ref = tdi.reference_trajectory(dahlquist(-1.0), 1.0, [1.0])
    assert abs(ref.variable(0)[-1] - math.exp(-1)) <= 1e-6
    const = tdi.reference_trajectory(zero_model(1), 1.0, [4.0])
    assert np.all(const.variable(0) == 4.0)


def test_reference_smib_damped():
    m = smib()
    x = find_equilibrium(m)
    x0 = x + np.array([0.05, 0.0, 0.0])
    ref = tdi.reference_trajectory(m, 5.0, x0)
    assert not ref.diverged
    p = m.params
    k = p["e"] * p["v"] / p["x_eq"]
    # energy of the swing oscillation about equilibrium
    d, w = ref.variable(0), ref.variable(1)
    energy = (p["H"] * p["omega_b"] * (w - 1) ** 2 + k * (np.cos(x[0]) - np.cos(d)) - p["p_m"] * (d - x[0]))
    assert energy[-1] < 0.6 * energy[0]


# ---------------------------------------------------------------- mismatch


def test_mismatch_definition():
    ref = tdi.reference_trajectory(zero_model(1), 2.0, [1.0])
    assert tdi.trajectory_mismatch(ref, ref, 0) == 0.0
    shifted = tdi.Trajectory(ref.times, ref.states + 0.25, ref.newton_iters)
    assert tdi.trajectory_mismatch(shifted, ref, 0) == pytest.approx(0.25 * 2.0 * (1 + 1 / 2000))
    with pytest.raises(IndexError):
        tdi.trajectory_mismatch(ref, ref, 3)


def test_mismatch_itm_vs_reference():
    m = dahlquist(-1.0)
    traj = run(m, mth.ITM, 0.1, 1.0, [1.0])
    ref = tdi.reference_trajectory(m, 1.0, [1.0])
    closed = sum(abs(R_ITM**k - math.exp(-0.1 * k)) * 0.1 for k in range(11))
    assert tdi.trajectory_mismatch(traj, ref, 0) == pytest.approx(closed, abs=1e-6)


def test_mismatch_diverged_is_inf():
    traj = run(dahlquist(-1000.0), mth.FEM, 0.005, 0.5, [1.0])
    ref = tdi.reference_trajectory(dahlquist(-1000.0), 0.5, [1.0])
    assert tdi.trajectory_mismatch(traj, ref, 0) == math.inf


# ---------------------------------------------------------------- properties


@pytest.mark.parametrize("spec", [mth.FEM, mth.BEM, mth.ITM, mth.BDF2, mth.DIRK2S, mth.RK4])
def test_global_error_order(spec):
    lam = -1 + 2j
    m = dahlquist(lam)
    hs = np.array([0.1, 0.05, 0.025, 0.0125])
    errs = []
    for h in hs:
        tr = run(m, spec, h, 1.0, [1.0, 0.0])
        x = tr.states[-1]
        errs.append(abs(x[0] + 1j * x[1] - np.exp(lam * tr.times[-1])))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= spec.order - 0.1


def _linear_dae():
    # x1' = -0.2 x1 + 5 x2 + y,  x2' = -5 x1,  0 = x1 - 2 y
    E = np.diag([1.0, 1.0, 0.0])
    A = np.array([[-0.2, 5.0, 1.0], [-5.0, 0.0, 0.0], [1.0, 0.0, -2.0]])
    return linear_model(E, A, m_x=2, m_y=1)


@pytest.mark.parametrize("spec", [mth.ITM, mth.BEM, mth.DIRK2S, mth.BDF2, mth.FEM])
@pytest.mark.parametrize("h", [0.01, 0.05])
def test_linear_dae_fit_matches_prediction(spec, h):
    m = _linear_dae()
    lm = linearize(m, np.zeros(3))
    rep = distortion_report(spec, lm, h)
    pred = [r.s_tilde for r in rep.rows if r.s.imag > 0][0]
    traj = run(m, spec, h, 4.0, [1.0, 0.0, 0.5])
    fit = tdi.fit_modes(traj.times[2:], traj.variable(0)[2:], offset=False)
    got = fit[np.argmax(fit.imag)]
    assert abs(got.real - pred.real) <= 0.05 * abs(pred.real)
    assert abs(got.imag - pred.imag) <= 0.05 * abs(pred.imag)


@pytest.mark.parametrize("spec", [mth.FEM, mth.RK4])
@pytest.mark.parametrize("lam", [-1000.0, -50 + 200j])
def test_stability_margin_predicts_divergence(spec, lam):
    m = dahlquist(lam)
    lm = linearize(m, np.zeros(m.dim))
    h_max = stability_margin(spec, lm).h
    x0 = np.ones(m.dim)
    growth = abs(mth.growth_roots(spec, lam * 1.1 * h_max)[0])
    steps = math.ceil(1.2 * math.log(1e13) / math.log(growth))
    t_end = steps * 1.1 * h_max
    assert run(m, spec, 1.1 * h_max, t_end, x0).diverged
    ok = run(m, spec, 0.9 * h_max, t_end, x0)
    assert not ok.diverged and np.max(np.abs(ok.states[-1])) <= np.max(np.abs(x0))


def test_newton_jacobians_match_finite_differences():
    rng = np.random.default_rng(13)
    m = smib()
    x_o = find_equilibrium(m)
    for _ in range(10):
        x = x_o + 0.1 * rng.standard_normal(3)
        xp = x_o + 0.1 * rng.standard_normal(3)
        h = float(rng.uniform(1e-3, 0.1))
        known = -(m.E @ xp) - 0.5 * h * m.residual(xp)
        for fun, jac in (tdi.bilinear_residual(m, h, (1.0, -1.0, 0.5, 0.5), known),
                         tdi.dirk_stage_residual(m, h, m.E @ xp),
                         tdi.bdf2_residual(m, h, xp, x_o)):
            J = jac(x)
            assert np.max(np.abs(J - fd_jacobian(fun, x))) <= 1e-5 * max(1.0, np.max(np.abs(J)))


# ---------------------------------------------------------------- nonlinear runs


@pytest.mark.parametrize("h", [0.01, 0.05])
def test_smib_itm_fit_matches_prediction(h):
    m = smib()
    x_o = find_equilibrium(m)
    lm = linearize(m, x_o)
    pred = [r.s_tilde for r in distortion_report(mth.ITM, lm, h).rows if r.s.imag > 0][0]
    traj = run(m, mth.ITM, h, 20.0, x_o + np.array([0.01, 0.0, 0.0]))
    fit = tdi.fit_modes(traj.times, traj.variable(1))
    got = fit[np.argmax(fit.imag)]
    assert abs(got.real - pred.real) <= 0.1 * abs(pred.real)
    assert abs(got.imag - pred.imag) <= 0.05 * abs(pred.imag)


def test_smib_disturbance_shifts_equilibrium():
    m = smib()
    x_o = find_equilibrium(m)
    dist = tdi.Disturbance(1.0, {"p_m": 0.9})
    traj = run(m, mth.ITM, 0.02, 100.0, x_o, disturbances=(dist,))
    assert np.allclose(traj.states[:51], x_o, atol=1e-9)
    new = find_equilibrium(m.with_params(p_m=0.9))
    # the swing mode decays like exp(-0.071 t)
    assert abs(traj.states[-1, 0] - new[0]) < 1e-4
    assert abs(traj.states[-1, 2] - 0.9) < 1e-4


def test_explicit_method_on_dae_keeps_constraint():
    m = smib()
    x_o = find_equilibrium(m)
    traj = run(m, mth.RK4, 0.001, 0.5, x_o + np.array([0.01, 0.0, 0.0]))
    k = m.params["e"] * m.params["v"] / m.params["x_eq"]
    res = traj.states[:, 2] - k * np.sin(traj.states[:, 0])
    assert np.max(np.abs(res)) <= 1e-8


def test_newton_failure_reported():
    def build(p):
        return (lambda x: np.array([1.0 + x[0] ** 2]), lambda x: np.array([[2 * x[0]]]))

    m = DaeModel("noroot", np.zeros((1, 1)), 0, 1, {}, build)
    with pytest.raises(SimulationError, match="inconsistent"):
        run(m, mth.ITM, 0.1, 1.0, [0.5])


def test_config_validation():
    with pytest.raises(SimulationError):
        tdi.SimulationConfig(0.0, 1.0, mth.ITM)
    with pytest.raises(SimulationError):
        tdi.SimulationConfig(0.1, 1.0, mth.ITM, disturbances=(tdi.Disturbance(2.0, {}),))


def test_fit_modes_recovers_damped_cosine():
    t = np.arange(0, 10, 0.01)
    s = -0.3 + 4j
    y = 2.0 + np.exp(s.real * t) * np.cos(s.imag * t + 0.4)
    fit = tdi.fit_modes(t, y)
    assert fit[np.argmax(fit.imag)] == pytest.approx(s, rel=1e-8)


def test_csv_writers(tmp_path):
    traj = run(dahlquist(-1.0), mth.ITM, 0.1, 0.3, [1.0])
    tdi.write_trajectory_csv(traj, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x_0,newton_iters"
    assert lines[2] == f"0.1,{R_ITM:.9g},1"
    tdi.write_gnuplot_columns(traj, 0, tmp_path / "t.dat")
    assert (tmp_path / "t.dat").read_text().splitlines()[0] == "0 1"
