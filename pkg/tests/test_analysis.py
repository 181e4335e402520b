import cmath
import math

import numpy as np
import pytest

from pencilbench import analysis as an
from pencilbench import methods as mth
from pencilbench.exceptions import AnnihilatedModeError, NoCrossingError
from pencilbench.models import LinearizedModel, find_equilibrium, linearize, mode_model, stiff2
from pencilbench.pencil import LinearPencil, Spectrum, finite_eigenvalues
from pencilbench.validation import random_ode

DOMINANT_MODE = -0.1699 + 7.6696j
SECOND_MODE = -0.3042 + 4.1426j
A_ = mth.DIRK_ALPHA
B_ = mth.DIRK_BETA

# scalar growth functions written out independently of the library
ORACLE = {
    "fem": lambda x: 1 + x,
    "bem": lambda x: 1 / (1 - x),
    "itm": lambda x: (1 + x / 2) / (1 - x / 2),
    "dirk2s": lambda x: (1 - A_ * B_ * x) / (1 - A_ * x) ** 2,
    "rk4": lambda x: 1 + x + x**2 / 2 + x**3 / 6 + x**4 / 24,
}


def bdf2_oracle(x):
    a = 1 - 2 * x / 3
    disc = cmath.sqrt(16 / 9 - 4 * a / 3)
    roots = [(4 / 3 + disc) / (2 * a), (4 / 3 - disc) / (2 * a)]
    return min(roots, key=lambda z: abs(z - cmath.exp(x)))


ORACLE["bdf2"] = bdf2_oracle


def zeta(s):
    return -s.real / abs(s)


def oracle_stilde(name, s, h):
    return cmath.log(ORACLE[name](s * h)) / h


def scalar(lam):
    return LinearizedModel(LinearPencil(np.eye(1), [[lam]]), np.zeros(1))


# ---------------------------------------------------------------- primitives


def test_map_z_to_s_examples():
    assert an.map_z_to_s(1.0, 0.37) == 0
    assert an.map_z_to_s(0.95 / 1.05, 0.1).real == pytest.approx(-1.00083458556982626, abs=1e-13)
    assert an.map_z_to_s(0.904762, 0.1).real == pytest.approx(-1.00083353293830182, abs=1e-12)


def test_map_z_to_s_roundtrip():
    rng = np.random.default_rng(4)
    for z in rng.uniform(0.05, 3, 100) * np.exp(1j * rng.uniform(-3.1, 3.1, 100)):
        h = float(rng.uniform(1e-3, 1))
        assert cmath.exp(an.map_z_to_s(z, h) * h) == pytest.approx(z, rel=1e-12)


def test_map_z_to_s_zero():
    with pytest.raises(AnnihilatedModeError):
        an.map_z_to_s(0.0, 0.1)


def test_damping_examples():
    assert an.damping(DOMINANT_MODE) == pytest.approx(0.02215, abs=5e-6)
    assert an.damping(SECOND_MODE) == pytest.approx(0.0732, abs=5e-5)
    assert an.damping(-1.0) == 1.0
    assert an.Mode(DOMINANT_MODE).frequency == pytest.approx(7.6696 / (2 * math.pi))
    with pytest.raises(ValueError):
        an.damping(0.0)


# ---------------------------------------------------------------- matching


def test_match_itm_diag():
    lm = LinearizedModel(LinearPencil(np.eye(2), np.diag([-1.0, -2.0])), np.zeros(2))
    rep = an.distortion_report(mth.ITM, lm, 0.01)
    assert rep.spurious_roots == ()
    for row in rep.rows:
        assert row.z == pytest.approx(ORACLE["itm"](row.s * 0.01), rel=1e-14)


def test_match_bdf2_parasitic_is_spurious():
    rep = an.distortion_report(mth.BDF2, scalar(-1.0), 0.1)
    assert len(rep.rows) == 1
    assert rep.rows[0].z == pytest.approx(0.904508497187473712, rel=1e-13)
    assert len(rep.spurious_roots) == 1
    assert rep.spurious_roots[0] == pytest.approx(0.345491502812526288, rel=1e-13)


def test_match_fem_stiff_fast_mode_diverges():
    m = stiff2(1000, 0.02)
    rep = an.distortion_report(mth.FEM, linearize(m, find_equilibrium(m)), 0.005)
    fast = [r for r in rep.rows if r.s.real == -1000][0]
    assert fast.z.real == pytest.approx(-4.0)
    assert fast.s_tilde.real == pytest.approx(math.log(4) / 0.005)


def test_match_modes_needs_spectra():
    empty = Spectrum(np.array([]), 0, 0)
    with pytest.raises(Exception):
        an.match_modes(empty, Spectrum(np.array([0.5]), 0, 1), 0.1)


# ---------------------------------------------------------------- reports


@pytest.mark.parametrize("name", ["fem", "bem", "itm", "dirk2s", "bdf2", "rk4"])
def test_report_matches_scalar_oracle(name):
    h = 0.05
    rep = an.distortion_report(mth.CATALOG[name], mode_model(DOMINANT_MODE), h)
    row = [r for r in rep.rows if r.s.imag > 0][0]
    st = oracle_stilde(name, DOMINANT_MODE, h)
    assert abs(row.s_tilde - st) <= 1e-9 * abs(st)
    assert row.d_zeta == pytest.approx(zeta(st) - zeta(DOMINANT_MODE), abs=1e-11)
    assert row.abs_ds == pytest.approx(abs(st - DOMINANT_MODE), rel=1e-9)


@pytest.mark.parametrize("name, ref", [("fem", -18.5), ("bem", 18.2), ("itm", -0.052),
                                         ("dirk2s", -0.005), ("bdf2", 0.9)])
def test_report_reference_damping(name, ref):
    digits = {"fem": 1, "bem": 1, "itm": 3, "dirk2s": 3, "bdf2": 1}[name]
    rows = an.distortion_report(mth.CATALOG[name], mode_model(DOMINANT_MODE), 0.05).csv_rows()
    assert abs(rows[0]["d_zeta_pct"] - ref) <= 2 * 10.0 ** -digits


def test_zero_mode_has_no_distortion():
    for spec in mth.CATALOG.values():
        rep = an.distortion_report(spec, scalar(0.0), 0.1)
        assert rep.rows[0].d_s == 0


def test_report_consistency_random_systems():
    rng = np.random.default_rng(8)
    for _ in range(20):
        A, lams = random_ode(rng, int(rng.integers(1, 7)))
        lm = LinearizedModel(LinearPencil(np.eye(len(lams)), A), np.zeros(len(lams)))
        for name in ("fem", "rk4", "bem", "itm", "dirk2s"):
            rep = an.distortion_report(mth.CATALOG[name], lm, 0.05)
            for row in rep.rows:
                want = ORACLE[name](row.s * 0.05)
                assert abs(row.z - want) <= 1e-8 * max(1, abs(want))


def test_aliasing_flag_and_branch():
    s = -0.5 + 40j
    for h in (0.05, 0.1, 0.2):
        rep = an.distortion_report(mth.ITM, mode_model(s), h)
        for row in rep.rows:
            assert row.aliased == (abs(row.s.imag) * h > math.pi)
            assert -math.pi / h < row.s_tilde.imag <= math.pi / h


def test_fem_bem_symmetric_pair():
    for h in (1e-3, 3e-3, 1e-2):
        f = an.distortion_report(mth.FEM, mode_model(DOMINANT_MODE), h).rows[1]
        b = an.distortion_report(mth.BEM, mode_model(DOMINANT_MODE), h).rows[1]
        assert abs(f.abs_ds - b.abs_ds) <= 0.05 * b.abs_ds
        assert np.sign(f.d_zeta) == -np.sign(b.d_zeta)


def test_bem_overdamps_stable_oscillatory_modes():
    rng = np.random.default_rng(21)
    for _ in range(200):
        s = complex(-rng.uniform(0.01, 5), rng.uniform(0.5, 20))
        h = float(rng.uniform(1e-3, 0.2))
        assert an.distortion_report(mth.BEM, mode_model(s), h).rows[1].d_zeta > 0


@pytest.mark.parametrize("s, h", [(DOMINANT_MODE, 0.05), (SECOND_MODE, 0.1), (SECOND_MODE, 0.066)])
def test_bdf2_overdamps_reference_fixtures(s, h):
    assert an.distortion_report(mth.BDF2, mode_model(s), h).rows[1].d_zeta > 0


def test_bdf2_underdamps_at_small_steps():
    # leading-order BDF2 error shifts damping the other way; the sign flips
    # only once |s| h is a sizeable fraction of one
    s = complex(-0.05, math.sqrt(1 - 0.05**2))
    st = oracle_stilde("bdf2", s, 1e-2)
    row = an.distortion_report(mth.BDF2, mode_model(s), 1e-2).rows[1]
    assert row.d_zeta == pytest.approx(zeta(st) - zeta(s), abs=1e-12)
    assert row.d_zeta < 0


def test_report_serialisation():
    rep = an.distortion_report(mth.ITM, mode_model(DOMINANT_MODE), 0.05)
    rows = rep.csv_rows()
    assert tuple(rows[0]) == an.REPORT_COLUMNS
    d = rep.to_dict()
    assert d["method"] == "itm" and len(d["rows"]) == 2


# ---------------------------------------------------------------- stiffness


def test_stiffness_examples():
    assert an.stiffness_ratio(LinearizedModel(LinearPencil(np.eye(2), np.diag([-1.0, -1.0])), np.zeros(2))) == 1
    ext = LinearizedModel(LinearPencil(np.eye(2), np.diag([-99900.1, -0.077])), np.zeros(2))
    assert an.stiffness_ratio(ext) == pytest.approx(99900.1 / 0.077, rel=1e-12)


def test_stiffness_ignores_spurious_zero():
    lm = LinearizedModel(LinearPencil(np.eye(3), np.diag([-10.0, -0.1, 1e-12])), np.zeros(3))
    assert an.stiffness_ratio(lm) == pytest.approx(100.0)


# ---------------------------------------------------------------- step searches


def _oracle_step(name, s, target):
    lo, hi = 1e-6, 1.0
    f = lambda h: abs(oracle_stilde(name, s, h) - s) - target
    grid = np.geomspace(lo, hi, 241)
    k = next(i for i, h in enumerate(grid) if f(h) >= 0)
    a, b = grid[k - 1], grid[k]
    for _ in range(80):
        m = 0.5 * (a + b)
        a, b = (m, b) if f(m) < 0 else (a, m)
    return b


@pytest.mark.parametrize("name", ["fem", "bem", "itm", "dirk2s", "bdf2"])
@pytest.mark.parametrize("s", [DOMINANT_MODE, SECOND_MODE])
def test_step_for_target_matches_oracle(name, s):
    got = an.step_for_target_distortion(mth.CATALOG[name], s, 0.1).h
    assert got == pytest.approx(_oracle_step(name, s, 0.1), rel=2e-4)


def test_step_for_target_zero_raises():
    with pytest.raises(NoCrossingError):
        an.step_for_target_distortion(mth.ITM, DOMINANT_MODE, 0.0)


def test_step_for_target_unreachable_raises():
    with pytest.raises(NoCrossingError) as info:
        an.step_for_target_distortion(mth.ITM, -1.0, 100.0)
    assert info.value.endpoint_values is not None


def test_stability_margins():
    b = an.stability_margin(mth.FEM, scalar(-1000.0))
    assert b.h == pytest.approx(0.002, rel=2e-4) and not b.open_bound
    # |R(-1000 h)| = 1 for the quartic, root found to 30 digits
    assert an.stability_margin(mth.RK4, scalar(-1000.0)).h == pytest.approx(0.00278529356340528, rel=2e-4)
    itm = an.stability_margin(mth.ITM, scalar(-1000.0))
    assert itm.open_bound and itm.h == 1.0


def test_damping_bound_steps():
    b = an.damping_bound_step(mth.BDF2, DOMINANT_MODE, 0.01)
    assert 0.05 < b.h < 0.055
    assert an.damping_bound_step(mth.BEM, DOMINANT_MODE, 0.182).h == pytest.approx(0.05, abs=5e-4)
    big = an.damping_bound_step(mth.BEM, DOMINANT_MODE, 5.0)
    assert big.open_bound and big.h == 1.0


def test_root_locus_limits():
    pts = an.root_locus(mth.ITM, DOMINANT_MODE, [1e-8, 1e6])
    assert abs(pts[0].s_tilde - DOMINANT_MODE) < 1e-4
    assert abs(pts[-1].s_tilde) < 1e-3
    for name in ("fem", "bem", "dirk2s", "bdf2", "rk4"):
        p = an.root_locus(mth.CATALOG[name], DOMINANT_MODE, [1e-8])[0]
        assert abs(p.s_tilde - DOMINANT_MODE) < 1e-4


def test_bem_locus_monotone():
    grid = np.linspace(1e-3, 0.1, 200)
    pts = an.root_locus(mth.BEM, DOMINANT_MODE, grid)
    dz = [p.d_zeta for p in pts]
    ds = [p.abs_ds for p in pts]
    assert np.all(np.diff(dz) > 0) and np.all(np.diff(ds) > 0)


def test_sweep_order_and_thread_independence(monkeypatch):
    lm = mode_model(DOMINANT_MODE)
    specs = [mth.FEM, mth.ITM, mth.BDF2]
    hs = [0.01, 0.05, 0.1]
    serial = an.sweep(specs, lm, hs, workers=1)
    parallel = an.sweep(specs, lm, hs, workers=4)
    assert [(r.method, r.h) for r in serial] == [(s.label, h) for s in specs for h in hs]
    assert [r.csv_rows() for r in serial] == [r.csv_rows() for r in parallel]
    monkeypatch.setenv("PENCILBENCH_THREADS", "3")
    assert an.worker_count() == 3
