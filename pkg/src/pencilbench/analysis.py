"""Mode distortion: map discrete multipliers back to the S-plane and compare.

For a step ``h`` the discrete multiplier ``zt`` of a mode is mapped to
``st = log(zt) / h`` and compared with the continuous eigenvalue ``s``::

    d_s    = st - s
    d_zeta = zeta(st) - zeta(s),   zeta(s) = -Re(s) / |s|

Positive ``d_zeta`` means the method overdamps the mode.
"""

from __future__ import annotations

import cmath
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import AnnihilatedModeError, MethodError, NoCrossingError, PencilBenchError
from .methods import MethodSpec, build_pencil, growth_roots
from .models import LinearizedModel, mode_model
from .pencil import Spectrum, finite_eigenvalues

log = logging.getLogger(__name__)

BISECT_RTOL = 1e-4
POINTS_PER_DECADE = 40
ZERO_RTOL = 1e-9
DEFAULT_H_RANGE = (1e-6, 1.0)

REPORT_COLUMNS = ("method", "h", "re_s", "im_s", "re_stilde", "im_stilde",
                  "abs_ds", "d_zeta_pct", "aliased", "spurious_count")


@dataclass(frozen=True)
class Mode:
    s: complex

    @property
    def damping(self) -> float:
        return damping(self.s)

    @property
    def frequency(self) -> float:
        """Oscillation frequency in Hz."""
        return complex(self.s).imag / (2 * math.pi)


def map_z_to_s(z, h: float) -> complex:
    """Principal-branch ``log(z) / h``; the imaginary part lies in ``(-pi/h, pi/h]``."""
    z = complex(z)
    if z == 0:
        raise AnnihilatedModeError("multiplier z = 0: the method annihilates this mode")
    return cmath.log(z) / h


def damping(s) -> float:
    s = complex(s)
    if s == 0:
        raise ValueError("damping ratio undefined for s = 0")
    return -s.real / abs(s)


def _damping_or_nan(s) -> float:
    s = complex(s)
    if s == 0 or not cmath.isfinite(s):
        return math.nan
    return damping(s)


@dataclass(frozen=True)
class Pairing:
    """Pairs ``(original index, discrete index)``.

    ``spurious`` lists discrete indices left without a partner and
    ``unmatched`` lists original indices left without one.
    """

    pairs: tuple
    spurious: tuple
    unmatched: tuple = ()


def _safe_map(z, h) -> complex:
    if z == 0:
        return complex(-math.inf, 0.0)
    return map_z_to_s(z, h)


def match_modes(original: Spectrum, discrete: Spectrum, h: float, multiplicity: int = 1,
                anchors=None) -> Pairing:
    """Greedy globally-nearest pairing in the S-plane.

    All ``|map_z_to_s(z_j) - a_i|`` are ranked and pairs are accepted in
    increasing order of distance (ties by index, both spectra being sorted)
    while neither side is taken. The anchor ``a_i`` of mode ``s_i`` defaults
    to ``s_i``; passing the method's predicted image ``log(R(s_i h)) / h``
    keeps close modes from swapping partners when the distortion exceeds
    their separation. Discrete values left over are spurious.
    """
    s = np.asarray(original.finite if anchors is None else anchors, dtype=complex)
    z = np.asarray(discrete.finite, dtype=complex)
    if s.size == 0 or z.size == 0:
        raise PencilBenchError("match_modes needs non-empty spectra")
    if z.size > multiplicity * max(discrete.dim, 1):
        log.warning("discrete spectrum larger than multiplicity allows (%d > %d)",
                    z.size, multiplicity * discrete.dim)
    st = np.array([_safe_map(zj, h) for zj in z])
    with np.errstate(invalid="ignore"):
        dist = np.abs(st[None, :] - s[:, None])
    dist = np.where(np.isnan(dist), np.inf, dist)
    ii, jj = np.meshgrid(np.arange(s.size), np.arange(z.size), indexing="ij")
    order = np.lexsort((jj.ravel(), ii.ravel(), dist.ravel()))
    taken_s = np.zeros(s.size, dtype=bool)
    taken_z = np.zeros(z.size, dtype=bool)
    pairs = []
    for k in order:
        i, j = ii.flat[k], jj.flat[k]
        if taken_s[i] or taken_z[j]:
            continue
        taken_s[i] = taken_z[j] = True
        pairs.append((int(i), int(j)))
        if taken_s.all():
            break
    pairs.sort()
    return Pairing(tuple(pairs), tuple(int(j) for j in np.flatnonzero(~taken_z)),
                   tuple(int(i) for i in np.flatnonzero(~taken_s)))


def predicted_image(spec: MethodSpec, s: complex, h: float) -> complex:
    """``log(R(s h)) / h`` from the scalar growth function, or ``s`` at a pole."""
    try:
        z = growth_roots(spec, complex(s) * h)[0]
    except MethodError:
        return complex(s)
    if z == 0 or not cmath.isfinite(z):
        return complex(s)
    return map_z_to_s(z, h)


@dataclass(frozen=True)
class DistortionRow:
    s: complex
    z: complex
    s_tilde: complex
    d_s: complex
    abs_ds: float
    d_zeta: float
    aliased: bool


@dataclass(frozen=True)
class DistortionReport:
    method: str
    h: float
    rows: tuple
    spurious_roots: tuple = field(default=())

    def csv_rows(self) -> list[dict]:
        out = []
        for r in self.rows:
            out.append({
                "method": self.method, "h": self.h,
                "re_s": r.s.real, "im_s": r.s.imag,
                "re_stilde": r.s_tilde.real, "im_stilde": r.s_tilde.imag,
                "abs_ds": r.abs_ds, "d_zeta_pct": 100.0 * r.d_zeta,
                "aliased": r.aliased, "spurious_count": len(self.spurious_roots),
            })
        return out

    def to_dict(self) -> dict:
        def c(v):
            v = complex(v)
            return [v.real, v.imag]

        return {
            "method": self.method, "h": self.h,
            "rows": [{"s": c(r.s), "z": c(r.z), "s_tilde": c(r.s_tilde), "d_s": c(r.d_s),
                      "abs_ds": r.abs_ds, "d_zeta": r.d_zeta, "aliased": r.aliased}
                     for r in self.rows],
            "spurious_roots": [c(v) for v in self.spurious_roots],
        }


def distortion_report(spec: MethodSpec, lm: LinearizedModel, h: float,
                      original: Optional[Spectrum] = None) -> DistortionReport:
    """Pencil, spectrum, pairing and per-mode distortion for one ``(method, h)``."""
    if original is None:
        original = finite_eigenvalues(lm.pencil)
    discrete = finite_eigenvalues(build_pencil(spec, lm, h))
    if len(discrete) == 0:
        pairing = Pairing((), (), tuple(range(len(original))))
    elif len(original) == 0:
        pairing = Pairing((), tuple(range(len(discrete))), ())
    else:
        anchors = [predicted_image(spec, s, h) for s in original.finite]
        pairing = match_modes(original, discrete, h, spec.step_multiplicity, anchors)
    rows = []
    for i, j in pairing.pairs:
        s = complex(original.finite[i])
        z = complex(discrete.finite[j])
        st = _safe_map(z, h)
        ds = st - s
        rows.append(DistortionRow(
            s=s, z=z, s_tilde=st, d_s=ds, abs_ds=abs(ds),
            d_zeta=_damping_or_nan(st) - _damping_or_nan(s),
            aliased=abs(s.imag) * h > math.pi,
        ))
    # modes whose multiplier was classified infinite (|z| beyond the QZ threshold)
    for i in pairing.unmatched:
        s = complex(original.finite[i])
        log.debug("mode %s has no finite discrete counterpart for %s at h=%g", s, spec.label, h)
        inf = complex(math.inf, 0.0)
        rows.append(DistortionRow(s=s, z=inf, s_tilde=inf, d_s=inf, abs_ds=math.inf,
                                  d_zeta=math.nan, aliased=abs(s.imag) * h > math.pi))
    rows.sort(key=lambda r: (r.s.real, r.s.imag))
    spurious = tuple(complex(discrete.finite[j]) for j in pairing.spurious)
    return DistortionReport(spec.label, float(h), tuple(rows), spurious)


def stiffness_ratio(lm: LinearizedModel, zero_tol: Optional[float] = None) -> float:
    """``max |Re s_i| / min |Re s_i|`` over finite modes not numerically zero.

    ``zero_tol`` defaults to ``1e-9 * max |Re s_i|``, well above QZ
    round-off yet below any physical slow mode of a desk-scale model.
    """
    alpha = np.abs(finite_eigenvalues(lm.pencil).finite.real)
    if alpha.size == 0:
        raise PencilBenchError("no finite eigenvalues")
    if zero_tol is None:
        zero_tol = ZERO_RTOL * alpha.max()
    kept = alpha[alpha > zero_tol]
    if kept.size == 0:
        raise PencilBenchError("all eigenvalues excluded as numerically zero")
    return float(kept.max() / kept.min())


# -------------------------------------------------------------- step search


@dataclass(frozen=True)
class Target:
    """A linearized model together with the original modes being tracked."""

    lm: LinearizedModel
    original: Spectrum
    tracked: tuple

    def rows(self, report: DistortionReport) -> list:
        keep = {complex(self.original.finite[i]) for i in self.tracked}
        return [r for r in report.rows if r.s in keep]


def as_target(mode_or_model, mode=None) -> Target:
    """Normalize a complex mode or a linearized model into a :class:`Target`.

    A complex ``s`` is embedded in a real 2x2 (or 1x1) model and only ``s``
    itself is tracked. For a model all finite modes are tracked unless
    ``mode`` selects the one nearest to a given value.
    """
    if isinstance(mode_or_model, LinearizedModel):
        lm = mode_or_model
        original = finite_eigenvalues(lm.pencil)
        if mode is None:
            tracked = tuple(range(len(original)))
        else:
            tracked = (int(np.argmin(np.abs(original.finite - complex(mode)))),)
    else:
        s = complex(mode_or_model)
        lm = mode_model(s)
        original = finite_eigenvalues(lm.pencil)
        tracked = (int(np.argmin(np.abs(original.finite - s))),)
    return Target(lm, original, tracked)


@dataclass(frozen=True)
class StepBound:
    """Result of a step-size search; ``open_bound`` marks an uncrossed range."""

    h: float
    open_bound: bool = False
    monotone: bool = True
    criterion: str = ""


def _grid(h_range) -> np.ndarray:
    lo, hi = float(h_range[0]), float(h_range[1])
    if not 0 < lo < hi:
        raise ValueError(f"invalid step range {h_range}")
    n = max(2, int(math.ceil(POINTS_PER_DECADE * math.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, n)


def _first_crossing(pred, h_range, check_monotone=False):
    """Bracket the first grid point where ``pred`` turns true and bisect.

    Returns ``(lo, hi, monotone)`` with ``pred(lo)`` false and ``pred(hi)``
    true, or ``None`` when ``pred`` is false on the whole grid.
    """
    grid = _grid(h_range)
    if pred(grid[0]):
        raise NoCrossingError(f"criterion already met at the lower end h={grid[0]:g}",
                              endpoint_values=(grid[0], grid[-1]), at_lower_end=True)
    k = None
    for idx in range(1, len(grid)):
        if pred(grid[idx]):
            k = idx
            break
    if k is None:
        return None
    monotone = True
    if check_monotone:
        tail = [pred(hh) for hh in grid[k + 1:]]
        if not all(tail):
            monotone = False
            log.warning("criterion is not monotone in h: it reverts above h=%g", grid[k])
    lo, hi = grid[k - 1], grid[k]
    while (hi - lo) > BISECT_RTOL * hi:
        mid = math.sqrt(lo * hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi, monotone


def _max_abs_ds(spec, target, h):
    rows = target.rows(distortion_report(spec, target.lm, h, target.original))
    return max(r.abs_ds for r in rows)


def step_for_target_distortion(spec: MethodSpec, mode_or_model, target: float,
                               h_range=DEFAULT_H_RANGE, mode=None) -> StepBound:
    """Smallest ``h`` in ``h_range`` at which ``|d_s|`` reaches ``target``."""
    if not target > 0:
        raise NoCrossingError(f"target {target} is never crossed: |d_s| > 0 for every h > 0")
    tg = as_target(mode_or_model, mode)
    found = _first_crossing(lambda h: _max_abs_ds(spec, tg, h) >= target, h_range)
    if found is None:
        ends = (_max_abs_ds(spec, tg, h_range[0]), _max_abs_ds(spec, tg, h_range[1]))
        raise NoCrossingError(
            f"|d_s| never reaches {target} for {spec.label} in h={tuple(h_range)}; "
            f"endpoint values {ends[0]:.4g}, {ends[1]:.4g}", endpoint_values=ends)
    return StepBound(found[1], criterion=f"ds={target:g}")


def _unstable(spec, target, h):
    rep = distortion_report(spec, target.lm, h, target.original)
    return any(abs(r.z) >= 1.0 for r in target.rows(rep) if r.s.real < 0)


def stability_margin(spec: MethodSpec, mode_or_model, h_range=DEFAULT_H_RANGE, mode=None) -> StepBound:
    """Largest ``h`` keeping every matched multiplier of a stable mode in the unit disc."""
    tg = as_target(mode_or_model, mode)
    found = _first_crossing(lambda h: _unstable(spec, tg, h), h_range, check_monotone=True)
    if found is None:
        return StepBound(float(h_range[1]), open_bound=True, criterion="stability")
    return StepBound(found[0], monotone=found[2], criterion="stability")


def _max_d_zeta(spec, target, h):
    vals = [r.d_zeta for r in target.rows(distortion_report(spec, target.lm, h, target.original))]
    vals = [v for v in vals if not math.isnan(v)]
    return max(vals) if vals else -math.inf


def damping_bound_step(spec: MethodSpec, mode_or_model, d_zeta_max: float,
                       h_range=DEFAULT_H_RANGE, mode=None) -> StepBound:
    """Largest ``h`` with ``max d_zeta < d_zeta_max`` (fractions, not percent)."""
    tg = as_target(mode_or_model, mode)
    found = _first_crossing(lambda h: _max_d_zeta(spec, tg, h) >= d_zeta_max, h_range)
    if found is None:
        return StepBound(float(h_range[1]), open_bound=True, criterion=f"dzeta={d_zeta_max:g}")
    return StepBound(found[0], criterion=f"dzeta={d_zeta_max:g}")


@dataclass(frozen=True)
class LocusPoint:
    h: float
    s: complex
    s_tilde: complex
    abs_ds: float
    d_zeta: float


def root_locus(spec: MethodSpec, mode_or_model, h_grid, mode=None) -> list[LocusPoint]:
    """Trajectory of the tracked modes' images ``st(h)`` over ``h_grid``."""
    tg = as_target(mode_or_model, mode)
    out = []
    for h in h_grid:
        for r in tg.rows(distortion_report(spec, tg.lm, float(h), tg.original)):
            out.append(LocusPoint(float(h), r.s, r.s_tilde, r.abs_ds, r.d_zeta))
    return out


# ---------------------------------------------------------------- sweeps


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("PENCILBENCH_THREADS", "")))
    except ValueError:
        return min(8, os.cpu_count() or 1)


def sweep(specs, lm: LinearizedModel, hs, workers: Optional[int] = None) -> list[DistortionReport]:
    """Reports for every ``(method, h)``, ordered by method then ``h``."""
    original = finite_eigenvalues(lm.pencil)
    items = [(spec, float(h)) for spec in specs for h in hs]
    workers = workers or worker_count()
    if workers == 1 or len(items) == 1:
        return [distortion_report(sp, lm, h, original) for sp, h in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda it: distortion_report(it[0], lm, it[1], original), items))
