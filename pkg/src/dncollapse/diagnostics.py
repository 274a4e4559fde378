"""Post-processing diagnostics for evolved double-null states.

Everything in here is read-only: functions take an evolved FieldState and
produce derived planes (mass, curvature, trapped-region flags), near-boundary
ray asymptotics, power-law fits, and tolerance-calibrated inequality checks.
Nothing mutates the state or re-runs the solver, with one exception: the
tolerance calibration runs a small vacuum reference march once per process
to measure the scheme's actual curvature error constant.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import EXCISED, DoubleNullGrid, FieldState
from .field_equations import hawking_mass, kretschmann_field

# Trapped points have mu > 1 exactly when nu < 0 and lam < 0 (given r > 0,
# omega^2 > 0); the sign test is the cheap one and is what we flag on.
_MU_DUALITY_RTOL = 1e-8


def trapped_mask(state: FieldState) -> np.ndarray:
    """Boolean plane: active points with both null expansions negative."""
    with np.errstate(invalid="ignore"):
        return state.active & (state.nu < 0.0) & (state.lam < 0.0)


@dataclass
class DiagnosticsRecord:
    """Derived per-point planes for one evolved state.

    All planes are float64 (or bool for ``trapped``) with NaN off the active
    set.  ``kretschmann`` is additionally NaN where the centered five-point
    stencil leaves the active set, so near excised or unset cells.
    """

    m: np.ndarray
    mu: np.ndarray
    kretschmann: np.ndarray
    trapped: np.ndarray
    r_nu: np.ndarray
    r_lambda: np.ndarray
    r2_z: np.ndarray
    r2_w: np.ndarray
    log_omega: np.ndarray
    log_r: np.ndarray

    @property
    def n_trapped(self) -> int:
        return int(np.count_nonzero(self.trapped))


def diagnostics_record(state: FieldState, grid: DoubleNullGrid) -> DiagnosticsRecord:
    act = state.active
    nanmask = np.where(act, 1.0, np.nan)

    mass = hawking_mass(state.r, state.nu, state.lam, state.omega_sq)
    kfield = kretschmann_field(state, grid)

    with np.errstate(invalid="ignore", divide="ignore"):
        log_r = np.log(state.r) * nanmask
    return DiagnosticsRecord(
        m=mass.m * nanmask,
        mu=mass.mu * nanmask,
        kretschmann=kfield,
        trapped=trapped_mask(state),
        r_nu=state.r * state.nu * nanmask,
        r_lambda=state.r * state.lam * nanmask,
        r2_z=state.r * state.r * np.abs(state.z) * nanmask,
        r2_w=state.r * state.r * np.abs(state.w) * nanmask,
        log_omega=state.log_omega * nanmask,
        log_r=log_r,
    )


def ray_table(state: FieldState, grid: DoubleNullGrid, j: int,
              record: Optional[DiagnosticsRecord] = None,
              ) -> Dict[str, np.ndarray]:
    """Column j of the diagnostics planes, restricted to active points.

    Keys match the per-ray CSV layout: r, m, mu, K, r_nu, r_lambda,
    r2_z, r2_w (plus u for reference; u is not a CSV column).
    """
    if not 0 <= j < grid.n_v:
        raise IndexError(f"ray index {j} outside grid with n_v={grid.n_v}")
    rec = record if record is not None else diagnostics_record(state, grid)
    sel = np.flatnonzero(state.active[:, j])
    return {
        "u": grid.u_coords()[sel],
        "r": state.r[sel, j],
        "m": rec.m[sel, j],
        "mu": rec.mu[sel, j],
        "K": rec.kretschmann[sel, j],
        "r_nu": rec.r_nu[sel, j],
        "r_lambda": rec.r_lambda[sel, j],
        "r2_z": rec.r2_z[sel, j],
        "r2_w": rec.r2_w[sel, j],
    }


# ---------------------------------------------------------------------------
# apparent horizon


@dataclass(frozen=True)
class HorizonCrossing:
    """Linear-interpolation zero of lambda along one v=const ray."""

    u: float
    v: float
    mu: float
    two_m_minus_r: float
    i_before: int
    j: int


def find_apparent_horizon(state: FieldState,
                          grid: DoubleNullGrid) -> List[HorizonCrossing]:
    """Locate the outermost lambda=0 crossing on each outgoing ray.

    Scans each column j for the first active pair (i, i+1) with
    lam[i] > 0 >= lam[i+1] and interpolates u, mu and 2m - r linearly.
    Rays that are trapped from the start, or never trap, contribute
    nothing; a vacuum interior state returns an empty list.
    """
    act = state.active
    mass = hawking_mass(state.r, state.nu, state.lam, state.omega_sq)
    two_m_minus_r = 2.0 * mass.m - state.r
    us = grid.u_coords()
    vs = grid.v_coords()

    lam = state.lam
    with np.errstate(invalid="ignore"):
        pair_ok = act[:-1, :] & act[1:, :]
        crossing = pair_ok & (lam[:-1, :] > 0.0) & (lam[1:, :] <= 0.0)

    out: List[HorizonCrossing] = []
    for j in np.flatnonzero(crossing.any(axis=0)):
        i = int(np.flatnonzero(crossing[:, j])[0])
        la0 = lam[i, j]
        la1 = lam[i + 1, j]
        t = la0 / (la0 - la1)  # la0 > 0 >= la1 so denominator > 0
        out.append(HorizonCrossing(
            u=float(us[i] + t * grid.du),
            v=float(vs[j]),
            mu=float(mass.mu[i, j] + t * (mass.mu[i + 1, j] - mass.mu[i, j])),
            two_m_minus_r=float(two_m_minus_r[i, j]
                                + t * (two_m_minus_r[i + 1, j] - two_m_minus_r[i, j])),
            i_before=i,
            j=int(j),
        ))
    return out


# ---------------------------------------------------------------------------
# near-boundary ray asymptotics


@dataclass(frozen=True)
class RayTrack:
    """Windowed limits of r*dr along one outgoing ray near the excised set.

    c1_hat and c2_hat estimate the limits of -r*d_u r and -r*d_v r; the
    tv_* fields measure total variation of those products over the final
    decade of r, normalized by the decade mean, so a value of 0.02 means
    the product wanders by 2 percent of itself while r falls tenfold.
    """

    j: int
    v: float
    applicable: bool
    r_end: float
    c1_hat: float
    c2_hat: float
    tv_r_nu: float
    tv_r_lambda: float
    window: Tuple[float, float]
    n_window: int


def _normalized_tv(values: np.ndarray) -> float:
    mean = np.mean(values)
    if mean == 0.0 or not np.isfinite(mean):
        return float("nan")
    return float(np.sum(np.abs(np.diff(values))) / abs(mean))


def _near_excised(mask: np.ndarray, i: int, j: int, reach: int = 4) -> bool:
    n_u, n_v = mask.shape
    block = mask[max(0, i - reach):min(n_u, i + reach + 1),
                 max(0, j - reach):min(n_v, j + reach + 1)]
    return bool(np.any(block == EXCISED))


def track_r_dr_limits(state: FieldState, grid: DoubleNullGrid,
                      rays: Optional[Sequence[int]] = None,
                      r_window: Optional[Tuple[float, float]] = None,
                      ) -> List[RayTrack]:
    """Estimate the limits of r*d_u r and r*d_v r along v=const rays.

    A ray only qualifies when its last active point sits within four grid
    cells of an excised cell; rays that stop far from the excision front
    (or states with no excision at all) report applicable=False with NaN
    statistics.  For qualifying rays the constants are window means over
    r in [2*r_end, 20*r_end] (overridable via r_window) and the TV fields
    cover the final decade [r_end, 10*r_end].
    """
    if rays is None:
        rays = [grid.n_v - 3]
    out: List[RayTrack] = []
    vs = grid.v_coords()
    for j in rays:
        j = int(j)
        sel = np.flatnonzero(state.active[:, j])
        if sel.size == 0:
            out.append(RayTrack(j, float(vs[j]), False, float("nan"),
                               float("nan"), float("nan"), float("nan"),
                               float("nan"), (float("nan"), float("nan")), 0))
            continue
        rvals = state.r[sel, j]
        rnu = state.r[sel, j] * state.nu[sel, j]
        rla = state.r[sel, j] * state.lam[sel, j]
        i_end = int(sel[-1])
        r_end = float(rvals[-1])

        applicable = _near_excised(state.mask, i_end, j)
        window = r_window if r_window is not None else (2.0 * r_end, 20.0 * r_end)
        in_win = (rvals >= window[0]) & (rvals <= window[1])
        decade = (rvals >= r_end) & (rvals <= 10.0 * r_end)
        if applicable and np.count_nonzero(in_win) >= 4 and np.count_nonzero(decade) >= 4:
            c1 = float(-np.mean(rnu[in_win]))
            c2 = float(-np.mean(rla[in_win]))
            tv_nu = _normalized_tv(rnu[decade])
            tv_la = _normalized_tv(rla[decade])
        else:
            applicable = False
            c1 = c2 = tv_nu = tv_la = float("nan")
        out.append(RayTrack(j, float(vs[j]), applicable, r_end, c1, c2,
                            tv_nu, tv_la, (float(window[0]), float(window[1])),
                            int(np.count_nonzero(in_win))))
    return out


# ---------------------------------------------------------------------------
# scalar field bound constants


@dataclass(frozen=True)
class ScalarBounds:
    """Suprema of r^2|d_u phi| and r^2|d_v phi| over the trapped region."""

    applicable: bool
    d1_hat: float
    d2_hat: float
    argmax_d1: Tuple[int, int]
    argmax_d2: Tuple[int, int]
    plateau_growth: float
    plateaued: bool
    n_trapped: int


def scalar_bound_constants(state: FieldState,
                           plateau_tol: float = 0.10) -> ScalarBounds:
    """Measure sup r^2|z| and sup r^2|w| over trapped active points.

    The plateau check asks how much the running supremum grew while r fell
    through its final decade: the full sup is compared against the sup over
    trapped points with r >= 10 r_min. Bounded growth (under plateau_tol)
    means the deepest decade contributed nothing new, so the sup has
    saturated rather than still climbing as r falls. A trapped region
    spanning less than one decade of r cannot plateau by this definition.
    States with no trapped points are reported not-applicable.
    """
    tr = trapped_mask(state)
    n_tr = int(np.count_nonzero(tr))
    if n_tr == 0:
        return ScalarBounds(False, float("nan"), float("nan"), (-1, -1),
                            (-1, -1), float("nan"), False, 0)
    r2z = np.where(tr, state.r * state.r * np.abs(state.z), np.nan)
    r2w = np.where(tr, state.r * state.r * np.abs(state.w), np.nan)
    i1 = np.unravel_index(np.nanargmax(r2z), r2z.shape)
    i2 = np.unravel_index(np.nanargmax(r2w), r2w.shape)
    d1 = float(r2z[i1])
    d2 = float(r2w[i2])

    r_min = float(np.min(state.r[tr]))
    before = tr & (state.r >= 10.0 * r_min)
    growth = 0.0
    for plane, full in ((r2z, d1), (r2w, d2)):
        if np.any(before):
            prior_sup = float(np.nanmax(np.where(before, plane, np.nan)))
        else:
            prior_sup = 0.0
        if prior_sup > 0.0:
            growth = max(growth, full / prior_sup - 1.0)
        elif full > 0.0:
            growth = float("inf")
    return ScalarBounds(True, d1, d2, (int(i1[0]), int(i1[1])),
                        (int(i2[0]), int(i2[1])), growth,
                        growth < plateau_tol, n_tr)


# ---------------------------------------------------------------------------
# conformal factor window fit


@dataclass(frozen=True)
class OmegaFit:
    """Log-log slope of Omega^2 against r on one ray, plus sup Omega^2 * r."""

    applicable: bool
    slope: float
    intercept: float
    r_squared: float
    d_hat: float
    window: Tuple[float, float]
    n_samples: int
    j: int


def omega_window(state: FieldState, grid: DoubleNullGrid,
                 ray: Optional[int] = None,
                 r_window: Optional[Tuple[float, float]] = None) -> OmegaFit:
    """Fit log Omega^2 = slope * log r + b over a window on one outgoing ray.

    Defaults: ray j = n_v - 3 and window [2*r_end, 20*r_end] where r_end is
    the smallest active r on the ray.  d_hat is the plane-wide supremum of
    Omega^2 * r over active points, finite exactly when the conformal factor
    degenerates no faster than 1/r.
    """
    j = int(ray) if ray is not None else grid.n_v - 3
    sel = np.flatnonzero(state.active[:, j])
    act = state.active
    with np.errstate(invalid="ignore"):
        d_hat = float(np.nanmax(np.where(act, state.omega_sq * state.r, np.nan)))
    if sel.size == 0:
        return OmegaFit(False, float("nan"), float("nan"), float("nan"),
                        d_hat, (float("nan"), float("nan")), 0, j)
    rvals = state.r[sel, j]
    f2 = 2.0 * state.log_omega[sel, j]
    r_end = float(np.min(rvals))
    window = r_window if r_window is not None else (2.0 * r_end, 20.0 * r_end)
    in_win = (rvals >= window[0]) & (rvals <= window[1])
    n = int(np.count_nonzero(in_win))
    if n < 8:
        return OmegaFit(False, float("nan"), float("nan"), float("nan"),
                        d_hat, (float(window[0]), float(window[1])), n, j)
    x = np.log(rvals[in_win])
    y = f2[in_win]
    coef, res, _, _ = np.linalg.lstsq(np.column_stack([x, np.ones_like(x)]),
                                      y, rcond=None)
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    ss_res = float(res[0]) if res.size else float(
        np.sum((y - coef[0] * x - coef[1]) ** 2))
    if ss_tot <= 1e-30:
        r2 = 1.0 if ss_res <= 1e-30 else 0.0
    else:
        r2 = max(0.0, 1.0 - ss_res / ss_tot)
    return OmegaFit(True, float(coef[0]), float(coef[1]), r2, d_hat,
                    (float(window[0]), float(window[1])), n, j)


# ---------------------------------------------------------------------------
# power-law blow-up fit


@dataclass(frozen=True)
class RateFit:
    """Least-squares power law K ~ A * r^(-n_hat) over a log-log window."""

    r_lo: float
    r_hi: float
    n_hat: float
    intercept: float
    r_squared: float
    n_samples: int
    n_excluded: int = 0


def fit_blowup_exponent(r_vals: np.ndarray, k_vals: np.ndarray,
                        r_lo: float, r_hi: float,
                        min_samples: int = 8) -> Optional[RateFit]:
    """Fit log K against log r over [r_lo, r_hi]; returns None if ill-posed.

    Points with nonpositive or non-finite K inside the window are dropped
    (counted in n_excluded).  The fit needs at least min_samples surviving
    points spanning at least half a decade of r.
    """
    if not (0.0 < r_lo < r_hi):
        raise ValueError(f"bad fit window [{r_lo}, {r_hi}]")
    r_vals = np.asarray(r_vals, dtype=np.float64)
    k_vals = np.asarray(k_vals, dtype=np.float64)
    in_win = np.isfinite(r_vals) & (r_vals >= r_lo) & (r_vals <= r_hi)
    usable = in_win & np.isfinite(k_vals) & (k_vals > 0.0)
    n_excluded = int(np.count_nonzero(in_win) - np.count_nonzero(usable))
    n = int(np.count_nonzero(usable))
    if n < min_samples:
        return None
    x = np.log(r_vals[usable])
    y = np.log(k_vals[usable])
    if np.exp(x.max() - x.min()) < math.sqrt(10.0):
        return None  # less than half a decade of leverage
    coef, res, _, _ = np.linalg.lstsq(np.column_stack([x, np.ones_like(x)]),
                                      y, rcond=None)
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    ss_res = float(res[0]) if res.size else float(
        np.sum((y - coef[0] * x - coef[1]) ** 2))
    if ss_tot <= 1e-30:
        r2 = 1.0 if ss_res <= 1e-30 else 0.0
    else:
        r2 = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return RateFit(r_lo=float(r_lo), r_hi=float(r_hi), n_hat=float(-coef[0]),
                   intercept=float(coef[1]), r_squared=r2, n_samples=n,
                   n_excluded=n_excluded)


def fit_exponent_on_ray(state: FieldState, grid: DoubleNullGrid,
                        r_lo: float, r_hi: float,
                        ray: Optional[int] = None, axis: str = "v",
                        record: Optional[DiagnosticsRecord] = None,
                        ) -> Optional[RateFit]:
    """Blow-up exponent fit along one grid ray.

    axis="v" fits along a v=const column (default j = n_v - 3); axis="u"
    fits along a u=const row (default i = n_u - 3) as a cross-check that
    the measured rate does not depend on the direction of approach.
    """
    rec = record if record is not None else diagnostics_record(state, grid)
    if axis == "v":
        j = int(ray) if ray is not None else grid.n_v - 3
        r_series = state.r[:, j]
        k_series = rec.kretschmann[:, j]
        act = state.active[:, j]
    elif axis == "u":
        i = int(ray) if ray is not None else grid.n_u - 3
        r_series = state.r[i, :]
        k_series = rec.kretschmann[i, :]
        act = state.active[i, :]
    else:
        raise ValueError(f"axis must be 'u' or 'v', got {axis!r}")
    sel = act & np.isfinite(k_series)
    return fit_blowup_exponent(r_series[sel], k_series[sel], r_lo, r_hi)


# ---------------------------------------------------------------------------
# tolerance calibration and inequality checks


@dataclass(frozen=True)
class ToleranceCalibration:
    """Scheme error constants measured on a vacuum reference march.

    c_curvature bounds the relative curvature error as c * du * dv;
    c_mass bounds the genuine (non round-off) drift of the discrete
    mass derivative as c * du^2.  Both carry a 10x headroom factor.
    """

    c_curvature: float
    c_mass: float
    h_reference: float
    max_rel_k_err: float
    min_du_m: float


_CALIBRATION: Optional[ToleranceCalibration] = None


def tolerance_calibration(force: bool = False) -> ToleranceCalibration:
    """Measure scheme error constants on a 201^2 vacuum interior march.

    The run covers r from 0.9M down to 0.1M at mass 1/2 with the curvature
    compared against its exact vacuum value 48 m^2 / r^6 away from the
    floor.  Cached per process; pass force=True to re-measure.
    """
    global _CALIBRATION
    if _CALIBRATION is not None and not force:
        return _CALIBRATION
    # local imports: evolution imports this module's siblings, not vice versa
    from .evolution import SchemeConfig, march
    from .initial_data import build_schwarzschild_data, schwarzschild_r_from_uv
    from .geometry import build_grid

    mass_m = 0.5
    # u = v = sqrt((1 - r/2M) e^{r/2M}) at r = 0.9 and r = 0.1
    def corner(r):
        return math.sqrt((1.0 - r / (2.0 * mass_m)) * math.exp(r / (2.0 * mass_m)))

    a, b = corner(0.9), corner(0.1)
    n = 201
    grid = build_grid(a, b, a, b, n, n)
    state = build_schwarzschild_data(grid, mass_m)
    floor = 0.05
    state, _ = march(state, grid, SchemeConfig(r_floor=floor))
    h2 = grid.du * grid.dv

    kfield = kretschmann_field(state, grid)
    k_exact = 48.0 * mass_m ** 2 / state.r ** 6
    sel = state.active & np.isfinite(kfield) & (state.r >= 2.0 * floor)
    rel = np.abs(kfield[sel] - k_exact[sel]) / k_exact[sel]
    max_rel = float(np.max(rel))

    mass = hawking_mass(state.r, state.nu, state.lam, state.omega_sq)
    tr = trapped_mask(state)
    stencil = tr[1:-1, :] & state.active[2:, :] & state.active[:-2, :]
    du_m = (mass.m[2:, :] - mass.m[:-2, :]) / (2.0 * grid.du)
    min_du_m = float(np.min(du_m[stencil]))

    eps = np.finfo(np.float64).eps
    # round-off floor on the centered mass derivative at this resolution
    roundoff = mass_m * 1e3 * eps / (2.0 * grid.du)
    c_mass = 10.0 * max(0.0, (-min_du_m - roundoff)) / (grid.du ** 2)
    _CALIBRATION = ToleranceCalibration(
        c_curvature=10.0 * max_rel / h2,
        c_mass=c_mass,
        h_reference=grid.du,
        max_rel_k_err=max_rel,
        min_du_m=min_du_m,
    )
    return _CALIBRATION


@dataclass(frozen=True)
class CurvatureMarginReport:
    """Outcome of the trapped-region curvature lower-bound check."""

    passed: bool
    vacuous: bool
    min_margin: float
    tol: float
    n_checked: int
    argmin: Tuple[int, int]
    r_at_argmin: float


def mass_inequality_check(state: FieldState, grid: DoubleNullGrid,
                          kfield: Optional[np.ndarray] = None,
                          tol: Optional[float] = None) -> CurvatureMarginReport:
    """Check K >= 32 m^2 / r^6 over trapped points with usable curvature.

    The margin is normalized, (K - B) / (|K| + |B|), so one number is
    meaningful across ten decades of curvature; the tolerance defaults to
    c_curvature * du * dv from the calibration run.  Vacuously passes when
    no trapped point has a finite curvature stencil.
    """
    if kfield is None:
        kfield = kretschmann_field(state, grid)
    if tol is None:
        tol = tolerance_calibration().c_curvature * grid.du * grid.dv
    mass = hawking_mass(state.r, state.nu, state.lam, state.omega_sq)
    sel = trapped_mask(state) & np.isfinite(kfield)
    n = int(np.count_nonzero(sel))
    if n == 0:
        return CurvatureMarginReport(True, True, float("nan"), float(tol),
                                     0, (-1, -1), float("nan"))
    bound = 32.0 * mass.m ** 2 / state.r ** 6
    with np.errstate(invalid="ignore"):
        margin = np.where(sel, (kfield - bound) / (np.abs(kfield) + np.abs(bound)),
                          np.nan)
    amin = np.unravel_index(np.nanargmin(margin), margin.shape)
    mmin = float(margin[amin])
    return CurvatureMarginReport(mmin >= -tol, False, mmin, float(tol), n,
                                 (int(amin[0]), int(amin[1])),
                                 float(state.r[amin]))


@dataclass(frozen=True)
class MassMonotonicityReport:
    """Outcome of the d_u m >= 0 check over the trapped region."""

    passed: bool
    vacuous: bool
    min_du_m: float
    tol: float
    n_checked: int


def mass_monotonicity_check(state: FieldState, grid: DoubleNullGrid,
                            tol: Optional[float] = None) -> MassMonotonicityReport:
    """Check the centered discrete d_u m is nonnegative where trapped.

    The Hawking mass cannot decrease toward the singularity along incoming
    rays once both expansions are negative.  The tolerance combines the
    round-off floor of a centered difference of m (which dominates at
    small du) with the calibrated scheme drift c_mass * du^2.
    """
    mass = hawking_mass(state.r, state.nu, state.lam, state.omega_sq)
    tr = trapped_mask(state)
    stencil = tr[1:-1, :] & state.active[2:, :] & state.active[:-2, :]
    n = int(np.count_nonzero(stencil))
    if n == 0:
        return MassMonotonicityReport(True, True, float("nan"),
                                      float(tol) if tol is not None else 0.0, 0)
    du_m = (mass.m[2:, :] - mass.m[:-2, :]) / (2.0 * grid.du)
    min_du_m = float(np.min(du_m[stencil]))
    if tol is None:
        cal = tolerance_calibration()
        m_scale = float(np.max(np.abs(mass.m[1:-1, :][stencil])))
        eps = np.finfo(np.float64).eps
        tol = m_scale * (1e3 * eps / (2.0 * grid.du) + cal.c_mass * grid.du ** 2)
    return MassMonotonicityReport(min_du_m >= -tol, False, min_du_m,
                                  float(tol), n)


def trapped_monotonicity_violations(state: FieldState) -> int:
    """Count active points where lam turns nonnegative after going negative.

    Along each outgoing ray the trapped property must persist: once
    lam < 0 at some u, every later active point on that column must keep
    lam < 0.  Returns the number of offending points (0 when clean).
    """
    act = state.active
    with np.errstate(invalid="ignore"):
        neg = act & (state.lam < 0.0)
        nonneg = act & (state.lam >= 0.0)
    seen_neg = np.maximum.accumulate(neg.astype(np.uint8), axis=0).astype(bool)
    return int(np.count_nonzero(nonneg & seen_neg))
