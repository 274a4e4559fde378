"""
Characteristic march over the null grid.

One diamond cell has corners SW (i-1,j-1), W (i-1,j), S (i,j-1), NE (i,j).
Given the three past corners, the NE values follow from integrating the
wave equations over the cell: a predictor using the three-corner average
of the right-hand side, then a fixed number of corrector passes that
re-average including the provisional NE corner. The first derivatives
nu, lam, z, w are updated by trapezoid integration of the same right-hand
sides along the cell edges (nu along the S->NE edge in v, lam along the
W->NE edge in u). The scheme is second order; on exactly linear r (flat
space) it is exact.

Excision: the continuum solution can reach r = 0 inside a single diamond,
in which case the corrector iteration dives through the floor rather than
converging. Any evaluation of the NE radius at or below r_floor (predictor
or any corrector pass, NaN included) therefore marks the cell EXCISED, and
the mask blocks its causal future. Cells whose radius stays above the
floor but still produce non-finite fields or |logOmega| beyond the abort
threshold indicate a genuinely diverging scheme (for example, too many
corrector passes on a coarse grid) and abort the run with partial results
preserved.

Cells within one anti-diagonal i + j = d are mutually independent. They
are processed in fixed-size chunks; with threads > 1 the chunks run on a
thread pool. Chunk boundaries do not depend on the thread count and every
chunk is an elementwise computation, so the output is bitwise identical
for any thread count (and the chunks only pay off once diagonals are
longer than the chunk size; small grids run effectively serial).
"""

from __future__ import annotations

import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .geometry import (ACTIVE, EXCISED, FIELD_NAMES, UNSET, ConfigurationError,
                       DoubleNullGrid, FieldState, default_r_floor, refine)
from .field_equations import rhs_logomega_wave, rhs_phi_wave, rhs_r_wave
from . import initial_data as _idata

_CHUNK = 4096


@dataclass(frozen=True)
class SchemeConfig:
    """March parameters.

    r_floor None derives the excision floor from the data (1e-3 of the
    corner radius). constraint_check_cadence: every k-th diagonal, the
    residuals of the previous (fully settled) diagonal are recorded.
    """

    r_floor: Optional[float] = None
    corrector_iterations: int = 2
    constraint_check_cadence: int = 16
    excision_policy: str = "MASK_FUTURE"
    log_omega_abort: float = 200.0
    threads: int = 1
    checkpoint_path: Optional[str] = None
    checkpoint_cadence: int = 0

    def __post_init__(self):
        if self.corrector_iterations < 1:
            raise ConfigurationError(
                f"corrector_iterations must be >= 1, got {self.corrector_iterations}")
        if self.r_floor is not None and not (self.r_floor > 0):
            raise ConfigurationError(f"r_floor must be > 0, got {self.r_floor}")
        if self.excision_policy != "MASK_FUTURE":
            raise ConfigurationError(
                f"unknown excision policy {self.excision_policy!r}")
        if self.constraint_check_cadence < 1:
            raise ConfigurationError("constraint_check_cadence must be >= 1")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}")
        if self.checkpoint_cadence < 0:
            raise ConfigurationError("checkpoint_cadence must be >= 0")
        if self.checkpoint_cadence > 0 and self.checkpoint_path is None:
            raise ConfigurationError("checkpoint_cadence set without a path")


@dataclass
class EvolutionReport:
    diagonals_completed: int = 0
    cells_excised: int = 0
    # (diagonal, max |residual|) pairs, one per checked diagonal
    max_constraint_residual_history: List[Tuple[int, float]] = field(default_factory=list)
    wall_time: float = 0.0


class NumericalBlowupError(RuntimeError):
    """The scheme produced non-finite fields (or |logOmega| past the abort
    threshold) away from the excision floor. Carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class CornerState:
    """Field values at one grid point, for the single-cell entry point."""

    r: float
    log_omega: float
    phi: float
    nu: float
    lam: float
    z: float
    w: float


def _diamond_kernel(rW, fW, pW, nuW, laW, zW, wW,
                    rS, fS, pS, nuS, laS, zS, wS,
                    rD, fD, pD, nuD, laD, zD, wD,
                    du, dv, r_floor, n_corr):
    """Vectorized diamond update. Returns the seven NE arrays plus the
    floor-hit flag (True where any r iterate failed r > r_floor; NaN-safe
    because the comparison is negated)."""
    with np.errstate(all="ignore"):
        ra = (rW + rS + rD) / 3
        fa = (fW + fS + fD) / 3
        nua = (nuW + nuS + nuD) / 3
        laa = (laW + laS + laD) / 3
        za = (zW + zS + zD) / 3
        wa = (wW + wS + wD) / 3
        oma = np.exp(2 * fa)
        Fr = rhs_r_wave(ra, nua, laa, oma)
        Fp = rhs_phi_wave(ra, nua, laa, za, wa)
        rN = rW + rS - rD + du * dv * Fr
        fN = fW + fS - fD + du * dv * rhs_logomega_wave(ra, nua, laa, oma, za, wa)
        pN = pW + pS - pD + du * dv * Fp
        nuN = nuS + dv * Fr
        laN = laW + du * Fr
        zN = zS + dv * Fp
        wN = wW + du * Fp
        hit_floor = ~(rN > r_floor)
        om2W = np.exp(2 * fW)
        om2S = np.exp(2 * fS)
        FrW = rhs_r_wave(rW, nuW, laW, om2W)
        FrS = rhs_r_wave(rS, nuS, laS, om2S)
        FpW = rhs_phi_wave(rW, nuW, laW, zW, wW)
        FpS = rhs_phi_wave(rS, nuS, laS, zS, wS)
        for _ in range(n_corr):
            ra = 0.25 * (rW + rS + rD + rN)
            fa = 0.25 * (fW + fS + fD + fN)
            nua = 0.25 * (nuW + nuS + nuD + nuN)
            laa = 0.25 * (laW + laS + laD + laN)
            za = 0.25 * (zW + zS + zD + zN)
            wa = 0.25 * (wW + wS + wD + wN)
            oma = np.exp(2 * fa)
            rN = rW + rS - rD + du * dv * rhs_r_wave(ra, nua, laa, oma)
            fN = fW + fS - fD + du * dv * rhs_logomega_wave(ra, nua, laa, oma, za, wa)
            pN = pW + pS - pD + du * dv * rhs_phi_wave(ra, nua, laa, za, wa)
            hit_floor |= ~(rN > r_floor)
            om2N = np.exp(2 * fN)
            FrN = rhs_r_wave(rN, nuN, laN, om2N)
            FpN = rhs_phi_wave(rN, nuN, laN, zN, wN)
            nuN = nuS + 0.5 * dv * (FrS + FrN)
            laN = laW + 0.5 * du * (FrW + FrN)
            zN = zS + 0.5 * dv * (FpS + FpN)
            wN = wW + 0.5 * du * (FpW + FpN)
    return (rN, fN, pN, nuN, laN, zN, wN), hit_floor


def _classify(outs, hit_floor, log_omega_abort):
    rN, fN, pN, nuN, laN, zN, wN = outs
    allfin = (np.isfinite(rN) & np.isfinite(fN) & np.isfinite(pN)
              & np.isfinite(nuN) & np.isfinite(laN)
              & np.isfinite(zN) & np.isfinite(wN))
    with np.errstate(invalid="ignore"):
        good = ~hit_floor & allfin & (np.abs(fN) < log_omega_abort)
    abort = ~hit_floor & ~good
    return good, hit_floor, abort


def update_cell(W: CornerState, S: CornerState, SW: CornerState,
                du: float, dv: float, config: SchemeConfig) -> Optional[CornerState]:
    """Single-cell entry point; shares the array kernel with march bitwise.

    Returns the NE corner, or None when the cell is excised. Raises
    NumericalBlowupError on a diverging update. config.r_floor must be
    set (there is no data context to derive it from here).
    """
    if config.r_floor is None:
        raise ConfigurationError("update_cell needs an explicit r_floor")
    args = []
    for c in (W, S, SW):
        args.extend(np.array([getattr(c, name)]) for name in FIELD_NAMES)
    outs, hit = _diamond_kernel(*args, du, dv, config.r_floor,
                                config.corrector_iterations)
    good, excis, abort = _classify(outs, hit, config.log_omega_abort)
    if abort[0]:
        raise NumericalBlowupError(
            f"diamond update diverged: r={outs[0][0]!r}, logOmega={outs[1][0]!r}")
    if excis[0]:
        return None
    return CornerState(*(float(o[0]) for o in outs))


def _diagonal_indices(d: int, n_u: int, n_v: int):
    ilo = max(1, d - (n_v - 1))
    ihi = min(n_u - 1, d - 1)
    if ilo > ihi:
        return None
    i = np.arange(ilo, ihi + 1)
    return i, d - i


def _diagonal_residual(state: FieldState, grid: DoubleNullGrid, d: int) -> float:
    """Max |constraint residual| over diagonal d points whose full 5-point
    stencil is ACTIVE. NaN when no point qualifies."""
    n_u, n_v = grid.shape
    ilo = max(1, d - (n_v - 2))
    ihi = min(n_u - 2, d - 1)
    if ilo > ihi:
        return float("nan")
    i = np.arange(ilo, ihi + 1)
    j = d - i
    m = state.mask
    ok = ((m[i, j] == ACTIVE) & (m[i - 1, j] == ACTIVE) & (m[i + 1, j] == ACTIVE)
          & (m[i, j - 1] == ACTIVE) & (m[i, j + 1] == ACTIVE))
    if not ok.any():
        return float("nan")
    i = i[ok]
    j = j[ok]
    with np.errstate(all="ignore"):
        om2c = np.exp(2 * state.log_omega[i, j])
        om2e = np.exp(2 * state.log_omega[i + 1, j])
        om2w = np.exp(2 * state.log_omega[i - 1, j])
        om2n = np.exp(2 * state.log_omega[i, j + 1])
        om2s = np.exp(2 * state.log_omega[i, j - 1])
        res_u = ((state.nu[i + 1, j] / om2e - state.nu[i - 1, j] / om2w)
                 / (2 * grid.du)
                 + state.r[i, j] * state.z[i, j] ** 2 / om2c)
        res_v = ((state.lam[i, j + 1] / om2n - state.lam[i, j - 1] / om2s)
                 / (2 * grid.dv)
                 + state.r[i, j] * state.w[i, j] ** 2 / om2c)
        worst = max(np.max(np.abs(res_u)), np.max(np.abs(res_v)))
    return float(worst)


def march(state: FieldState, grid: DoubleNullGrid, scheme: SchemeConfig,
          resume_diagonal: Optional[int] = None):
    """Evolve the whole reachable rectangle in place.

    Returns (state, EvolutionReport). Diagonals run in order; within a
    diagonal the eligible cells (three ACTIVE past corners, NE untouched)
    are updated chunk by chunk. Raises NumericalBlowupError before writing
    any cell of the offending diagonal, so the state stays consistent
    through the last completed diagonal.
    """
    t0 = time.perf_counter()
    n_u, n_v = grid.shape
    if resume_diagonal is None:
        if not (np.all(state.mask[0, :] == ACTIVE)
                and np.all(state.mask[:, 0] == ACTIVE)):
            raise ConfigurationError(
                "march needs both initial rays fully populated")
    floor = scheme.r_floor if scheme.r_floor is not None else default_r_floor(state)
    if not (floor > 0):
        raise ConfigurationError(f"resolved r_floor {floor} not positive")
    n_corr = scheme.corrector_iterations
    du, dv = grid.du, grid.dv
    report = EvolutionReport()
    planes = state.field_tuple()
    mask = state.mask

    def run_chunk(i: np.ndarray, j: np.ndarray):
        gw = tuple(p[i - 1, j] for p in planes)
        gs = tuple(p[i, j - 1] for p in planes)
        gd = tuple(p[i - 1, j - 1] for p in planes)
        outs, hit = _diamond_kernel(*gw, *gs, *gd, du, dv, floor, n_corr)
        return outs, _classify(outs, hit, scheme.log_omega_abort)

    pool = None
    if scheme.threads > 1:
        pool = ThreadPoolExecutor(max_workers=scheme.threads)
    try:
        d_start = 2 if resume_diagonal is None else max(2, resume_diagonal + 1)
        for d in range(d_start, n_u + n_v - 1):
            idx = _diagonal_indices(d, n_u, n_v)
            if idx is not None:
                i_all, j_all = idx
                ok = ((mask[i_all - 1, j_all] == ACTIVE)
                      & (mask[i_all, j_all - 1] == ACTIVE)
                      & (mask[i_all - 1, j_all - 1] == ACTIVE)
                      & (mask[i_all, j_all] == UNSET))
                i_el = i_all[ok]
                j_el = j_all[ok]
                if i_el.size:
                    spans = [(c, min(c + _CHUNK, i_el.size))
                             for c in range(0, i_el.size, _CHUNK)]
                    if pool is not None and len(spans) > 1:
                        results = list(pool.map(
                            lambda s: run_chunk(i_el[s[0]:s[1]], j_el[s[0]:s[1]]),
                            spans))
                    else:
                        results = [run_chunk(i_el[a:b], j_el[a:b])
                                   for a, b in spans]
                    n_abort = sum(int(r[1][2].sum()) for r in results)
                    if n_abort:
                        report.wall_time = time.perf_counter() - t0
                        for (a, b), (outs, (good, excis, abort)) in zip(spans, results):
                            if abort.any():
                                k = int(np.argmax(abort))
                                cell = (int(i_el[a + k]), int(j_el[a + k]))
                                break
                        raise NumericalBlowupError(
                            f"{n_abort} cell(s) diverged on diagonal {d}, "
                            f"first at (i,j)={cell}; state kept through "
                            f"diagonal {d - 1}", report=report)
                    for (a, b), (outs, (good, excis, abort)) in zip(spans, results):
                        ii = i_el[a:b]
                        jj = j_el[a:b]
                        g = np.where(good)[0]
                        for plane, out in zip(planes, outs):
                            plane[ii[g], jj[g]] = out[g]
                        mask[ii[g], jj[g]] = ACTIVE
                        e = np.where(excis)[0]
                        mask[ii[e], jj[e]] = EXCISED
                        report.cells_excised += int(e.size)
            report.diagonals_completed = d
            if d % scheme.constraint_check_cadence == 0 and d >= 3:
                res = _diagonal_residual(state, grid, d - 1)
                report.max_constraint_residual_history.append((d - 1, res))
            if (scheme.checkpoint_cadence
                    and d % scheme.checkpoint_cadence == 0):
                dump_checkpoint(scheme.checkpoint_path, state, grid, d)
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    report.wall_time = time.perf_counter() - t0
    return state, report


# ---------------------------------------------------------------------------
# checkpointing

_CKPT_MAGIC = b"DNULLCK1"


def dump_checkpoint(path, state: FieldState, grid: DoubleNullGrid,
                    diagonals_completed: int) -> None:
    """Versioned binary snapshot: header, mask plane, then the seven field
    planes row-major little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", 1, 0))
        fh.write(struct.pack("<4d", grid.u_min, grid.u_max,
                             grid.v_min, grid.v_max))
        fh.write(struct.pack("<4Q", grid.n_u, grid.n_v,
                             grid.refinement_level, diagonals_completed))
        fh.write(np.ascontiguousarray(state.mask, dtype=np.uint8).tobytes())
        for name in FIELD_NAMES:
            fh.write(np.ascontiguousarray(getattr(state, name),
                                          dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (state, grid, diagonals_completed)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CKPT_MAGIC:
            raise ConfigurationError(f"not a checkpoint file: {path}")
        version, _ = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        u_min, u_max, v_min, v_max = struct.unpack("<4d", fh.read(32))
        n_u, n_v, level, diag = struct.unpack("<4Q", fh.read(32))
        grid = DoubleNullGrid(u_min, u_max, v_min, v_max, int(n_u), int(n_v),
                              refinement_level=int(level))
        count = int(n_u) * int(n_v)
        mask = np.frombuffer(fh.read(count), dtype=np.uint8).reshape(grid.shape).copy()
        planes = []
        for _ in FIELD_NAMES:
            raw = fh.read(8 * count)
            planes.append(np.frombuffer(raw, dtype="<f8")
                          .astype(np.float64).reshape(grid.shape))
    state = FieldState(*planes, mask=mask)
    return state, grid, int(diag)


# ---------------------------------------------------------------------------
# convergence study

@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    error: float
    order: float  # NaN on the first row or when degenerate
    degenerate: bool = False


def _exact_planes(spec, grid: DoubleNullGrid):
    """Closed-form (r, log_omega) where the family has one, else None."""
    if spec.family is _idata.Family.SCHWARZSCHILD:
        uu, vv = np.meshgrid(grid.u_coords(), grid.v_coords(), indexing="ij")
        r, f, _, _, _ = _idata.schwarzschild_fields(uu, vv, spec.M)
        return r, f
    if spec.family is _idata.Family.MINKOWSKI:
        uu, vv = np.meshgrid(grid.u_coords(), grid.v_coords(), indexing="ij")
        r = spec.r_corner - (uu - grid.u_min) / 2 + (vv - grid.v_min) / 2
        return r, np.zeros_like(r)
    return None


def _study_error(spec, quantity, grid, state, floor,
                 fine_grid=None, fine_state=None):
    """One error number: vs closed form when available, else coarse/fine
    difference on the shared points. Windowed to r >= 2*floor to keep the
    excision collar out of the norm."""
    from .field_equations import constraint_residuals, kretschmann_field

    exact = _exact_planes(spec, grid)
    if quantity in ("constraint", "constraint_rms"):
        res = constraint_residuals(state, grid)
        # Fixed measurement subsquare: the last quarter of each axis feeds
        # the excision corner, where the coarsest level is marginally
        # resolved and the windowed sup needs far deeper grids to settle.
        # Pointwise the residual converges at order 2 there too; the norm
        # is just measured where all levels are in the asymptotic regime.
        window = state.active & (state.r >= 2 * floor)
        n_u, n_v = grid.shape
        window[int(0.75 * (n_u - 1)):, :] = False
        window[:, int(0.75 * (n_v - 1)):] = False
        # the first interior row differences exact ray data against evolved
        # values, an O(h) startup layer that is not the interior order
        window[:2, :] = False
        window[:, :2] = False
        vals = np.concatenate([res.res_u[window], res.res_v[window]])
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            return float("nan")
        if quantity == "constraint_rms":
            return float(np.sqrt(np.mean(vals ** 2)))
        return float(np.max(np.abs(vals)))
    if exact is not None:
        r_ex, f_ex = exact
        window = state.active & (r_ex >= 2 * floor)
        if quantity == "r":
            err = np.abs(state.r - r_ex)
        elif quantity == "log_omega":
            err = np.abs(state.log_omega - f_ex)
        elif quantity == "kretschmann":
            k = kretschmann_field(state, grid)
            if spec.family is _idata.Family.MINKOWSKI:
                err = np.abs(k)
            else:
                k_ex = 48.0 * spec.M ** 2 / r_ex ** 6
                err = np.abs(k - k_ex) / k_ex
            window &= np.isfinite(k)
        else:
            raise ConfigurationError(f"unknown study quantity {quantity!r}")
        vals = err[window]
        vals = vals[np.isfinite(vals)]
        return float(vals.max()) if vals.size else float("nan")
    # self-convergence against the next refinement on shared points
    assert fine_state is not None
    n_u, n_v = grid.shape
    ic = np.arange(n_u)
    jc = np.arange(n_v)
    both = state.active & fine_state.active[np.ix_(2 * ic, 2 * jc)]
    window = both & (state.r >= 2 * floor)
    if quantity == "r":
        diff = np.abs(state.r - fine_state.r[np.ix_(2 * ic, 2 * jc)])
    elif quantity == "log_omega":
        diff = np.abs(state.log_omega - fine_state.log_omega[np.ix_(2 * ic, 2 * jc)])
    elif quantity == "kretschmann":
        kc = kretschmann_field(state, grid)
        kf = kretschmann_field(fine_state, fine_grid)[np.ix_(2 * ic, 2 * jc)]
        diff = np.abs(kc - kf) / np.maximum(np.abs(kf), 1.0)
        window &= np.isfinite(diff)
    else:
        raise ConfigurationError(f"unknown study quantity {quantity!r}")
    vals = diff[window]
    vals = vals[np.isfinite(vals)]
    return float(vals.max()) if vals.size else float("nan")


def convergence_study(spec, base_grid: DoubleNullGrid, levels: int,
                      scheme: SchemeConfig, quantity: str = "r"):
    """March `levels` nested refinements and report (h, error, order) rows.

    Error is measured against the closed form for the families that have
    one, else by self-convergence of nested level pairs (one fewer row).
    order = log2(error_prev / error_this) between consecutive rows; rows
    whose error sits at round-off are flagged degenerate and excluded
    from order formation.
    """
    if levels < 3:
        raise ConfigurationError(f"need levels >= 3, got {levels}")
    grids = [base_grid]
    for _ in range(levels - 1):
        grids.append(refine(grids[-1]))
    floor = scheme.r_floor
    states = []
    for g in grids:
        st = _idata.build_initial_data(spec, g)
        if floor is None:
            floor = default_r_floor(st)
        run_scheme = SchemeConfig(
            r_floor=floor,
            corrector_iterations=scheme.corrector_iterations,
            constraint_check_cadence=scheme.constraint_check_cadence,
            log_omega_abort=scheme.log_omega_abort,
            threads=scheme.threads)
        march(st, g, run_scheme)
        states.append(st)

    exact = _exact_planes(spec, grids[0]) is not None
    errors = []
    if exact or quantity in ("constraint", "constraint_rms"):
        for g, st in zip(grids, states):
            errors.append((g, _study_error(spec, quantity, g, st, floor)))
    else:
        for k in range(levels - 1):
            err = _study_error(spec, quantity, grids[k], states[k], floor,
                               fine_grid=grids[k + 1], fine_state=states[k + 1])
            errors.append((grids[k], err))

    rows = []
    prev_err = None
    for g, err in errors:
        h = max(g.du, g.dv)
        degenerate = not np.isfinite(err) or err < 1e-12
        if prev_err is None or degenerate or prev_err < 1e-12:
            order = float("nan")
        else:
            order = float(np.log2(prev_err / err))
        rows.append(ConvergenceRow(h=h, error=err, order=order,
                                   degenerate=degenerate))
        prev_err = err
    return rows
