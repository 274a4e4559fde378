"""
Characteristic initial data on the two null rays u = u0 and v = v0.

Four families:

    MINKOWSKI                 flat space, r linear on the rays
    SCHWARZSCHILD             exact interior solution sampled in closed form
    PERTURBED_SCHWARZSCHILD   scalar pulse of size epsilon on Schwarzschild
    PULSE                     Minkowski corner plus an outgoing scalar pulse
                              of amplitude A (the trapped-surface criterion
                              configuration)

The Schwarzschild interior in double-null coordinates satisfies

    (1 - r/2M) exp(r/2M) = U V,    Omega^2 = (32 M^3 / r) exp(-r/2M)

with 0 < U V < 1 covering the region between horizon (UV -> 0) and
singularity (UV -> 1). This closed form is the exact-solution oracle used
throughout the tests.

For the scalar families the outgoing ray is built by integrating the null
constraint (lam/Omega^2)_v = -r w^2/Omega^2 together with r_v = lam and
phi_v = w, so the data are constraint-exact at the discrete level (leapfrog
plus an RK4 starter, residuals ~1e-12). The transverse derivatives nu and z
on that ray follow from the evolution equations restricted to the ray,
integrated by a trapezoid rule that is linear in the unknown.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .geometry import ConfigurationError, DoubleNullGrid, FieldState
from .field_equations import hawking_mass


class Family(str, enum.Enum):
    MINKOWSKI = "MINKOWSKI"
    SCHWARZSCHILD = "SCHWARZSCHILD"
    PERTURBED_SCHWARZSCHILD = "PERTURBED_SCHWARZSCHILD"
    PULSE = "PULSE"


@dataclass(frozen=True)
class InitialDataSpec:
    """Parameters of one initial-data family.

    M is the Schwarzschild mass (Schwarzschild families), epsilon the
    dimensionless perturbation size, amplitude the pulse strength A.
    v_a, v_b bound the pulse support; None selects the family default
    (for PERTURBED_SCHWARZSCHILD a window over the first third of the
    ray, leaving room on both sides). shape_exponent k sets the C^{k-1}
    smoothness of the profile at the support ends. r_corner is the area
    radius at the grid corner for the flat-space families. gauge picks
    the logOmega normalization on the rays; only the per-family default
    ("auto": closed-form Schwarzschild Omega when M matters, Omega = 1
    otherwise) is implemented.
    """

    family: Family
    M: float = 0.5
    epsilon: float = 0.0
    amplitude: float = 0.0
    v_a: Optional[float] = None
    v_b: Optional[float] = None
    shape_exponent: int = 4
    r_corner: float = 1.0
    gauge: str = "auto"

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
        except ValueError:
            names = ", ".join(f.value for f in Family)
            raise ConfigurationError(
                f"unknown initial data family {self.family!r};"
                f" expected one of {names}") from None
        if self.gauge != "auto":
            raise ConfigurationError(
                f"gauge normalization {self.gauge!r} not implemented; use 'auto'")
        if self.epsilon < 0:
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.amplitude < 0:
            raise ConfigurationError(f"amplitude must be >= 0, got {self.amplitude}")
        if self.shape_exponent < 1:
            raise ConfigurationError(
                f"shape_exponent must be >= 1, got {self.shape_exponent}")
        if self.family in (Family.SCHWARZSCHILD, Family.PERTURBED_SCHWARZSCHILD):
            if not (self.M > 0):
                raise ConfigurationError(f"family {self.family.value} needs M > 0")
        if self.v_a is not None and self.v_b is not None:
            if not (self.v_a < self.v_b):
                raise ConfigurationError(
                    f"pulse support empty: v_a={self.v_a} >= v_b={self.v_b}")
        if self.family is Family.PULSE and not (self.r_corner > 0):
            raise ConfigurationError(f"r_corner must be > 0, got {self.r_corner}")


# ---------------------------------------------------------------------------
# Schwarzschild interior closed form

def _schw_rho(w):
    """Solve (1 - rho) e^rho = w for rho = r/2M in (0, 1).

    The map is strictly decreasing on (0,1), so 80 bisection steps bracket
    to ~1e-24 in exact arithmetic; four Newton polishes then saturate double
    precision. Vectorized, unconditionally convergent.
    """
    w = np.asarray(w, dtype=float)
    lo = np.zeros_like(w)
    hi = np.ones_like(w)
    rho = 0.5 * (lo + hi)
    for _ in range(80):
        f = (1.0 - rho) * np.exp(rho) - w
        hi = np.where(f < 0, rho, hi)
        lo = np.where(f >= 0, rho, lo)
        rho = 0.5 * (lo + hi)
    for _ in range(4):
        f = (1.0 - rho) * np.exp(rho) - w
        df = -rho * np.exp(rho)
        rho = rho - f / df
    return rho


def schwarzschild_r_from_uv(U, V, M):
    """Area radius of the interior solution at Kruskal-type (U, V).

    Requires 0 < U*V < 1 and M > 0; solved to relative tolerance 1e-14.
    """
    if not (M > 0):
        raise ConfigurationError(f"M must be > 0, got {M}")
    w = np.asarray(U, dtype=float) * np.asarray(V, dtype=float)
    if np.any(w <= 0.0):
        raise ConfigurationError("U*V <= 0: outside the interior region")
    if np.any(w >= 1.0):
        raise ConfigurationError("U*V >= 1: past the singularity")
    r = 2.0 * M * _schw_rho(w)
    if np.ndim(U) == 0 and np.ndim(V) == 0:
        return float(r)
    return r


def schwarzschild_fields(U, V, M):
    """All seven unknowns of the exact interior solution at (U, V).

    Returns (r, log_omega, nu, lam, omega_sq); phi and its derivatives
    vanish. The first derivatives follow from implicit differentiation
    of the defining relation.
    """
    r = 2.0 * M * _schw_rho(np.asarray(U, dtype=float) * np.asarray(V, dtype=float))
    om2 = (32.0 * M ** 3 / r) * np.exp(-r / (2.0 * M))
    log_omega = 0.5 * np.log(om2)
    nu = -(4.0 * M ** 2 * V / r) * np.exp(-r / (2.0 * M))
    lam = -(4.0 * M ** 2 * U / r) * np.exp(-r / (2.0 * M))
    return r, log_omega, nu, lam, om2


def _check_schwarzschild_domain(grid: DoubleNullGrid):
    if grid.u_min <= 0 or grid.v_min <= 0:
        raise ConfigurationError("Schwarzschild rays need U, V > 0")
    if grid.u_min * grid.v_min <= 0.0:
        raise ConfigurationError("grid corner outside the interior (U*V <= 0)")
    if grid.u_max * grid.v_max >= 1.0:
        raise ConfigurationError("grid corner past the singularity (U*V >= 1)")


def build_schwarzschild_data(grid: DoubleNullGrid, M: float) -> FieldState:
    """Exact interior data on both rays; phi = 0."""
    if not (M > 0):
        raise ConfigurationError(f"M must be > 0, got {M}")
    _check_schwarzschild_domain(grid)
    state = FieldState.unset(grid)
    us = grid.u_coords()
    vs = grid.v_coords()
    r0, f0, nu0, lam0, _ = schwarzschild_fields(us, vs[0], M)
    state.r[:, 0] = r0
    state.log_omega[:, 0] = f0
    state.nu[:, 0] = nu0
    state.lam[:, 0] = lam0
    r1, f1, nu1, lam1, _ = schwarzschild_fields(us[0], vs, M)
    state.r[0, :] = r1
    state.log_omega[0, :] = f1
    state.nu[0, :] = nu1
    state.lam[0, :] = lam1
    for plane in (state.phi, state.z, state.w):
        plane[:, 0] = 0.0
        plane[0, :] = 0.0
    state.mask[:, 0] = 1
    state.mask[0, :] = 1
    return state


# ---------------------------------------------------------------------------
# scalar profiles

def pulse_profile(v, A, v_a, v_b, k):
    """phi_v on the outgoing ray: A s^k (1-s)^k on s = (v-v_a)/(v_b-v_a),
    zero outside the support."""
    v = np.asarray(v, dtype=float)
    s = (v - v_a) / (v_b - v_a)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    out[inside] = A * s[inside] ** k * (1 - s[inside]) ** k
    return out


def _bump_normalized(v, v_a, v_b, k):
    # (4 s (1-s))^k peaks at exactly 1 at the support midpoint
    v = np.asarray(v, dtype=float)
    s = (v - v_a) / (v_b - v_a)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    out[inside] = (4.0 * s[inside] * (1.0 - s[inside])) ** k
    return out


def _default_perturbation_window(grid: DoubleNullGrid) -> Tuple[float, float]:
    length = grid.v_max - grid.v_min
    return grid.v_min + 0.05 * length, grid.v_min + 0.35 * length


# ---------------------------------------------------------------------------
# perturbed Schwarzschild

def build_perturbed_schwarzschild_data(grid: DoubleNullGrid, M: float,
                                       epsilon: float,
                                       pulse_profile=None) -> FieldState:
    """Schwarzschild data plus a scalar perturbation of size epsilon.

    The incoming ray stays exactly Schwarzschild. On the outgoing ray the
    gauge is fixed by logOmega = closed-form value, phi_v is the bump
    epsilon * ghat(v)/r^2 with ghat normalized to peak 1 (so r^2 |phi_v|
    <= epsilon by construction), and (r, lam, phi) are re-solved from the
    v-constraint. pulse_profile is an optional (v_a, v_b, k) support
    override; default places the bump over the first third of the ray.

    epsilon = 0 short-circuits to build_schwarzschild_data so the nesting
    is bitwise, not just numerically close.
    """
    if epsilon < 0:
        raise ConfigurationError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon == 0.0:
        return build_schwarzschild_data(grid, M)
    if not (M > 0):
        raise ConfigurationError(f"M must be > 0, got {M}")
    _check_schwarzschild_domain(grid)
    if pulse_profile is None:
        v_a, v_b = _default_perturbation_window(grid)
        k = 4
    else:
        v_a, v_b, k = pulse_profile
    if not (grid.v_min <= v_a < v_b <= grid.v_max):
        raise ConfigurationError(
            f"perturbation support [{v_a}, {v_b}] not inside the outgoing ray")

    state = FieldState.unset(grid)
    us = grid.u_coords()
    vs = grid.v_coords()
    n_v = grid.n_v
    dv = grid.dv

    # incoming ray: exact closed form
    r0, f0, nu0, lam0, _ = schwarzschild_fields(us, vs[0], M)
    state.r[:, 0] = r0
    state.log_omega[:, 0] = f0
    state.nu[:, 0] = nu0
    state.lam[:, 0] = lam0
    state.phi[:, 0] = 0.0
    state.z[:, 0] = 0.0
    state.w[:, 0] = 0.0

    # outgoing ray gauge: logOmega = closed form as a function of v
    rg, fg, nug, _, om2 = schwarzschild_fields(us[0], vs, M)
    ghat = _bump_normalized(vs, v_a, v_b, k)

    # constraint march for (r, H, phi) with H = lam/Omega^2:
    #   H_v = -r w^2 / Omega^2,  r_v = Omega^2 H,  phi_v = w = eps ghat / r^2
    H = np.empty(n_v)
    rr = np.empty(n_v)
    pp = np.empty(n_v)
    # closed-form H at the corner: lam = -(4M^2 U/r) e^{-r/2M} over Omega^2
    H[0] = -us[0] / (8.0 * M)
    rr[0] = rg[0]
    pp[0] = 0.0

    def ode(y, ghere, omhere):
        rj, hj, pj = y
        wj = epsilon * ghere / rj ** 2
        return np.array([omhere * hj, -rj * wj * wj / omhere, wj])

    # RK4 starter; gauge values at the half step come from the closed form
    vh = vs[0] + dv / 2
    _, _, _, _, omh = schwarzschild_fields(us[0], np.array([vh]), M)
    gh = _bump_normalized(np.array([vh]), v_a, v_b, k)[0]
    y = np.array([rr[0], H[0], pp[0]])
    k1 = ode(y, ghat[0], om2[0])
    k2 = ode(y + dv / 2 * k1, gh, omh[0])
    k3 = ode(y + dv / 2 * k2, gh, omh[0])
    k4 = ode(y + dv * k3, ghat[1], om2[1])
    rr[1], H[1], pp[1] = y + dv / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    for j in range(1, n_v - 1):
        wj = epsilon * ghat[j] / rr[j] ** 2
        H[j + 1] = H[j - 1] - 2 * dv * rr[j] * wj * wj / om2[j]
        rr[j + 1] = rr[j - 1] + 2 * dv * om2[j] * H[j]
        pp[j + 1] = pp[j - 1] + 2 * dv * wj
    lamr = om2 * H
    wr = epsilon * ghat / rr ** 2
    state.r[0, :] = rr
    state.log_omega[0, :] = fg
    state.phi[0, :] = pp
    state.lam[0, :] = lamr
    state.w[0, :] = wr

    # transverse nu, z on the outgoing ray: trapezoid in v, linear in the
    # unknown since nu_v = -(lam nu + Omega^2/4)/r and z_v = -(lam z + nu w)/r
    nn = np.empty(n_v)
    zz = np.empty(n_v)
    nn[0] = nug[0]
    zz[0] = 0.0
    for j in range(n_v - 1):
        aj = lamr[j] / rr[j]
        aj1 = lamr[j + 1] / rr[j + 1]
        rhs = nn[j] - dv / 2 * (aj * nn[j] + 0.25 * om2[j] / rr[j]
                                + 0.25 * om2[j + 1] / rr[j + 1])
        nn[j + 1] = rhs / (1 + dv / 2 * aj1)
        rhsz = zz[j] - dv / 2 * (aj * zz[j] + nn[j] * wr[j] / rr[j]
                                 + nn[j + 1] * wr[j + 1] / rr[j + 1])
        zz[j + 1] = rhsz / (1 + dv / 2 * aj1)
    state.nu[0, :] = nn
    state.z[0, :] = zz

    state.mask[:, 0] = 1
    state.mask[0, :] = 1
    return state


# ---------------------------------------------------------------------------
# pulse family (trapped-surface criterion configuration)

def build_pulse_data(grid: DoubleNullGrid, A: float, v_a: float, v_b: float,
                     k: int = 4, r_corner: float = 1.0) -> FieldState:
    """Minkowski corner plus an outgoing pulse phi_v = A s^k (1-s)^k.

    Gauge Omega = 1 on both rays. The incoming ray is exact Minkowski
    (r = r_corner - (u-u0)/2, untrapped); the outgoing ray integrates the
    v-constraint through the pulse, so r bends inward and the Hawking mass
    grows across the support.
    """
    if not (v_a < v_b):
        raise ConfigurationError(f"pulse support empty: [{v_a}, {v_b}]")
    if A < 0:
        raise ConfigurationError(f"amplitude must be >= 0, got {A}")
    if not (grid.v_min <= v_a and v_b <= grid.v_max):
        raise ConfigurationError(
            f"pulse support [{v_a}, {v_b}] not inside the outgoing ray")
    r_end = r_corner - (grid.u_max - grid.u_min) / 2
    if r_end <= 0:
        raise ConfigurationError(
            f"incoming ray reaches r = {r_end} <= 0; shrink the u extent "
            f"or raise r_corner")

    state = FieldState.unset(grid)
    us = grid.u_coords()
    vs = grid.v_coords()
    n_v = grid.n_v
    dv = grid.dv

    # incoming ray v = v0: exact Minkowski
    state.r[:, 0] = r_corner - (us - us[0]) / 2
    state.log_omega[:, 0] = 0.0
    state.phi[:, 0] = 0.0
    state.nu[:, 0] = -0.5
    state.lam[:, 0] = 0.5
    state.z[:, 0] = 0.0
    state.w[:, 0] = 0.0

    # outgoing ray: constraint march with H = lam (Omega = 1):
    #   H_v = -r w^2,  r_v = H,  phi_v = w
    wray = pulse_profile(vs, A, v_a, v_b, k)
    rr = np.empty(n_v)
    hh = np.empty(n_v)
    pp = np.empty(n_v)
    rr[0] = r_corner
    hh[0] = 0.5
    pp[0] = 0.0

    def ode(v, y):
        rj, hj, pj = y
        wj = pulse_profile(np.array([v]), A, v_a, v_b, k)[0]
        return np.array([hj, -rj * wj * wj, wj])

    y = np.array([rr[0], hh[0], pp[0]])
    k1 = ode(vs[0], y)
    k2 = ode(vs[0] + dv / 2, y + dv / 2 * k1)
    k3 = ode(vs[0] + dv / 2, y + dv / 2 * k2)
    k4 = ode(vs[0] + dv, y + dv * k3)
    rr[1], hh[1], pp[1] = y + dv / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    for j in range(1, n_v - 1):
        hh[j + 1] = hh[j - 1] - 2 * dv * rr[j] * wray[j] ** 2
        rr[j + 1] = rr[j - 1] + 2 * dv * hh[j]
        pp[j + 1] = pp[j - 1] + 2 * dv * wray[j]
    state.r[0, :] = rr
    state.log_omega[0, :] = 0.0
    state.phi[0, :] = pp
    state.lam[0, :] = hh
    state.w[0, :] = wray

    # transverse nu, z: trapezoid, linear in the unknown
    nn = np.empty(n_v)
    zz = np.empty(n_v)
    nn[0] = -0.5
    zz[0] = 0.0
    for j in range(n_v - 1):
        aj = hh[j] / rr[j]
        aj1 = hh[j + 1] / rr[j + 1]
        rhs = nn[j] - dv / 2 * (aj * nn[j] + 0.25 / rr[j] + 0.25 / rr[j + 1])
        nn[j + 1] = rhs / (1 + dv / 2 * aj1)
        rhsz = zz[j] - dv / 2 * (aj * zz[j] + nn[j] * wray[j] / rr[j]
                                 + nn[j + 1] * wray[j + 1] / rr[j + 1])
        zz[j + 1] = rhsz / (1 + dv / 2 * aj1)
    state.nu[0, :] = nn
    state.z[0, :] = zz

    state.mask[:, 0] = 1
    state.mask[0, :] = 1
    return state


def resolved_support(spec: InitialDataSpec, grid: DoubleNullGrid):
    """The pulse support actually used on the incoming ray: the explicit
    [v_a, v_b] when the spec carries one, else the middle third."""
    length = grid.v_max - grid.v_min
    v_a = spec.v_a if spec.v_a is not None else grid.v_min + length / 3
    v_b = spec.v_b if spec.v_b is not None else grid.v_min + 2 * length / 3
    return v_a, v_b


def build_initial_data(spec: InitialDataSpec, grid: DoubleNullGrid) -> FieldState:
    """Dispatch one family. MINKOWSKI is the pulse construction with A = 0,
    which keeps the A -> 0 nesting bitwise."""
    if spec.family is Family.SCHWARZSCHILD:
        return build_schwarzschild_data(grid, spec.M)
    if spec.family is Family.PERTURBED_SCHWARZSCHILD:
        profile = None
        if spec.v_a is not None and spec.v_b is not None:
            profile = (spec.v_a, spec.v_b, spec.shape_exponent)
        return build_perturbed_schwarzschild_data(grid, spec.M, spec.epsilon,
                                                  pulse_profile=profile)
    if spec.family in (Family.PULSE, Family.MINKOWSKI):
        amp = spec.amplitude if spec.family is Family.PULSE else 0.0
        v_a, v_b = resolved_support(spec, grid)
        return build_pulse_data(grid, amp, v_a, v_b, k=spec.shape_exponent,
                                r_corner=spec.r_corner)
    raise ConfigurationError(f"unknown family {spec.family}")


# ---------------------------------------------------------------------------
# trapped-surface criterion

def trapped_threshold(x):
    """E(x) = x/(1+x)^2 [ln(1/2x) + 5 - x], the mass-input threshold.

    Data with eta0 > E(delta0) are guaranteed to form a trapped surface;
    there is no claim in the other direction. E(1/2) = 1 exactly, and
    E(x) ~ x ln(1/2x) as x -> 0.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(x >= 1):
        raise ConfigurationError(f"trapped_threshold needs 0 < x < 1, got {x}")
    val = x / (1 + x) ** 2 * (np.log(1 / (2 * x)) + 5 - x)
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class CriterionReport:
    """Outcome of one trapped-surface criterion run."""

    eta0: float
    delta0: float
    E_of_delta0: float
    predicted_trapped: bool
    observed_trapped: bool
    first_trapped_point: Optional[Tuple[int, int]]


def criterion_functionals(state: FieldState, grid: DoubleNullGrid,
                          v1: float, v2: float):
    """Mass-input ratio eta0 and radius ratio delta0 on the outgoing ray.

        eta0   = (m(u0, v2) - m(u0, v1)) / r(u0, v2)
        delta0 = (r(u0, v2) - r(u0, v1)) / r(u0, v2)

    Both from the discrete Hawking mass of the constructed data, so the
    criterion is tested against the same observables the evolution sees.
    Returns (eta0, delta0, E(delta0)).
    """
    if not (v1 < v2):
        raise ConfigurationError(f"need v1 < v2, got {v1}, {v2}")
    _, j1 = grid.index_of(grid.u_min, v1)
    _, j2 = grid.index_of(grid.u_min, v2)
    om2 = np.exp(2.0 * state.log_omega[0, [j1, j2]])
    md = hawking_mass(state.r[0, [j1, j2]], state.nu[0, [j1, j2]],
                      state.lam[0, [j1, j2]], om2)
    r2 = state.r[0, j2]
    eta0 = float((md.m[1] - md.m[0]) / r2)
    delta0 = float((r2 - state.r[0, j1]) / r2)
    return eta0, delta0, trapped_threshold(delta0)
