"""
Pointwise equations of the spherically symmetric Einstein-scalar system.

With metric g = -Omega^2 du dv + r^2 dsigma^2 and the abbreviations
nu = r_u, lam = r_v, z = phi_u, w = phi_w, the evolution equations are

    r * r_uv          = -nu*lam - Omega^2/4
    r^2 * (logOmega)_uv = nu*lam + Omega^2/4 - r^2 z w
    r * phi_uv        = -nu*w - lam*z

subject to the null constraints

    (nu/Omega^2)_u  = -r z^2 / Omega^2
    (lam/Omega^2)_v = -r w^2 / Omega^2

The Hawking mass is defined through 1 - 2m/r = -4 nu lam / Omega^2.

This module evaluates all of these pointwise or on stored planes, plus the
Kretschmann invariant two independent ways: a closed-form expression in the
null derivatives of r and logOmega, and a brute-force oracle that assembles
the full Riemann tensor from finite-differenced Christoffel symbols. The
two paths share no algebra beyond the metric, so a transcription error in
either is caught by their disagreement.

All Omega arithmetic goes through log_omega (the evolved variable); Omega^2
spans many decades near the singularity and log space avoids over/underflow.

The rhs_* functions do no input validation: they sit in the march hot loop,
which guards r > 0 by excision before they are reached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ACTIVE, DoubleNullGrid, FieldState


def rhs_r_wave(r, nu, lam, omega_sq):
    """Mixed derivative r_uv. Requires r > 0 (caller guards)."""
    return (-nu * lam - 0.25 * omega_sq) / r


def rhs_logomega_wave(r, nu, lam, omega_sq, z, w):
    """Mixed derivative (logOmega)_uv. Requires r > 0 (caller guards)."""
    return (nu * lam + 0.25 * omega_sq - r * r * z * w) / (r * r)


def rhs_phi_wave(r, nu, lam, z, w):
    """Mixed derivative phi_uv. Requires r > 0 (caller guards)."""
    return (-nu * w - lam * z) / r


def rhs_r_wave_mass_form(r, nu, lam, mu):
    """r_uv written through the mass ratio mu = 2m/r:

        r_uv = mu / ((1 - mu) r) * lam * nu

    Removable singularity at mu = 1 (apparent horizon); used only by
    cross-validation tests, which skip |mu - 1| < 1e-6. The evolution
    always uses rhs_r_wave.
    """
    return mu / ((1.0 - mu) * r) * lam * nu


@dataclass
class MassData:
    """Hawking mass m and mass ratio mu = 2m/r on a plane or point set."""

    m: np.ndarray
    mu: np.ndarray


def hawking_mass(r, nu, lam, omega_sq) -> MassData:
    """Hawking mass from 1 - 2m/r = -4 nu lam / Omega^2.

    mu > 1 iff nu lam > 0, which in a collapse setting means the trapped
    sign condition nu < 0 and lam < 0.
    """
    mu = 1.0 + 4.0 * nu * lam / omega_sq
    return MassData(m=0.5 * r * mu, mu=mu)


# ---------------------------------------------------------------------------
# constraint residuals

def constraint_residual_u(r, nu, z, omega_sq, du, mask=None):
    """Residual of (nu/Omega^2)_u + r z^2/Omega^2 = 0, centered stencil.

    Evaluated at interior points i with both u-neighbors available; NaN at
    the two boundary rows and wherever the stencil leaves the ACTIVE set
    (if a mask is supplied) or touches non-finite data.
    """
    h = nu / omega_sq
    out = np.full_like(np.asarray(r, dtype=float), np.nan)
    out[1:-1, ...] = ((h[2:, ...] - h[:-2, ...]) / (2.0 * du)
                      + r[1:-1, ...] * z[1:-1, ...] ** 2 / omega_sq[1:-1, ...])
    if mask is not None:
        ok = ((mask[:-2, ...] == ACTIVE) & (mask[1:-1, ...] == ACTIVE)
              & (mask[2:, ...] == ACTIVE))
        out[1:-1, ...] = np.where(ok, out[1:-1, ...], np.nan)
    return out


def constraint_residual_v(r, lam, w, omega_sq, dv, mask=None):
    """Residual of (lam/Omega^2)_v + r w^2/Omega^2 = 0; v-mirror of the
    u-constraint."""
    h = lam / omega_sq
    out = np.full_like(np.asarray(r, dtype=float), np.nan)
    out[..., 1:-1] = ((h[..., 2:] - h[..., :-2]) / (2.0 * dv)
                      + r[..., 1:-1] * w[..., 1:-1] ** 2 / omega_sq[..., 1:-1])
    if mask is not None:
        ok = ((mask[..., :-2] == ACTIVE) & (mask[..., 1:-1] == ACTIVE)
              & (mask[..., 2:] == ACTIVE))
        out[..., 1:-1] = np.where(ok, out[..., 1:-1], np.nan)
    return out


@dataclass
class ConstraintResiduals:
    """Both constraint residual planes with NaN-aware norms over the
    evaluable set."""

    res_u: np.ndarray
    res_v: np.ndarray

    @property
    def l_inf(self) -> float:
        vals = []
        for res in (self.res_u, self.res_v):
            if np.any(np.isfinite(res)):
                vals.append(np.nanmax(np.abs(res)))
        return float(max(vals)) if vals else float("nan")

    @property
    def l_2(self) -> float:
        both = np.concatenate([self.res_u.ravel(), self.res_v.ravel()])
        both = both[np.isfinite(both)]
        if both.size == 0:
            return float("nan")
        return float(np.sqrt(np.mean(both ** 2)))


def constraint_residuals(state: FieldState, grid: DoubleNullGrid) -> ConstraintResiduals:
    """Evaluate both residual planes on a stored state, masked to ACTIVE."""
    om2 = state.omega_sq
    with np.errstate(all="ignore"):
        res_u = constraint_residual_u(state.r, state.nu, state.z, om2,
                                      grid.du, mask=state.mask)
        res_v = constraint_residual_v(state.r, state.lam, state.w, om2,
                                      grid.dv, mask=state.mask)
    return ConstraintResiduals(res_u=res_u, res_v=res_v)


# ---------------------------------------------------------------------------
# Kretschmann scalar, closed form

def kretschmann_closed_form(r, nu, lam, omega_sq,
                            d2r_uu, d2r_vv, d2r_uv,
                            dlogomega_u, dlogomega_v, d2logomega_uv):
    """Kretschmann invariant K = R_abcd R^abcd from null derivatives.

    Grouped in the logOmega form: every Omega derivative enters through
    dlogomega_* and the mixed d2logomega_uv, never through derivatives of
    Omega itself, so huge conformal factors cancel before they overflow.

    Minkowski sanity: the nu^2 lam^2 term gives +4/r^4, the nu lam/(r^4
    Omega^2) term -8/r^4, the constant tail +4/r^4; everything else is 0.
    """
    inv = 1.0 / (r * r * omega_sq * omega_sq)
    t1 = 64.0 * inv * (d2r_uv ** 2 + d2r_uu * d2r_vv)
    t2 = -128.0 * inv * (d2r_uu * lam * dlogomega_v + d2r_vv * nu * dlogomega_u)
    t3 = (64.0 * inv / r ** 2 * nu ** 2 * lam ** 2
          + 256.0 * inv * nu * lam * dlogomega_u * dlogomega_v
          + 32.0 * nu * lam / (r ** 4 * omega_sq))
    t45 = 64.0 / omega_sq ** 2 * d2logomega_uv ** 2 + 4.0 / r ** 4
    return t1 + t2 + t3 + t45


def _centered_u(plane: np.ndarray, du: float) -> np.ndarray:
    out = np.full_like(plane, np.nan)
    out[1:-1, :] = (plane[2:, :] - plane[:-2, :]) / (2.0 * du)
    return out


def _centered_v(plane: np.ndarray, dv: float) -> np.ndarray:
    out = np.full_like(plane, np.nan)
    out[:, 1:-1] = (plane[:, 2:] - plane[:, :-2]) / (2.0 * dv)
    return out


def kretschmann_field(state: FieldState, grid: DoubleNullGrid) -> np.ndarray:
    """Closed-form K on a stored plane.

    Mixed second derivatives come from the field equations themselves
    (they are constraints the solution satisfies pointwise); the pure
    second derivatives d2r_uu, d2r_vv are centered differences of the
    evolved first-derivative fields nu and lam, one differencing level
    below second-differencing the primaries. NaN wherever the 5-point
    neighborhood leaves the ACTIVE set.
    """
    om2 = state.omega_sq
    with np.errstate(all="ignore"):
        d2r_uv = rhs_r_wave(state.r, state.nu, state.lam, om2)
        d2f_uv = rhs_logomega_wave(state.r, state.nu, state.lam, om2,
                                   state.z, state.w)
        d2r_uu = _centered_u(state.nu, grid.du)
        d2r_vv = _centered_v(state.lam, grid.dv)
        lu = _centered_u(state.log_omega, grid.du)
        lv = _centered_v(state.log_omega, grid.dv)
        k = kretschmann_closed_form(state.r, state.nu, state.lam, om2,
                                    d2r_uu, d2r_vv, d2r_uv, lu, lv, d2f_uv)
    act = state.active
    ok = act.copy()
    ok[1:-1, :] &= act[2:, :] & act[:-2, :]
    ok[:, 1:-1] &= act[:, 2:] & act[:, :-2]
    ok[0, :] = ok[-1, :] = False
    ok[:, 0] = ok[:, -1] = False
    return np.where(ok, k, np.nan)


# ---------------------------------------------------------------------------
# Kretschmann scalar, brute-force oracle

def _gamma_tables(r, nu, lam, om2, lu, lv):
    """Christoffel symbols of the full 4-metric at theta = pi/2.

    Index order (u, v, theta, phi) = (0, 1, 2, 3). G[a, b, c] = Gamma^a_bc.
    The only nonzero symbols in this gauge are the twelve tabulated ones;
    Gamma^2_33 and Gamma^3_23 vanish on the equator but their theta
    derivatives do not (handled by the caller).
    """
    shape = r.shape
    G = np.zeros((4, 4, 4) + shape)
    G[0, 0, 0] = 2.0 * lu
    G[1, 1, 1] = 2.0 * lv
    G[0, 2, 2] = G[0, 3, 3] = 2.0 * r * lam / om2
    G[1, 2, 2] = G[1, 3, 3] = 2.0 * r * nu / om2
    G[2, 0, 2] = G[2, 2, 0] = nu / r
    G[2, 1, 2] = G[2, 2, 1] = lam / r
    G[3, 0, 3] = G[3, 3, 0] = nu / r
    G[3, 1, 3] = G[3, 3, 1] = lam / r
    return G


def _oracle_slab(r, f, du, dv):
    """Evaluate the Riemann-contraction K on one column slab.

    Everything is finite differences of (r, logOmega) alone: first
    derivatives centered, Christoffels from the table, Riemann from
    centered derivatives of Christoffels plus the quadratic terms,
    then the double contraction with the diagonal-null inverse metric.
    Returns K with 2-deep NaN margins on the slab edges.
    """
    om2 = np.exp(2.0 * f)
    nu = _centered_u(r, du)
    lam = _centered_v(r, dv)
    lu = _centered_u(f, du)
    lv = _centered_v(f, dv)

    with np.errstate(all="ignore"):
        G = _gamma_tables(r, nu, lam, om2, lu, lv)

        nonzero_slots = [(0, 0, 0), (1, 1, 1),
                         (0, 2, 2), (0, 3, 3), (1, 2, 2), (1, 3, 3),
                         (2, 0, 2), (2, 2, 0), (2, 1, 2), (2, 2, 1),
                         (3, 0, 3), (3, 3, 0), (3, 1, 3), (3, 3, 1)]
        dG = np.zeros((4, 4, 4, 4) + r.shape)
        for a, b, c in nonzero_slots:
            dG[a, b, c, 0] = _centered_u(G[a, b, c], du)
            dG[a, b, c, 1] = _centered_v(G[a, b, c], dv)
        # equatorial theta-derivatives of the symbols that vanish there
        dG[2, 3, 3, 2] = 1.0
        dG[3, 2, 3, 2] = -1.0
        dG[3, 3, 2, 2] = -1.0

        # R^a_bcd = d_c G^a_db - d_d G^a_cb + G^a_ce G^e_db - G^a_de G^e_cb
        dc = np.einsum("adbcxy->abcdxy", dG)
        dd = np.einsum("acbdxy->abcdxy", dG)
        gg1 = np.einsum("acexy,edbxy->abcdxy", G, G)
        gg2 = np.einsum("adexy,ecbxy->abcdxy", G, G)
        rup = dc - dd + gg1 - gg2

        g = np.zeros((4, 4) + r.shape)
        g[0, 1] = g[1, 0] = -0.5 * om2
        g[2, 2] = r * r
        g[3, 3] = r * r
        gi = np.zeros((4, 4) + r.shape)
        gi[0, 1] = gi[1, 0] = -2.0 / om2
        gi[2, 2] = 1.0 / (r * r)
        gi[3, 3] = 1.0 / (r * r)

        rdown = np.einsum("aexy,ebcdxy->abcdxy", g, rup)
        rupup = np.einsum("bfxy,cgxy,dhxy,afghxy->abcdxy", gi, gi, gi, rup)
        k = np.einsum("abcdxy,abcdxy->xy", rdown, rupup)
    return k


def kretschmann_oracle(r, log_omega, du, dv, col_block=48):
    """Brute-force K from the metric planes (r, logOmega) only.

    Independent of the closed form: builds all Christoffels by finite
    differences, differentiates them numerically, contracts the full
    Riemann tensor. O(h^2) accurate; NaN on a 2-deep margin and wherever
    the 5x5 neighborhood touches non-finite input.

    Work is chunked over column blocks because the intermediate rank-4
    tensors hold 256 planes; a halo of 2 columns per side keeps the
    chunked result identical to the monolithic one.
    """
    r = np.asarray(r, dtype=float)
    f = np.asarray(log_omega, dtype=float)
    n_u, n_v = r.shape
    out = np.full((n_u, n_v), np.nan)
    for c0 in range(0, n_v, col_block):
        c1 = min(c0 + col_block, n_v)
        lo = max(0, c0 - 2)
        hi = min(n_v, c1 + 2)
        k_slab = _oracle_slab(r[:, lo:hi], f[:, lo:hi], du, dv)
        out[:, c0:c1] = k_slab[:, c0 - lo:c1 - lo]
    return out
