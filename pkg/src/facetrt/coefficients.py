"""Complex field evaluation along interaction paths.

Uniform wedge coefficients (four-term cotangent sum with transition
function), corner terms as Fresnel-step endpoint corrections of the edge
line integral (GFI-coupled near joint transitions), coplanar double-edge
cascades with distance-parameter coupling, and edge-corner cascades with
linear regime interpolation.  PEC only, phasors e^{+j omega t}, propagation
phase e^{-jks}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from facetrt import transition as tr
from facetrt.paths import GRAZING_TOL, MIN_SIN_BETA

_SQRT2PI = np.sqrt(2.0 * np.pi)
_POLE_TOL = 1.0e-7
_X_FLOOR = 1.0e-12
_AZIMUTH_TOL = 1.0e-6


# ---------------------------------------------------------------------------
# Transverse field container (observation-side reporting)
# ---------------------------------------------------------------------------


@dataclass
class TransverseField:
    """2-component complex field in an orthonormal basis transverse to
    ``direction`` (V/m)."""

    e1: np.ndarray
    e2: np.ndarray
    direction: np.ndarray
    c1: complex
    c2: complex

    @classmethod
    def from_vector(cls, vec, direction, e1):
        d = np.asarray(direction, dtype=float)
        e1 = np.asarray(e1, dtype=float)
        e1 = e1 - (e1 @ d) * d
        e1 = e1 / np.linalg.norm(e1)
        e2 = np.cross(d, e1)
        v = np.asarray(vec)
        return cls(e1=e1, e2=e2, direction=d, c1=complex(v @ e1), c2=complex(v @ e2))

    def vector(self):
        return self.c1 * self.e1 + self.c2 * self.e2

    @property
    def magnitude(self):
        return float(np.sqrt(abs(self.c1) ** 2 + abs(self.c2) ** 2))


@dataclass(frozen=True)
class WedgeAngles:
    """Azimuths and transition inputs of one wedge interaction (arrays ok)."""

    n: float
    phi_inc: np.ndarray      # [0, n pi]
    phi_out: np.ndarray
    sin_beta0: np.ndarray
    L: np.ndarray            # distance parameter, m (includes sin^2 beta0)
    k: float

    def transition_arguments(self):
        """The four kL a_i values in the (beta-, beta-, beta+, beta+) order."""
        kl = self.k * self.L
        bm = self.phi_out - self.phi_inc
        bp = self.phi_out + self.phi_inc
        return np.stack(
            [
                kl * _a_param(bm, self.n, +1.0),
                kl * _a_param(bm, self.n, -1.0),
                kl * _a_param(bp, self.n, +1.0),
                kl * _a_param(bp, self.n, -1.0),
            ]
        )


@dataclass(frozen=True)
class TransitionArgs:
    """Dimensionless transition parameters of a cascaded interaction."""

    a: float = 0.0       # first-edge transition argument
    b: float = 0.0       # Fresnel distance of the corner ray from the edge ray
    c: float = 0.0       # corner-side transition argument
    w: float = 0.0       # cascade distance coupling, in [0, 1)

    def __post_init__(self):
        if min(self.a, self.b, self.c) < 0.0 or not (0.0 <= self.w < 1.0):
            raise ValueError("invalid transition arguments")


# ---------------------------------------------------------------------------
# Four-term wedge machinery
# ---------------------------------------------------------------------------


def _branch_n(beta, n, sign):
    return np.round((beta + sign * np.pi) / (2.0 * np.pi * n))


def _a_param(beta, n, sign):
    big_n = _branch_n(beta, n, sign)
    return 2.0 * np.cos(0.5 * (2.0 * np.pi * n * big_n - beta)) ** 2


def _term_cot_f(beta, n, kl, sign, table=False):
    """cot((pi + sign*beta)/2n) * F(kL a) with the pole-regularized limit."""
    beta = np.asarray(beta, dtype=float)
    kl = np.asarray(kl, dtype=float)
    big_n = _branch_n(beta, n, sign)
    eps = beta - sign * (2.0 * np.pi * n * big_n - np.pi)
    shape = np.broadcast(beta, kl).shape
    out = np.empty(shape, dtype=complex)
    beta_b = np.broadcast_to(beta, shape)
    kl_b = np.broadcast_to(kl, shape)
    eps_b = np.broadcast_to(eps, shape)
    pole = np.abs(eps_b) < _POLE_TOL
    reg = ~pole
    if np.any(reg):
        x = np.maximum(kl_b[reg] * _a_param(beta_b[reg], n, sign), _X_FLOOR)
        out[reg] = tr.fresnel_transition(x) / np.tan(
            (np.pi + sign * beta_b[reg]) / (2.0 * n)
        )
    if np.any(pole):
        e_p = eps_b[pole]
        kl_p = kl_b[pole]
        sgn = np.where(e_p >= 0.0, 1.0, -1.0)
        out[pole] = n * np.exp(0.25j * np.pi) * (
            np.sqrt(2.0 * np.pi * kl_p) * sgn
            - 2.0 * kl_p * e_p * np.exp(0.25j * np.pi)
        )
    return out


def wedge_prefactor(n, k, sin_beta0):
    return -np.exp(-0.25j * np.pi) / (2.0 * n * _SQRT2PI * np.sqrt(k) * sin_beta0)


def edge_coefficient(angles: WedgeAngles, polarization: str,
                     step=None, blend=None, table=False):
    """Uniform wedge diffraction coefficient D_soft or D_hard.

    ``step`` (signed Fresnel distances) turns the coefficient into a corner
    endpoint term; ``blend`` = (u_alt, weight) linearly mixes step variables
    for the cascade regimes.
    """
    n = angles.n
    kl = angles.k * angles.L
    bm = angles.phi_out - angles.phi_inc
    bp = angles.phi_out + angles.phi_inc

    def term(beta, sign):
        if step is None:
            return _term_cot_f(beta, n, kl, sign, table=table)
        if blend is None:
            return _term_cot_f_stepped(beta, n, kl, sign, step, table)
        u_alt, lam = blend
        t_a = _term_cot_f_stepped(beta, n, kl, sign, step, table)
        t_b = _term_cot_f_stepped(beta, n, kl, sign, u_alt, table)
        return lam * t_a + (1.0 - lam) * t_b

    inc = term(bm, +1.0) + term(bm, -1.0)
    ref = term(bp, +1.0) + term(bp, -1.0)
    pol = polarization.lower()
    if pol in ("soft", "s"):
        total = inc - ref
    elif pol in ("hard", "h"):
        total = inc + ref
    else:
        raise ValueError(f"unknown polarization: {polarization}")
    return wedge_prefactor(n, angles.k, angles.sin_beta0) * total


def _term_cot_f_stepped(beta, n, kl, sign, u_step, table):
    """cot * F * S(u, sqrt(kL a)): per-term GFI-coupled endpoint factor."""
    beta = np.asarray(beta, dtype=float)
    kl = np.asarray(kl, dtype=float)
    big_n = _branch_n(beta, n, sign)
    eps = beta - sign * (2.0 * np.pi * n * big_n - np.pi)
    shape = np.broadcast(beta, kl, u_step).shape
    out = np.empty(shape, dtype=complex)
    beta_b = np.broadcast_to(beta, shape)
    kl_b = np.broadcast_to(kl, shape)
    u_b = np.broadcast_to(u_step, shape)
    eps_b = np.broadcast_to(eps, shape)
    pole = np.abs(eps_b) < _POLE_TOL
    reg = ~pole
    if np.any(reg):
        x = np.maximum(kl_b[reg] * _a_param(beta_b[reg], n, sign), _X_FLOOR)
        s = tr.gfi_step(u_b[reg], np.sqrt(x), table=table)
        out[reg] = tr.fresnel_transition(x) * s / np.tan(
            (np.pi + sign * beta_b[reg]) / (2.0 * n)
        )
    if np.any(pole):
        e_p = eps_b[pole]
        kl_p = kl_b[pole]
        sgn = np.where(e_p >= 0.0, 1.0, -1.0)
        lim = n * np.exp(0.25j * np.pi) * (
            np.sqrt(2.0 * np.pi * kl_p) * sgn
            - 2.0 * kl_p * e_p * np.exp(0.25j * np.pi)
        )
        # joint transition: the pole's own beta scale is pinched out
        s = tr.gfi_step(u_b[pole], np.full(e_p.shape, 1.0e-3), table=table)
        out[pole] = lim * s
    return out


def slope_csc_sum(angles: WedgeAngles, polarization: str, blend_kl=None):
    """Second-order csc^2 sum with the slope transition F_s (pole-finite)."""
    n = angles.n
    kl = angles.k * angles.L
    bm = angles.phi_out - angles.phi_inc
    bp = angles.phi_out + angles.phi_inc

    def term(beta, sign):
        big_n = _branch_n(beta, n, sign)
        eps = beta - sign * (2.0 * np.pi * n * big_n - np.pi)
        shape = np.broadcast(beta, kl).shape
        out = np.empty(shape, dtype=complex)
        beta_b = np.broadcast_to(beta, shape)
        kl_b = np.broadcast_to(kl, shape)
        eps_b = np.broadcast_to(eps, shape)
        pole = np.abs(eps_b) < _POLE_TOL
        reg = ~pole
        if np.any(reg):
            x = np.maximum(kl_b[reg] * _a_param(beta_b[reg], n, sign), _X_FLOOR)
            fs = tr.slope_transition(x)
            arg = (np.pi + sign * beta_b[reg]) / (2.0 * n)
            out[reg] = fs / np.sin(arg) ** 2
        if np.any(pole):
            out[pole] = 4.0j * n * n * kl_b[pole]
        return out

    inc = term(bm, +1.0) + term(bm, -1.0)
    ref = term(bp, +1.0) + term(bp, -1.0)
    if polarization.lower() in ("soft", "s"):
        return inc - ref
    return inc + ref


# ---------------------------------------------------------------------------
# Edge-fixed geometry
# ---------------------------------------------------------------------------


def wedge_interaction_angles(wedge, d_in, d_out, L, k):
    """WedgeAngles plus validity and the grazing-incidence halving factor.

    ``d_in`` points toward the wedge, ``d_out`` away from it.  Directions
    whose azimuths fall inside the material (outside [0, n pi]) are invalid.
    """
    d_in = np.atleast_2d(d_in)
    d_out = np.atleast_2d(d_out)
    e = wedge.tangent
    cos_b_in = d_in @ e
    sin_b = np.sqrt(np.maximum(1.0 - cos_b_in ** 2, 0.0))
    valid = sin_b > MIN_SIN_BETA

    phi_inc = _clamped_azimuth(wedge, -d_in)
    phi_out = _clamped_azimuth(wedge, d_out)
    np_max = wedge.n * np.pi
    valid &= (phi_inc >= -_AZIMUTH_TOL) & (phi_inc <= np_max + _AZIMUTH_TOL)
    valid &= (phi_out >= -_AZIMUTH_TOL) & (phi_out <= np_max + _AZIMUTH_TOL)
    phi_inc = np.clip(phi_inc, 0.0, np_max)
    phi_out = np.clip(phi_out, 0.0, np_max)

    grazing = (phi_inc < GRAZING_TOL) | (phi_inc > np_max - GRAZING_TOL)
    halving = np.where(grazing, 0.5, 1.0)
    angles = WedgeAngles(
        n=wedge.n,
        phi_inc=phi_inc,
        phi_out=phi_out,
        sin_beta0=np.maximum(sin_b, MIN_SIN_BETA),
        L=np.asarray(L, dtype=float) * np.maximum(sin_b, MIN_SIN_BETA) ** 2,
        k=k,
    )
    return angles, valid, halving


def _clamped_azimuth(wedge, directions):
    az = wedge.azimuth(directions)
    # fold numerical noise just below the zero face back to 0
    wrap = az > 2.0 * np.pi - _AZIMUTH_TOL
    return np.where(wrap, az - 2.0 * np.pi, az)


def edge_bases(tangent, d_in, d_out):
    """Edge-fixed polarization bases (phi', beta0', phi, beta0)."""
    d_in = np.atleast_2d(d_in)
    d_out = np.atleast_2d(d_out)
    e = tangent
    phi_i = -np.cross(np.broadcast_to(e, d_in.shape), d_in)
    phi_i = _safe_unit(phi_i)
    beta_i = np.cross(phi_i, d_in)
    phi_o = np.cross(np.broadcast_to(e, d_out.shape), d_out)
    phi_o = _safe_unit(phi_o)
    beta_o = np.cross(phi_o, d_out)
    return phi_i, beta_i, phi_o, beta_o


def _safe_unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 1.0e-12, n, 1.0)


def apply_edge_dyadic(e_field, tangent, d_in, d_out, d_soft, d_hard):
    """E_out = -(D_s E_beta' beta0_hat + D_h E_phi' phi_hat)."""
    phi_i, beta_i, phi_o, beta_o = edge_bases(tangent, d_in, d_out)
    c_beta = np.einsum("ij,ij->i", e_field, beta_i)
    c_phi = np.einsum("ij,ij->i", e_field, phi_i)
    return -(d_soft * c_beta)[:, None] * beta_o - (d_hard * c_phi)[:, None] * phi_o


def apply_edge_dyadic_complex(e_field, tangent, d_in, d_out, d_soft, d_hard):
    phi_i, beta_i, phi_o, beta_o = edge_bases(tangent, d_in, d_out)
    c_beta = np.einsum("ij,ij->i", e_field, beta_i.astype(complex))
    c_phi = np.einsum("ij,ij->i", e_field, phi_i.astype(complex))
    return -(d_soft * c_beta)[:, None] * beta_o - (d_hard * c_phi)[:, None] * phi_o


# ---------------------------------------------------------------------------
# Spec-level coefficient operations
# ---------------------------------------------------------------------------


def vertex_coefficient(angles: WedgeAngles, polarization: str,
                       u_step, inner, blend=None, table=False):
    """Corner endpoint coefficient for one incident wedge.

    ``u_step`` >= 0 is the Fresnel distance of the corner ray from the
    edge-diffraction cone, ``inner`` flags the side owned by the edge
    mechanism.  Continuity: edge (hard cutoff) + both endpoint corners is
    continuous across the cone crossing by construction.
    """
    u = np.asarray(u_step, dtype=float)
    sigma = np.where(np.asarray(inner, dtype=bool), -1.0, 1.0)
    d = edge_coefficient(angles, polarization, step=u, blend=blend, table=table)
    return sigma * d


def double_edge_coefficient(angles1: WedgeAngles, angles2: WedgeAngles,
                            args: TransitionArgs, polarization: str,
                            mid_distance=1.0, table=False):
    """Coefficient product of a coplanar double-edge interaction.

    Sum of the cotangent cascade (dominant, carries the along-facet hard
    component) and the csc^2 slope cascade (soft component, same order only
    near the double transition).  Second-edge transition arguments are
    rescaled by 1/sqrt(1 - w^2) inside the first edge's transition region,
    with a linear blend between regimes.
    """
    lam = tr.blend_weight(args.a)
    d1 = edge_coefficient(angles1, polarization, table=table)
    d2_out = edge_coefficient(angles2, polarization, table=table)
    angles2_in = WedgeAngles(
        n=angles2.n, phi_inc=angles2.phi_inc, phi_out=angles2.phi_out,
        sin_beta0=angles2.sin_beta0,
        L=tr.coupled_distance(angles2.L, args.w), k=angles2.k,
    )
    d2_in = edge_coefficient(angles2_in, polarization, table=table)
    main = d1 * (lam * d2_out + (1.0 - lam) * d2_in)

    s1 = slope_csc_sum(angles1, polarization)
    s2 = slope_csc_sum(angles2, polarization)
    pref = (
        wedge_prefactor(angles1.n, angles1.k, angles1.sin_beta0)
        * wedge_prefactor(angles2.n, angles2.k, angles2.sin_beta0)
    )
    k = angles1.k
    slope = pref * s1 * s2 / (1j * k * max(float(np.min(mid_distance)), 1.0e-9)
                              * 4.0 * angles1.n * angles2.n)
    return main + slope


def edge_vertex_coefficient(angles_edge: WedgeAngles, angles_corner: WedgeAngles,
                            args: TransitionArgs, u_step, inner,
                            polarization="hard", table=False):
    """Cascaded edge-then-corner coefficient (hard component only).

    Outside the edge transition the corner factor uses the plain Fresnel
    distance; inside it the distance is rescaled by 1/sqrt(1 - w^2); linear
    interpolation between the regimes (weight from the edge argument a).
    """
    lam = float(np.mean(tr.blend_weight(args.a)))
    d1 = edge_coefficient(angles_edge, polarization, table=table)
    u = np.asarray(u_step, dtype=float)
    u_in = np.sqrt(tr.coupled_distance(u * u, args.w))
    dv = vertex_coefficient(
        angles_corner, polarization, u, inner, blend=(u_in, lam), table=table
    )
    return d1 * dv


# ---------------------------------------------------------------------------
# PEC reflection dyadic
# ---------------------------------------------------------------------------


def apply_reflection_dyadic(e_field, normal, d_in, d_out):
    """PEC reflection: Gamma_perp = -1, Gamma_par = +1 in the plane basis."""
    d_in = np.atleast_2d(d_in)
    d_out = np.atleast_2d(d_out)
    e_perp = np.cross(d_in, np.broadcast_to(normal, d_in.shape))
    norm = np.linalg.norm(e_perp, axis=1, keepdims=True)
    fallback = np.abs(norm[:, 0]) < 1.0e-9
    if np.any(fallback):
        # normal incidence: any transverse direction works
        t = np.cross(d_in[fallback], np.array([1.0, 0.0, 0.0]))
        bad = np.linalg.norm(t, axis=1) < 1.0e-9
        t[bad] = np.cross(d_in[fallback][bad], np.array([0.0, 1.0, 0.0]))
        e_perp[fallback] = t
        norm[fallback] = np.linalg.norm(t, axis=1, keepdims=True)
    e_perp = e_perp / norm
    e_par_i = np.cross(e_perp, d_in)
    e_par_o = np.cross(e_perp, d_out)
    c_perp = np.einsum("ij,ij->i", e_field, e_perp.astype(complex))
    c_par = np.einsum("ij,ij->i", e_field, e_par_i.astype(complex))
    return (-1.0 * c_perp)[:, None] * e_perp + (1.0 * c_par)[:, None] * e_par_o
