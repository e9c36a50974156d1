"""Transition special functions for uniform diffraction coefficients.

Three canonical objects live here:

* ``fresnel_transition`` -- the Kouyoumjian-Pathak transition function
  F(x) = 2j sqrt(x) e^{jx} int_{sqrt(x)}^inf e^{-j tau^2} dtau, evaluated by a
  power series for small arguments and through the Faddeeva function for
  large ones (branch switch at x = 4).
* ``gfi`` -- the generalized Fresnel integral
  G(u, b) = int_u^inf e^{-j tau^2} / (tau^2 + b^2) dtau for real (signed) u
  and b > 0, the two-parameter kernel behind corner diffraction and the
  cascaded transition functions.
* ``gfi_step`` / ``generalized_fresnel`` / ``ev_transition`` -- normalized
  step and transition combinations built on G that the coefficient module
  consumes.

Everything accepts scalars or numpy arrays and is pure; the optional
interpolation table for the hot loop is built once and only read afterwards.
Phasor convention is e^{+j omega t} throughout the package.
"""

from __future__ import annotations

import math
import threading

import numpy as np
import scipy.special as _sp
from scipy.integrate import quad as _quad

_SQRT_PI = math.sqrt(math.pi)
_FULL_FRESNEL = 0.5 * _SQRT_PI * np.exp(-0.25j * np.pi)  # int_0^inf e^{-j t^2} dt

_F_SEAM = 4.0

# fixed Gauss-Legendre rules reused by the GFI branches
_GL80 = np.polynomial.legendre.leggauss(80)
_GL120 = np.polynomial.legendre.leggauss(120)

# series coefficients for int_0^u e^{-j t^2} dt = sum c_m u^{2m+1}
_SERIES_M = np.arange(48)
_SERIES_C = (-1j) ** _SERIES_M / (
    _sp.factorial(_SERIES_M) * (2 * _SERIES_M + 1)
)


def fresnel_complementary(u):
    """int_u^inf e^{-j tau^2} d tau for real signed u (Faddeeva route)."""
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    val = (
        0.5
        * _SQRT_PI
        * np.exp(-0.25j * np.pi)
        * np.exp(-1j * au * au)
        * _sp.wofz(au * np.exp(0.75j * np.pi))
    )
    # int_{-|u|}^inf = full line integral minus int_{|u|}^inf reflected
    full = _SQRT_PI * np.exp(-0.25j * np.pi)
    return np.where(u >= 0.0, val, full - val)


def _transition_series(x):
    """Power-series branch of F, accurate for x <= ~16."""
    x = np.asarray(x, dtype=float)
    u = np.sqrt(x)
    powers = u[..., None] ** (2 * _SERIES_M + 1)
    partial = powers @ _SERIES_C
    tail = _FULL_FRESNEL - partial
    return 2j * u * np.exp(1j * x) * tail


def _transition_faddeeva(x):
    """Large-argument branch of F through the Faddeeva function w(z)."""
    x = np.asarray(x, dtype=float)
    u = np.sqrt(x)
    return np.sqrt(np.pi * x) * np.exp(0.25j * np.pi) * _sp.wofz(
        u * np.exp(0.75j * np.pi)
    )


def fresnel_transition(x):
    """Kouyoumjian-Pathak transition function F(x) for x >= 0.

    F(0) = 0 and F -> 1 as x -> inf.  Raises ``ValueError`` on negative
    arguments (the physical transition parameter is non-negative).
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("transition argument must be non-negative")
    out = np.empty(x.shape, dtype=complex)
    small = x < _F_SEAM
    if np.any(small):
        out[small] = _transition_series(x[small])
    if np.any(~small):
        out[~small] = _transition_faddeeva(x[~small])
    return out if out.ndim else out[()]


def fresnel_transition_quadrature(x, limit=400):
    """Slow-path oracle for F: adaptive quadrature of the defining integral."""
    x = float(x)
    if x < 0.0:
        raise ValueError("transition argument must be non-negative")
    u = math.sqrt(x)
    re = _quad(lambda t: math.cos(t * t), 0.0, u, limit=limit)[0]
    im = _quad(lambda t: math.sin(t * t), 0.0, u, limit=limit)[0]
    tail = _FULL_FRESNEL - (re - 1j * im)
    return 2j * u * np.exp(1j * x) * tail


def slope_transition(x):
    """Slope companion F_s(x) = 2jx (1 - F(x)); F_s(0)=0, F_s -> 1."""
    x = np.asarray(x, dtype=float)
    return 2j * x * (1.0 - fresnel_transition(x))


def fresnel_step(u):
    """Normalized complementary Fresnel step Q(u) for signed u.

    Q(-inf) = 1, Q(0) = 1/2, Q(+inf) = 0; the uniform on/off factor of a
    stationary point crossing an integration endpoint.
    """
    return fresnel_complementary(u) / (_SQRT_PI * np.exp(-0.25j * np.pi))


# ---------------------------------------------------------------------------
# Generalized Fresnel integral
# ---------------------------------------------------------------------------


def _gfi_zero(beta):
    """Closed form G(0, b) = (pi / 2b) w(b e^{3j pi/4})."""
    beta = np.asarray(beta, dtype=float)
    return (np.pi / (2.0 * beta)) * _sp.wofz(beta * np.exp(0.75j * np.pi))


def _gfi_small(u, beta):
    """G(u,b) for 0 <= u <= 3: pole-resolved subtraction from G(0,b).

    The pole neighbourhood tau <= 5b uses the arctangent substitution which
    absorbs the Lorentzian weight exactly; the remainder is integrated in
    log(tau) so the 1/tau^2 decay is resolved uniformly in b.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    m = np.minimum(u, 5.0 * beta)

    th1 = np.arctan2(m, beta)
    th = 0.5 * th1[:, None] * (_GL80[0] + 1.0)
    w = 0.5 * th1[:, None] * _GL80[1]
    t = beta[:, None] * np.tan(th)
    seg_pole = np.sum(w * np.exp(-1j * t * t), axis=1) / beta

    out = _gfi_zero(beta) - seg_pole

    rest = u > m
    if np.any(rest):
        v0 = np.log(m[rest])
        v1 = np.log(u[rest])
        v = 0.5 * (v1 - v0)[:, None] * (_GL120[0] + 1.0) + v0[:, None]
        wv = 0.5 * (v1 - v0)[:, None] * _GL120[1]
        tau = np.exp(v)
        b2 = (beta[rest] ** 2)[:, None]
        seg_log = np.sum(wv * np.exp(-1j * tau * tau) * tau / (tau * tau + b2), axis=1)
        out[rest] -= seg_log
    return out


def _gfi_big(u, beta):
    """G(u,b) for u > 3 by steepest-descent contour tau = u + t e^{-j pi/4}."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    # endpoint chosen so the decayed exponent t^2 + sqrt(2) u t reaches ~36
    s2u = np.sqrt(2.0) * u
    T = np.minimum(8.0, 0.5 * (np.sqrt(s2u * s2u + 144.0) - s2u))
    t = 0.5 * T[:, None] * (_GL120[0] + 1.0)
    w = 0.5 * T[:, None] * _GL120[1]
    ph = np.exp(-0.25j * np.pi)
    tau = u[:, None] + t * ph
    integ = (
        np.exp(-1j * u * u)[:, None]
        * np.exp(-s2u[:, None] * t * (1.0 + 1j))
        * np.exp(-t * t)
        / (tau * tau + (beta ** 2)[:, None])
    )
    return ph * np.sum(w * integ, axis=1)


_GFI_BETA_FLOOR = 1.0e-3


def gfi(u, beta):
    """Generalized Fresnel integral G(u, b) = int_u^inf e^{-j t^2}/(t^2+b^2) dt.

    ``u`` is real and signed (negative u handled through
    G(-u, b) = 2 G(0, b) - G(u, b)); ``b`` is floored at 1e-3 to keep the
    pinched double limit numerically tame.
    """
    u_in = np.asarray(u, dtype=float)
    beta_in = np.asarray(beta, dtype=float)
    u_b, beta_b = np.broadcast_arrays(u_in, beta_in)
    shape = u_b.shape
    u_f = u_b.ravel().astype(float)
    beta_f = np.maximum(np.abs(beta_b.ravel().astype(float)), _GFI_BETA_FLOOR)

    au = np.abs(u_f)
    out = np.empty(u_f.shape, dtype=complex)
    small = au <= 3.0
    if np.any(small):
        out[small] = _gfi_small(au[small], beta_f[small])
    if np.any(~small):
        out[~small] = _gfi_big(au[~small], beta_f[~small])

    neg = u_f < 0.0
    if np.any(neg):
        out[neg] = 2.0 * _gfi_zero(beta_f[neg]) - out[neg]
    out = out.reshape(shape)
    return out if shape else out[()]


def gfi_quadrature(u, beta):
    """Slow-path oracle for G: oscillatory-weight quadrature in sigma = tau^2."""
    u = float(u)
    beta = float(beta)
    b2 = beta * beta
    sign_full = 0.0 + 0.0j
    if u < 0.0:
        sign_full = 2.0 * complex(_gfi_zero(beta))
        u = -u
    s_hi = 1.0e4

    def g(s):
        return 1.0 / ((s + b2) * 2.0 * np.sqrt(s))

    base = 0.0 + 0.0j
    s_lo = u * u
    if u < 1.0:
        re1 = _quad(lambda t: np.cos(t * t) / (t * t + b2), u, 1.0, limit=400)[0]
        im1 = _quad(lambda t: -np.sin(t * t) / (t * t + b2), u, 1.0, limit=400)[0]
        base = re1 + 1j * im1
        s_lo = 1.0
    rc = _quad(g, s_lo, s_hi, weight="cos", wvar=1.0, limit=800)[0]
    rs = _quad(g, s_lo, s_hi, weight="sin", wvar=1.0, limit=800)[0]
    # one integration-by-parts term for the truncated tail
    tail = g(s_hi) * np.exp(-1j * s_hi) / 1j
    val = base + rc - 1j * rs + tail
    if sign_full != 0.0:
        val = sign_full - val
    return val


# ---------------------------------------------------------------------------
# Normalized step, corner transition, cascade transition
# ---------------------------------------------------------------------------


def _step_pinch(u, beta):
    """Small-b Lorentzian-pole part of S, ramped off above b ~ 0.3.

    hhat0(b) = G(0,b) - pi/(2b) is the regular part of the normalizer (closed
    form).  The pole model is exact as b -> 0 and removes the sharp u-scale-b
    structure there; for b >= 1 S is already smooth in u, and the model's
    denominator degenerates, so a cosine ramp in log b switches it off.
    """
    beta = np.asarray(beta, dtype=float)
    lb = np.log10(beta)
    lo, hi = math.log10(0.1), 0.0
    s = np.clip((lb - lo) / (hi - lo), 0.0, 1.0)
    chi = 1.0 - s * s * s * (10.0 + s * (6.0 * s - 15.0))
    hhat0 = _gfi_zero(beta) - np.pi / (2.0 * beta)
    pole = (0.5 * np.pi - np.arctan2(u, beta)) / (np.pi + 2.0 * beta * hhat0)
    return chi * pole


class _GfiTable:
    """Bicubic interpolation of the pinch-removed GFI step on (u, log10 b)."""

    def __init__(self, n_u=401, n_b=241):
        from scipy.interpolate import RectBivariateSpline

        self.u_lo, self.u_hi = 0.0, 8.0
        self.lb_lo, self.lb_hi = math.log10(_GFI_BETA_FLOOR), 2.4
        ug = np.linspace(self.u_lo, self.u_hi, n_u)
        lbg = np.linspace(self.lb_lo, self.lb_hi, n_b)
        uu, bb = np.meshgrid(ug, 10.0 ** lbg, indexing="ij")
        g = gfi(uu.ravel(), bb.ravel()).reshape(uu.shape)
        s = g / (2.0 * _gfi_zero(bb)) - _step_pinch(uu, bb)
        self._re = RectBivariateSpline(ug, lbg, s.real, kx=3, ky=3)
        self._im = RectBivariateSpline(ug, lbg, s.imag, kx=3, ky=3)

    def eval(self, u, lb):
        smooth = self._re.ev(u, lb) + 1j * self._im.ev(u, lb)
        return smooth + _step_pinch(u, 10.0 ** lb)


_table_lock = threading.Lock()
_table: _GfiTable | None = None


def _get_table() -> _GfiTable:
    global _table
    if _table is None:
        with _table_lock:
            if _table is None:
                _table = _GfiTable()
    return _table


def gfi_step(u, beta, table=False):
    """Normalized GFI step S(u, b) = G(u, b) / (2 G(0, b)) for signed u.

    S(-inf) = 1, S(0) = 1/2, S(+inf) = 0.  Reduces to the plain Fresnel step
    Q(u) as b -> inf and sharpens as b -> 0 (joint transition pinch).  With
    ``table=True`` the bicubic table is used where it covers the arguments.
    """
    u = np.asarray(u, dtype=float)
    beta = np.asarray(beta, dtype=float)
    u_b, beta_b = np.broadcast_arrays(u, beta)
    shape = u_b.shape
    u_f = u_b.ravel()
    beta_f = np.maximum(np.abs(beta_b.ravel()), _GFI_BETA_FLOOR)
    out = np.empty(u_f.shape, dtype=complex)

    if table:
        tab = _get_table()
        au = np.abs(u_f)
        lb = np.log10(beta_f)
        covered = (au <= tab.u_hi) & (lb >= tab.lb_lo) & (lb <= tab.lb_hi)
        if np.any(covered):
            s = tab.eval(au[covered], lb[covered])
            neg = u_f[covered] < 0.0
            s = np.where(neg, 1.0 - s, s)
            out[covered] = s
        rest = ~covered
    else:
        rest = np.ones(u_f.shape, dtype=bool)

    if np.any(rest):
        out[rest] = gfi(u_f[rest], beta_f[rest]) / (2.0 * _gfi_zero(beta_f[rest]))
    out = out.reshape(shape)
    return out if shape else out[()]


def generalized_fresnel(c, b, table=False):
    """Two-parameter corner transition T(c, b) = F(c) * (1 - S(b, sqrt(c))).

    ``c`` plays the role of the edge transition argument, ``b`` the Fresnel
    distance of the corner ray from the edge-diffraction cone.  Limits:
    T(c, b -> inf) -> F(c); T(c, 0) = F(c)/2; continuous in both arguments.
    """
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(c < 0.0) or np.any(b < 0.0):
        raise ValueError("generalized_fresnel arguments must be non-negative")
    beta = np.sqrt(np.maximum(c, _GFI_BETA_FLOOR ** 2))
    return fresnel_transition(c) * (1.0 - gfi_step(b, beta, table=table))


# -- cascade (edge->vertex) transition ---------------------------------------

_W_CLAMP_FACTOR = 1.0e3
_clamp_lock = threading.Lock()
_clamp_count = 0


def clamp_diagnostics() -> int:
    """Number of times the w->1 distance rescale hit its ceiling."""
    return _clamp_count


def reset_clamp_diagnostics() -> None:
    global _clamp_count
    with _clamp_lock:
        _clamp_count = 0


def coupled_distance(b, w):
    """Rescaled distance b / sqrt(1 - w^2), clamped at 1e3 b near w = 1."""
    global _clamp_count
    b = np.asarray(b, dtype=float)
    w = np.asarray(w, dtype=float)
    w2 = np.clip(w * w, 0.0, 1.0 - 1.0e-300)
    scaled = b / np.sqrt(1.0 - w2)
    ceiling = _W_CLAMP_FACTOR * b
    hit = scaled > ceiling
    n_hit = int(np.count_nonzero(hit))
    if n_hit:
        with _clamp_lock:
            _clamp_count += n_hit
        scaled = np.where(hit, ceiling, scaled)
    return scaled


def blend_weight(a, a_lo=1.0, a_hi=4.0):
    """Linear regime blend: 0 at a <= a_lo (deep transition), 1 at a >= a_hi."""
    a = np.asarray(a, dtype=float)
    return np.clip((a - a_lo) / (a_hi - a_lo), 0.0, 1.0)


def ev_transition(a, b, c, w, a_lo=1.0, a_hi=4.0, table=False):
    """Cascade transition T_EV(a, b, c, w) with linear regime interpolation.

    Outside the first transition (a large): F(a) * T(c, b).
    Inside it (a small): F(a) * T(c, b / sqrt(1 - w^2)) (also the double
    transition form).  Linear blend for a in [a_lo, a_hi].
    """
    fa = fresnel_transition(a)
    t_out = generalized_fresnel(c, np.broadcast_to(b, np.shape(c)), table=table)
    b_in = coupled_distance(b, w)
    t_in = generalized_fresnel(c, np.broadcast_to(b_in, np.shape(c)), table=table)
    lam = blend_weight(a, a_lo, a_hi)
    return fa * (lam * t_out + (1.0 - lam) * t_in)
