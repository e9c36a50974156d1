"""Interaction-path enumeration: LOS, reflections, edge/corner diffraction,
coplanar double-edge pairs and edge-corner cascades, with occlusion tests.

Hot-path solvers are vectorized over observation points for one geometric
entity at a time (one wedge, one facet, one pair); the object-level
``find_*`` functions wrap them for single observations and build
``InteractionPath`` records for inspection and dumping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from facetrt.bvh import brute_segments_blocked

SNAP_FRACTION = 1.0e-3       # edge-parameter snap zone near endpoints
OCCLUSION_EPS_FRACTION = 1.0e-6
MIN_LEG = 1.0e-6             # m
MIN_SIN_BETA = 1.0e-3
GRAZING_TOL = 1.0e-6         # rad, on-face incidence detection
FAR_FIELD_FACTOR = 10.0      # plane-wave rays traced this many diameters out


def _unit_rows(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    n = np.where(n > 0.0, n, 1.0)
    return v / n


# ---------------------------------------------------------------------------
# Sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlaneWaveSource:
    """Unit-amplitude plane wave; phase reference plane through the origin."""

    direction: np.ndarray        # unit propagation direction
    polarization: np.ndarray     # unit E vector, perpendicular to direction

    def __post_init__(self):
        d = _unit_rows(np.asarray(self.direction, dtype=float))
        p = np.asarray(self.polarization, dtype=float)
        p = _unit_rows(p - (p @ d) * d)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "polarization", p)

    @property
    def is_plane_wave(self):
        return True

    def phase_length(self, points):
        """Optical path from the reference plane to given points."""
        return np.asarray(points, dtype=float) @ self.direction

    def field_at(self, points, k):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        phase = np.exp(-1j * k * (pts @ self.direction))
        return phase[:, None] * self.polarization

    def incoming_direction(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.broadcast_to(self.direction, pts.shape)


@dataclass(frozen=True)
class PointSource:
    """Omnidirectional unit point source (|E| = 1 V/m at 1 m)."""

    position: np.ndarray
    polarization: str = "VV"     # VV: vertical (theta-like); HH: horizontal

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=float)
        )

    @property
    def is_plane_wave(self):
        return False

    def phase_length(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.norm(pts - self.position, axis=-1)

    def polarization_at(self, directions):
        d = _unit_rows(np.atleast_2d(np.asarray(directions, dtype=float)))
        z = np.array([0.0, 0.0, 1.0])
        if self.polarization.upper() == "VV":
            p = z - d * (d @ z)[:, None]
        else:
            p = np.cross(d, z)
        bad = np.linalg.norm(p, axis=1) < 1.0e-9
        if np.any(bad):
            p[bad] = np.array([1.0, 0.0, 0.0])
        return _unit_rows(p)

    def field_at(self, points, k):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - self.position
        r = np.linalg.norm(rel, axis=1)
        r = np.maximum(r, MIN_LEG)
        pol = self.polarization_at(rel)
        return (np.exp(-1j * k * r) / r)[:, None] * pol

    def incoming_direction(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return _unit_rows(pts - self.position)


# ---------------------------------------------------------------------------
# Path records (object-level API)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InteractionNode:
    kind: str                    # Reflection | EdgeDiffraction | VertexDiffraction
    position: np.ndarray
    ref_index: int               # facet / wedge / corner index
    t: float = float("nan")     # edge parameter for edge nodes


@dataclass(frozen=True)
class InteractionPath:
    mechanism: str
    nodes: tuple
    observation: np.ndarray
    legs: tuple                  # leg lengths, source leg first (plane wave: phase length)
    total_length: float

    def dump_line(self):
        node_txt = ";".join(
            f"{n.kind}@({n.position[0]:.9g},{n.position[1]:.9g},{n.position[2]:.9g})"
            for n in self.nodes
        )
        legs = ",".join(f"{x:.9g}" for x in self.legs)
        return f"{self.mechanism}|{node_txt}|{legs}|{self.total_length:.9g}"


def dump_paths(paths, fh):
    for p in sorted(paths, key=lambda q: (q.mechanism, q.total_length)):
        fh.write(p.dump_line() + "\n")


@dataclass(frozen=True)
class MechanismToggles:
    reflection_order: int = 1
    edge: bool = True
    vertex: bool = True
    double_edge: bool = True
    edge_vertex: bool = True
    vertex_edge: bool = True
    refl_diffraction: bool = False   # RE / ER hybrids

    def __post_init__(self):
        if self.reflection_order not in (0, 1, 2):
            raise ValueError("reflection_order must be 0, 1 or 2")
        if self.double_edge and not self.edge:
            raise ValueError("double_edge requires edge infrastructure")
        if (self.edge_vertex or self.vertex_edge) and not (self.edge and self.vertex):
            raise ValueError("edge_vertex/vertex_edge require edge and vertex")

    def label(self):
        bits = []
        if self.reflection_order:
            bits.append(f"R{self.reflection_order}")
        for flag, tag in [
            (self.edge, "E"), (self.vertex, "V"), (self.double_edge, "EE"),
            (self.edge_vertex, "EV"), (self.vertex_edge, "VE"),
            (self.refl_diffraction, "RE"),
        ]:
            if flag:
                bits.append(tag)
        return "+".join(bits) if bits else "LOS"


# ---------------------------------------------------------------------------
# Occlusion
# ---------------------------------------------------------------------------


class Occluder:
    """Segment occlusion against a mesh with endpoint trimming."""

    def __init__(self, mesh, eps=None):
        self.mesh = mesh
        self.eps = (
            eps if eps is not None else OCCLUSION_EPS_FRACTION * max(mesh.diameter, 1.0)
        )
        self.far = FAR_FIELD_FACTOR * max(mesh.diameter, 1.0)
        self._center = mesh.centroid

    def segments_blocked(self, a, b):
        return self.mesh.bvh.segments_blocked(a, b, self.eps)

    def rays_blocked(self, origins, directions):
        origins = np.atleast_2d(origins)
        d = _unit_rows(np.atleast_2d(directions))
        ends = origins + d * self.far
        return self.mesh.bvh.segments_blocked(origins, ends, self.eps)

    def source_legs_blocked(self, source, points):
        points = np.atleast_2d(points)
        if source.is_plane_wave:
            return self.rays_blocked(points, -source.direction[None, :])
        origins = np.broadcast_to(source.position, points.shape).copy()
        return self.segments_blocked(origins, points)

    def segments_blocked_reference(self, a, b):
        """Brute-force all-facets check (no BVH) for invariant tests."""
        return brute_segments_blocked(
            self.mesh.vertices, self.mesh.facets, a, b, self.eps
        )


class FreeSpace:
    """Occluder stand-in for scenes without geometry (isolated wedges)."""

    eps = 0.0

    def segments_blocked(self, a, b):
        return np.zeros(len(np.atleast_2d(a)), dtype=bool)

    def rays_blocked(self, origins, directions):
        return np.zeros(len(np.atleast_2d(origins)), dtype=bool)

    def source_legs_blocked(self, source, points):
        return np.zeros(len(np.atleast_2d(points)), dtype=bool)


# ---------------------------------------------------------------------------
# Fermat stationary points
# ---------------------------------------------------------------------------


def line_fermat_parameter(wedge, source, obs):
    """Stationary parameter (meters along the tangent from p0, unclamped)
    of the source -> edge-line -> observation path, plus degeneracy mask."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    e = wedge.tangent
    rel_o = obs - wedge.p0
    a_o = rel_o @ e
    rho_o = np.sqrt(np.maximum(np.einsum("ij,ij->i", rel_o, rel_o) - a_o * a_o, 0.0))
    if source.is_plane_wave:
        c = float(source.direction @ e)
        s2 = max(1.0 - c * c, 0.0)
        ok = (s2 > MIN_SIN_BETA ** 2) & (rho_o > MIN_LEG)
        u = a_o - c * rho_o / np.sqrt(max(s2, 1.0e-30))
        return u, ok
    rel_s = source.position - wedge.p0
    a_s = float(rel_s @ e)
    rho_s = float(np.sqrt(max(rel_s @ rel_s - a_s * a_s, 0.0)))
    ok = (rho_o > MIN_LEG) & (rho_s > MIN_LEG)
    denom = np.maximum(rho_s + rho_o, 1.0e-30)
    u = (a_s * rho_o + a_o * rho_s) / denom
    return u, ok


def keller_cone_residual(wedge, source, point, obs):
    """|cos(in, tangent) + cos(out, tangent)| at an edge point (rad-free)."""
    e = wedge.tangent
    d_in = source.incoming_direction(np.atleast_2d(point))[0]
    d_out = _unit_rows(np.atleast_2d(np.asarray(obs) - point))[0]
    return abs(float(d_in @ e - d_out @ e))


def edge_point_bundle(wedge, source, obs, occ, snap=SNAP_FRACTION):
    """Single-edge diffraction geometry for one wedge across observations.

    Returns dict with: valid, t (edge parameter), point, u_line (meters),
    legs and directions.  Points within the snap zone of an endpoint are
    rejected (the corner mechanism owns them).
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n_obs = len(obs)
    L = wedge.length
    u, ok = line_fermat_parameter(wedge, source, obs)
    t = u / L
    inside = ok & (t >= snap) & (t <= 1.0 - snap)
    pts = wedge.p0 + np.clip(t, 0.0, 1.0)[:, None] * (wedge.p1 - wedge.p0)

    valid = inside.copy()
    if np.any(valid):
        idx = np.nonzero(valid)[0]
        p = pts[idx]
        blocked_in = occ.source_legs_blocked(source, p)
        blocked_out = occ.segments_blocked(p, obs[idx])
        leg_ok = ~(blocked_in | blocked_out)
        out_len = np.linalg.norm(obs[idx] - p, axis=1)
        leg_ok &= out_len > MIN_LEG
        if not source.is_plane_wave:
            leg_ok &= np.linalg.norm(p - source.position, axis=1) > MIN_LEG
        valid[idx] = leg_ok

    d_out = _unit_rows(obs - pts)
    d_in = source.incoming_direction(pts)
    s_out = np.linalg.norm(obs - pts, axis=1)
    if source.is_plane_wave:
        s_in = np.full(n_obs, np.inf)
        phase_in = source.phase_length(pts)
    else:
        s_in = np.linalg.norm(pts - source.position, axis=1)
        phase_in = s_in
    return {
        "valid": valid,
        "t": t,
        "u_line": u,
        "line_ok": ok,
        "point": pts,
        "d_in": d_in,
        "d_out": d_out,
        "s_in": s_in,
        "s_out": s_out,
        "phase_in": phase_in,
    }


# ---------------------------------------------------------------------------
# Coplanar double-edge Fermat pairs by planar unfolding
# ---------------------------------------------------------------------------


def _pair_plane(w1, w2, tol=1.0e-6):
    """Common plane normal of two coplanar wedge lines, or None."""
    c = np.cross(w1.tangent, w2.tangent)
    nc = np.linalg.norm(c)
    if nc > 1.0e-9:
        m = c / nc
    else:
        off = 0.5 * (w2.p0 + w2.p1) - w1.p0
        off = off - (off @ w1.tangent) * w1.tangent
        if np.linalg.norm(off) < 1.0e-12:
            return None
        m = np.cross(w1.tangent, off / np.linalg.norm(off))
        m /= np.linalg.norm(m)
    span = max(np.linalg.norm(w2.p0 - w1.p0), 1.0)
    if abs((w2.p0 - w1.p0) @ m) > tol * span or abs((w2.p1 - w1.p0) @ m) > tol * span:
        return None
    return m


def double_edge_bundle(w1, w2, source, obs, occ, snap=SNAP_FRACTION, clamp=True):
    """Stationary point pair on two coplanar edges by planar unfolding.

    The source is rotated about edge 1 into the common plane (away from
    edge 2), each observation about edge 2 (away from edge 1); straight
    lines between the unfolded ends intersect the edge lines at the
    stationary pair.  ``clamp=False`` skips the segment test (infinite-line
    reference solution used by the cascade step factors).
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n_obs = len(obs)
    nothing = {
        "valid": np.zeros(n_obs, dtype=bool),
        "t1": np.full(n_obs, np.nan),
        "t2": np.full(n_obs, np.nan),
    }
    m = _pair_plane(w1, w2)
    if m is None:
        return nothing
    e1 = w1.tangent
    q = np.cross(m, e1)
    A1 = w1.p0

    def coords(p):
        rel = np.asarray(p, dtype=float) - A1
        return rel @ e1, rel @ q

    mid2 = 0.5 * (w2.p0 + w2.p1)
    _, eta_mid2 = coords(mid2)
    if abs(eta_mid2) < 1.0e-12:
        return nothing
    r = np.sign(eta_mid2)

    b_xi, b_eta = coords(w2.p0)
    g_xi = float(w2.tangent @ e1)
    g_eta = float(w2.tangent @ q)
    # in-plane normal of line2, oriented toward edge 1's side
    n2 = np.array([-g_eta, g_xi])
    mid1 = 0.5 * (w1.p0 + w1.p1)
    m1_xi, m1_eta = coords(mid1)
    side1 = np.sign(n2 @ np.array([m1_xi - b_xi, m1_eta - b_eta]))
    if side1 == 0.0:
        return nothing

    # observation unfolded about line 2
    rel_o = obs - w2.p0
    bo = rel_o @ w2.tangent
    rho_o = np.sqrt(np.maximum(np.einsum("ij,ij->i", rel_o, rel_o) - bo * bo, 0.0))
    foot_xi = b_xi + bo * g_xi
    foot_eta = b_eta + bo * g_eta
    o_xi = foot_xi - side1 * rho_o * n2[0]
    o_eta = foot_eta - side1 * rho_o * n2[1]

    if source.is_plane_wave:
        c_xi = float(source.direction @ e1)
        perp = source.direction - c_xi * e1
        d_eta = np.linalg.norm(perp)
        if d_eta < MIN_SIN_BETA:
            return nothing
        d_xi, d_eta = c_xi, r * d_eta
        # back-trace from unfolded obs: crossing eta = 0 (edge 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            tau_a = o_eta / d_eta
            xi1 = o_xi - tau_a * d_xi
            # solve O - tau*d = B + sigma*g (columns -d, -g)
            det = d_xi * g_eta - g_xi * d_eta
            if abs(det) < 1.0e-12:
                return nothing
            rhs_xi = b_xi - o_xi
            rhs_eta = b_eta - o_eta
            tau_b = (g_xi * rhs_eta - g_eta * rhs_xi) / det
            sig = (d_eta * rhs_xi - d_xi * rhs_eta) / det
        order_ok = (tau_b > 0.0) & (tau_a > tau_b)
    else:
        rel_s = source.position - A1
        a_s = float(rel_s @ e1)
        rho_s = float(np.sqrt(max(rel_s @ rel_s - a_s * a_s, 0.0)))
        if rho_s < MIN_LEG:
            return nothing
        s_xi, s_eta = a_s, -r * rho_s
        dx = o_xi - s_xi
        dy = o_eta - s_eta
        with np.errstate(divide="ignore", invalid="ignore"):
            tau_a = s_eta / (s_eta - o_eta)
            xi1 = s_xi + tau_a * dx
            det = dx * (-g_eta) - dy * (-g_xi)
            det = np.where(np.abs(det) < 1.0e-12, np.nan, det)
            rhs_xi = b_xi - s_xi
            rhs_eta = b_eta - s_eta
            tau_b = (rhs_xi * (-g_eta) - rhs_eta * (-g_xi)) / det
            sig = (dx * rhs_eta - dy * rhs_xi) / det
        order_ok = (
            np.isfinite(tau_b) & (tau_a > 0.0) & (tau_b > tau_a) & (tau_b < 1.0)
        )

    t1 = xi1 / w1.length
    t2 = sig / w2.length
    valid = order_ok & np.isfinite(t1) & np.isfinite(t2)
    if clamp:
        valid &= (t1 >= snap) & (t1 <= 1.0 - snap)
        valid &= (t2 >= snap) & (t2 <= 1.0 - snap)

    p1 = w1.p0 + np.clip(t1, -2.0, 3.0)[:, None] * (w1.p1 - w1.p0)
    p2 = w2.p0 + np.clip(t2, -2.0, 3.0)[:, None] * (w2.p1 - w2.p0)
    mid_len = np.linalg.norm(p2 - p1, axis=1)
    valid &= mid_len > MIN_LEG
    s_out = np.linalg.norm(obs - p2, axis=1)
    valid &= s_out > MIN_LEG

    if clamp and np.any(valid):
        idx = np.nonzero(valid)[0]
        blocked = occ.source_legs_blocked(source, p1[idx])
        blocked |= occ.segments_blocked(p1[idx], p2[idx])
        blocked |= occ.segments_blocked(p2[idx], obs[idx])
        valid[idx] = ~blocked

    if source.is_plane_wave:
        s_in = np.full(n_obs, np.inf)
        phase_in = source.phase_length(p1)
    else:
        s_in = np.linalg.norm(p1 - source.position, axis=1)
        valid &= s_in > MIN_LEG
        phase_in = s_in
    return {
        "valid": valid,
        "t1": t1,
        "t2": t2,
        "p1": p1,
        "p2": p2,
        "d_in": source.incoming_direction(p1),
        "d_mid": _unit_rows(p2 - p1),
        "d_out": _unit_rows(obs - p2),
        "s_in": s_in,
        "s_mid": mid_len,
        "s_out": s_out,
        "phase_in": phase_in,
    }


def double_edge_path_length(w1, w2, source, obs, t1, t2):
    p1 = w1.point(t1)
    p2 = w2.point(t2)
    l_in = source.phase_length(p1[None, :])[0]
    return float(
        l_in + np.linalg.norm(p2 - p1) + np.linalg.norm(np.asarray(obs) - p2)
    )


def grid_search_double_edge(w1, w2, source, obs, n_grid=120, refine=True):
    """Brute-force stationary pair for the unfolding oracle."""
    t1 = np.linspace(0.0, 1.0, n_grid)
    t2 = np.linspace(0.0, 1.0, n_grid)
    p1 = w1.point(t1)
    p2 = w2.point(t2)
    l_in = source.phase_length(p1)
    mid = np.linalg.norm(p2[None, :, :] - p1[:, None, :], axis=2)
    out = np.linalg.norm(np.asarray(obs) - p2, axis=1)
    total = l_in[:, None] + mid + out[None, :]
    i, j = np.unravel_index(np.argmin(total), total.shape)
    best = (t1[i], t2[j])
    if refine:
        from scipy.optimize import minimize

        fun = lambda x: double_edge_path_length(w1, w2, source, obs, x[0], x[1])
        res = minimize(
            fun, np.array(best), method="Nelder-Mead",
            options={"xatol": 1.0e-12, "fatol": 1.0e-15, "maxiter": 4000},
        )
        best = (float(res.x[0]), float(res.x[1]))
    return best


# ---------------------------------------------------------------------------
# Corners
# ---------------------------------------------------------------------------


def vertex_bundle(corner, source, obs, occ):
    """Corner visibility and legs across observations (one path per corner)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    p = corner.position
    pts = np.broadcast_to(p, obs.shape).copy()
    # the source leg is observation-independent: test once
    blocked_in = bool(occ.source_legs_blocked(source, p[None, :])[0])
    blocked_out = occ.segments_blocked(pts, obs)
    s_out = np.linalg.norm(obs - p, axis=1)
    valid = ~blocked_out & (s_out > MIN_LEG) & (not blocked_in)
    if source.is_plane_wave:
        s_in = np.full(len(obs), np.inf)
        phase_in = np.full(len(obs), float(source.phase_length(p[None, :])[0]))
    else:
        s_in_val = float(np.linalg.norm(p - source.position))
        valid &= s_in_val > MIN_LEG
        s_in = np.full(len(obs), s_in_val)
        phase_in = s_in
    return {
        "valid": valid,
        "point": p,
        "d_in": source.incoming_direction(p[None, :])[0],
        "d_out": _unit_rows(obs - p),
        "s_in": s_in,
        "s_out": s_out,
        "phase_in": phase_in,
    }


def corner_step_geometry(wedge, corner_vertex, source, obs, k, snap=SNAP_FRACTION):
    """Signed Fresnel distance of the corner from a wedge's stationary point.

    Returns (u_fresnel >= 0, inner_mask): ``inner`` means the infinite-line
    stationary point lies on the segment side of this corner, so the edge
    mechanism owns the interior and the corner term subtracts; ``outer``
    means the corner term carries the (decaying) remainder.  The side flips
    exactly where the edge mechanism's snap cutoff sits, so the pair stays
    continuous.

    The step variable is u = |f'(corner)| sqrt(k / (2 f''(stationary)))
    with f the path length along the edge line: near the transition this is
    the quadratic Fresnel variable sqrt(k * path-length detour); far from it
    the first derivative is exact, which gives the corner term the correct
    asymptotic endpoint decay.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    u_line, ok = line_fermat_parameter(wedge, source, obs)
    L = wedge.length
    e = wedge.tangent
    t_line = u_line / L
    at_p0 = corner_vertex == wedge.vertex0
    inner = (t_line > snap) if at_p0 else (t_line < 1.0 - snap)

    p_corner = wedge.p0 if at_p0 else wedge.p1
    p_line = wedge.p0 + t_line[:, None] * (wedge.p1 - wedge.p0)

    # slope of the path length at the corner
    d_in_c = source.incoming_direction(p_corner[None, :])[0]
    rel_out_c = obs - p_corner
    l_out_c = np.maximum(np.linalg.norm(rel_out_c, axis=1), MIN_LEG)
    fprime = np.abs(d_in_c @ e - (rel_out_c @ e) / l_out_c)

    # curvature at the stationary point
    rel_out_s = obs - p_line
    l_out_s = np.maximum(np.linalg.norm(rel_out_s, axis=1), MIN_LEG)
    sin2_out = np.maximum(1.0 - ((rel_out_s @ e) / l_out_s) ** 2, 1.0e-12)
    fsecond = sin2_out / l_out_s
    if not source.is_plane_wave:
        rel_in_s = p_line - source.position
        l_in_s = np.maximum(np.linalg.norm(rel_in_s, axis=1), MIN_LEG)
        sin2_in = np.maximum(1.0 - ((rel_in_s @ e) / l_in_s) ** 2, 1.0e-12)
        fsecond = fsecond + sin2_in / l_in_s

    u = fprime * np.sqrt(k / (2.0 * fsecond))
    return u, inner, ok


# ---------------------------------------------------------------------------
# LOS and specular reflections
# ---------------------------------------------------------------------------


def los_mask(source, obs, occ):
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    return ~occ.source_legs_blocked(source, obs)


def _point_in_triangle(p, a, b, c, tol=1.0e-9):
    v0 = c - a
    v1 = b - a
    v2 = p - a
    d00 = np.einsum("...i,...i->...", v0, v0)
    d01 = np.einsum("...i,...i->...", v0, v1)
    d11 = np.einsum("...i,...i->...", v1, v1)
    d20 = np.einsum("...i,...i->...", v2, v0)
    d21 = np.einsum("...i,...i->...", v2, v1)
    denom = d00 * d11 - d01 * d01
    u = (d11 * d20 - d01 * d21) / denom
    v = (d00 * d21 - d01 * d20) / denom
    return (u >= -tol) & (v >= -tol) & (u + v <= 1.0 + tol)


def reflection_bundle(mesh, facet, source, obs, occ):
    """Image-method specular point on one facet across observations."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n = mesh.normals[facet]
    a, b, c = mesh.vertices[mesh.facets[facet]]
    d0 = float(n @ a)
    n_obs = len(obs)
    valid = np.zeros(n_obs, dtype=bool)
    pts = np.zeros((n_obs, 3))

    if source.is_plane_wave:
        d = source.direction
        if d @ n >= -1.0e-9:           # facet not lit
            return {"valid": valid, "point": pts}
        r = d - 2.0 * (d @ n) * n      # reflected propagation direction
        denom = r @ n
        if abs(denom) < 1.0e-12:
            return {"valid": valid, "point": pts}
        t = (np.einsum("ij,j->i", obs, n) - d0) / denom
        p = obs - t[:, None] * r
        geom = (t > MIN_LEG) & _point_in_triangle(p, a, b, c)
    else:
        s = source.position
        h_s = float(n @ s) - d0
        if h_s <= MIN_LEG:             # source behind or on the facet plane
            return {"valid": valid, "point": pts}
        img = s - 2.0 * h_s * n
        seg = obs - img
        denom = seg @ n
        h_o = np.einsum("ij,j->i", obs, n) - d0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (d0 - img @ n) / denom
        p = img + t[:, None] * seg
        geom = (h_o > MIN_LEG) & np.isfinite(t) & (t > 0.0) & (t < 1.0)
        geom &= _point_in_triangle(p, a, b, c)

    if np.any(geom):
        idx = np.nonzero(geom)[0]
        blocked = occ.source_legs_blocked(source, p[idx])
        blocked |= occ.segments_blocked(p[idx], obs[idx])
        geom[idx] &= ~blocked
    valid = geom
    pts = p
    s_out = np.linalg.norm(obs - pts, axis=1)
    if source.is_plane_wave:
        s_in = np.full(n_obs, np.inf)
        phase_in = source.phase_length(pts)
    else:
        s_in = np.linalg.norm(pts - source.position, axis=1)
        phase_in = s_in
    return {
        "valid": valid,
        "point": pts,
        "normal": n,
        "d_in": source.incoming_direction(pts),
        "d_out": _unit_rows(obs - pts),
        "s_in": s_in,
        "s_out": s_out,
        "phase_in": phase_in,
    }


def double_reflection_candidates(mesh):
    """Facet pairs that can see each other front-to-front (concave pairs).

    Convex bodies yield no candidates; the quadratic enumeration only runs
    for meshes with concavities.
    """
    n = mesh.normals
    cen = mesh.facet_centroids()
    pairs = []
    for i in range(len(mesh.facets)):
        rel = cen - cen[i]
        cand = np.nonzero(
            (rel @ n[i] > 1.0e-9) & (np.einsum("ij,ij->i", -rel, n) > 1.0e-9)
        )[0]
        pairs.extend((i, int(j)) for j in cand if j != i)
    return pairs


def double_reflection_bundle(mesh, f1, f2, source, obs, occ):
    """Two-bounce image method over an ordered facet pair (point source or
    plane wave), validated by point-in-facet and occlusion tests."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n1 = mesh.normals[f1]
    n2 = mesh.normals[f2]
    a1, b1, c1 = mesh.vertices[mesh.facets[f1]]
    a2, b2, c2 = mesh.vertices[mesh.facets[f2]]
    d1 = float(n1 @ a1)
    d2 = float(n2 @ a2)
    n_obs = len(obs)
    valid = np.zeros(n_obs, dtype=bool)

    if source.is_plane_wave:
        d = source.direction
        if d @ n1 >= -1.0e-9:
            return {"valid": valid}
        r1 = d - 2.0 * (d @ n1) * n1
        if r1 @ n2 >= -1.0e-9:
            return {"valid": valid}
        r2 = r1 - 2.0 * (r1 @ n2) * n2
        denom = r2 @ n2
        if abs(denom) < 1.0e-12:
            return {"valid": valid}
        t = (np.einsum("ij,j->i", obs, n2) - d2) / denom
        p2 = obs - t[:, None] * r2
        denom1 = r1 @ n1
        t1 = (np.einsum("ij,j->i", p2, n1) - d1) / denom1
        p1 = p2 - t1[:, None] * r1
        geom = (t > MIN_LEG) & (t1 > MIN_LEG)
        geom &= _point_in_triangle(p1, a1, b1, c1) & _point_in_triangle(p2, a2, b2, c2)
        s_in = np.full(n_obs, np.inf)
        phase_in = source.phase_length(p1)
    else:
        s = source.position
        h1 = float(n1 @ s) - d1
        if h1 <= MIN_LEG:
            return {"valid": valid}
        img1 = s - 2.0 * h1 * n1
        h12 = float(n2 @ img1) - d2
        img12 = img1 - 2.0 * h12 * n2
        seg = obs - img12
        denom = seg @ n2
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (d2 - img12 @ n2) / denom
        p2 = img12 + t[:, None] * seg
        seg1 = p2 - img1
        denom1 = seg1 @ n1
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (d1 - img1 @ n1) / denom1
        p1 = img1 + t1[:, None] * seg1
        geom = np.isfinite(t) & (t > 0.0) & (t < 1.0)
        geom &= np.isfinite(t1) & (t1 > 0.0) & (t1 < 1.0)
        geom &= _point_in_triangle(p1, a1, b1, c1) & _point_in_triangle(p2, a2, b2, c2)
        s_in = np.linalg.norm(p1 - source.position, axis=1)
        phase_in = s_in

    if np.any(geom):
        idx = np.nonzero(geom)[0]
        blocked = occ.source_legs_blocked(source, p1[idx])
        blocked |= occ.segments_blocked(p1[idx], p2[idx])
        blocked |= occ.segments_blocked(p2[idx], obs[idx])
        geom[idx] &= ~blocked
    return {
        "valid": geom,
        "p1": p1,
        "p2": p2,
        "n1": n1,
        "n2": n2,
        "d_in": source.incoming_direction(p1),
        "d_mid": _unit_rows(p2 - p1),
        "d_out": _unit_rows(obs - p2),
        "s_in": s_in,
        "s_mid": np.linalg.norm(p2 - p1, axis=1),
        "s_out": np.linalg.norm(obs - p2, axis=1),
        "phase_in": phase_in,
    }


# ---------------------------------------------------------------------------
# Candidate enumeration for second-order mechanisms
# ---------------------------------------------------------------------------


def coplanar_wedge_pairs(mesh, wedges):
    """Ordered coplanar wedge pairs (shared facet or coplanar facet group)."""
    keys = mesh.facet_plane_keys()
    groups = {}
    for w in wedges:
        for f in (w.facet0, w.facet1):
            if f >= 0:
                groups.setdefault(int(keys[f]), set()).add(w.index)
    pairs = set()
    for members in groups.values():
        ms = sorted(members)
        for i in ms:
            for j in ms:
                if i != j:
                    pairs.add((i, j))
    return sorted(pairs)


def cascade_candidates(wedges, corners, pairs):
    """EV and VE candidates derived from the coplanar pair list.

    EV: (wedge1, corner at an endpoint of wedge2 not on wedge1), with the
    pair (wedge1, wedge2) as the double-edge reference.  VE symmetric.
    """
    corner_of_vertex = {c.vertex: c for c in corners}
    ev, ve = [], []
    seen_ev, seen_ve = set(), set()
    for (i, j) in pairs:
        w1, w2 = wedges[i], wedges[j]
        for v in (w2.vertex0, w2.vertex1):
            if v in (w1.vertex0, w1.vertex1):
                continue
            c = corner_of_vertex.get(v)
            if c is None:
                continue
            key = (i, j, c.index)
            if key not in seen_ev:
                seen_ev.add(key)
                ev.append((i, j, c.index))
        for v in (w1.vertex0, w1.vertex1):
            if v in (w2.vertex0, w2.vertex1):
                continue
            c = corner_of_vertex.get(v)
            if c is None:
                continue
            key = (i, j, c.index)
            if key not in seen_ve:
                seen_ve.add(key)
                ve.append((i, j, c.index))
    return ev, ve


def edge_to_point_bundle(wedge, source, target, obs_like, occ, snap=SNAP_FRACTION):
    """Fermat point on a wedge with a fixed downstream point (EV first leg).

    ``target`` is one 3-D point; the bundle is broadcast across ``obs_like``
    only to keep array shapes aligned with the other mechanisms.
    """
    tgt = np.asarray(target, dtype=float)
    res = edge_point_bundle(wedge, source, tgt[None, :], occ, snap=snap)
    return res


def point_to_edge_bundle(wedge, origin, obs, occ, snap=SNAP_FRACTION):
    """Fermat points on a wedge with a fixed upstream point (VE second leg)."""

    class _Pt:
        is_plane_wave = False
        position = np.asarray(origin, dtype=float)

        def phase_length(self, points):
            pts = np.atleast_2d(points)
            return np.linalg.norm(pts - self.position, axis=-1)

        def incoming_direction(self, points):
            pts = np.atleast_2d(points)
            return _unit_rows(pts - self.position)

    return edge_point_bundle(wedge, _Pt(), obs, occ, snap=snap)


# ---------------------------------------------------------------------------
# Object-level spec operations
# ---------------------------------------------------------------------------


def find_edge_diffraction_point(wedge, source, obs, occ=None, snap=SNAP_FRACTION):
    """Single-observation edge Fermat point, or None (outside segment or
    occluded)."""
    occ = occ or FreeSpace()
    res = edge_point_bundle(wedge, source, np.asarray(obs, dtype=float)[None, :],
                            occ, snap=snap)
    if not res["valid"][0]:
        return None
    return InteractionNode(
        kind="EdgeDiffraction",
        position=res["point"][0],
        ref_index=wedge.index,
        t=float(res["t"][0]),
    )


def find_double_edge_points(w1, w2, source, obs, occ=None, snap=SNAP_FRACTION):
    occ = occ or FreeSpace()
    res = double_edge_bundle(w1, w2, source, np.asarray(obs, dtype=float)[None, :],
                             occ, snap=snap)
    if not res["valid"][0]:
        return None
    n1 = InteractionNode("EdgeDiffraction", res["p1"][0], w1.index, float(res["t1"][0]))
    n2 = InteractionNode("EdgeDiffraction", res["p2"][0], w2.index, float(res["t2"][0]))
    return n1, n2


def find_vertex_paths(corners, source, obs, occ=None):
    occ = occ or FreeSpace()
    obs = np.asarray(obs, dtype=float)
    out = []
    for c in corners:
        res = vertex_bundle(c, source, obs[None, :], occ)
        if not res["valid"][0]:
            continue
        node = InteractionNode("VertexDiffraction", c.position, c.index)
        legs = (float(res["phase_in"][0]), float(res["s_out"][0]))
        out.append(
            InteractionPath("V", (node,), obs, legs, float(sum(legs)))
        )
    return out


def find_cascade_paths(wedges, corners, source, obs, mesh, toggles, occ=None):
    """Object-level EE / EV / VE paths for one observation point."""
    occ = occ or Occluder(mesh)
    obs = np.asarray(obs, dtype=float)
    pairs = coplanar_wedge_pairs(mesh, wedges)
    ev_c, ve_c = cascade_candidates(wedges, corners, pairs)
    paths = []
    if toggles.double_edge:
        for (i, j) in pairs:
            res = double_edge_bundle(wedges[i], wedges[j], source, obs[None, :], occ)
            if res["valid"][0]:
                n1 = InteractionNode("EdgeDiffraction", res["p1"][0], i, float(res["t1"][0]))
                n2 = InteractionNode("EdgeDiffraction", res["p2"][0], j, float(res["t2"][0]))
                legs = (float(res["phase_in"][0]), float(res["s_mid"][0]),
                        float(res["s_out"][0]))
                paths.append(InteractionPath("EE", (n1, n2), obs, legs, float(sum(legs))))
    if toggles.edge_vertex:
        for (i, j, ci) in ev_c:
            c = corners[ci]
            first = edge_to_point_bundle(wedges[i], source, c.position, obs, occ)
            if not first["valid"][0]:
                continue
            p1 = first["point"][0]
            if occ.segments_blocked(c.position[None, :], obs[None, :])[0]:
                continue
            n1 = InteractionNode("EdgeDiffraction", p1, i, float(first["t"][0]))
            n2 = InteractionNode("VertexDiffraction", c.position, ci)
            legs = (float(first["phase_in"][0]), float(np.linalg.norm(c.position - p1)),
                    float(np.linalg.norm(obs - c.position)))
            paths.append(InteractionPath("EV", (n1, n2), obs, legs, float(sum(legs))))
    if toggles.vertex_edge:
        for (i, j, ci) in ve_c:
            c = corners[ci]
            if occ.source_legs_blocked(source, c.position[None, :])[0]:
                continue
            second = point_to_edge_bundle(wedges[j], c.position, obs[None, :], occ)
            if not second["valid"][0]:
                continue
            p2 = second["point"][0]
            n1 = InteractionNode("VertexDiffraction", c.position, ci)
            n2 = InteractionNode("EdgeDiffraction", p2, j, float(second["t"][0]))
            legs = (float(source.phase_length(c.position[None, :])[0]),
                    float(np.linalg.norm(p2 - c.position)),
                    float(np.linalg.norm(obs - p2)))
            paths.append(InteractionPath("VE", (n1, n2), obs, legs, float(sum(legs))))
    paths.sort(key=lambda p: (p.mechanism, p.total_length))
    return paths


def trace_direct_and_reflections(source, mesh, obs, max_reflection_order=1, occ=None):
    """LOS plus specular paths up to the requested order, object-level."""
    occ = occ or Occluder(mesh)
    obs = np.asarray(obs, dtype=float)
    paths = []
    if los_mask(source, obs[None, :], occ)[0]:
        legs = (float(source.phase_length(obs[None, :])[0]),)
        paths.append(InteractionPath("LOS", (), obs, legs, legs[0]))
    if max_reflection_order >= 1:
        for f in range(len(mesh.facets)):
            res = reflection_bundle(mesh, f, source, obs[None, :], occ)
            if res["valid"][0]:
                node = InteractionNode("Reflection", res["point"][0], f)
                legs = (float(res["phase_in"][0]), float(res["s_out"][0]))
                paths.append(
                    InteractionPath("R", (node,), obs, legs, float(sum(legs)))
                )
    if max_reflection_order >= 2:
        for (f1, f2) in double_reflection_candidates(mesh):
            res = double_reflection_bundle(mesh, f1, f2, source, obs[None, :], occ)
            if res["valid"][0]:
                n1 = InteractionNode("Reflection", res["p1"][0], f1)
                n2 = InteractionNode("Reflection", res["p2"][0], f2)
                legs = (float(res["phase_in"][0]), float(res["s_mid"][0]),
                        float(res["s_out"][0]))
                paths.append(
                    InteractionPath("RR", (n1, n2), obs, legs, float(sum(legs)))
                )
    paths.sort(key=lambda p: (p.mechanism, p.total_length))
    return paths
