"""Per-mechanism field evaluation and accumulation over observation sets.

Each evaluator handles one geometric entity (facet, wedge, pair, corner)
vectorized across observation points, producing complex E-field vectors and
path-census increments.  ``accumulate`` runs the full mechanism set.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from facetrt import coefficients as co
from facetrt import transition as tr
from facetrt.paths import (
    MechanismToggles,
    Occluder,
    cascade_candidates,
    coplanar_wedge_pairs,
    corner_step_geometry,
    double_edge_bundle,
    double_reflection_bundle,
    double_reflection_candidates,
    edge_point_bundle,
    edge_to_point_bundle,
    los_mask,
    point_to_edge_bundle,
    reflection_bundle,
    vertex_bundle,
)

log = logging.getLogger(__name__)

CENSUS_KEYS = ("LOS", "R", "E", "V", "EE", "EV", "VE", "RE", "ER")


def _distance_parameter(s_in, s_out, plane_wave):
    if plane_wave:
        return np.asarray(s_out, dtype=float)
    s_in = np.asarray(s_in, dtype=float)
    s_out = np.asarray(s_out, dtype=float)
    return s_in * s_out / (s_in + s_out)


def _conical_spreading(s_in, s_out, plane_wave):
    if plane_wave:
        return 1.0 / np.sqrt(np.asarray(s_out, dtype=float))
    s_in = np.asarray(s_in, dtype=float)
    s_out = np.asarray(s_out, dtype=float)
    return np.sqrt(s_in / (s_out * (s_in + s_out)))


def collapse_duplicate_reflections(bundles, eps):
    """Drop specular points claimed by more than one facet (shared-boundary
    hits); keeps the first owner and warns once per sweep block."""
    seen = set()
    dropped = 0
    scale = max(eps, 1.0e-12)
    for res in bundles:
        idx = np.nonzero(res["valid"])[0]
        for i in idx:
            p = res["point"][i]
            key = (int(i), round(p[0] / scale), round(p[1] / scale),
                   round(p[2] / scale))
            if key in seen:
                res["valid"][i] = False
                dropped += 1
            else:
                seen.add(key)
    if dropped:
        log.warning("collapsed %d duplicate reflection paths", dropped)
    return dropped


def reflection_field(mesh, facet, source, obs, k, occ, out, census, bundle=None):
    res = bundle if bundle is not None else reflection_bundle(mesh, facet, source, obs, occ)
    idx = np.nonzero(res["valid"])[0]
    if not idx.size:
        return
    p = res["point"][idx]
    e_in = source.field_at(p, k)
    e_ref = co.apply_reflection_dyadic(
        e_in, res["normal"], res["d_in"][idx], res["d_out"][idx]
    )
    if source.is_plane_wave:
        amp = np.ones(idx.size)
    else:
        amp = res["s_in"][idx] / (res["s_in"][idx] + res["s_out"][idx])
    out[idx] += e_ref * (amp * np.exp(-1j * k * res["s_out"][idx]))[:, None]
    census["R"][idx] += 1


def double_reflection_field(mesh, f1, f2, source, obs, k, occ, out, census):
    res = double_reflection_bundle(mesh, f1, f2, source, obs, occ)
    idx = np.nonzero(res["valid"])[0]
    if not idx.size:
        return
    e_in = source.field_at(res["p1"][idx], k)
    e1 = co.apply_reflection_dyadic(e_in, res["n1"], res["d_in"][idx], res["d_mid"][idx])
    if source.is_plane_wave:
        amp1 = np.ones(idx.size)
        amp2 = np.ones(idx.size)
    else:
        amp1 = res["s_in"][idx] / (res["s_in"][idx] + res["s_mid"][idx])
        amp2 = (res["s_in"][idx] + res["s_mid"][idx]) / (
            res["s_in"][idx] + res["s_mid"][idx] + res["s_out"][idx]
        )
    e1 = e1 * (amp1 * np.exp(-1j * k * res["s_mid"][idx]))[:, None]
    e2 = co.apply_reflection_dyadic(e1, res["n2"], res["d_mid"][idx], res["d_out"][idx])
    out[idx] += e2 * (amp2 * np.exp(-1j * k * res["s_out"][idx]))[:, None]
    census["R"][idx] += 1


def edge_field(wedge, source, obs, k, occ, out, census, table=True):
    res = edge_point_bundle(wedge, source, obs, occ)
    idx = np.nonzero(res["valid"])[0]
    if not idx.size:
        return
    plane = source.is_plane_wave
    L = _distance_parameter(res["s_in"][idx], res["s_out"][idx], plane)
    ang, ok, halv = co.wedge_interaction_angles(
        wedge, res["d_in"][idx], res["d_out"][idx], L, k
    )
    idx = idx[ok]
    if not idx.size:
        return
    ang = _mask_angles(ang, ok)
    halv = halv[ok]
    d_s = co.edge_coefficient(ang, "soft", table=table)
    d_h = co.edge_coefficient(ang, "hard", table=table)
    e_in = source.field_at(res["point"][idx], k) * halv[:, None]
    e_d = co.apply_edge_dyadic_complex(
        e_in, wedge.tangent, res["d_in"][idx], res["d_out"][idx], d_s, d_h
    )
    amp = _conical_spreading(res["s_in"][idx], res["s_out"][idx], plane)
    out[idx] += e_d * (amp * np.exp(-1j * k * res["s_out"][idx]))[:, None]
    census["E"][idx] += 1


def _mask_angles(ang, mask):
    return co.WedgeAngles(
        n=ang.n,
        phi_inc=ang.phi_inc[mask],
        phi_out=ang.phi_out[mask],
        sin_beta0=ang.sin_beta0[mask],
        L=ang.L[mask],
        k=ang.k,
    )


def vertex_field(corner, wedges, source, obs, k, occ, out, census, table=True):
    res = vertex_bundle(corner, source, obs, occ)
    idx = np.nonzero(res["valid"])[0]
    if not idx.size:
        return
    plane = source.is_plane_wave
    p = corner.position
    d_in = np.broadcast_to(res["d_in"], (idx.size, 3))
    d_out = res["d_out"][idx]
    s_in = res["s_in"][idx]
    s_out = res["s_out"][idx]
    L = _distance_parameter(s_in, s_out, plane)
    amp = _conical_spreading(s_in, s_out, plane)
    e_in = source.field_at(p[None, :], k)
    contrib = np.zeros((idx.size, 3), dtype=complex)
    any_term = np.zeros(idx.size, dtype=bool)
    for wi in corner.wedge_indices:
        w = wedges[wi]
        ang, ok, halv = co.wedge_interaction_angles(w, d_in, d_out, L, k)
        if not np.any(ok):
            continue
        u, inner, line_ok = corner_step_geometry(w, corner.vertex, source, obs[idx], k)
        ok &= line_ok
        if not np.any(ok):
            continue
        ang_m = _mask_angles(ang, ok)
        d_s = co.vertex_coefficient(ang_m, "soft", u[ok], inner[ok], table=table)
        d_h = co.vertex_coefficient(ang_m, "hard", u[ok], inner[ok], table=table)
        e_v = co.apply_edge_dyadic_complex(
            np.broadcast_to(e_in, (int(ok.sum()), 3)) * halv[ok][:, None],
            w.tangent, d_in[ok], d_out[ok], d_s, d_h,
        )
        contrib[ok] += e_v
        any_term |= ok
    sel = np.nonzero(any_term)[0]
    if not sel.size:
        return
    gidx = idx[sel]
    out[gidx] += contrib[sel] * (amp[sel] * np.exp(-1j * k * s_out[sel]))[:, None]
    census["V"][gidx] += 1


def _cascade_second_leg_params(s_in, s_mid, s_out, plane_wave):
    """Distance parameter, spreading and coupling w for the second bounce.

    The wave leaving the first edge is astigmatic with an edge caustic at
    distance s_mid; the Kouyoumjian-Pathak distance parameter that keeps the
    first-edge field continuous across the second edge's boundaries is then
    L2 = s_out (plane-wave first leg, incident radii {s_mid, inf}) or
    s_out (s_in + s_mid) / (s_in + s_mid + s_out) (point source), and the
    conical spreading always uses the s_mid caustic:
    sqrt(L2) * A2 = incident-wave continuation factor over the last leg.
    """
    s_mid = np.asarray(s_mid, dtype=float)
    s_out = np.asarray(s_out, dtype=float)
    A2 = np.sqrt(s_mid / (s_out * (s_mid + s_out)))
    if plane_wave:
        L2 = s_out
        w2 = s_out / (s_mid + s_out)
    else:
        s_in = np.asarray(s_in, dtype=float)
        L2 = s_out * (s_in + s_mid) / (s_in + s_mid + s_out)
        w2 = (s_in * s_out) / ((s_in + s_mid) * (s_mid + s_out))
    return L2, A2, np.sqrt(np.clip(w2, 0.0, 1.0 - 1.0e-12))


def _edge1_stage(wedge, source, p1, d_in, d_mid, s_in, s_mid, k, table):
    """First-edge cascade stage: field arriving at the second interaction."""
    plane = source.is_plane_wave
    L1 = _distance_parameter(s_in, s_mid, plane)
    ang1, ok, halv = co.wedge_interaction_angles(wedge, d_in, d_mid, L1, k)
    a_pair = None
    e_at_2 = None
    if np.any(ok):
        ang_m = _mask_angles(ang1, ok)
        d_s = co.edge_coefficient(ang_m, "soft", table=table)
        d_h = co.edge_coefficient(ang_m, "hard", table=table)
        e_in = source.field_at(p1[ok], k) * halv[ok][:, None]
        e_mid = co.apply_edge_dyadic_complex(
            e_in, wedge.tangent, d_in[ok], d_mid[ok], d_s, d_h
        )
        amp1 = _conical_spreading(s_in[ok], s_mid[ok], plane)
        e_at_2 = e_mid * (amp1 * np.exp(-1j * k * s_mid[ok]))[:, None]
        args = ang_m.transition_arguments()
        a_pair = np.minimum(args[0], args[1])   # incident-pair transition state
    return ok, e_at_2, a_pair, ang1


def double_edge_field(w1, w2, source, obs, k, occ, out, census, table=True):
    res = double_edge_bundle(w1, w2, source, obs, occ)
    idx = np.nonzero(res["valid"])[0]
    if not idx.size:
        return
    plane = source.is_plane_wave
    s_in = res["s_in"][idx]
    s_mid = res["s_mid"][idx]
    s_out = res["s_out"][idx]
    ok1, e_at_2, a_reg, _ = _edge1_stage(
        w1, source, res["p1"][idx], res["d_in"][idx], res["d_mid"][idx],
        s_in, s_mid, k, table,
    )
    if e_at_2 is None:
        return
    idx = idx[ok1]
    s_in, s_mid, s_out = s_in[ok1], s_mid[ok1], s_out[ok1]
    d_mid = res["d_mid"][idx]
    d_out = res["d_out"][idx]

    L2, A2, w_c = _cascade_second_leg_params(s_in, s_mid, s_out, plane)
    ang2, ok2, halv2 = co.wedge_interaction_angles(w2, d_mid, d_out, L2, k)
    if not np.any(ok2):
        return
    lam = tr.blend_weight(a_reg[ok2])
    ang_out = _mask_angles(ang2, ok2)
    ang_in = co.WedgeAngles(
        n=ang_out.n, phi_inc=ang_out.phi_inc, phi_out=ang_out.phi_out,
        sin_beta0=ang_out.sin_beta0,
        L=tr.coupled_distance(ang_out.L, w_c[ok2]), k=k,
    )
    d_s = lam * co.edge_coefficient(ang_out, "soft", table=table) + \
        (1.0 - lam) * co.edge_coefficient(ang_in, "soft", table=table)
    d_h = lam * co.edge_coefficient(ang_out, "hard", table=table) + \
        (1.0 - lam) * co.edge_coefficient(ang_in, "hard", table=table)

    # slope companion: restores the soft component near the double transition
    pref = co.wedge_prefactor(w2.n, k, ang_out.sin_beta0)
    scale = pref / (1j * k * s_mid[ok2] * 4.0 * w1.n * w2.n)
    s_s = co.slope_csc_sum(ang_out, "soft") * scale
    s_h = co.slope_csc_sum(ang_out, "hard") * scale

    e_stage = e_at_2[ok2] * halv2[ok2][:, None]
    e_main = co.apply_edge_dyadic_complex(
        e_stage, w2.tangent, d_mid[ok2], d_out[ok2], d_s + s_s, d_h + s_h
    )
    gidx = idx[ok2]
    out[gidx] += e_main * (A2[ok2] * np.exp(-1j * k * s_out[ok2]))[:, None]
    census["EE"][gidx] += 1


def edge_vertex_field(w1, w2, corner, source, obs, k, occ, out, census, table=True):
    """Edge-then-corner cascade compensating the pair's segment exit at the
    corner; the first-edge point solves the Fermat problem with the corner
    as the downstream endpoint (observation independent)."""
    first = edge_to_point_bundle(w1, source, corner.position, obs, occ)
    if not first["valid"][0]:
        return
    p1 = first["point"][0]
    s_in = first["s_in"][0]
    s_mid = float(np.linalg.norm(corner.position - p1))
    if s_mid <= 0.0:
        return
    d_in1 = first["d_in"][0]
    d_mid = (corner.position - p1) / s_mid

    vis = ~occ.segments_blocked(
        np.broadcast_to(corner.position, obs.shape).copy(), obs
    )
    idx = np.nonzero(vis)[0]
    if not idx.size:
        return

    # infinite-line pair reference for the step variable
    ref = double_edge_bundle(w1, w2, source, obs[idx], occ, clamp=False)
    line_ok = np.isfinite(ref["t1"]) & np.isfinite(ref["t2"])
    idx = idx[line_ok]
    if not idx.size:
        return
    t2_inf = ref["t2"][line_ok]
    p1r = ref["p1"][line_ok]
    p2r = ref["p2"][line_ok]
    len_ref = (
        source.phase_length(p1r)
        + np.linalg.norm(p2r - p1r, axis=1)
        + np.linalg.norm(obs[idx] - p2r, axis=1)
    )
    s_out = np.linalg.norm(obs[idx] - corner.position, axis=1)
    len_ev = float(source.phase_length(p1[None, :])[0]) + s_mid + s_out
    delta = np.maximum(len_ev - len_ref, 0.0)
    u = np.sqrt(k * delta)
    at_p0 = corner.vertex == w2.vertex0
    from facetrt.paths import SNAP_FRACTION
    inner = (t2_inf > SNAP_FRACTION) if at_p0 else (t2_inf < 1.0 - SNAP_FRACTION)

    plane = source.is_plane_wave
    n_sel = idx.size
    ones = np.ones(n_sel)
    ok1, e_at_c, a_reg, _ = _edge1_stage(
        w1, source,
        np.broadcast_to(p1, (n_sel, 3)),
        np.broadcast_to(d_in1, (n_sel, 3)),
        np.broadcast_to(d_mid, (n_sel, 3)),
        (np.inf if plane else s_in) * ones, s_mid * ones, k, table,
    )
    if e_at_c is None:
        return
    idx = idx[ok1]
    u, inner, s_out = u[ok1], inner[ok1], s_out[ok1]

    s_in_arr = (np.inf if plane else s_in) * np.ones(idx.size)
    L2, A2, w_c = _cascade_second_leg_params(
        s_in_arr, s_mid * np.ones(idx.size), s_out, plane
    )
    d_out = (obs[idx] - corner.position) / s_out[:, None]
    ang2, ok2, halv2 = co.wedge_interaction_angles(
        w2, np.broadcast_to(d_mid, (idx.size, 3)), d_out, L2, k
    )
    if not np.any(ok2):
        return
    lam = tr.blend_weight(a_reg[ok2])
    u_sel = u[ok2]
    u_alt = np.sqrt(tr.coupled_distance(u_sel * u_sel, w_c[ok2]))
    ang_m = _mask_angles(ang2, ok2)
    d_s = co.vertex_coefficient(ang_m, "soft", u_sel, inner[ok2],
                                blend=(u_alt, lam), table=table)
    d_h = co.vertex_coefficient(ang_m, "hard", u_sel, inner[ok2],
                                blend=(u_alt, lam), table=table)
    e_stage = e_at_c[ok2] * halv2[ok2][:, None]
    e_main = co.apply_edge_dyadic_complex(
        e_stage, w2.tangent,
        np.broadcast_to(d_mid, (int(ok2.sum()), 3)), d_out[ok2], d_s, d_h,
    )
    gidx = idx[ok2]
    out[gidx] += e_main * (A2[ok2] * np.exp(-1j * k * s_out[ok2]))[:, None]
    census["EV"][gidx] += 1


def vertex_edge_field(w1, w2, corner, source, obs, k, occ, out, census, table=True):
    """Corner-then-edge cascade (mirror of edge_vertex_field)."""
    if occ.source_legs_blocked(source, corner.position[None, :])[0]:
        return
    second = point_to_edge_bundle(w2, corner.position, obs, occ)
    idx = np.nonzero(second["valid"])[0]
    if not idx.size:
        return
    ref = double_edge_bundle(w1, w2, source, obs[idx], occ, clamp=False)
    line_ok = np.isfinite(ref["t1"]) & np.isfinite(ref["t2"])
    idx = idx[line_ok]
    if not idx.size:
        return
    t1_inf = ref["t1"][line_ok]
    p1r = ref["p1"][line_ok]
    p2r = ref["p2"][line_ok]
    len_ref = (
        source.phase_length(p1r)
        + np.linalg.norm(p2r - p1r, axis=1)
        + np.linalg.norm(obs[idx] - p2r, axis=1)
    )
    p2 = second["point"][idx]
    s_mid = np.linalg.norm(p2 - corner.position, axis=1)
    s_out = second["s_out"][idx]
    len_ve = float(source.phase_length(corner.position[None, :])[0]) + s_mid + s_out
    delta = np.maximum(len_ve - len_ref, 0.0)
    u = np.sqrt(k * delta)
    at_p0 = corner.vertex == w1.vertex0
    from facetrt.paths import SNAP_FRACTION
    inner = (t1_inf > SNAP_FRACTION) if at_p0 else (t1_inf < 1.0 - SNAP_FRACTION)

    plane = source.is_plane_wave
    d_in = source.incoming_direction(corner.position[None, :])[0]
    d_mid = (p2 - corner.position) / s_mid[:, None]
    d_out = second["d_out"][idx]
    s_in = (
        np.full(idx.size, np.inf) if plane
        else np.full(idx.size, float(np.linalg.norm(corner.position - source.position)))
    )
    # corner stage
    L1 = _distance_parameter(s_in, s_mid, plane)
    ang1, ok1, halv1 = co.wedge_interaction_angles(
        w1, np.broadcast_to(d_in, (idx.size, 3)), d_mid, L1, k
    )
    if not np.any(ok1):
        return
    # edge-side transition state drives the regime blend
    L2, A2, w_c = _cascade_second_leg_params(s_in, s_mid, s_out, plane)
    ang2, ok2, halv2 = co.wedge_interaction_angles(w2, d_mid, d_out, L2, k)
    ok = ok1 & ok2
    if not np.any(ok):
        return
    ang2_m = _mask_angles(ang2, ok)
    a_pair = ang2_m.transition_arguments()
    a_reg = np.minimum(a_pair[0], a_pair[1])
    lam = tr.blend_weight(a_reg)
    u_sel = u[ok]
    u_alt = np.sqrt(tr.coupled_distance(u_sel * u_sel, w_c[ok]))
    ang1_m = _mask_angles(ang1, ok)
    dv_s = co.vertex_coefficient(ang1_m, "soft", u_sel, inner[ok],
                                 blend=(u_alt, lam), table=table)
    dv_h = co.vertex_coefficient(ang1_m, "hard", u_sel, inner[ok],
                                 blend=(u_alt, lam), table=table)
    n_ok = int(ok.sum())
    e_in = source.field_at(corner.position[None, :], k)
    e_in = np.broadcast_to(e_in, (n_ok, 3)) * halv1[ok][:, None]
    e_c = co.apply_edge_dyadic_complex(
        e_in, w1.tangent, np.broadcast_to(d_in, (n_ok, 3)), d_mid[ok], dv_s, dv_h
    )
    amp1 = _conical_spreading(s_in[ok], s_mid[ok], plane)
    e_at_2 = e_c * (amp1 * np.exp(-1j * k * s_mid[ok]))[:, None]

    d2_s = co.edge_coefficient(ang2_m, "soft", table=table)
    d2_h = co.edge_coefficient(ang2_m, "hard", table=table)
    e_stage = e_at_2 * halv2[ok][:, None]
    e_main = co.apply_edge_dyadic_complex(
        e_stage, w2.tangent, d_mid[ok], d_out[ok], d2_s, d2_h
    )
    gidx = idx[ok]
    out[gidx] += e_main * (A2[ok] * np.exp(-1j * k * s_out[ok]))[:, None]
    census["VE"][gidx] += 1


# ---------------------------------------------------------------------------
# Reflection-diffraction hybrids (off by default)
# ---------------------------------------------------------------------------


def _imaged_plane_source(source, normal, d_plane):
    """Plane-wave source reflected across a facet plane (PEC dyadic)."""
    d = source.direction
    d_r = d - 2.0 * (d @ normal) * normal
    pol_r = co.apply_reflection_dyadic(
        source.polarization[None, :].astype(complex), normal, d[None, :], d_r[None, :]
    )[0]
    phase_const = 2.0 * (d @ normal) * d_plane
    return d_r, pol_r, phase_const


def re_er_fields(mesh, wedges, source, obs, k, occ, out, census, table=True):
    """Single reflection chained with single edge diffraction (RE and ER).

    Implemented by imaging the source (RE) or the observations (ER) across
    each lit facet plane, with specular-point-in-facet and occlusion
    validation.  Costs O(N_facets x N_wedges); kept behind a toggle.
    """
    from facetrt.paths import PlaneWaveSource, PointSource, MIN_LEG

    for facet in range(len(mesh.facets)):
        n = mesh.normals[facet]
        a, b, c = mesh.vertices[mesh.facets[facet]]
        d0 = float(n @ a)

        # ER: diffract then reflect = edge problem toward imaged observations
        h_o = obs @ n - d0
        front = h_o > MIN_LEG
        if np.any(front):
            obs_img = obs - 2.0 * h_o[:, None] * n
            for w in wedges:
                if facet in (w.facet0, w.facet1):
                    continue
                _er_one(mesh, facet, w, source, obs, obs_img, front, k, occ,
                        out, census, table)

        # RE: reflect then diffract = edge problem with the imaged source
        if source.is_plane_wave:
            if source.direction @ n >= -1.0e-9:
                continue
            d_r, pol_r, phase_const = _imaged_plane_source(source, n, d0)
            img_src = PlaneWaveSource(direction=d_r, polarization=pol_r.real)
            extra = np.exp(-1j * k * phase_const)
            pol_complexity = pol_r / max(np.linalg.norm(pol_r), 1e-30)
        else:
            h_s = float(n @ source.position) - d0
            if h_s <= MIN_LEG:
                continue
            img_src = PointSource(source.position - 2.0 * h_s * n,
                                  source.polarization)
            extra = 1.0
        for w in wedges:
            if facet in (w.facet0, w.facet1):
                continue
            _re_one(mesh, facet, w, source, img_src, extra, obs, k, occ,
                    out, census, table)


def _segment_plane_hit(p, q, n, d0, a, b, c):
    """Crossing point of segments p->q with a facet plane, inside-triangle."""
    from facetrt.paths import _point_in_triangle

    hp = p @ n - d0
    hq = q @ n - d0
    denom = hp - hq
    with np.errstate(divide="ignore", invalid="ignore"):
        t = hp / denom
    valid = np.isfinite(t) & (t > 0.0) & (t < 1.0)
    x = p + t[:, None] * (q - p)
    valid &= _point_in_triangle(x, a, b, c)
    return x, valid


def _er_one(mesh, facet, w, source, obs, obs_img, front, k, occ, out, census, table):
    idx0 = np.nonzero(front)[0]
    res = edge_point_bundle(w, source, obs_img[idx0], occ)
    sel = np.nonzero(res["valid"])[0]
    if not sel.size:
        return
    n = mesh.normals[facet]
    a, b, c = mesh.vertices[mesh.facets[facet]]
    d0 = float(n @ a)
    p = res["point"][sel]
    q, hit = _segment_plane_hit(p, obs_img[idx0][sel], n, d0, a, b, c)
    sel = sel[hit]
    if not sel.size:
        return
    q = q[hit]
    p = res["point"][sel]
    gidx = idx0[sel]
    blocked = occ.segments_blocked(p, q) | occ.segments_blocked(q, obs[gidx])
    keep = ~blocked
    sel, q, gidx = sel[keep], q[keep], gidx[keep]
    if not sel.size:
        return
    plane = source.is_plane_wave
    L = _distance_parameter(res["s_in"][sel], res["s_out"][sel], plane)
    ang, ok, halv = co.wedge_interaction_angles(
        w, res["d_in"][sel], res["d_out"][sel], L, k
    )
    sel2 = np.nonzero(ok)[0]
    if not sel2.size:
        return
    ang_m = _mask_angles(ang, ok)
    d_s = co.edge_coefficient(ang_m, "soft", table=table)
    d_h = co.edge_coefficient(ang_m, "hard", table=table)
    e_in = source.field_at(res["point"][sel][sel2], k) * halv[sel2][:, None]
    e_d = co.apply_edge_dyadic_complex(
        e_in, w.tangent, res["d_in"][sel][sel2], res["d_out"][sel][sel2], d_s, d_h
    )
    amp = _conical_spreading(res["s_in"][sel][sel2], res["s_out"][sel][sel2], plane)
    e_d = e_d * (amp * np.exp(-1j * k * res["s_out"][sel][sel2]))[:, None]
    d_seg = res["d_out"][sel][sel2]
    d_ref = d_seg - 2.0 * (d_seg @ n)[:, None] * n
    e_r = co.apply_reflection_dyadic(e_d, n, d_seg, d_ref)
    g = gidx[sel2]
    out[g] += e_r
    census["ER"][g] += 1


def _re_one(mesh, facet, w, source, img_src, extra, obs, k, occ, out, census, table):
    res = edge_point_bundle(w, img_src, obs, occ)
    sel = np.nonzero(res["valid"])[0]
    if not sel.size:
        return
    n = mesh.normals[facet]
    a, b, c = mesh.vertices[mesh.facets[facet]]
    d0 = float(n @ a)
    p = res["point"][sel]
    # incident leg must bounce off the facet before reaching the edge point
    if img_src.is_plane_wave:
        back = p - img_src.direction * (10.0 * max(mesh.diameter, 1.0))
    else:
        back = np.broadcast_to(img_src.position, p.shape).copy()
    q, hit = _segment_plane_hit(back, p, n, d0, a, b, c)
    sel = sel[hit]
    if not sel.size:
        return
    q = q[hit]
    p = res["point"][sel]
    blocked = occ.source_legs_blocked(source, q) | occ.segments_blocked(q, p)
    keep = ~blocked
    sel, q = sel[keep], q[keep]
    if not sel.size:
        return
    plane = img_src.is_plane_wave
    L = _distance_parameter(res["s_in"][sel], res["s_out"][sel], plane)
    ang, ok, halv = co.wedge_interaction_angles(
        w, res["d_in"][sel], res["d_out"][sel], L, k
    )
    sel2 = np.nonzero(ok)[0]
    if not sel2.size:
        return
    ang_m = _mask_angles(ang, ok)
    d_s = co.edge_coefficient(ang_m, "soft", table=table)
    d_h = co.edge_coefficient(ang_m, "hard", table=table)
    e_in = img_src.field_at(res["point"][sel][sel2], k) * extra
    e_in = e_in * halv[sel2][:, None]
    e_d = co.apply_edge_dyadic_complex(
        e_in, w.tangent, res["d_in"][sel][sel2], res["d_out"][sel][sel2], d_s, d_h
    )
    amp = _conical_spreading(res["s_in"][sel][sel2], res["s_out"][sel][sel2], plane)
    g = sel[sel2]
    out[g] += e_d * (amp * np.exp(-1j * k * res["s_out"][sel][sel2]))[:, None]
    census["RE"][g] += 1


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def accumulate(mesh, wedges, corners, source, obs, k,
               toggles: MechanismToggles, occ=None, table=True):
    """Scattered field and path census for one observation block.

    Returns (e_scattered (n,3) complex, los bool (n,), census dict,
    stage_seconds dict).
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n_obs = len(obs)
    occ = occ or Occluder(mesh)
    out = np.zeros((n_obs, 3), dtype=complex)
    census = {key: np.zeros(n_obs, dtype=np.int64) for key in CENSUS_KEYS}
    stages = {}

    t0 = time.perf_counter()
    los = los_mask(source, obs, occ)
    census["LOS"][los] += 1
    stages["los"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if toggles.reflection_order >= 1:
        bundles = [
            reflection_bundle(mesh, f, source, obs, occ)
            for f in range(len(mesh.facets))
        ]
        collapse_duplicate_reflections(bundles, occ.eps)
        for f, bundle in enumerate(bundles):
            reflection_field(mesh, f, source, obs, k, occ, out, census,
                             bundle=bundle)
    if toggles.reflection_order >= 2:
        for (f1, f2) in double_reflection_candidates(mesh):
            double_reflection_field(mesh, f1, f2, source, obs, k, occ, out, census)
    stages["reflections"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if toggles.edge:
        for w in wedges:
            edge_field(w, source, obs, k, occ, out, census, table=table)
    stages["edge"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if toggles.vertex:
        for c in corners:
            vertex_field(c, wedges, source, obs, k, occ, out, census, table=table)
    stages["vertex"] = time.perf_counter() - t0

    pairs = []
    if toggles.double_edge or toggles.edge_vertex or toggles.vertex_edge:
        pairs = coplanar_wedge_pairs(mesh, wedges)

    t0 = time.perf_counter()
    if toggles.double_edge:
        for (i, j) in pairs:
            double_edge_field(wedges[i], wedges[j], source, obs, k, occ,
                              out, census, table=table)
    stages["double_edge"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if toggles.edge_vertex or toggles.vertex_edge:
        ev_c, ve_c = cascade_candidates(wedges, corners, pairs)
        if toggles.edge_vertex:
            for (i, j, ci) in ev_c:
                edge_vertex_field(wedges[i], wedges[j], corners[ci], source,
                                  obs, k, occ, out, census, table=table)
        if toggles.vertex_edge:
            for (i, j, ci) in ve_c:
                vertex_edge_field(wedges[i], wedges[j], corners[ci], source,
                                  obs, k, occ, out, census, table=table)
    stages["cascade"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if toggles.refl_diffraction:
        re_er_fields(mesh, wedges, source, obs, k, occ, out, census, table=table)
    stages["hybrids"] = time.perf_counter() - t0

    return out, los, census, stages
