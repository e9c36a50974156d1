"""Path-solver tests: Fermat points, unfolding, occlusion, reflections."""

import numpy as np
import pytest

from facetrt import geometry as geo
from facetrt.bvh import Bvh, brute_segments_blocked
from facetrt.paths import (
    FreeSpace,
    MechanismToggles,
    Occluder,
    PlaneWaveSource,
    PointSource,
    double_edge_bundle,
    double_edge_path_length,
    edge_point_bundle,
    find_double_edge_points,
    find_edge_diffraction_point,
    find_vertex_paths,
    grid_search_double_edge,
    los_mask,
    reflection_bundle,
    trace_direct_and_reflections,
)

LAM = 0.14990
K = 2.0 * np.pi / LAM


def make_wedge(p0, p1, face_dir, n=2.0, index=0):
    """Free-standing wedge with a consistent edge-fixed frame."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    e = p1 - p0
    e = e / np.linalg.norm(e)
    t0 = np.asarray(face_dir, dtype=float)
    t0 = t0 - (t0 @ e) * e
    t0 = t0 / np.linalg.norm(t0)
    n0 = np.cross(e, t0)
    return geo.Wedge(index=index, p0=p0, p1=p1, tangent=e,
                     facet0=0, facet1=-1, n=n, face0_normal=n0, face0_dir=t0,
                     vertex0=2 * index, vertex1=2 * index + 1)


class TestEdgeFermat:
    def test_symmetric_midpoint(self):
        w = make_wedge([0, 0, -1], [0, 0, 1], [-1, 0, 0])
        src = PointSource(position=np.array([1.0, 2.0, 0.3]))
        obs = np.array([-1.0, 2.0, 0.3])
        # mirror-symmetric about the perpendicular bisector plane z = 0.3
        node = find_edge_diffraction_point(w, src, obs)
        assert node is not None
        assert abs(node.position[2] - 0.3) < 1.0e-12

    def test_plane_wave_normal_projection(self):
        w = make_wedge([0, 0, -1], [0, 0, 1], [-1, 0, 0])
        src = PlaneWaveSource(direction=[1, 0, 0], polarization=[0, 0, 1])
        obs = np.array([-0.5, 1.2, 0.37])
        node = find_edge_diffraction_point(w, src, obs)
        assert node is not None
        # normal incidence: the point is the projection of obs onto the line
        assert abs(node.position[2] - 0.37) < 1.0e-12

    def test_keller_cone_residual(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(1000):
            p0 = rng.normal(size=3)
            p1 = p0 + rng.normal(size=3)
            t0 = np.cross(p1 - p0, rng.normal(size=3))
            t0 /= np.linalg.norm(t0)
            w = make_wedge(p0, p1, t0)
            src = PointSource(position=p0 + rng.normal(size=3) * 3.0)
            obs = p1 + rng.normal(size=3) * 3.0
            res = edge_point_bundle(w, src, obs[None, :], FreeSpace(), snap=0.0)
            if not res["line_ok"][0] or not (0.0 < res["t"][0] < 1.0):
                continue
            pt = res["point"][0]
            d_in = (pt - src.position) / np.linalg.norm(pt - src.position)
            d_out = (obs - pt) / np.linalg.norm(obs - pt)
            worst = max(worst, abs(d_in @ w.tangent - d_out @ w.tangent))
        assert worst < 1.0e-6

    def test_stationarity(self):
        w = make_wedge([0, 0, -2], [0, 0, 2], [-1, 0, 0])
        src = PointSource(position=np.array([2.0, 1.5, 0.4]))
        obs = np.array([-1.5, 2.5, -0.3])
        res = edge_point_bundle(w, src, obs[None, :], FreeSpace())
        t = res["t"][0]

        def length(tt):
            p = w.point(tt)
            return np.linalg.norm(p - src.position) + np.linalg.norm(obs - p)

        l0 = length(t)
        assert length(t + 1.0e-4) > l0
        assert length(t - 1.0e-4) > l0

    def test_outside_segment_rejected(self):
        w = make_wedge([0, 0, 0], [0, 0, 0.2], [-1, 0, 0])
        src = PointSource(position=np.array([1.0, 1.0, 5.0]))
        obs = np.array([-1.0, 1.0, 5.0])
        assert find_edge_diffraction_point(w, src, obs) is None


class TestDoubleEdgeUnfolding:
    def _random_coplanar_pair(self, rng):
        # two edges in the z=0 plane
        a1 = rng.uniform(-1, 1, 2)
        d1 = rng.uniform(-1, 1, 2)
        d1 /= np.linalg.norm(d1)
        a2 = a1 + np.array([0.0, rng.uniform(1.0, 2.0)]) + rng.uniform(-0.3, 0.3, 2)
        d2 = rng.uniform(-1, 1, 2)
        d2 /= np.linalg.norm(d2)
        L1, L2 = rng.uniform(0.5, 2.0, 2)
        w1 = make_wedge(np.r_[a1, 0.0], np.r_[a1 + L1 * d1, 0.0],
                        [0, 0, 1], index=0)
        w2 = make_wedge(np.r_[a2, 0.0], np.r_[a2 + L2 * d2, 0.0],
                        [0, 0, 1], index=1)
        return w1, w2

    def test_parallel_edges_symmetry(self):
        w1 = make_wedge([0, 0, 0], [1, 0, 0], [0, 0, 1], index=0)
        w2 = make_wedge([0, 1, 0], [1, 1, 0], [0, 0, 1], index=1)
        src = PointSource(position=np.array([0.3, -1.0, 0.0]))
        obs = np.array([0.7, 2.0, 0.0])
        res = find_double_edge_points(w1, w2, src, obs)
        assert res is not None
        n1, n2 = res
        # mirror symmetry: t1 of edge1 and t2 of edge2 satisfy t1 = 1 - ...
        assert abs((n1.position[0] - 0.3) - (0.7 - n2.position[0])) < 1.0e-9

    def test_grid_search_oracle(self):
        rng = np.random.default_rng(5)
        checked = 0
        for _ in range(1000):
            w1, w2 = self._random_coplanar_pair(rng)
            src = PointSource(position=np.r_[rng.uniform(-2, 2, 2), 0.0]
                              + np.array([0.0, -2.5, 0.0]))
            obs = np.r_[rng.uniform(-2, 2, 2), 0.0] + np.array([0.0, 4.0, 0.0])
            res = double_edge_bundle(w1, w2, src, obs[None, :], FreeSpace(),
                                     snap=0.02)
            if not res["valid"][0]:
                continue
            closed = double_edge_path_length(
                w1, w2, src, obs, res["t1"][0], res["t2"][0]
            )
            t1g, t2g = grid_search_double_edge(w1, w2, src, obs)
            brute = double_edge_path_length(w1, w2, src, obs, t1g, t2g)
            assert closed <= brute * (1.0 + 1.0e-6), (closed, brute)
            assert abs(closed - brute) / brute < 1.0e-6
            checked += 1
        assert checked > 100

    def test_parallel_degenerate_rejected(self):
        # plane wave travelling along the edges: the unfolded line is
        # parallel to them and no stationary pair exists
        w1 = make_wedge([0, 0, 0], [1, 0, 0], [0, 0, 1], index=0)
        w2 = make_wedge([0, 1, 0], [1, 1, 0], [0, 0, 1], index=1)
        src = PlaneWaveSource(direction=[1, 0, 0], polarization=[0, 0, 1])
        obs = np.array([0.5, 3.0, 0.0])
        assert find_double_edge_points(w1, w2, src, obs) is None

    def test_fermat_stationarity_pairwise(self):
        w1 = make_wedge([0, 0, 0], [1, 0, 0], [0, 0, 1], index=0)
        w2 = make_wedge([-0.2, 1.3, 0], [1.1, 1.4, 0], [0, 0, 1], index=1)
        src = PointSource(position=np.array([0.4, -2.0, 0.0]))
        obs = np.array([0.6, 3.0, 0.0])
        res = double_edge_bundle(w1, w2, src, obs[None, :], FreeSpace())
        assert res["valid"][0]
        t1, t2 = res["t1"][0], res["t2"][0]
        base = double_edge_path_length(w1, w2, src, obs, t1, t2)
        for dt1, dt2 in [(1e-4, 0), (-1e-4, 0), (0, 1e-4), (0, -1e-4)]:
            assert double_edge_path_length(w1, w2, src, obs, t1 + dt1, t2 + dt2) > base


class TestOcclusion:
    def test_bvh_matches_brute(self):
        mesh = geo.generate_fibonacci_sphere(64, 1.0)
        rng = np.random.default_rng(2)
        a = rng.uniform(-3, 3, (500, 3))
        b = rng.uniform(-3, 3, (500, 3))
        eps = 1.0e-6 * mesh.diameter
        fast = mesh.bvh.segments_blocked(a, b, eps)
        slow = brute_segments_blocked(mesh.vertices, mesh.facets, a, b, eps)
        assert np.array_equal(fast, slow)
        assert fast.sum() > 20    # the test actually exercises hits

    def test_convex_occlusion(self):
        mesh = geo.generate_prism_cylinder(16, 1.0, 2.0)
        occ = Occluder(mesh)
        src = PlaneWaveSource(direction=[1, 0, 0], polarization=[0, 0, 1])
        assert los_mask(src, np.array([[-5.0, 0.0, 0.0]]), occ)[0]
        assert not los_mask(src, np.array([[5.0, 0.0, 0.0]]), occ)[0]
        assert los_mask(src, np.array([[0.0, 5.0, 0.0]]), occ)[0]

    def test_endpoint_trim_no_self_block(self):
        mesh = geo.generate_prism_cylinder(12, 1.0, 2.0)
        occ = Occluder(mesh)
        # segment from a hull vertex outward must not self-block
        p = mesh.vertices[0]
        outward = p + 2.0 * np.array([p[0], p[1], 0.0])
        blocked = occ.segments_blocked(p[None, :], outward[None, :])
        assert not blocked[0]


class TestReflections:
    def test_image_method_point(self):
        # single facet: the reflection point is the analytic image point
        v = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0.0]])
        f = np.array([[0, 1, 2], [0, 2, 3]])
        mesh = geo.FacetMesh(v, f)
        occ = Occluder(mesh)
        src = PointSource(position=np.array([-0.4, 0.1, 1.0]))
        obs = np.array([[0.4, 0.1, 1.0]])
        hits = []
        for fi in range(2):
            res = reflection_bundle(mesh, fi, src, obs, occ)
            if res["valid"][0]:
                hits.append(res["point"][0])
        assert len(hits) == 1
        assert np.allclose(hits[0], [0.0, 0.1, 0.0], atol=1e-12)

    def test_plane_wave_specular(self):
        v = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0.0]])
        f = np.array([[0, 1, 2], [0, 2, 3]])
        mesh = geo.FacetMesh(v, f)
        occ = Occluder(mesh)
        src = PlaneWaveSource(direction=[0, 0, -1], polarization=[1, 0, 0])
        obs = np.array([[0.25, -0.3, 2.0]])
        found = [reflection_bundle(mesh, fi, src, obs, occ)["valid"][0]
                 for fi in range(2)]
        assert sum(found) == 1

    def test_convex_no_paths_behind(self):
        mesh = geo.generate_prism_cylinder(16, 1.0, 2.0)
        src = PlaneWaveSource(direction=[1, 0, 0], polarization=[0, 0, 1])
        paths = trace_direct_and_reflections(src, mesh, np.array([8.0, 0.0, 0.0]),
                                             max_reflection_order=1)
        assert [p.mechanism for p in paths] == []   # fully shadowed point

    def test_los_and_reflection_ordering(self):
        mesh = geo.generate_prism_cylinder(16, 1.0, 2.0)
        src = PlaneWaveSource(direction=[1, 0, 0], polarization=[0, 0, 1])
        # observe along a panel's specular flash direction (panel centers sit
        # at half-integer multiples of 22.5 deg; flash at 2*theta_p - 180)
        theta_p = np.deg2rad(168.75)
        flash = np.deg2rad(2 * 168.75 - 180.0)
        obs = 8.0 * np.array([np.cos(flash), np.sin(flash), 0.0])
        paths = trace_direct_and_reflections(src, mesh, obs, 1)
        tags = [p.mechanism for p in paths]
        assert "LOS" in tags and "R" in tags
        assert tags == sorted(tags)


class TestVertexPaths:
    def test_cube_corner_path(self):
        mesh = geo.generate_prism_cylinder(4, 1.0, 1.0)
        wedges, corners = geo.extract_wedges_and_corners(mesh)
        occ = Occluder(mesh)
        src = PointSource(position=np.array([-4.0, 0.0, 0.0]))
        obs = np.array([0.0, 4.0, 0.0])
        paths = find_vertex_paths(corners, src, obs, occ=occ)
        assert paths
        for p in paths:
            corner = corners[p.nodes[0].ref_index]
            expect = np.linalg.norm(corner.position - src.position) + \
                np.linalg.norm(obs - corner.position)
            assert abs(p.total_length - expect) < 1.0e-9

    def test_hidden_corner_no_path(self):
        mesh = geo.generate_prism_cylinder(4, 1.0, 1.0)
        wedges, corners = geo.extract_wedges_and_corners(mesh)
        occ = Occluder(mesh)
        src = PointSource(position=np.array([-4.0, 0.0, 0.0]))
        obs = np.array([-4.0, 0.1, 0.0])
        paths = find_vertex_paths(corners, src, obs, occ=occ)
        visible = {p.nodes[0].ref_index for p in paths}
        # corners on the far side are occluded for both legs
        far = [c.index for c in corners if c.position[0] > 0.3]
        assert not (visible & set(far))

    def test_visibility_matches_brute_force(self):
        mesh = geo.generate_fibonacci_sphere(80, 1.0)
        wedges, corners = geo.extract_wedges_and_corners(mesh)
        occ = Occluder(mesh)
        src = PlaneWaveSource(direction=[1, 0, 0], polarization=[0, 1, 0])
        obs = np.array([0.0, 6.0, 0.0])
        paths = find_vertex_paths(corners, src, obs, occ=occ)
        got = {p.nodes[0].ref_index for p in paths}
        expect = set()
        for c in corners:
            p = c.position
            leg_in = occ.segments_blocked_reference(
                (p - src.direction * 20.0)[None, :], p[None, :]
            )[0]
            leg_out = occ.segments_blocked_reference(p[None, :], obs[None, :])[0]
            if not leg_in and not leg_out:
                expect.add(c.index)
        assert got == expect


class TestToggles:
    def test_dependency_validation(self):
        with pytest.raises(ValueError):
            MechanismToggles(edge=False, double_edge=True)
        with pytest.raises(ValueError):
            MechanismToggles(vertex=False, edge_vertex=True)
        with pytest.raises(ValueError):
            MechanismToggles(reflection_order=3)

    def test_labels(self):
        t = MechanismToggles()
        assert t.label() == "R1+E+V+EE+EV+VE"
