"""Mesh representation, canonical-body generators and discretization analysis.

Meshes are indexed triangle soups promoted to half-edge-style adjacency on
construction.  Diffracting features are extracted as ``Wedge`` (edge shared
by two non-coplanar facets, or a boundary edge of an open sheet) and
``Corner`` (vertex terminating at least one wedge) records carrying the
edge-fixed frames the coefficient module needs.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MIN_FACET_AREA = 1.0e-12  # m^2
FLATNESS_THRESHOLD_DEG = 0.5

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


class MeshError(ValueError):
    """Raised for unusable mesh input; carries the offending edges if any."""

    def __init__(self, message, edges=None):
        super().__init__(message)
        self.edges = edges or []


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


@dataclass
class FacetMesh:
    """Indexed triangle mesh with adjacency and lazily built BVH."""

    vertices: np.ndarray          # (V, 3) float
    facets: np.ndarray            # (F, 3) int, CCW outward for closed bodies
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)
    edges: np.ndarray = field(init=False)        # (E, 2) sorted vertex pairs
    edge_facets: np.ndarray = field(init=False)  # (E, 2) facet ids, -1 if boundary
    watertight: bool = field(init=False)
    _bvh: object = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.facets = np.asarray(self.facets, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be (V, 3)")
        if self.facets.ndim != 2 or self.facets.shape[1] != 3:
            raise MeshError("facets must be (F, 3)")
        if self.facets.size and (
            self.facets.min() < 0 or self.facets.max() >= len(self.vertices)
        ):
            raise MeshError("facet index out of range")
        tri = self.vertices[self.facets]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        bad = np.nonzero(areas <= MIN_FACET_AREA)[0]
        if bad.size:
            raise MeshError(f"zero-area facets: {bad.tolist()[:16]}")
        self.areas = areas
        self.normals = cross / (2.0 * areas[:, None])
        self._build_adjacency()

    def _build_adjacency(self):
        f = self.facets
        raw = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        owner = np.tile(np.arange(len(f)), 3)
        key = np.sort(raw, axis=1)
        order = np.lexsort((key[:, 1], key[:, 0]))
        key = key[order]
        owner = owner[order]
        uniq, start, counts = np.unique(
            key, axis=0, return_index=True, return_counts=True
        )
        over = np.nonzero(counts > 2)[0]
        if over.size:
            raise MeshError(
                "non-manifold edges (shared by more than two facets): "
                + ", ".join(str(tuple(uniq[i])) for i in over[:16]),
                edges=[tuple(uniq[i]) for i in over],
            )
        self.edges = uniq
        ef = np.full((len(uniq), 2), -1, dtype=np.int64)
        ef[:, 0] = owner[start]
        two = counts == 2
        ef[two, 1] = owner[start[two] + 1]
        self.edge_facets = ef
        self.watertight = bool(np.all(two))

    # -- derived quantities -------------------------------------------------

    @property
    def centroid(self):
        return self.vertices.mean(axis=0)

    @property
    def diameter(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def edge_lengths(self):
        p = self.vertices
        return np.linalg.norm(p[self.edges[:, 1]] - p[self.edges[:, 0]], axis=1)

    def facet_centroids(self):
        return self.vertices[self.facets].mean(axis=1)

    def euler_characteristic(self):
        return len(self.vertices) - len(self.edges) + len(self.facets)

    def signed_volume(self):
        tri = self.vertices[self.facets]
        return float(np.einsum("ij,ij->", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])) / 6.0)

    def oriented_outward(self):
        """Flip winding globally if the enclosed volume is negative."""
        if self.watertight and self.signed_volume() < 0.0:
            return FacetMesh(self.vertices.copy(), self.facets[:, ::-1].copy())
        return self

    def transformed(self, rotation=None, translation=None):
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return FacetMesh(v, self.facets.copy())

    def facet_plane_keys(self, tol_deg=FLATNESS_THRESHOLD_DEG):
        """Group facets into coplanar clusters; returns int key per facet."""
        n = self.normals
        d = np.einsum("ij,ij->i", n, self.facet_centroids())
        scale = max(self.diameter, 1.0)
        ang_quant = np.round(n / np.deg2rad(tol_deg)).astype(np.int64)
        off_quant = np.round(d / (scale * np.deg2rad(tol_deg))).astype(np.int64)
        raw = np.concatenate([ang_quant, off_quant[:, None]], axis=1)
        _, keys = np.unique(raw, axis=0, return_inverse=True)
        return keys

    @property
    def bvh(self):
        if self._bvh is None:
            from facetrt.bvh import Bvh

            self._bvh = Bvh(self.vertices, self.facets)
        return self._bvh


@dataclass(frozen=True)
class Wedge:
    """Edge shared by two facets (or a sheet boundary) with its exterior frame.

    ``n`` is the exterior wedge parameter: the exterior region spans
    azimuths [0, n*pi] measured from the zero face around ``tangent``.
    """

    index: int
    p0: np.ndarray
    p1: np.ndarray
    tangent: np.ndarray           # unit, oriented so (t0, n0, tangent) is right-handed
    facet0: int
    facet1: int                   # -1 for sheet boundary edges
    n: float
    face0_normal: np.ndarray      # outward normal of the zero face
    face0_dir: np.ndarray         # in-face perpendicular, edge -> face interior
    vertex0: int
    vertex1: int

    @property
    def length(self):
        return float(np.linalg.norm(self.p1 - self.p0))

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return self.p0 + np.multiply.outer(t, self.p1 - self.p0)

    def azimuth(self, directions):
        """Azimuth in [0, 2 pi) of direction(s) projected normal to the edge."""
        d = np.asarray(directions, dtype=float)
        proj = d - np.multiply.outer(d @ self.tangent, self.tangent)
        ang = np.arctan2(proj @ self.face0_normal, proj @ self.face0_dir)
        return np.mod(ang, 2.0 * np.pi)


@dataclass(frozen=True)
class Corner:
    """Mesh vertex terminating one or more wedges."""

    index: int
    vertex: int
    position: np.ndarray
    wedge_indices: tuple

    def is_convex(self, wedges):
        """All incident face normals on one side of some separating plane."""
        normals = []
        for wi in self.wedge_indices:
            w = wedges[wi]
            normals.append(w.face0_normal)
        normals = np.asarray(normals)
        mean = normals.mean(axis=0)
        if np.linalg.norm(mean) < 1.0e-12:
            return False
        return bool(np.all(normals @ _unit(mean) > -1.0e-9))


# ---------------------------------------------------------------------------
# I/O: whitespace-delimited text (`v x y z` / `f i j k`, 1-based) and a
# fixed-layout binary variant.
# ---------------------------------------------------------------------------

_BINARY_MAGIC = b"FMB1"


def load_mesh(path, fmt="auto", min_vertices=4, min_facets=4):
    """Load a triangle mesh; builds adjacency and validates manifoldness."""
    path = Path(path)
    if not path.exists():
        raise MeshError(f"mesh file not found: {path}")
    if fmt == "auto":
        with open(path, "rb") as fh:
            fmt = "binary" if fh.read(4) == _BINARY_MAGIC else "text"
    if fmt == "binary":
        verts, facets = _load_binary(path)
    elif fmt == "text":
        verts, facets = _load_text(path)
    else:
        raise MeshError(f"unknown mesh format: {fmt}")
    if len(verts) < min_vertices or len(facets) < min_facets:
        raise MeshError(
            f"mesh too small: {len(verts)} vertices, {len(facets)} facets"
        )
    return FacetMesh(np.asarray(verts, dtype=float), np.asarray(facets, dtype=np.int64))


def _load_text(path):
    verts, facets = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                    facets.append(idx)
            except (IndexError, ValueError) as exc:
                raise MeshError(f"parse failure at line {ln}: {line!r}") from exc
    return verts, facets


def _load_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BINARY_MAGIC:
            raise MeshError("bad binary mesh header")
        nv, nf = struct.unpack("<qq", fh.read(16))
        verts = np.frombuffer(fh.read(nv * 24), dtype="<f8").reshape(nv, 3)
        facets = np.frombuffer(fh.read(nf * 12), dtype="<i4").reshape(nf, 3)
    return verts.astype(float), facets.astype(np.int64)


def save_mesh(mesh, path, fmt="text"):
    path = Path(path)
    if fmt == "text":
        with open(path, "w", encoding="utf-8") as fh:
            for v in mesh.vertices:
                fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            for f in mesh.facets:
                fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    elif fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_BINARY_MAGIC)
            fh.write(struct.pack("<qq", len(mesh.vertices), len(mesh.facets)))
            fh.write(mesh.vertices.astype("<f8").tobytes())
            fh.write(mesh.facets.astype("<i4").tobytes())
    else:
        raise MeshError(f"unknown mesh format: {fmt}")
    return path


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def generate_prism_cylinder(sides, radius, length):
    """Closed right prism approximating a circular cylinder.

    Panel vertices lie on the circle of the given radius (inscribed facets),
    so the lateral chord is E = 2 R sin(pi / sides).  Axis along z, centered
    at the origin; caps are center-fan triangulated.
    """
    if sides < 3:
        raise ValueError("sides must be >= 3")
    if radius <= 0.0 or length <= 0.0:
        raise ValueError("radius and length must be positive")
    ang = 2.0 * np.pi * np.arange(sides) / sides
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    z0, z1 = -0.5 * length, 0.5 * length
    verts = [np.concatenate([ring, np.full((sides, 1), z0)], axis=1),
             np.concatenate([ring, np.full((sides, 1), z1)], axis=1),
             np.array([[0.0, 0.0, z0]]),
             np.array([[0.0, 0.0, z1]])]
    verts = np.concatenate(verts)
    c0, c1 = 2 * sides, 2 * sides + 1

    facets = []
    for i in range(sides):
        j = (i + 1) % sides
        b_i, b_j = i, j
        t_i, t_j = sides + i, sides + j
        facets.append([b_i, b_j, t_j])
        facets.append([b_i, t_j, t_i])
        facets.append([c0, b_j, b_i])   # bottom cap, outward -z
        facets.append([c1, t_i, t_j])   # top cap, outward +z
    mesh = FacetMesh(verts, np.asarray(facets, dtype=np.int64))
    return mesh.oriented_outward()


def generate_fibonacci_sphere(points, radius):
    """Convex-hull triangulation of a golden-angle lattice on the sphere."""
    from scipy.spatial import ConvexHull

    if points < 4:
        raise ValueError("points must be >= 4")
    i = np.arange(points)
    z = 1.0 - 2.0 * (i + 0.5) / points
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    az = _GOLDEN_ANGLE * i
    pts = radius * np.stack([rho * np.cos(az), rho * np.sin(az), z], axis=1)
    hull = ConvexHull(pts)
    facets = hull.simplices.copy()
    # enforce outward orientation facet by facet
    tri = pts[facets]
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    cen = tri.mean(axis=1)
    flip = np.einsum("ij,ij->i", nrm, cen) < 0.0
    facets[flip] = facets[flip][:, ::-1]
    return FacetMesh(pts, facets)


def generate_box_grid(size, divisions):
    """Closed axis-aligned box with subdivided faces, centered at the origin."""
    lx, ly, lz = size
    nx, ny, nz = divisions
    key_of = {}
    verts = []

    def vid(p):
        k = (round(p[0], 9), round(p[1], 9), round(p[2], 9))
        if k not in key_of:
            key_of[k] = len(verts)
            verts.append(p)
        return key_of[k]

    facets = []

    def face(origin, du, dv, nu, nv):
        for iu in range(nu):
            for iv in range(nv):
                p00 = origin + du * (iu / nu) + dv * (iv / nv)
                p10 = origin + du * ((iu + 1) / nu) + dv * (iv / nv)
                p11 = origin + du * ((iu + 1) / nu) + dv * ((iv + 1) / nv)
                p01 = origin + du * (iu / nu) + dv * ((iv + 1) / nv)
                a, b, c, d = vid(p00), vid(p10), vid(p11), vid(p01)
                facets.append([a, b, c])
                facets.append([a, c, d])

    hx, hy, hz = 0.5 * lx, 0.5 * ly, 0.5 * lz
    ex, ey, ez = np.array([lx, 0, 0.0]), np.array([0, ly, 0.0]), np.array([0, 0, lz])
    # (du x dv) points outward on every face
    face(np.array([-hx, -hy, hz]), ex, ey, nx, ny)            # +z
    face(np.array([-hx, -hy, -hz]), ey, ex, ny, nx)           # -z
    face(np.array([hx, -hy, -hz]), ey, ez, ny, nz)            # +x
    face(np.array([-hx, -hy, -hz]), ez, ey, nz, ny)           # -x
    face(np.array([-hx, hy, -hz]), ez, ex, nz, nx)            # +y
    face(np.array([-hx, -hy, -hz]), ex, ez, nx, nz)           # -y
    mesh = FacetMesh(np.asarray(verts), np.asarray(facets, dtype=np.int64))
    return mesh.oriented_outward()


def generate_step_sheet(front_height, roof_depth, length):
    """Open step profile: a vertical front panel joined to a horizontal roof.

    Front panel spans x = 0, y in [-front_height, 0]; roof spans y = 0,
    x in [0, roof_depth]; both extruded along z in [-length/2, length/2].
    A ray from the -x side must diffract over the joint edge and again at
    the roof's free back edge to reach the region behind and below the
    roof: the canonical sequential two-edge configuration.
    """
    hl = 0.5 * length
    verts = np.array([
        [0.0, -front_height, -hl], [0.0, -front_height, hl],
        [0.0, 0.0, -hl], [0.0, 0.0, hl],
        [roof_depth, 0.0, -hl], [roof_depth, 0.0, hl],
    ])
    facets = np.array([
        [0, 1, 3], [0, 3, 2],      # front panel
        [2, 3, 5], [2, 5, 4],      # roof
    ])
    return FacetMesh(verts, facets)


def generate_plate_sheet(width, height, subdivisions=(1, 1)):
    """Open zero-thickness rectangular sheet in the x-y plane (normal +z)."""
    nu, nv = subdivisions
    xs = np.linspace(-0.5 * width, 0.5 * width, nu + 1)
    ys = np.linspace(-0.5 * height, 0.5 * height, nv + 1)
    verts = np.array([[x, y, 0.0] for y in ys for x in xs])
    facets = []
    for j in range(nv):
        for i in range(nu):
            a = j * (nu + 1) + i
            b = a + 1
            c = a + nu + 2
            d = a + nu + 1
            facets.append([a, b, c])
            facets.append([a, c, d])
    return FacetMesh(verts, np.asarray(facets, dtype=np.int64))


# ---------------------------------------------------------------------------
# Wedge / corner extraction
# ---------------------------------------------------------------------------


def _edge_frame(mesh, v0, v1, f0, f1):
    """Zero-face frame and exterior wedge parameter for one mesh edge."""
    p0 = mesh.vertices[v0]
    p1 = mesh.vertices[v1]
    e_raw = _unit(p1 - p0)
    n0 = mesh.normals[f0]
    cen0 = mesh.vertices[mesh.facets[f0]].mean(axis=0)
    mid = 0.5 * (p0 + p1)
    t0 = cen0 - mid
    t0 = _unit(t0 - (t0 @ e_raw) * e_raw)
    tangent = np.cross(t0, n0)
    if tangent @ e_raw < 0.0:
        v0, v1 = v1, v0
        p0, p1 = p1, p0
    tangent = _unit(tangent)

    if f1 < 0:
        return p0, p1, tangent, 2.0, n0, t0, v0, v1

    cen1 = mesh.vertices[mesh.facets[f1]].mean(axis=0)
    t1 = cen1 - mid
    t1 = _unit(t1 - (t1 @ tangent) * tangent)
    phi_b = np.arctan2(t1 @ n0, t1 @ t0) % (2.0 * np.pi)
    n_param = phi_b / np.pi
    return p0, p1, tangent, float(n_param), n0, t0, v0, v1


def extract_wedges_and_corners(mesh, flatness_deg=FLATNESS_THRESHOLD_DEG,
                               min_corner_wedges=1):
    """Diffracting wedges and corners of a mesh.

    Interior edges whose dihedral turn exceeds ``flatness_deg`` become
    wedges; coplanar joins produce none.  Boundary edges of open sheets are
    half-plane wedges (n = 2).  Concave edges (exterior span < pi) are
    skipped: the bodies handled here are assumed locally convex.
    """
    wedges = []
    cos_flat = np.cos(np.deg2rad(flatness_deg))
    skipped_concave = 0
    for (va, vb), (f0, f1) in zip(mesh.edges, mesh.edge_facets):
        if f1 >= 0:
            if mesh.normals[f0] @ mesh.normals[f1] >= cos_flat:
                continue
        p0, p1, tangent, n_param, n0, t0, v0, v1 = _edge_frame(
            mesh, int(va), int(vb), int(f0), int(f1)
        )
        if n_param <= 1.0:
            skipped_concave += 1
            continue
        wedges.append(
            Wedge(
                index=len(wedges),
                p0=p0,
                p1=p1,
                tangent=tangent,
                facet0=int(f0),
                facet1=int(f1),
                n=n_param,
                face0_normal=n0,
                face0_dir=t0,
                vertex0=v0,
                vertex1=v1,
            )
        )
    if skipped_concave:
        log.info("skipped %d concave edges during wedge extraction", skipped_concave)

    incident = {}
    for w in wedges:
        incident.setdefault(w.vertex0, []).append(w.index)
        incident.setdefault(w.vertex1, []).append(w.index)
    corners = []
    for vtx in sorted(incident):
        wi = incident[vtx]
        if len(wi) < min_corner_wedges:
            continue
        corners.append(
            Corner(
                index=len(corners),
                vertex=int(vtx),
                position=mesh.vertices[vtx].copy(),
                wedge_indices=tuple(sorted(wi)),
            )
        )
    return wedges, corners


# ---------------------------------------------------------------------------
# Discretization analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscretizationReport:
    edge_length: float            # characteristic E, m
    curvature_radius: float       # R, m (inf for flat meshes)
    wavelength: float             # m
    ratio: float                  # E^2 / (R * lambda)
    sagitta: float                # m, exact chord sagitta
    sagitta_over_lambda: float
    edge_over_lambda: float
    verdict: str                  # under / adequate / over
    note: str = ""

    def __str__(self):
        lines = [
            f"edge length E        : {self.edge_length:.6g} m"
            f"  ({self.edge_over_lambda:.3f} lambda)",
            f"curvature radius R   : {self.curvature_radius:.6g} m",
            f"wavelength           : {self.wavelength:.6g} m",
            f"E^2 / (R lambda)     : {self.ratio:.4f}",
            f"sagitta s            : {self.sagitta:.6g} m"
            f"  ({self.sagitta_over_lambda:.4f} lambda)",
            f"verdict              : {self.verdict}",
        ]
        if self.note:
            lines.append(f"note                 : {self.note}")
        return "\n".join(lines)


def chord_sagitta(radius, chord):
    """Exact sagitta of a chord on a circle: s = R - sqrt(R^2 - E^2/4)."""
    if not np.isfinite(radius):
        return 0.0
    return float(radius - np.sqrt(max(radius * radius - 0.25 * chord * chord, 0.0)))


def _wedge_chord_width(mesh, wedge):
    """Facet extent across the wedge: mean of 2*area/edge_length over the
    adjacent facets.  For prism panels this is exactly the lateral chord,
    the length that actually samples the curvature."""
    widths = []
    for f in (wedge.facet0, wedge.facet1):
        if f >= 0:
            widths.append(2.0 * mesh.areas[f] / wedge.length)
    return float(np.mean(widths))


def discretization_report(mesh, wavelength, curvature_radius_hint=None,
                          flatness_deg=FLATNESS_THRESHOLD_DEG):
    """Facet-size adequacy of a mesh at a given wavelength.

    Characteristic E is the facet extent across the gentle (curvature
    sampling) wedges; feature edges (turn > 30 deg) do not represent
    curvature and are excluded.  Without a hint, R per gentle edge is the
    circumradius of its chord/turn pair, R = E / (2 sin(turn/2)), exact for
    regular-polygon prisms.
    """
    if wavelength <= 0.0:
        raise ValueError("wavelength must be positive")
    wedges, _ = extract_wedges_and_corners(mesh, flatness_deg=flatness_deg)
    note = ""
    if not wedges:
        report = DiscretizationReport(
            edge_length=float(np.mean(mesh.edge_lengths())) if len(mesh.edges) else 0.0,
            curvature_radius=np.inf,
            wavelength=wavelength,
            ratio=0.0,
            sagitta=0.0,
            sagitta_over_lambda=0.0,
            edge_over_lambda=0.0,
            verdict="adequate",
            note="flat mesh: no measurable curvature",
        )
        return report

    turns = np.array([(w.n - 1.0) * np.pi for w in wedges])
    gentle = turns < np.deg2rad(45.0)
    if np.any(gentle):
        sel = [w for w, g in zip(wedges, gentle) if g]
        widths = np.array([_wedge_chord_width(mesh, w) for w in sel])
        sel_turns = turns[gentle]
    else:
        sel = wedges
        widths = np.array([_wedge_chord_width(mesh, w) for w in sel])
        sel_turns = turns
        note = "no gentle edges: curvature estimated from feature edges"
    E = float(np.mean(widths))

    if curvature_radius_hint is not None:
        R = float(curvature_radius_hint)
    else:
        r_per_edge = widths / (2.0 * np.sin(0.5 * sel_turns))
        R = float(np.median(r_per_edge))

    ratio = E * E / (R * wavelength) if np.isfinite(R) else 0.0
    s = chord_sagitta(R, E)
    if not np.isfinite(R):
        verdict = "adequate"
        note = note or "flat mesh: no measurable curvature"
    elif ratio > 0.9:
        verdict = "under"
    elif ratio < 0.6 or E < 1.5 * wavelength:
        verdict = "over"
    else:
        verdict = "adequate"
    return DiscretizationReport(
        edge_length=E,
        curvature_radius=R,
        wavelength=wavelength,
        ratio=ratio,
        sagitta=s,
        sagitta_over_lambda=s / wavelength,
        edge_over_lambda=E / wavelength,
        verdict=verdict,
        note=note,
    )
