"""Sweep execution, CSV emission, reference comparison and timing tables."""

from __future__ import annotations

import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import facetrt
from facetrt import transition as tr
from facetrt.fields import CENSUS_KEYS, accumulate
from facetrt.geometry import extract_wedges_and_corners
from facetrt.oracles import (
    RegionSpec,
    cylinder_incident_field,
    cylinder_scattered_field,
    field_db,
    rmse_db,
    series_terms,
    sphere_scattered_field,
    convergence_certificate,
)
from facetrt.paths import MechanismToggles, Occluder, los_mask

log = logging.getLogger(__name__)

WORKERS_ENV = "FACETRT_WORKERS"

CSV_COLUMNS = (
    "angle_deg", "Es_re", "Es_im", "Et_re", "Et_im", "Es_db", "Et_db",
    "n_paths_LOS", "n_paths_R", "n_paths_E", "n_paths_V", "n_paths_EE",
    "n_paths_EV", "n_paths_VE",
)

# which field quantity feeds the RMSE in each default region
REGION_QUANTITY = {"backscatter": "scattered", "shadow": "total"}


def worker_count():
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass
class SweepResult:
    name: str
    angles_deg: np.ndarray | None
    observation: np.ndarray
    e_scattered: np.ndarray          # (n, 3) complex
    e_incident: np.ndarray           # (n, 3) complex
    los: np.ndarray                  # (n,) bool
    es_scalar: np.ndarray            # co-pol complex scalar
    et_scalar: np.ndarray
    census: dict
    stage_seconds: dict
    metadata: dict = field(default_factory=dict)

    @property
    def e_total(self):
        return self.e_scattered + self.e_incident * self.los[:, None]

    @property
    def es_db(self):
        return field_db(np.linalg.norm(self.e_scattered, axis=1))

    @property
    def et_db(self):
        return field_db(np.linalg.norm(self.e_total, axis=1))

    @property
    def wall_seconds(self):
        return float(sum(self.stage_seconds.values()))


class SweepEngine:
    """Realized scenario: mesh, features, source and observation grid."""

    def __init__(self, scenario):
        self.scenario = scenario
        self.mesh = scenario.build_mesh()
        flat = scenario.numerics.get("flatness_deg", 0.5)
        self.wedges, self.corners = extract_wedges_and_corners(
            self.mesh, flatness_deg=flat
        )
        self.source = scenario.build_source()
        self.obs, self.angles = scenario.observation_points()
        self.k = scenario.wavenumber
        self.occ = Occluder(self.mesh)
        self.table = bool(scenario.numerics.get("gfi_table", True))

    def scattered_at(self, points, toggles=None):
        toggles = toggles or self.scenario.toggles
        out, los, census, stages = accumulate(
            self.mesh, self.wedges, self.corners, self.source,
            np.atleast_2d(points), self.k, toggles, occ=self.occ, table=self.table,
        )
        return out, los, census

    def total_db_at(self, points, toggles=None):
        out, los, _ = self.scattered_at(points, toggles)
        total = out + self.source.field_at(np.atleast_2d(points), self.k) * los[:, None]
        return field_db(np.linalg.norm(total, axis=1))

    def los_at(self, points):
        return los_mask(self.source, np.atleast_2d(points), self.occ)


def run_sweep(scenario, toggles=None, workers=None, engine=None) -> SweepResult:
    """Execute a scenario sweep; observation blocks run on a thread pool."""
    eng = engine or SweepEngine(scenario)
    toggles = toggles or scenario.toggles
    if eng.table:
        tr.gfi_step(0.5, 1.0, table=True)    # build the table before threading
    workers = workers or worker_count()
    obs = eng.obs
    n = len(obs)

    t_start = time.perf_counter()
    e_scat = np.zeros((n, 3), dtype=complex)
    los = np.zeros(n, dtype=bool)
    census = {key: np.zeros(n, dtype=np.int64) for key in CENSUS_KEYS}
    stage_totals: dict = {}

    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def run_block(sl):
        return sl, accumulate(
            eng.mesh, eng.wedges, eng.corners, eng.source, obs[sl], eng.k,
            toggles, occ=eng.occ, table=eng.table,
        )

    if len(slices) == 1:
        results = [run_block(slices[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            results = list(pool.map(run_block, slices))
    for sl, (block_e, block_los, block_census, block_stages) in results:
        e_scat[sl] = block_e
        los[sl] = block_los
        for key in CENSUS_KEYS:
            census[key][sl] = block_census[key]
        for key, val in block_stages.items():
            stage_totals[key] = stage_totals.get(key, 0.0) + val
    stage_totals["wall"] = time.perf_counter() - t_start

    e_inc = eng.source.field_at(obs, eng.k)
    copol = scenario.copol_units(obs)
    es_scalar = np.einsum("ij,ij->i", e_scat, copol.astype(complex))
    e_total = e_scat + e_inc * los[:, None]
    et_scalar = np.einsum("ij,ij->i", e_total, copol.astype(complex))

    meta = scenario.describe()
    meta.update(
        {
            "mechanisms_run": toggles.label(),
            "mesh_vertices": len(eng.mesh.vertices),
            "mesh_facets": len(eng.mesh.facets),
            "mesh_edges": len(eng.mesh.edges),
            "mesh_watertight": eng.mesh.watertight,
            "wedges": len(eng.wedges),
            "corners": len(eng.corners),
            "snap_fraction": 1.0e-3,
            "occlusion_eps_m": eng.occ.eps,
            "flatness_deg": scenario.numerics.get("flatness_deg", 0.5),
            "blend_window_a": "1,4",
            "gfi_table": eng.table,
            "gfi_clamp_hits": tr.clamp_diagnostics(),
            "workers": len(slices),
            "version": facetrt.__version__,
            "copol_column": "VV: z component; HH: horizontal transverse",
        }
    )
    if scenario.oracle_kind != "none":
        radius = scenario.geometry_params.get("radius")
        if radius:
            meta["oracle_truncation"] = series_terms(eng.k * radius)
    return SweepResult(
        name=scenario.name,
        angles_deg=eng.angles,
        observation=obs,
        e_scattered=e_scat,
        e_incident=e_inc,
        los=los,
        es_scalar=es_scalar,
        et_scalar=et_scalar,
        census=census,
        stage_seconds=stage_totals,
        metadata=meta,
    )


# ---------------------------------------------------------------------------
# Oracle sweeps on the scenario grid
# ---------------------------------------------------------------------------


def oracle_sweep(scenario, points=None, angles=None):
    """Analytical reference fields on the scenario's observation grid.

    Returns dict with scattered/total complex vectors plus a convergence
    certificate.  Only canonical geometries have references.
    """
    if points is None or angles is None:
        points, angles = scenario.observation_points()
    k = scenario.wavenumber
    radius = scenario.geometry_params.get("radius")
    kind = scenario.oracle_kind
    if kind == "cylinder":
        rho = np.linalg.norm(points[:, :2], axis=1)
        phi = np.arctan2(points[:, 1], points[:, 0])
        pol = "TM" if scenario.polarization.upper() == "VV" else "TE"
        n0 = series_terms(k * radius)
        e_s = cylinder_scattered_field(radius, k, pol, rho, phi, n_terms=n0)
        e_i = cylinder_incident_field(k, pol, rho, phi)
        probe = slice(0, len(points), max(1, len(points) // 16))

        def eval_n(n):
            return cylinder_scattered_field(radius, k, pol, rho[probe], phi[probe], n_terms=n)

        cert_ok, cert_change = convergence_certificate(eval_n, n0)
    elif kind == "sphere":
        # canonical Mie frame: incidence +z, pol +x; scenario: incidence +x
        pol_vec = (
            np.array([0.0, 0.0, 1.0])
            if scenario.polarization.upper() == "VV"
            else np.array([0.0, 1.0, 0.0])
        )
        z_ax = np.array([1.0, 0.0, 0.0])
        x_ax = pol_vec
        y_ax = np.cross(z_ax, x_ax)
        px = points @ x_ax
        py = points @ y_ax
        pz = points @ z_ax
        r = np.sqrt(px * px + py * py + pz * pz)
        theta = np.arccos(np.clip(pz / r, -1.0, 1.0))
        phi = np.arctan2(py, px)
        n0 = series_terms(k * radius)
        e_c = sphere_scattered_field(radius, k, r, theta, phi, n_terms=n0)
        e_s = e_c[:, 0:1] * x_ax + e_c[:, 1:2] * y_ax + e_c[:, 2:3] * z_ax
        phase = np.exp(-1j * k * pz)
        e_i = phase[:, None] * x_ax
        probe = slice(0, len(points), max(1, len(points) // 16))

        def eval_n(n):
            return sphere_scattered_field(
                radius, k, r[probe], theta[probe], phi[probe], n_terms=n
            )

        cert_ok, cert_change = convergence_certificate(eval_n, n0)
    else:
        raise ValueError(f"no analytical reference for oracle kind {kind!r}")
    return {
        "angles_deg": angles,
        "e_scattered": e_s,
        "e_incident": e_i,
        "e_total": e_s + e_i,
        "truncation": n0,
        "certificate_ok": bool(cert_ok),
        "certificate_change": float(cert_change),
    }


def oracle_result(scenario) -> SweepResult:
    """Oracle sweep packaged as a SweepResult (for CSV emission)."""
    points, angles = scenario.observation_points()
    osw = oracle_sweep(scenario, points, angles)
    copol = scenario.copol_units(points)
    n = len(points)
    census = {key: np.zeros(n, dtype=np.int64) for key in CENSUS_KEYS}
    meta = scenario.describe()
    meta.update(
        {
            "oracle_truncation": osw["truncation"],
            "oracle_certificate_ok": osw["certificate_ok"],
            "oracle_certificate_change": osw["certificate_change"],
            "generator": "analytical-series",
            "version": facetrt.__version__,
        }
    )
    return SweepResult(
        name=f"{scenario.name}_oracle",
        angles_deg=angles,
        observation=points,
        e_scattered=osw["e_scattered"],
        e_incident=osw["e_incident"],
        los=np.ones(n, dtype=bool),
        es_scalar=np.einsum("ij,ij->i", osw["e_scattered"], copol.astype(complex)),
        et_scalar=np.einsum("ij,ij->i", osw["e_total"], copol.astype(complex)),
        census=census,
        stage_seconds={},
        metadata=meta,
    )


# ---------------------------------------------------------------------------
# CSV emission / ingestion
# ---------------------------------------------------------------------------


def emit_csv(result: SweepResult, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for key in sorted(result.metadata):
        buf.write(f"# {key} = {result.metadata[key]}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    angles = (
        result.angles_deg
        if result.angles_deg is not None
        else np.arange(len(result.observation), dtype=float)
    )
    es_db = result.es_db
    et_db = result.et_db
    c = result.census
    for i in range(len(angles)):
        row = [
            f"{angles[i]:.17g}",
            f"{result.es_scalar[i].real:.17g}", f"{result.es_scalar[i].imag:.17g}",
            f"{result.et_scalar[i].real:.17g}", f"{result.et_scalar[i].imag:.17g}",
            f"{es_db[i]:.17g}", f"{et_db[i]:.17g}",
            str(int(c["LOS"][i])), str(int(c["R"][i])), str(int(c["E"][i])),
            str(int(c["V"][i])), str(int(c["EE"][i])), str(int(c["EV"][i])),
            str(int(c["VE"][i])),
        ]
        buf.write(",".join(row) + "\n")
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


def emit_plot_data(result: SweepResult, directory, stem=None):
    """Two-column dB-vs-angle text files per quantity."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or result.name
    angles = (
        result.angles_deg
        if result.angles_deg is not None
        else np.arange(len(result.observation), dtype=float)
    )
    outputs = []
    for tag, values in (("scattered_db", result.es_db), ("total_db", result.et_db)):
        p = directory / f"{stem}_{tag}.dat"
        with open(p, "w", encoding="utf-8") as fh:
            for a, v in zip(angles, values):
                fh.write(f"{a:.17g} {v:.17g}\n")
        outputs.append(p)
    return outputs


def read_csv(path):
    """Parse an emitted CSV back into arrays + metadata."""
    path = Path(path)
    meta = {}
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, val = line[2:].partition(" = ")
                meta[key] = val
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append([float(x) for x in line.split(",")])
    data = np.asarray(rows)
    cols = {name: data[:, i] for i, name in enumerate(header)}
    return cols, meta


def emit_outputs(result: SweepResult, directory, formats=("csv", "plot-data"),
                 figures=True, reference=None):
    """Write the sweep artifacts: CSV, plot data and rendered figures."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        written.append(emit_csv(result, directory / f"{result.name}.csv"))
    if "plot-data" in formats:
        written.extend(emit_plot_data(result, directory))
    if figures:
        from facetrt import plotting

        written.extend(plotting.render_sweep_figures(result, directory,
                                                     reference=reference))
    return written


# ---------------------------------------------------------------------------
# Comparison and timing
# ---------------------------------------------------------------------------


def _resample_reference(angles, ref_angles, ref_values):
    if len(angles) == len(ref_angles) and np.allclose(angles, ref_angles):
        return ref_values
    log.warning("reference grid differs; resampling by nearest angle")
    idx = np.abs(np.asarray(ref_angles)[None, :] - np.asarray(angles)[:, None]).argmin(axis=1)
    if np.max(np.abs(np.asarray(ref_angles)[idx] - angles)) > 1.0:
        raise ValueError("reference grid too different to resample")
    return np.asarray(ref_values)[idx]


def compare(result, reference, regions=None, region_quantity=None):
    """Region-wise RMSE table between a sweep and a reference.

    ``result`` is a SweepResult or CSV path; ``reference`` is a SweepResult,
    an oracle dict from ``oracle_sweep``, or a CSV path.  Backscatter-type
    regions compare the scattered field, shadow-type regions the total
    field (configurable through ``region_quantity``).
    """
    regions = regions or RegionSpec()
    region_quantity = region_quantity or REGION_QUANTITY

    if isinstance(result, (str, Path)):
        cols, _ = read_csv(result)
        angles = cols["angle_deg"]
        test = {"scattered": cols["Es_db"], "total": cols["Et_db"]}
    else:
        angles = result.angles_deg
        test = {"scattered": result.es_db, "total": result.et_db}

    if isinstance(reference, (str, Path)):
        cols, _ = read_csv(reference)
        ref_angles = cols["angle_deg"]
        ref = {"scattered": cols["Es_db"], "total": cols["Et_db"]}
    elif isinstance(reference, SweepResult):
        ref_angles = reference.angles_deg
        ref = {"scattered": reference.es_db, "total": reference.et_db}
    else:
        ref_angles = reference["angles_deg"]
        ref = {
            "scattered": field_db(np.linalg.norm(reference["e_scattered"], axis=1)),
            "total": field_db(np.linalg.norm(reference["e_total"], axis=1)),
        }

    table = {}
    deltas = {}
    for name in regions.regions:
        quantity = region_quantity.get(name, "scattered")
        ref_vals = _resample_reference(angles, ref_angles, ref[quantity])
        sub = RegionSpec({name: regions.regions[name]})
        table[name] = rmse_db(angles, test[quantity], ref_vals, sub)[name]
        table[name]["quantity"] = quantity
        deltas[name] = (angles, test[quantity] - ref_vals)
    return table, deltas


def format_rmse_table(rows):
    """rows: list of (label, {region: {rmse_db, ...}})."""
    regions = sorted({r for _, t in rows for r in t})
    lines = ["{:<24s}".format("scenario") + "".join(f"{r:>16s}" for r in regions)]
    for label, table in rows:
        cells = []
        for r in regions:
            cells.append(
                f"{table[r]['rmse_db']:>13.2f} dB" if r in table else f"{'-':>16s}"
            )
        lines.append(f"{label:<24s}" + "".join(cells))
    return "\n".join(lines)


def timing_report(scenario_names, toggle_sets=None, workers=None):
    """Wall-clock per (scenario, mechanism set); plus path/coefficient stages.

    Each added mechanism strictly adds work, so rows are expected to be
    monotone; absolute seconds are hardware-dependent and only reported.
    """
    from facetrt.scenario import load_scenario

    if toggle_sets is None:
        toggle_sets = default_toggle_ladder()
    rows = []
    for name in scenario_names:
        scenario = load_scenario(name) if isinstance(name, (str, Path)) else name
        eng = SweepEngine(scenario)
        cells = {}
        for label, tog in toggle_sets:
            res = run_sweep(scenario, toggles=tog, workers=workers, engine=eng)
            cells[label] = {
                "seconds": res.wall_seconds,
                "stages": dict(res.stage_seconds),
            }
        rows.append((scenario.name, cells))
    return rows


def default_toggle_ladder():
    return [
        ("RT", MechanismToggles(reflection_order=1, edge=True, vertex=False,
                                double_edge=False, edge_vertex=False,
                                vertex_edge=False)),
        ("V", MechanismToggles(reflection_order=1, edge=True, vertex=True,
                               double_edge=False, edge_vertex=False,
                               vertex_edge=False)),
        ("V+EE", MechanismToggles(reflection_order=1, edge=True, vertex=True,
                                  double_edge=True, edge_vertex=False,
                                  vertex_edge=False)),
        ("V+EE+EV+VE", MechanismToggles(reflection_order=1, edge=True, vertex=True,
                                        double_edge=True, edge_vertex=True,
                                        vertex_edge=True)),
    ]


def format_timing_table(rows, toggle_labels=None):
    if not rows:
        return "(no scenarios)"
    labels = toggle_labels or list(rows[0][1].keys())
    lines = ["{:<20s}".format("geometry") + "".join(f"{c:>14s}" for c in labels)]
    for name, cells in rows:
        line = f"{name:<20s}"
        for c in labels:
            line += (
                f"{cells[c]['seconds']:>12.2f} s" if c in cells else f"{'-':>14s}"
            )
        lines.append(line)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# GO boundary location (for continuity checks)
# ---------------------------------------------------------------------------


def find_go_boundaries(engine: SweepEngine, coarse_step_deg=0.25, tol_deg=1.0e-4):
    """Bistatic angles where a GO contribution (LOS or a specular flash)
    switches, located by bisection on the census predicates."""
    sc = engine.scenario
    if sc.observation_kind != "circle":
        raise ValueError("GO boundaries are defined for circle sweeps")
    rho = sc.observation_params["radius"]
    height = sc.observation_params.get("height", 0.0)

    def point(theta_deg):
        rad = np.deg2rad(theta_deg)
        return np.array([-rho * np.cos(rad), rho * np.sin(rad), height])

    def predicates(theta_deg):
        p = point(theta_deg)[None, :]
        los = bool(engine.los_at(p)[0])
        from facetrt.paths import reflection_bundle

        flashes = []
        for f in range(len(engine.mesh.facets)):
            res = reflection_bundle(engine.mesh, f, engine.source, p, engine.occ)
            flashes.append(bool(res["valid"][0]))
        return np.array([los] + flashes, dtype=bool)

    grid = np.arange(0.0, 360.0, coarse_step_deg)
    states = np.stack([predicates(a) for a in grid])
    boundaries = []
    for i in range(len(grid)):
        a0 = grid[i]
        a1 = grid[(i + 1) % len(grid)] if i + 1 < len(grid) else 360.0
        s0 = states[i]
        s1 = states[(i + 1) % len(grid)]
        changed = np.nonzero(s0 != s1)[0]
        if not changed.size:
            continue
        lo, hi = a0, a1
        while hi - lo > tol_deg:
            mid = 0.5 * (lo + hi)
            sm = predicates(mid)
            if np.any(sm[changed] != s0[changed]):
                hi = mid
            else:
                lo = mid
        boundaries.append(0.5 * (lo + hi))
    return sorted(boundaries)
