"""Declarative scenario definitions: geometry, source, observations, toggles.

Scenario files are INI-style key-value text (one setting per line, one
section per component).  Lengths may be given in meters (``*_m``) or in
wavelengths (``*_wl``), resolved against the scenario frequency.  A set of
canonical scenarios ships with the package.
"""

from __future__ import annotations

import configparser
import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from facetrt.geometry import (
    FacetMesh,
    generate_box_grid,
    generate_fibonacci_sphere,
    generate_plate_sheet,
    generate_prism_cylinder,
    generate_step_sheet,
    load_mesh,
)
from facetrt.oracles import RegionSpec
from facetrt.paths import MechanismToggles, PlaneWaveSource, PointSource


class ScenarioError(ValueError):
    """Invalid or incomplete scenario definition (CLI exit code 2)."""


@dataclass
class Scenario:
    name: str
    frequency: float                     # Hz
    geometry_kind: str
    geometry_params: dict
    source_kind: str                     # plane_wave | point
    polarization: str                    # HH | VV
    source_position: np.ndarray | None
    source_direction: np.ndarray | None
    observation_kind: str                # circle | line
    observation_params: dict
    toggles: MechanismToggles
    regions: RegionSpec
    oracle_kind: str                     # cylinder | sphere | none
    numerics: dict = field(default_factory=dict)

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.frequency

    @property
    def wavenumber(self):
        return 2.0 * np.pi / self.wavelength

    # -- realized pieces ----------------------------------------------------

    def build_mesh(self) -> FacetMesh:
        lam = self.wavelength
        p = self.geometry_params
        kind = self.geometry_kind
        if kind == "prism_cylinder":
            return generate_prism_cylinder(
                int(p["sides"]), p["radius"], p.get("length", 40.0 * lam)
            )
        if kind == "fibonacci_sphere":
            return generate_fibonacci_sphere(int(p["points"]), p["radius"])
        if kind == "box_grid":
            return generate_box_grid(
                (p["size_x"], p["size_y"], p["size_z"]),
                (int(p.get("div_x", 5)), int(p.get("div_y", 5)), int(p.get("div_z", 3))),
            )
        if kind == "step_sheet":
            return generate_step_sheet(
                p["front_height"], p["roof_depth"], p["length"]
            )
        if kind == "plate_sheet":
            mesh = generate_plate_sheet(p["width"], p["height"])
            rot = p.get("rotation")
            if rot is not None:
                mesh = mesh.transformed(rotation=rot)
            if "offset" in p:
                mesh = mesh.transformed(translation=p["offset"])
            return mesh
        if kind == "mesh_file":
            path = p.get("path")
            if not path:
                raise ScenarioError(
                    "geometry kind 'mesh_file' requires a 'path' setting "
                    "(supply your own mesh, e.g. a low-polygon vehicle body)"
                )
            return load_mesh(path)
        raise ScenarioError(f"unknown geometry kind: {kind}")

    def build_source(self):
        pol = self.polarization.upper()
        if self.source_kind == "plane_wave":
            direction = (
                np.array([1.0, 0.0, 0.0])
                if self.source_direction is None
                else self.source_direction / np.linalg.norm(self.source_direction)
            )
            if pol == "VV":
                ref = np.array([0.0, 0.0, 1.0])
            else:
                ref = np.cross(direction, np.array([0.0, 0.0, 1.0]))
                if np.linalg.norm(ref) < 1.0e-9:
                    ref = np.array([0.0, 1.0, 0.0])
            e_vec = ref - (ref @ direction) * direction
            return PlaneWaveSource(direction=direction, polarization=e_vec)
        if self.source_kind == "point":
            if self.source_position is None:
                raise ScenarioError("point source requires a position")
            return PointSource(position=self.source_position, polarization=pol)
        raise ScenarioError(f"unknown source kind: {self.source_kind}")

    def observation_points(self):
        """(points (n,3), angles_deg or None)."""
        p = self.observation_params
        if self.observation_kind == "circle":
            step = float(p["step_deg"])
            if abs(360.0 / step - round(360.0 / step)) > 1.0e-9:
                raise ScenarioError("angular step must divide 360 evenly")
            n = int(round(360.0 / step))
            ang = np.arange(n) * step
            rad = np.deg2rad(ang)
            rho = float(p["radius"])
            height = float(p.get("height", 0.0))
            pts = np.stack(
                [-rho * np.cos(rad), rho * np.sin(rad), np.full(n, height)], axis=1
            )
            return pts, ang
        if self.observation_kind == "line":
            start = np.asarray(p["start"], dtype=float)
            end = np.asarray(p["end"], dtype=float)
            n = int(p["count"])
            t = np.linspace(0.0, 1.0, n)
            pts = start[None, :] + t[:, None] * (end - start)[None, :]
            return pts, None
        raise ScenarioError(f"unknown observation kind: {self.observation_kind}")

    def copol_units(self, points):
        """Per-point co-polarized unit vectors for scalar CSV columns."""
        if self.polarization.upper() == "VV":
            u = np.zeros_like(points)
            u[:, 2] = 1.0
            return u
        radial = points.copy()
        radial[:, 2] = 0.0
        nrm = np.linalg.norm(radial, axis=1, keepdims=True)
        nrm = np.where(nrm > 0.0, nrm, 1.0)
        radial /= nrm
        u = np.cross(np.array([0.0, 0.0, 1.0]), radial)
        return u

    def describe(self):
        out = {
            "scenario": self.name,
            "frequency_hz": self.frequency,
            "wavelength_m": self.wavelength,
            "geometry_kind": self.geometry_kind,
            "source_kind": self.source_kind,
            "polarization": self.polarization,
            "observation_kind": self.observation_kind,
            "mechanisms": self.toggles.label(),
            "reflection_order": self.toggles.reflection_order,
            "oracle": self.oracle_kind,
        }
        for key, val in sorted(self.geometry_params.items()):
            if isinstance(val, (int, float, str)):
                out[f"geometry_{key}"] = val
        for key, val in sorted(self.observation_params.items()):
            if isinstance(val, (int, float, str)):
                out[f"observation_{key}"] = val
        for name, (lo, hi) in self.regions.regions.items():
            out[f"region_{name}"] = f"{lo},{hi}"
        for key, val in sorted(self.numerics.items()):
            out[f"numerics_{key}"] = val
        return out


def _resolve_length(section, base, lam):
    """Value of ``base`` from '<base>_m' or '<base>_wl' keys."""
    if f"{base}_m" in section:
        return float(section[f"{base}_m"])
    if f"{base}_wl" in section:
        return float(section[f"{base}_wl"]) * lam
    return None


def _parse_vector(text):
    return np.array([float(x) for x in text.replace(",", " ").split()])


def parse_scenario(text, name="scenario", base_dir=None):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    try:
        sc = cp["scenario"]
        freq = float(sc["frequency_hz"])
    except KeyError as exc:
        raise ScenarioError(f"missing scenario section/frequency: {exc}") from exc
    if freq <= 0.0:
        raise ScenarioError("frequency must be positive")
    lam = SPEED_OF_LIGHT / freq
    name = sc.get("name", name)

    geo = cp["geometry"] if cp.has_section("geometry") else {}
    kind = geo.get("kind", "prism_cylinder")
    gp = {}
    for base in ("radius", "length", "width", "height", "size_x", "size_y",
                 "size_z", "front_height", "roof_depth"):
        val = _resolve_length(geo, base, lam)
        if val is not None:
            gp[base] = val
    for key in ("sides", "points", "div_x", "div_y", "div_z"):
        if key in geo:
            gp[key] = int(geo[key])
    if "path" in geo:
        path = Path(geo["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        gp["path"] = str(path)
    if "rotation_deg_y" in geo:
        ang = np.deg2rad(float(geo["rotation_deg_y"]))
        ca, sa = np.cos(ang), np.sin(ang)
        gp["rotation"] = np.array([[ca, 0, sa], [0, 1, 0], [-sa, 0, ca]])
    if "offset" in geo:
        gp["offset"] = _parse_vector(geo["offset"]) * (
            lam if geo.get("offset_units", "m") == "wl" else 1.0
        )

    srcs = cp["source"] if cp.has_section("source") else {}
    source_kind = srcs.get("kind", "plane_wave")
    polarization = srcs.get("polarization", "HH").upper()
    if polarization not in ("HH", "VV"):
        raise ScenarioError(f"polarization must be HH or VV, got {polarization}")
    source_position = None
    source_direction = None
    if source_kind == "point":
        pos = srcs.get("position")
        if pos is None:
            raise ScenarioError("point source requires 'position = x y z' (m)")
        source_position = _parse_vector(pos)
    elif "direction" in srcs:
        source_direction = _parse_vector(srcs["direction"])

    ob = cp["observation"] if cp.has_section("observation") else {}
    obs_kind = ob.get("kind", "circle")
    op = {}
    if obs_kind == "circle":
        radius = _resolve_length(ob, "radius", lam)
        if radius is None:
            raise ScenarioError("circle observation requires radius_m or radius_wl")
        op["radius"] = radius
        op["step_deg"] = float(ob.get("step_deg", 0.5))
        height = _resolve_length(ob, "height", lam)
        op["height"] = 0.0 if height is None else height
    elif obs_kind == "line":
        units = lam if ob.get("units", "m") == "wl" else 1.0
        op["start"] = _parse_vector(ob["start"]) * units
        op["end"] = _parse_vector(ob["end"]) * units
        op["count"] = int(ob.get("count", 201))
    else:
        raise ScenarioError(f"unknown observation kind: {obs_kind}")

    mech = cp["mechanisms"] if cp.has_section("mechanisms") else {}

    def flag(key, default):
        return str(mech.get(key, str(default))).strip().lower() in ("1", "true", "yes", "on")

    try:
        toggles = MechanismToggles(
            reflection_order=int(mech.get("reflection_order", 1)),
            edge=flag("edge", True),
            vertex=flag("vertex", True),
            double_edge=flag("double_edge", True),
            edge_vertex=flag("edge_vertex", True),
            vertex_edge=flag("vertex_edge", True),
            refl_diffraction=flag("refl_diffraction", False),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    regions = {}
    if cp.has_section("regions"):
        for rname, spec in cp["regions"].items():
            lo, hi = (float(x) for x in spec.split(","))
            regions[rname] = (lo, hi)
    region_spec = RegionSpec(regions) if regions else RegionSpec()

    oracle_kind = "none"
    if cp.has_section("oracle"):
        oracle_kind = cp["oracle"].get("kind", "none")

    numerics = {}
    if cp.has_section("numerics"):
        for key in ("flatness_deg", "snap", "blend_a_lo", "blend_a_hi"):
            if key in cp["numerics"]:
                numerics[key] = float(cp["numerics"][key])
        if "gfi_table" in cp["numerics"]:
            numerics["gfi_table"] = cp["numerics"]["gfi_table"].strip().lower() in (
                "1", "true", "yes", "on"
            )

    return Scenario(
        name=name,
        frequency=freq,
        geometry_kind=kind,
        geometry_params=gp,
        source_kind=source_kind,
        polarization=polarization,
        source_position=source_position,
        source_direction=source_direction,
        observation_kind=obs_kind,
        observation_params=op,
        toggles=toggles,
        regions=region_spec,
        oracle_kind=oracle_kind,
        numerics=numerics,
    )


def bundled_scenario_names():
    root = importlib.resources.files("facetrt") / "scenarios"
    return sorted(p.name[: -len(".scn")] for p in root.iterdir() if p.name.endswith(".scn"))


def load_scenario(name_or_path):
    """Load a bundled scenario by name or any scenario file by path."""
    path = Path(str(name_or_path))
    if path.exists():
        return parse_scenario(path.read_text(), name=path.stem, base_dir=path.parent)
    res = importlib.resources.files("facetrt") / "scenarios" / f"{name_or_path}.scn"
    if res.is_file():
        return parse_scenario(res.read_text(), name=str(name_or_path))
    raise ScenarioError(
        f"scenario not found: {name_or_path!r} "
        f"(bundled: {', '.join(bundled_scenario_names())})"
    )
