"""Ray-tracing prediction of near-field bistatic scattering from faceted PEC bodies.

The engine traces geometric interaction paths (reflection, edge diffraction,
corner diffraction, double-edge and edge-corner cascades) over triangular
meshes, evaluates uniform diffraction coefficients along each path, and ships
analytical eigenfunction references (circular cylinder, sphere) for
validation of the whole pipeline.
"""

from facetrt.geometry import (
    FacetMesh,
    Wedge,
    Corner,
    DiscretizationReport,
    load_mesh,
    save_mesh,
    generate_prism_cylinder,
    generate_fibonacci_sphere,
    generate_box_grid,
    generate_plate_sheet,
    extract_wedges_and_corners,
    discretization_report,
)
from facetrt.paths import (
    PlaneWaveSource,
    PointSource,
    InteractionNode,
    InteractionPath,
    MechanismToggles,
)
from facetrt.oracles import (
    cylinder_scattered_field,
    sphere_scattered_field,
    rmse_db,
    RegionSpec,
)
from facetrt.scenario import Scenario, load_scenario, bundled_scenario_names
from facetrt.sweep import run_sweep, SweepResult, compare, timing_report

__version__ = "0.1.0"

__all__ = [
    "FacetMesh",
    "Wedge",
    "Corner",
    "DiscretizationReport",
    "load_mesh",
    "save_mesh",
    "generate_prism_cylinder",
    "generate_fibonacci_sphere",
    "generate_box_grid",
    "generate_plate_sheet",
    "extract_wedges_and_corners",
    "discretization_report",
    "PlaneWaveSource",
    "PointSource",
    "InteractionNode",
    "InteractionPath",
    "MechanismToggles",
    "cylinder_scattered_field",
    "sphere_scattered_field",
    "rmse_db",
    "RegionSpec",
    "Scenario",
    "load_scenario",
    "bundled_scenario_names",
    "run_sweep",
    "SweepResult",
    "compare",
    "timing_report",
]
