"""Scenario parsing, sweep execution, CSV emission, compare, CLI."""

import subprocess
import sys

import numpy as np
import pytest

from facetrt.oracles import RegionSpec
from facetrt.paths import MechanismToggles
from facetrt.scenario import ScenarioError, bundled_scenario_names, load_scenario, parse_scenario
from facetrt.sweep import (
    SweepEngine,
    compare,
    emit_csv,
    emit_outputs,
    format_timing_table,
    oracle_result,
    oracle_sweep,
    read_csv,
    run_sweep,
    timing_report,
)

SMALL_CYL = """
[scenario]
name = test_cyl
frequency_hz = 2.0e9

[geometry]
kind = prism_cylinder
sides = 10
radius_wl = 3
length_wl = 10

[source]
kind = plane_wave
polarization = HH

[observation]
kind = circle
radius_wl = 15
step_deg = 2.0

[mechanisms]
reflection_order = 1

[oracle]
kind = cylinder
"""


@pytest.fixture(scope="module")
def small_result():
    scenario = parse_scenario(SMALL_CYL)
    return scenario, run_sweep(scenario)


class TestScenarioParsing:
    def test_bundled_list(self):
        names = bundled_scenario_names()
        for expected in ("cylinder12_hh", "cylinder28_hh", "cylinder50_hh",
                         "cylinder18_small_hh", "cylinder60_hh", "sphere100_hh",
                         "sphere230_hh", "sphere500_hh", "two_edge_fig1",
                         "car_lowpoly", "cylinder28_vv"):
            assert expected in names

    def test_all_bundled_parse_and_build(self):
        for name in bundled_scenario_names():
            sc = load_scenario(name)
            mesh = sc.build_mesh()
            assert len(mesh.facets) >= 2
            sc.build_source()
            pts, _ = sc.observation_points()
            assert len(pts) > 0

    def test_wavelength(self):
        sc = parse_scenario(SMALL_CYL)
        assert abs(sc.wavelength - 0.14990) < 1.0e-4

    def test_step_must_divide(self):
        bad = SMALL_CYL.replace("step_deg = 2.0", "step_deg = 0.7")
        sc = parse_scenario(bad)
        with pytest.raises(ScenarioError):
            sc.observation_points()

    def test_invalid_toggles(self):
        bad = SMALL_CYL + "\n[mechanisms]\nedge = false\n"
        bad = SMALL_CYL.replace(
            "[mechanisms]\nreflection_order = 1",
            "[mechanisms]\nreflection_order = 1\nedge = false\ndouble_edge = true",
        )
        with pytest.raises(ScenarioError):
            parse_scenario(bad)

    def test_missing_frequency(self):
        with pytest.raises(ScenarioError):
            parse_scenario("[scenario]\nname = x\n")

    def test_car_template_requires_mesh(self):
        sc = load_scenario("car_lowpoly")
        text_missing = """
[scenario]
name = car
frequency_hz = 2e9
[geometry]
kind = mesh_file
[source]
kind = point
position = -20 0 0.6
[observation]
kind = circle
radius_m = 20
step_deg = 10
"""
        sc2 = parse_scenario(text_missing)
        with pytest.raises(ScenarioError):
            sc2.build_mesh()


class TestSweepAndCsv:
    def test_row_count_and_schema(self, small_result, tmp_path):
        scenario, result = small_result
        path = emit_csv(result, tmp_path / "sweep.csv")
        lines = path.read_text().splitlines()
        header = [ln for ln in lines if not ln.startswith("#")][0]
        assert header.split(",") == [
            "angle_deg", "Es_re", "Es_im", "Et_re", "Et_im", "Es_db", "Et_db",
            "n_paths_LOS", "n_paths_R", "n_paths_E", "n_paths_V", "n_paths_EE",
            "n_paths_EV", "n_paths_VE",
        ]
        data_rows = [ln for ln in lines if ln and not ln.startswith("#")][1:]
        assert len(data_rows) == 180
        meta_rows = [ln for ln in lines if ln.startswith("# ")]
        assert meta_rows

    def test_metadata_complete(self, small_result, tmp_path):
        scenario, result = small_result
        path = emit_csv(result, tmp_path / "sweep.csv")
        _, meta = read_csv(path)
        for key in ("mechanisms", "flatness_deg", "blend_window_a",
                    "region_backscatter", "region_shadow", "wedges", "corners",
                    "frequency_hz", "snap_fraction"):
            assert key in meta, key

    def test_round_trip_rmse_identical(self, small_result, tmp_path):
        scenario, result = small_result
        path = emit_csv(result, tmp_path / "sweep.csv")
        ref = oracle_sweep(scenario)
        direct, _ = compare(result, ref, regions=scenario.regions)
        from_csv, _ = compare(path, ref, regions=scenario.regions)
        for region in direct:
            assert direct[region]["rmse_db"] == from_csv[region]["rmse_db"]

    def test_compare_self_zero(self, small_result):
        _, result = small_result
        table, _ = compare(result, result)
        assert all(v["rmse_db"] == 0.0 for v in table.values())

    def test_total_equals_scattered_plus_incident(self, small_result):
        _, result = small_result
        total = result.e_scattered + result.e_incident * result.los[:, None]
        assert np.allclose(result.e_total, total)
        blocked = ~result.los
        assert np.allclose(result.e_total[blocked], result.e_scattered[blocked])

    def test_determinism_byte_identical(self, tmp_path):
        scenario = parse_scenario(SMALL_CYL)
        p1 = emit_csv(run_sweep(scenario), tmp_path / "a.csv")
        p2 = emit_csv(run_sweep(scenario), tmp_path / "b.csv")
        assert p1.read_bytes() == p2.read_bytes()

    def test_census_monotone_in_toggles(self):
        scenario = parse_scenario(SMALL_CYL)
        eng = SweepEngine(scenario)
        lean = run_sweep(scenario, toggles=MechanismToggles(1, True, True, False, False, False),
                         engine=eng)
        full = run_sweep(scenario, toggles=MechanismToggles(1, True, True, True, True, True),
                         engine=eng)
        for key in ("LOS", "R", "E", "V"):
            assert np.all(full.census[key] == lean.census[key])
        assert full.census["EE"].sum() >= 0
        assert np.all(full.census["EE"] >= lean.census["EE"])

    def test_shadow_sentinel(self):
        # order-1 mechanisms on an over-discretized body leave deep-shadow
        # points unreachable: the dB column carries the -999 floor
        text = SMALL_CYL.replace("sides = 10", "sides = 40").replace(
            "[mechanisms]\nreflection_order = 1",
            "[mechanisms]\nreflection_order = 1\nvertex = false\n"
            "double_edge = false\nedge_vertex = false\nvertex_edge = false",
        )
        scenario = parse_scenario(text)
        result = run_sweep(scenario)
        deep = np.abs(result.angles_deg - 180.0) < 3.0
        assert np.any(result.et_db[deep] == -999.0)

    def test_oracle_result_packaging(self, small_result):
        scenario, _ = small_result
        oresult = oracle_result(scenario)
        assert oresult.metadata["oracle_certificate_ok"] in (True, "True")
        assert np.all(oresult.los)

    def test_emit_outputs_files(self, small_result, tmp_path):
        scenario, result = small_result
        written = emit_outputs(result, tmp_path, figures=True)
        names = {p.name for p in written}
        assert f"{result.name}.csv" in names
        assert f"{result.name}_fields.png" in names
        assert f"{result.name}_census.png" in names
        assert f"{result.name}_scattered_db.dat" in names


class TestTiming:
    def test_empty(self):
        assert timing_report([]) == []
        assert "no scenarios" in format_timing_table([])

    def test_ladder_runs(self):
        text = SMALL_CYL.replace("step_deg = 2.0", "step_deg = 10.0")
        scenario = parse_scenario(text)
        rows = timing_report([scenario])
        assert len(rows) == 1
        cells = rows[0][1]
        assert list(cells.keys()) == ["RT", "V", "V+EE", "V+EE+EV+VE"]
        assert all(c["seconds"] >= 0.0 for c in cells.values())
        table = format_timing_table(rows)
        assert "V+EE+EV+VE" in table


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "facetrt.cli", *args],
            capture_output=True, text=True, timeout=500,
        )

    def test_list_scenarios(self):
        proc = self.run_cli("list-scenarios")
        assert proc.returncode == 0
        assert "cylinder28_hh" in proc.stdout

    def test_unknown_scenario_exit_code(self):
        proc = self.run_cli("run", "not_a_scenario")
        assert proc.returncode == 2

    def test_oracle_verb(self, tmp_path):
        proc = self.run_cli(
            "oracle", "cylinder", "--radius-wl", "3", "--distance-wl", "15",
            "--step-deg", "5", "-o", str(tmp_path),
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "cylinder_oracle.csv").exists()

    def test_report_discretization(self, tmp_path):
        from facetrt.geometry import generate_prism_cylinder, save_mesh

        mesh = generate_prism_cylinder(28, 12.8 * 0.14990, 40 * 0.14990)
        path = save_mesh(mesh, tmp_path / "c28.mesh")
        proc = self.run_cli("report-discretization", str(path), "2.0e9",
                            "--curvature-radius-m", str(12.8 * 0.14990))
        assert proc.returncode == 0, proc.stderr
        assert "adequate" in proc.stdout

    def test_run_and_compare_roundtrip(self, tmp_path):
        scn = tmp_path / "tiny.scn"
        scn.write_text(SMALL_CYL.replace("step_deg = 2.0", "step_deg = 5.0"))
        proc = self.run_cli("run", str(scn), "-o", str(tmp_path / "out"),
                            "--compare-oracle", "--no-figures")
        assert proc.returncode == 0, proc.stderr
        assert "backscatter" in proc.stdout
        csv_path = tmp_path / "out" / "test_cyl.csv"
        assert csv_path.exists()
        proc2 = self.run_cli("compare", str(csv_path), str(csv_path))
        assert proc2.returncode == 0, proc2.stderr
