import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfpart.errors import InvalidArgument, UndefinedParticipation
from surfpart.field_solver import MaterialStack, solve
from surfpart.geometry import build_layout, parallel_plate_layout, preset
from surfpart.mesh import MeshControls, generate_mesh
from surfpart.participation import (
    ParticipationReport, ParticipationWarning, bulk_participation, cutoff_sensitivity, evaluate,
    interface_samples, participations, surface_participation, transform_field,
)

from conftest import COARSE, DRIVE, small_idc

unit_angles = st.floats(0, 2 * math.pi)
components = st.floats(-1e6, 1e6)
perms = st.floats(1.0, 20.0)


def _unit(theta):
    return np.array([math.cos(theta), math.sin(theta)])


def test_transform_tangential_unchanged():
    out = transform_field([3.0, 0.0], [0.0, 1.0], 5.0, 11.45)
    assert np.allclose(out, [3.0, 0.0], rtol=0, atol=0)


def test_transform_normal_substrate_side():
    out = transform_field([0.0, 2.0], [0.0, 1.0], 5.0, 11.45)
    assert np.linalg.norm(out) == pytest.approx(2.29 * 2.0, rel=1e-14)


def test_transform_normal_vacuum_side():
    out = transform_field([0.0, -7.0], [0.0, -1.0], 5.0, 1.0)
    assert np.linalg.norm(out) == pytest.approx(0.2 * 7.0, rel=1e-14)


def test_transform_rejects_bad_input():
    with pytest.raises(InvalidArgument):
        transform_field([1.0, 0.0], [0.0, 1.1], 5.0, 1.0)
    with pytest.raises(InvalidArgument):
        transform_field([1.0, 0.0], [0.0, 1.0], 0.5, 1.0)


@given(theta=unit_angles, ex=components, ey=components, eps=perms)
def test_transform_equal_permittivities_is_identity(theta, ex, ey, eps):
    E = np.array([ex, ey])
    assert np.allclose(transform_field(E, _unit(theta), eps, eps), E, rtol=1e-12, atol=1e-12 * np.abs(E).max())


@given(theta=unit_angles, ex=components, ey=components, e1=perms, e2=perms)
def test_transform_matches_boundary_conditions(theta, ex, ey, e1, e2):
    n = _unit(theta)
    t = np.array([-n[1], n[0]])
    E2 = np.array([ex, ey])
    E1 = transform_field(E2, n, e1, e2)
    scale = max(1.0, np.abs(E2).max())
    assert E1 @ t == pytest.approx(E2 @ t, abs=1e-9 * scale)
    assert e1 * (E1 @ n) == pytest.approx(e2 * (E2 @ n), abs=1e-9 * scale * e2)
    # tangential action is idempotent: applying twice with the inverse ratio restores E2
    assert np.allclose(transform_field(E1, n, e2, e1), E2, atol=1e-9 * scale)


def test_transform_vectorised():
    E = np.array([[1.0, 2.0], [3.0, -4.0]])
    n = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = transform_field(E, n, 5.0, 11.45)
    assert np.allclose(out, [[1.0, 2.0 * 2.29], [3.0 * 2.29, -4.0]])


def _plate_face(sol, y):
    layout_segments = [k for k in np.unique(sol.mesh.edge_segments[sol.mesh.edge_tags == "SM"])]
    v = sol.mesh.vertices
    picked = []
    for k in layout_segments:
        edges = sol.mesh.boundary_edges[sol.mesh.edge_segments == k]
        if np.allclose(v[edges][:, :, 1], y):
            picked.append(int(k))
    assert len(picked) == 1
    return picked


def test_parallel_plate_oracle(plate_solution):
    samples = interface_samples(plate_solution, "SM", segments=_plate_face(plate_solution, 0.0))
    assert samples.arc_weight.sum() == pytest.approx(100e-6, rel=1e-12)
    p = surface_participation(samples, 5.0, plate_solution, cutoff=0.0)
    assert p == pytest.approx(11.45 / (5.0 * 10e-6), rel=1e-9)
    assert p == pytest.approx(2.29e5, rel=1e-9)


def test_parallel_plate_both_faces(plate_solution):
    samples = interface_samples(plate_solution, "SM")
    assert surface_participation(samples, 5.0, plate_solution, 0.0) == pytest.approx(2 * 2.29e5, rel=1e-9)


def test_plate_cutoff_independent(plate_solution):
    # the plates end on the outer box, so there are no conductor corners to cut around
    assert plate_solution.mesh.corners.size == 0
    samples = interface_samples(plate_solution, "SM", segments=_plate_face(plate_solution, 0.0))
    rows = cutoff_sensitivity(plate_solution, samples, 5.0, [0.0, 1.0, 10.0, 100.0])
    assert [c for c, _ in rows] == [0.0, 1.0, 10.0, 100.0]
    assert len({p for _, p in rows}) == 1
    single = cutoff_sensitivity(plate_solution, samples, 5.0, [3.0])
    assert single == [(3.0, surface_participation(samples, 5.0, plate_solution, 3.0))]


def test_cutoff_removes_arc_near_corners(idc_solution):
    samples = interface_samples(idc_solution, "SM")
    values = [p for _, p in cutoff_sensitivity(idc_solution, samples, 5.0, [0.0, 1.0, 10.0, 100.0])]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_zero_field_gives_zero(plate_solution):
    samples = interface_samples(plate_solution, "SM")
    still = dataclasses.replace(samples, E2=np.zeros_like(samples.E2))
    assert surface_participation(still, 5.0, plate_solution) == 0.0


def test_empty_samples_warn(plate_solution):
    samples = interface_samples(plate_solution, "MA")
    assert len(samples) == 0
    with pytest.warns(ParticipationWarning):
        assert surface_participation(samples, 5.0, plate_solution) == 0.0


def test_zero_energy_is_undefined():
    mesh = generate_mesh(build_layout(small_idc(), 0.0), COARSE)
    sol = solve(mesh, MaterialStack(), {"P": 0.0, "N": 0.0})
    with pytest.raises(UndefinedParticipation):
        surface_participation(interface_samples(sol, "SM"), 5.0, sol)
    with pytest.raises(UndefinedParticipation):
        bulk_participation(sol, "substrate")


def test_negative_cutoff_and_unknown_tags(plate_solution):
    samples = interface_samples(plate_solution, "SM")
    with pytest.raises(InvalidArgument):
        surface_participation(samples, 5.0, plate_solution, cutoff=-1.0)
    with pytest.raises(InvalidArgument):
        interface_samples(plate_solution, "XY")
    with pytest.raises(InvalidArgument):
        bulk_participation(plate_solution, "metal")


def test_sample_invariants(idc_solution):
    layout = build_layout(small_idc(), 300.0)
    for tag in ("SM", "SA", "MA"):
        s = interface_samples(idc_solution, tag)
        assert np.allclose(np.hypot(*s.normal.T), 1.0, atol=1e-14)
        assert set(np.unique(s.side2_eps)) == ({11.45} if tag != "MA" else {1.0})
        for k in np.unique(s.segment):
            assert s.arc_weight[s.segment == k].sum() == pytest.approx(layout.segments[k].length, rel=1e-9)
        # the normal points away from the side-2 element
        inward = idc_solution.mesh.centroids()[s.element] - s.position
        assert (np.einsum("ij,ij->i", inward, s.normal) < 0).all()


def test_sidewall_exclusion(idc_solution):
    full = interface_samples(idc_solution, "SA")
    flat = interface_samples(idc_solution, "SA", include_sidewalls=False)
    assert 0 < len(flat) < len(full)
    assert not (flat.kind == "sidewall").any()


def test_bulk_partition(idc_solution):
    p_sub = bulk_participation(idc_solution, "substrate")
    p_vac = bulk_participation(idc_solution, "vacuum")
    assert 0 < p_sub < 1 and 0 < p_vac < 1
    assert p_sub + p_vac == pytest.approx(1.0, abs=1e-12)


def test_all_vacuum_box():
    layout = parallel_plate_layout(50.0, [("vacuum", 5.0)])
    sol = solve(generate_mesh(layout, MeshControls(h_max=5.0, corner_h_min=100.0)), MaterialStack(), DRIVE)
    assert bulk_participation(sol, "vacuum") == 1.0
    assert bulk_participation(sol, "substrate") == 0.0


@settings(max_examples=8, deadline=None)
@given(scale=st.floats(0.01, 100.0))
def test_voltage_scale_invariance(idc_solution, scale):
    sol = solve(idc_solution.mesh, MaterialStack(), {k: v * scale for k, v in DRIVE.items()})
    base_pt, base_bulk = participations(idc_solution)
    pt, bulk = participations(sol)
    for tag in pt:
        assert pt[tag] == pytest.approx(base_pt[tag], rel=1e-9)
    assert bulk["substrate"] == pytest.approx(base_bulk["substrate"], rel=1e-9)


def test_ordering_small_design(idc_solution):
    pt, _ = participations(idc_solution)
    assert pt["SM"] > pt["SA"] > pt["MA"] > 0


def test_perturbative_guard():
    layout = parallel_plate_layout(100.0, [("substrate", 10.0)])
    with pytest.warns(ParticipationWarning):
        evaluate(layout, MaterialStack(layer_thicknesses=500.0), MeshControls(h_max=2.0, corner_h_min=100.0))


def test_report_row_and_convergence():
    layout = build_layout(small_idc(), 300.0)
    controls = MeshControls(COARSE.h_max, COARSE.corner_h_min, COARSE.grading_ratio, max_refine_passes=1)
    report, sol = evaluate(layout, controls=controls, design="custom")
    assert set(report.mesh_convergence) == {"SM", "SA", "MA", "substrate"}
    assert all(0 <= v < 0.2 for v in report.mesh_convergence.values())
    row = dict(zip(ParticipationReport.CSV_COLUMNS, report.row()))
    assert row["design"] == "custom" and row["trench_nm"] == 300.0 and row["cutoff_nm"] == 1.0
    assert row["p_sub"] + row["p_vac"] == pytest.approx(1.0, abs=1e-12)
    assert report.n_vertices == sol.mesh.n_vertices
    assert report.capacitance > 0


def test_mod_b_cutoff_logarithmic():
    layout = build_layout(preset("B").params, 0.0)
    sol = solve(generate_mesh(layout, MeshControls(h_max=200.0, corner_h_min=0.5)), MaterialStack(),
                {"P": 0.5, "N": -0.5, "ground": 0.0})
    samples = interface_samples(sol, "SM")
    rows = cutoff_sensitivity(sol, samples, 5.0, [1.0, 2.0, 4.0, 8.0])
    values = np.array([p for _, p in rows])
    assert (np.diff(values) < 0).all()
    x = np.log([c for c, _ in rows])
    slope, intercept = np.polyfit(x, values, 1)
    resid = values - (slope * x + intercept)
    r2 = 1 - (resid @ resid) / ((values - values.mean()) @ (values - values.mean()))
    assert r2 > 0.98


def test_mod_e_substrate_participation():
    layout = build_layout(preset("E").params, 50.0)
    sol = solve(generate_mesh(layout, MeshControls()), MaterialStack(), {"P": 0.5, "N": -0.5, "ground": 0.0})
    assert 0.85 < bulk_participation(sol, "substrate") < 0.93
