import csv

import numpy as np
import pytest

from silmorph import evaluation as ev
from silmorph import geometry as geo
from silmorph import shapes
from silmorph.errors import DegenerateCorrespondenceError


def axis_angle_matrix(axis, deg):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    a = np.deg2rad(deg)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * (k @ k)


# ---------------------------------------------------------------------------
# ICP


def test_icp_identity_case(template_mesh):
    index = geo.build_spatial_index(template_mesh)
    res = ev.icp_align(template_mesh, index)
    assert np.abs(res.transform.rotation - np.eye(3)).max() < 1e-9
    assert np.abs(res.transform.translation).max() < 1e-9
    assert res.mean_distance_mm < 1e-9
    assert res.converged


def test_icp_apply_and_recover(template_mesh):
    index = geo.build_spatial_index(template_mesh)
    rng = np.random.default_rng(13)
    for _ in range(5):
        t = geo.RigidTransform(
            axis_angle_matrix(rng.normal(size=3), rng.uniform(0, 20)),
            rng.uniform(-10, 10, 3))
        moved = geo.transform_mesh(template_mesh, t)
        res = ev.icp_align(moved, index)
        inv = t.inverse()
        assert np.abs(res.transform.rotation - inv.rotation).max() < 1e-6
        assert np.abs(res.transform.translation - inv.translation).max() < 1e-6


def test_icp_disjoint_spheres_no_error():
    target = shapes.icosphere(2, radius=1.0)
    moved = geo.transform_mesh(
        shapes.icosphere(2, radius=1.0),
        geo.RigidTransform(np.eye(3), np.array([100.0, 0.0, 0.0])))
    res = ev.icp_align(moved, geo.build_spatial_index(target))
    assert res.converged
    assert np.isfinite(res.mean_distance_mm)


def test_icp_rms_history_non_increasing(template_mesh):
    index = geo.build_spatial_index(template_mesh)
    t = geo.RigidTransform(axis_angle_matrix([1, 2, 3], 15.0),
                           np.array([5.0, -3.0, 2.0]))
    res = ev.icp_align(geo.transform_mesh(template_mesh, t), index)
    h = res.rms_history
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))


def test_icp_degenerate_source():
    tri = geo.TriMesh.from_arrays(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    sphere_index = geo.build_spatial_index(shapes.icosphere(1))
    with pytest.raises(DegenerateCorrespondenceError):
        ev.icp_align(tri, sphere_index)


# ---------------------------------------------------------------------------
# per-vertex errors


def test_vertex_errors_zero_for_identical(template_mesh):
    index = geo.build_spatial_index(template_mesh)
    d = ev.vertex_surface_errors(template_mesh, index)
    assert np.abs(d).max() < 1e-9


def test_vertex_errors_concentric_spheres():
    truth = shapes.icosphere(3, radius=10.0)
    bigger = shapes.icosphere(3, radius=10.5)
    d = ev.vertex_surface_errors(bigger, geo.build_spatial_index(truth))
    assert np.abs(d - 0.5).max() <= 0.05
    inner = shapes.icosphere(3, radius=9.5)
    d2 = ev.vertex_surface_errors(inner, geo.build_spatial_index(truth))
    assert np.abs(d2 + 0.5).max() <= 0.05


def test_vertex_errors_single_inward_dent():
    # flat 5x5 sheet; center vertex pushed 1 mm against the +z normal
    n = 5
    xs, ys = np.meshgrid(np.arange(n, dtype=float),
                         np.arange(n, dtype=float))
    verts = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(n * n)])
    tris = []
    for j in range(n - 1):
        for i in range(n - 1):
            a = j * n + i
            tris.append([a, a + 1, a + n])
            tris.append([a + 1, a + n + 1, a + n])
    truth = geo.TriMesh.from_arrays(verts, np.asarray(tris, dtype=np.int32))
    dented = verts.copy()
    center = (n // 2) * n + n // 2
    dented[center, 2] = -1.0
    morphed = geo.TriMesh.from_arrays(dented, truth.triangles)
    d = ev.vertex_surface_errors(morphed, geo.build_spatial_index(truth))
    assert np.isclose(d[center], -1.0, atol=1e-9)
    others = np.delete(d, center)
    assert np.abs(others).max() < 1e-9


def test_vertex_errors_equal_brute_force(small_template):
    # indexed computation vs exhaustive same-kernel scan, exact
    from conftest import exhaustive_closest

    truth = small_template
    morphed = geo.scale_mesh(truth, 1.03)
    index = geo.build_spatial_index(truth)
    d = ev.vertex_surface_errors(morphed, index)
    for k in range(0, len(morphed.vertices), 7):
        _, _, dist = exhaustive_closest(truth, morphed.vertices[k])
        assert abs(d[k]) == dist


# ---------------------------------------------------------------------------
# reports


def test_error_report_zeros():
    r = ev.error_report([0.0, 0.0, 0.0], "z")
    assert r.rms_mm == 0.0 and r.largest_mm == 0.0


def test_error_report_hand_values():
    r = ev.error_report([3.0, 4.0], "h")
    assert np.isclose(r.rms_mm, np.sqrt(12.5))
    assert r.largest_mm == 4.0
    assert r.largest_vertex == 1


def test_error_report_signed_magnitudes():
    r = ev.error_report([-3.0, 2.0], "s")
    assert r.largest_mm == 3.0
    assert r.largest_vertex == 0


def test_error_report_tie_takes_lowest_index():
    r = ev.error_report([2.0, -2.0, 1.0], "t")
    assert r.largest_vertex == 0


def test_error_report_idempotent_and_homogeneous():
    rng = np.random.default_rng(1)
    d = rng.normal(size=100)
    r = ev.error_report(d, "a")
    again = ev.error_report(r.distances_mm, "a")
    assert again.rms_mm == r.rms_mm and again.largest_mm == r.largest_mm
    scaled = ev.error_report(3.0 * d, "b")
    assert np.isclose(scaled.rms_mm, 3.0 * r.rms_mm)
    assert np.isclose(scaled.largest_mm, 3.0 * r.largest_mm)


def test_error_report_empty_rejected():
    with pytest.raises(ValueError):
        ev.error_report([], "e")


def test_summarize_cohort_single():
    r = ev.error_report([0.3, -0.4], "only")
    s = ev.summarize_cohort([r])
    assert s.rms_std == 0.0 and s.largest_std == 0.0
    assert s.rms_mean == r.rms_mm
    assert s.rms_min <= s.rms_mean <= s.rms_max


def test_summarize_cohort_empty_rejected():
    with pytest.raises(ValueError):
        ev.summarize_cohort([])


# ---------------------------------------------------------------------------
# heatmap export


def test_heatmap_all_zero_uniform_midcolor(tmp_path, unit_cube):
    d = np.zeros(len(unit_cube.vertices))
    ply, csv_path = ev.export_heatmap(unit_cube, d, tmp_path / "h.ply")
    colors = ev.signed_colormap(d, 0.0)
    assert (colors == 255).all()  # white mid-color
    rows = list(csv.reader(open(csv_path)))
    assert rows[0] == ["vertex_index", "signed_distance_mm"]
    assert all(float(r[1]) == 0.0 for r in rows[1:])


def test_heatmap_single_max_red_vertex(tmp_path, unit_cube):
    d = np.zeros(len(unit_cube.vertices))
    d[3] = 2.0
    colors = ev.signed_colormap(d, 2.0)
    reds = np.flatnonzero((colors == [255, 0, 0]).all(axis=1))
    assert reds.tolist() == [3]
    ev.export_heatmap(unit_cube, d, tmp_path / "h.ply", range_mm=2.0)
    text = (tmp_path / "h.ply").read_text().splitlines()
    assert text[0] == "ply"
    assert f"element vertex {len(unit_cube.vertices)}" in text
    assert f"element face {len(unit_cube.triangles)}" in text


def test_heatmap_csv_round_trip(tmp_path, unit_cube):
    rng = np.random.default_rng(5)
    d = rng.normal(scale=0.3, size=len(unit_cube.vertices))
    _, csv_path = ev.export_heatmap(unit_cube, d, tmp_path / "h.ply")
    rows = list(csv.reader(open(csv_path)))[1:]
    back = np.array([float(r[1]) for r in rows])
    assert np.abs(back - d).max() < 1e-6


def test_heatmap_length_mismatch(tmp_path, unit_cube):
    with pytest.raises(ValueError):
        ev.export_heatmap(unit_cube, [0.0, 1.0], tmp_path / "h.ply")


def test_blue_white_red_endpoints():
    colors = ev.signed_colormap(np.array([-1.0, 0.0, 1.0]), 1.0)
    assert colors[0].tolist() == [0, 0, 255]
    assert colors[1].tolist() == [255, 255, 255]
    assert colors[2].tolist() == [255, 0, 0]


# ---------------------------------------------------------------------------
# persistence


def test_report_json_round_trip(tmp_path):
    r = ev.error_report([0.1, -0.7, 0.3], "case9")
    ev.save_report(r, tmp_path / "report.json")
    doc = ev.load_report_summary(tmp_path / "report.json")
    assert doc["case_id"] == "case9"
    assert doc["rms_mm"] == r.rms_mm
    assert doc["largest_mm"] == r.largest_mm
    assert doc["largest_vertex"] == r.largest_vertex


def test_cohort_csv_layout(tmp_path):
    reports = [ev.error_report([v], f"c{k}")
               for k, v in enumerate([0.4, 0.5, 0.6])]
    s = ev.summarize_cohort(reports)
    ev.save_cohort(s, tmp_path / "cohort.csv", tmp_path / "summary.json")
    rows = list(csv.reader(open(tmp_path / "cohort.csv")))
    assert rows[0] == ["case", "rms_mm", "largest_mm"]
    assert len(rows) == 5  # header + 3 cases + summary row
    assert rows[-1][0] == "average"
