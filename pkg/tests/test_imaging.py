import json

import numpy as np
import pytest

from silmorph import geometry as geo
from silmorph import imaging as im
from silmorph import shapes
from silmorph.errors import (
    EmptyContourError,
    EmptyFootprintError,
    EmptyMaskError,
    MeshBehindSourceError,
    MeshLoadError,
)


def face_on_pose(depth=500.0):
    return geo.RigidTransform(np.eye(3), np.array([0.0, 0.0, depth]))


def blob_mask(seed, size=96):
    """Random union of discs: silhouette-like test masks."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    fg = np.zeros((size, size), dtype=bool)
    cx0, cy0 = rng.uniform(30, size - 30, 2)
    for _ in range(rng.integers(2, 6)):
        cx = cx0 + rng.uniform(-12, 12)
        cy = cy0 + rng.uniform(-12, 12)
        r = rng.uniform(6, 16)
        fg |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r ** 2
    return im.Mask(size, size, np.where(fg, 255, 0).astype(np.uint8))


# ---------------------------------------------------------------------------
# projection


def test_axial_ray_hits_principal_point():
    cam = im.Camera(sdd_mm=900.0, pitch_mm=0.3, width_px=640, height_px=480)
    for depth in (10.0, 450.0, 2000.0):
        px = im.project_point(cam, face_on_pose(depth), [0.0, 0.0, 0.0])
        assert np.array_equal(px, np.asarray(cam.principal_px))


def test_magnification_two():
    # similar triangles: 10 mm at depth 500 with SDD 1000 -> 20 mm = 20 px
    cam = im.Camera(sdd_mm=1000.0, pitch_mm=1.0, width_px=256, height_px=256)
    px = im.project_point(cam, face_on_pose(500.0), [10.0, 0.0, 0.0])
    assert np.allclose(px - np.asarray(cam.principal_px), [20.0, 0.0])


def test_point_at_source_rejected():
    cam = im.Camera()
    with pytest.raises(MeshBehindSourceError):
        im.project_point(cam, face_on_pose(0.0), [0.0, 0.0, 0.0])
    with pytest.raises(MeshBehindSourceError):
        im.project_point(cam, face_on_pose(-5.0), [1.0, 1.0, 0.0])


def test_camera_validation():
    with pytest.raises(ValueError):
        im.Camera(sdd_mm=-1.0)
    with pytest.raises(ValueError):
        im.Camera(principal_px=(5000.0, 0.0))


def test_camera_json_round_trip(tmp_path):
    cam = im.Camera(sdd_mm=950.0, pitch_mm=0.4, width_px=800, height_px=600,
                    principal_px=(399.5, 299.5))
    im.save_camera(cam, tmp_path / "cam.json")
    assert im.load_camera(tmp_path / "cam.json") == cam


# ---------------------------------------------------------------------------
# rendering


def test_plate_area_matches_analytic():
    cam = im.Camera(sdd_mm=1000.0, pitch_mm=1.0, width_px=256, height_px=256)
    plate = shapes.box((20.0, 20.0, 0.5))
    mask = im.render_silhouette(cam, face_on_pose(500.0), plate)
    area = mask.foreground_count
    assert abs(area - 1600) <= 0.02 * 1600


def test_render_footprint_outside_image():
    cam = im.Camera(sdd_mm=1000.0, pitch_mm=1.0, width_px=64, height_px=64)
    plate = shapes.box((5.0, 5.0, 0.5))
    off = geo.RigidTransform(np.eye(3), np.array([500.0, 0.0, 500.0]))
    with pytest.raises(EmptyFootprintError):
        im.render_silhouette(cam, off, plate)


def test_render_mesh_behind_source():
    cam = im.Camera()
    plate = shapes.box((5.0, 5.0, 0.5))
    with pytest.raises(MeshBehindSourceError):
        im.render_silhouette(cam, face_on_pose(-100.0), plate)


def test_render_shift_equivariance():
    cam = im.Camera(sdd_mm=1000.0, pitch_mm=1.0, width_px=256, height_px=256)
    plate = shapes.box((20.0, 20.0, 0.5))
    k = 7  # pixels; at magnification 2 and pitch 1, 1 px = 0.5 mm in-plane
    mm = k * cam.pitch_mm * 500.0 / cam.sdd_mm
    m0 = im.render_silhouette(cam, face_on_pose(500.0), plate)
    shifted_pose = geo.RigidTransform(np.eye(3), np.array([mm, 0.0, 500.0]))
    m1 = im.render_silhouette(cam, shifted_pose, plate)
    assert np.array_equal(np.roll(m0.data, k, axis=1), m1.data)


def test_render_deterministic(template_mesh, camera_512, true_pose):
    a = im.render_silhouette(camera_512, true_pose, template_mesh)
    b = im.render_silhouette(camera_512, true_pose, template_mesh)
    assert a.data.tobytes() == b.data.tobytes()


def test_mask_validation():
    with pytest.raises(ValueError):
        im.Mask(4, 4, np.full((4, 4), 7, dtype=np.uint8))
    with pytest.raises(ValueError):
        im.Mask(4, 5, np.zeros((4, 4), dtype=np.uint8))


# ---------------------------------------------------------------------------
# contours


def test_contour_3x3_block():
    data = np.zeros((5, 5), dtype=np.uint8)
    data[1:4, 1:4] = 255
    ring = im.extract_contour(im.Mask(5, 5, data))
    # hand-enumerated boundary, counterclockwise from topmost-then-leftmost
    assert ring.points.tolist() == [
        [1, 1], [2, 1], [3, 1], [3, 2], [3, 3], [2, 3], [1, 3], [1, 2]]
    assert ring.closed and not ring.subpixel and not ring.fragmented


def test_contour_single_pixel():
    data = np.zeros((5, 5), dtype=np.uint8)
    data[2, 3] = 255
    ring = im.extract_contour(im.Mask(5, 5, data))
    assert ring.points.tolist() == [[3, 2]]


def test_contour_empty_mask_rejected():
    with pytest.raises(EmptyMaskError):
        im.extract_contour(im.Mask(4, 4, np.zeros((4, 4), dtype=np.uint8)))


def test_contour_largest_component_with_flag():
    data = np.zeros((32, 32), dtype=np.uint8)
    data[2:5, 2:5] = 255        # 9 px
    data[10:20, 10:20] = 255    # 100 px, wins
    ring = im.extract_contour(im.Mask(32, 32, data))
    assert ring.fragmented
    assert ring.points[:, 0].min() >= 10 and ring.points[:, 1].min() >= 10


def test_contour_one_pixel_thickness_properties():
    for seed in range(8):
        mask = blob_mask(seed)
        ring = im.extract_contour(mask)
        fg = mask.data > 0
        pts = ring.points
        h, w = fg.shape
        for x, y in pts:
            assert fg[y, x]
            neighbors = []
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nx, ny = x + dx, y + dy
                neighbors.append(fg[ny, nx]
                                 if 0 <= nx < w and 0 <= ny < h else False)
            assert not all(neighbors), "contour pixel has no background 4-neighbor"
        # closed traversal: consecutive points (including wrap) 8-connected
        nxt = np.roll(pts, -1, axis=0)
        step = np.abs(nxt - pts).max(axis=1)
        assert (step == 1).all()
        # no repeated point except implicit closure
        assert len(np.unique(pts, axis=0)) == len(pts)
        # counterclockwise: positive shoelace area
        x, y = pts[:, 0], pts[:, 1]
        area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert area2 > 0
        # starts at topmost-then-leftmost boundary pixel
        ys, xs = np.nonzero(fg)
        assert pts[0, 1] == ys.min()
        assert pts[0, 0] == xs[ys == ys.min()].min()


def test_contour_interior_ring_at_least_8_points():
    # any mask with an interior pixel has a boundary ring of >= 8 pixels
    for seed in (3, 4):
        mask = blob_mask(seed)
        fg = mask.data > 0
        interior = (fg[:-2, 1:-1] & fg[2:, 1:-1]
                    & fg[1:-1, :-2] & fg[1:-1, 2:]) & fg[1:-1, 1:-1]
        assert interior.any()
        assert len(im.extract_contour(mask)) >= 8


def test_contour_json_round_trip(tmp_path):
    mask = blob_mask(2)
    ring = im.extract_contour(mask)
    im.save_contour(ring, tmp_path / "c.json")
    back = im.load_contour(tmp_path / "c.json")
    assert np.array_equal(back.points, ring.points)
    assert back.closed == ring.closed


def test_contour_rejects_empty_and_disconnected():
    with pytest.raises(EmptyContourError):
        im.Contour(points=np.zeros((0, 2), dtype=np.int32))
    with pytest.raises(ValueError):
        im.Contour(points=np.array([[0, 0], [5, 5]], dtype=np.int32))


def test_boundary_pixels_definition():
    mask = blob_mask(5)
    fg = mask.data > 0
    got = {(int(x), int(y)) for x, y in im.boundary_pixels(mask)}
    h, w = fg.shape
    expected = set()
    for y in range(h):
        for x in range(w):
            if not fg[y, x]:
                continue
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nx, ny = x + dx, y + dy
                if not (0 <= nx < w and 0 <= ny < h) or not fg[ny, nx]:
                    expected.add((x, y))
                    break
    assert got == expected


# ---------------------------------------------------------------------------
# views


def test_standard_views():
    views = im.standard_views()
    assert len(views) == 4
    names = {v.name for v in views}
    assert names == {"ap", "ml", "rot+45", "rot-45"}
    angles = {v.name: v.angle_deg for v in views}
    assert angles["ap"] == 0.0
    assert angles["ml"] == 90.0
    assert {a for a in angles.values()} == {0.0, 90.0, 45.0, -45.0}


def test_compose_view_preserves_depth(true_pose):
    for angle in (0.0, 90.0, 45.0, -45.0):
        composed = im.compose_view(true_pose, angle)
        assert np.array_equal(composed.translation, true_pose.translation)
    assert np.allclose(im.compose_view(true_pose, 0.0).rotation,
                       true_pose.rotation)


# ---------------------------------------------------------------------------
# synthetic cases


def test_synthetic_case_self_contours(template_mesh, camera_512, true_pose):
    case = im.generate_synthetic_case(template_mesh, 1.0, camera_512,
                                      true_pose)
    for record in case.views:
        mask = im.render_silhouette(record.camera, record.pose, template_mesh)
        own = im.extract_contour(mask)
        assert np.array_equal(own.points, record.contour.points)


def test_synthetic_case_scale_identity(template_mesh, camera_512, true_pose):
    case = im.generate_synthetic_case(template_mesh, 1.10, camera_512,
                                      true_pose)
    d0 = geo.bounding_box(template_mesh).diagonal
    d1 = geo.bounding_box(case.truth).diagonal
    assert abs(d1 - 1.10 * d0) < 1e-9


def test_synthetic_case_four_distinct_views(template_mesh, camera_512,
                                            true_pose):
    case = im.generate_synthetic_case(template_mesh, 1.0, camera_512,
                                      true_pose)
    names = [r.view.name for r in case.views]
    assert len(set(names)) == 4
    for r in case.views:
        assert r.mask.width == r.camera.width_px
        assert r.mask.height == r.camera.height_px


def test_synthetic_case_noise_stays_within_one_pixel(template_mesh,
                                                     camera_512, true_pose):
    clean = im.generate_synthetic_case(template_mesh, 1.0, camera_512,
                                       true_pose)
    noisy = im.generate_synthetic_case(
        template_mesh, 1.0, camera_512, true_pose,
        noise=im.NoiseConfig(boundary_px=1, seed=3))
    for c, n in zip(clean.views, noisy.views):
        a = c.mask.data > 0
        b = n.mask.data > 0
        changed = a ^ b
        if changed.any():
            # every changed pixel touches the clean boundary
            ys, xs = np.nonzero(changed)
            bp = im.boundary_pixels(c.mask)
            from scipy.spatial import cKDTree
            d, _ = cKDTree(bp).query(np.column_stack([xs, ys]))
            assert d.max() <= 1.5


# ---------------------------------------------------------------------------
# COCO export


def test_coco_bbox_of_block():
    data = np.zeros((8, 8), dtype=np.uint8)
    data[1:4, 1:4] = 255
    doc = im.export_coco([("img0.png", im.Mask(8, 8, data), "femur")])
    assert doc["annotations"][0]["bbox"] == [1, 1, 3, 3]
    assert doc["annotations"][0]["category_id"] == 1
    assert {c["name"] for c in doc["categories"]} == {"femur", "tibia"}


def test_coco_two_masks_sequential_ids():
    masks = [blob_mask(0), blob_mask(1)]
    doc = im.export_coco([("a.png", masks[0], "femur"),
                          ("b.png", masks[1], "tibia")])
    assert [img["id"] for img in doc["images"]] == [1, 2]
    assert [a["id"] for a in doc["annotations"]] == [1, 2]
    assert [a["image_id"] for a in doc["annotations"]] == [1, 2]


def test_coco_empty_list_rejected():
    with pytest.raises(ValueError):
        im.export_coco([])


def test_coco_round_trip_iou():
    from matplotlib.path import Path as MplPath

    for seed in (0, 6):
        size = 128
        rng = np.random.default_rng(seed)
        yy, xx = np.mgrid[0:size, 0:size]
        cx, cy = rng.uniform(50, 78, 2)
        r = rng.uniform(25, 35)
        fg = (xx - cx) ** 2 + (yy - cy) ** 2 <= r ** 2  # convex mask
        mask = im.Mask(size, size, np.where(fg, 255, 0).astype(np.uint8))
        doc = im.export_coco([("img.png", mask, "femur")])
        seg = np.asarray(doc["annotations"][0]["segmentation"][0]).reshape(-1, 2)
        path = MplPath(seg)
        centers = np.column_stack([xx.ravel(), yy.ravel()])
        inside = path.contains_points(centers, radius=1e-9).reshape(size, size)
        inside |= path.contains_points(centers, radius=-1e-9).reshape(size, size)
        rasterized = inside
        rasterized[seg[:, 1].astype(int), seg[:, 0].astype(int)] = True
        inter = (rasterized & fg).sum()
        union = (rasterized | fg).sum()
        assert inter / union >= 0.98


# ---------------------------------------------------------------------------
# mask import/export


def test_pgm_round_trip(tmp_path):
    mask = blob_mask(4)
    im.save_mask_pgm(mask, tmp_path / "m.pgm")
    back = im.import_mask(tmp_path / "m.pgm")
    assert np.array_equal(back.data, mask.data)


def test_import_threshold_rule(tmp_path):
    from PIL import Image

    arr = np.array([[0, 127, 128], [200, 255, 1]], dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(tmp_path / "gray.png")
    mask = im.import_mask(tmp_path / "gray.png")
    assert mask.data.tolist() == [[0, 0, 255], [255, 255, 0]]


def test_import_all_zero_ok_but_contour_fails(tmp_path):
    from PIL import Image

    Image.fromarray(np.zeros((6, 6), dtype=np.uint8), mode="L").save(
        tmp_path / "zero.png")
    mask = im.import_mask(tmp_path / "zero.png")
    assert mask.foreground_count == 0
    with pytest.raises(EmptyMaskError):
        im.extract_contour(mask)


def test_import_non_grayscale_rejected(tmp_path):
    from PIL import Image

    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "rgb.png")
    with pytest.raises(MeshLoadError):
        im.import_mask(tmp_path / "rgb.png")


# ---------------------------------------------------------------------------
# distance field


def test_distance_field_zero_on_contour():
    mask = blob_mask(1)
    ring = im.extract_contour(mask)
    fld = im.distance_field(ring, mask.width, mask.height)
    assert np.abs(fld[ring.points[:, 1], ring.points[:, 0]]).max() == 0.0


def test_distance_field_isolated_point():
    c = im.Contour(points=np.array([[10, 20]], dtype=np.int32))
    fld = im.distance_field(c, 64, 64)
    assert fld[20, 15] == 5.0


def test_distance_field_matches_brute_force():
    mask = blob_mask(9, size=64)
    ring = im.extract_contour(mask)
    fld = im.distance_field(ring, 64, 64)
    pts = ring.points.astype(np.int64)
    yy, xx = np.mgrid[0:64, 0:64]
    d2 = ((xx[..., None] - pts[:, 0]) ** 2
          + (yy[..., None] - pts[:, 1]) ** 2).min(axis=-1)
    brute = np.sqrt(d2.astype(np.float64))
    assert np.array_equal(fld, brute)


def test_distance_field_rejects_out_of_bounds():
    c = im.Contour(points=np.array([[10, 20]], dtype=np.int32))
    with pytest.raises(ValueError):
        im.distance_field(c, 8, 8)
