"""Point-source projection, silhouette rendering, contours, and view geometry.

The camera model is a point source at the origin looking down +z onto a
detector at distance `sdd_mm`. A point at depth z projects with
magnification sdd/z; pixel centers sit on the integer lattice and the
principal point is where the source axis meets the detector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from . import _raster
from .errors import (
    EmptyContourError,
    EmptyFootprintError,
    EmptyMaskError,
    MeshBehindSourceError,
    MeshLoadError,
)
from .geometry import RigidTransform, TriMesh, rot_y_deg, scale_mesh

MIN_DEPTH_MM = 1e-6

STANDARD_VIEW_ANGLES = {"ap": 0.0, "ml": 90.0, "rot+45": 45.0, "rot-45": -45.0}


@dataclass(frozen=True)
class Camera:
    """Fluoroscopic point-source projection geometry."""

    sdd_mm: float = 1000.0
    pitch_mm: float = 0.25
    width_px: int = 1024
    height_px: int = 1024
    principal_px: tuple = None  # (cx, cy); defaults to the image center

    def __post_init__(self):
        if self.sdd_mm <= 0 or self.pitch_mm <= 0:
            raise ValueError("sdd_mm and pitch_mm must be positive")
        if self.principal_px is None:
            object.__setattr__(
                self, "principal_px",
                ((self.width_px - 1) / 2.0, (self.height_px - 1) / 2.0))
        cx, cy = self.principal_px
        if not (0 <= cx <= self.width_px - 1 and 0 <= cy <= self.height_px - 1):
            raise ValueError("principal point outside image bounds")
        object.__setattr__(self, "principal_px", (float(cx), float(cy)))

    def mm_per_pixel_at(self, depth_mm: float) -> float:
        """Object-plane size of one pixel at the given depth."""
        return self.pitch_mm * depth_mm / self.sdd_mm

    def to_json(self) -> dict:
        return {"sdd_mm": self.sdd_mm, "pitch_mm": self.pitch_mm,
                "width_px": self.width_px, "height_px": self.height_px,
                "principal_px": list(self.principal_px)}

    @classmethod
    def from_json(cls, doc: dict) -> "Camera":
        return cls(sdd_mm=float(doc["sdd_mm"]), pitch_mm=float(doc["pitch_mm"]),
                   width_px=int(doc["width_px"]), height_px=int(doc["height_px"]),
                   principal_px=tuple(doc["principal_px"]))


def save_camera(camera: Camera, path) -> None:
    with open(path, "w") as f:
        json.dump(camera.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_camera(path) -> Camera:
    with open(path) as f:
        return Camera.from_json(json.load(f))


@dataclass(frozen=True)
class ViewDefinition:
    """A named view: rotation of the subject about its vertical axis vs AP."""

    name: str
    angle_deg: float


def standard_views() -> list:
    """AP (0°), ML (90°), and the two ±45° oblique views."""
    return [ViewDefinition(name, angle)
            for name, angle in STANDARD_VIEW_ANGLES.items()]


def compose_view(pose: RigidTransform, angle_deg: float) -> RigidTransform:
    """Pose as seen in a view rotated `angle_deg` about the vertical axis.

    The rotation axis is the camera-frame y axis through the pose's
    translation point, so the subject turns in place and its depth is
    preserved. Templates are expected to be origin-centered in model space.
    """
    return RigidTransform(rot_y_deg(angle_deg) @ pose.rotation, pose.translation)


@dataclass(frozen=True)
class Mask:
    """Binary silhouette image: 0 background, 255 foreground."""

    width: int
    height: int
    data: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.uint8)
        if d.shape != (self.height, self.width):
            raise ValueError("mask data shape does not match width/height")
        if not np.isin(d, (0, 255)).all():
            raise ValueError("mask must contain only 0 and 255")
        d = np.ascontiguousarray(d)
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def foreground_count(self) -> int:
        return int((self.data > 0).sum())


@dataclass(frozen=True)
class Contour:
    """Closed, ordered one-pixel boundary in pixel coordinates."""

    points: np.ndarray  # (k, 2) int32 (x, y)
    closed: bool = True
    subpixel: bool = False
    fragmented: bool = False  # set when the source mask had >1 component

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.int32)
        if p.ndim != 2 or p.shape[1] != 2 or len(p) == 0:
            raise EmptyContourError("contour needs at least one (x, y) point")
        if len(p) > 1:
            step = np.abs(np.diff(np.vstack([p, p[:1]]), axis=0)).max(axis=1)
            if (step > 1).any() or (step == 0).any():
                raise ValueError("consecutive contour points must be distinct "
                                 "and 8-connected")
        p = np.ascontiguousarray(p)
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)

    def to_json(self) -> dict:
        return {"points": self.points.tolist(), "closed": self.closed,
                "subpixel": self.subpixel, "fragmented": self.fragmented}

    @classmethod
    def from_json(cls, doc: dict) -> "Contour":
        return cls(points=np.asarray(doc["points"], dtype=np.int32),
                   closed=bool(doc.get("closed", True)),
                   subpixel=bool(doc.get("subpixel", False)),
                   fragmented=bool(doc.get("fragmented", False)))


def save_contour(contour: Contour, path) -> None:
    with open(path, "w") as f:
        json.dump(contour.to_json(), f, sort_keys=True)
        f.write("\n")


def load_contour(path) -> Contour:
    with open(path) as f:
        return Contour.from_json(json.load(f))


@dataclass(frozen=True)
class ViewObservation:
    """One view's geometry and its target contour, as consumed by fitting."""

    view: ViewDefinition
    camera: Camera
    contour: Contour


# ---------------------------------------------------------------------------
# projection and rendering


def project_points(camera: Camera, pose: RigidTransform, points) -> np.ndarray:
    """Perspective-project model-space points to (n, 2) pixel coordinates."""
    p = pose.apply(np.atleast_2d(np.asarray(points, dtype=np.float64)))
    z = p[:, 2]
    if (z <= MIN_DEPTH_MM).any():
        raise MeshBehindSourceError(
            f"{int((z <= MIN_DEPTH_MM).sum())} point(s) at or behind the source")
    f = camera.sdd_mm / camera.pitch_mm
    cx, cy = camera.principal_px
    out = np.empty((len(p), 2))
    out[:, 0] = cx + f * p[:, 0] / z
    out[:, 1] = cy + f * p[:, 1] / z
    return out


def project_point(camera: Camera, pose: RigidTransform, point) -> np.ndarray:
    """Single-point variant of project_points."""
    return project_points(camera, pose, point)[0]


def render_silhouette(camera: Camera, pose: RigidTransform, mesh: TriMesh) -> Mask:
    """Rasterize the mesh silhouette: a pixel is foreground iff its center
    falls inside the projection of at least one triangle (no depth test)."""
    pix = project_points(camera, pose, mesh.vertices)
    tx = np.ascontiguousarray(pix[mesh.triangles, 0])
    ty = np.ascontiguousarray(pix[mesh.triangles, 1])
    out = np.zeros((camera.height_px, camera.width_px), dtype=np.uint8)
    _raster.fill_triangles(tx, ty, camera.width_px, camera.height_px, out)
    if not out.any():
        raise EmptyFootprintError("projected footprint covers no pixel")
    return Mask(camera.width_px, camera.height_px, out)


# ---------------------------------------------------------------------------
# contours

# ring of 8 neighbours, counterclockwise for positive shoelace area
_RING = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
_RING_INDEX = {d: i for i, d in enumerate(_RING)}


def extract_contour(mask: Mask) -> Contour:
    """Trace the outer boundary of the mask's largest 8-connected component.

    Moore-neighbor tracing, counterclockwise (positive shoelace area),
    starting from the topmost-then-leftmost boundary pixel. Every returned
    pixel is foreground with at least one background 4-neighbor.
    """
    fg = mask.data > 0
    if not fg.any():
        raise EmptyMaskError("cannot extract a contour from an empty mask")
    labels, count = ndimage.label(fg, structure=np.ones((3, 3), dtype=int))
    fragmented = count > 1
    if fragmented:
        sizes = ndimage.sum_labels(fg, labels, index=np.arange(1, count + 1))
        fg = labels == (int(np.argmax(sizes)) + 1)
    points = _moore_trace(fg)
    return Contour(points=np.asarray(points, dtype=np.int32),
                   closed=True, subpixel=False, fragmented=fragmented)


def _moore_trace(fg: np.ndarray):
    h, w = fg.shape

    def is_fg(x, y):
        return 0 <= x < w and 0 <= y < h and fg[y, x]

    ys, xs = np.nonzero(fg)
    start = (int(xs[0]), int(ys[0]))  # nonzero scans row-major: topmost-leftmost
    contour = [start]
    backtrack = (start[0] - 1, start[1])  # west neighbour, background
    current = start
    first_transition = None
    limit = 4 * int(fg.sum()) + 8
    for _ in range(limit):
        bi = _RING_INDEX[(backtrack[0] - current[0], backtrack[1] - current[1])]
        nxt = None
        for k in range(1, 9):
            dx, dy = _RING[(bi + k) % 8]
            cand = (current[0] + dx, current[1] + dy)
            if is_fg(*cand):
                nxt = cand
                break
            backtrack = cand
        if nxt is None:
            return contour  # isolated pixel
        if first_transition is None:
            first_transition = (nxt, backtrack)
        elif (nxt, backtrack) == first_transition:
            break
        contour.append(nxt)
        current = nxt
    else:
        raise RuntimeError("contour tracing failed to close")
    while len(contour) > 1 and contour[-1] == contour[0]:
        contour.pop()
    return contour


def boundary_pixels(mask: Mask) -> np.ndarray:
    """(k, 2) int array of foreground pixels with ≥1 background 4-neighbor."""
    fg = mask.data > 0
    padded = np.pad(fg, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    ys, xs = np.nonzero(fg & ~interior)
    return np.column_stack([xs, ys]).astype(np.int32)


def distance_field(contour: Contour, width: int, height: int) -> np.ndarray:
    """(height, width) grid of exact Euclidean distance (px) to the contour."""
    pts = contour.points
    if len(pts) == 0:
        raise EmptyContourError("distance field needs a nonempty contour")
    if (pts[:, 0].min() < 0 or pts[:, 0].max() >= width
            or pts[:, 1].min() < 0 or pts[:, 1].max() >= height):
        raise ValueError("contour points outside the requested grid")
    grid = np.ones((height, width), dtype=bool)
    grid[pts[:, 1], pts[:, 0]] = False
    return ndimage.distance_transform_edt(grid)


# ---------------------------------------------------------------------------
# mask files


def save_mask_pgm(mask: Mask, path) -> None:
    """Write the mask as binary PGM (P5, maxval 255) for bit-exact portability."""
    with open(path, "wb") as f:
        f.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        f.write(mask.data.tobytes())


def import_mask(path) -> Mask:
    """Read an 8-bit grayscale image (PGM or PNG) and threshold at 128."""
    name = str(path)
    try:
        if name.lower().endswith(".pgm"):
            arr = _read_pgm(name)
        else:
            with Image.open(name) as img:
                if img.mode != "L":
                    raise MeshLoadError(
                        f"{name}: expected 8-bit grayscale, got mode {img.mode}")
                arr = np.asarray(img, dtype=np.uint8)
    except OSError as e:
        raise MeshLoadError(f"cannot read mask {name}: {e}") from e
    data = np.where(arr >= 128, 255, 0).astype(np.uint8)
    h, w = data.shape
    return Mask(w, h, data)


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise MeshLoadError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise MeshLoadError(f"{path}: expected 8-bit PGM, maxval {maxval}")
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).copy()


# ---------------------------------------------------------------------------
# synthetic cases


@dataclass(frozen=True)
class ViewRecord:
    view: ViewDefinition
    camera: Camera
    pose: RigidTransform  # composed pose of the truth mesh in this view
    mask: Mask
    contour: Contour


@dataclass(frozen=True)
class NoiseConfig:
    """Optional mask degradation: boundary dilation/erosion by ≤1 px."""

    boundary_px: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.boundary_px not in (0, 1):
            raise ValueError("boundary_px must be 0 or 1")


@dataclass(frozen=True)
class SyntheticCase:
    case_id: str
    template_path: str
    truth_path: str
    views: tuple  # of ViewRecord, distinct view names
    scale: float
    template: TriMesh = None
    truth: TriMesh = None

    def __post_init__(self):
        names = [v.view.name for v in self.views]
        if len(self.views) != 4 or len(set(names)) != 4:
            raise ValueError("a synthetic case needs 4 distinctly named views")

    def observations(self) -> list:
        return [ViewObservation(v.view, v.camera, v.contour) for v in self.views]


def generate_synthetic_case(template: TriMesh, scale: float, cameras,
                            true_pose: RigidTransform,
                            noise: NoiseConfig = None,
                            case_id: str = "case",
                            views=None,
                            template_path: str = "",
                            truth_path: str = "") -> SyntheticCase:
    """Render ground-truth targets by scaling the template about its centroid.

    `cameras` is either one Camera shared by all views or a list of four.
    """
    views = list(views) if views is not None else standard_views()
    if len(views) != 4:
        raise ValueError("exactly 4 views required")
    if isinstance(cameras, Camera):
        cameras = [cameras] * 4
    truth = scale_mesh(template, scale)
    rng = np.random.default_rng(noise.seed) if noise else None
    records = []
    for view, camera in zip(views, cameras):
        pose_v = compose_view(true_pose, view.angle_deg)
        mask = render_silhouette(camera, pose_v, truth)
        if noise and noise.boundary_px > 0:
            mask = _perturb_boundary(mask, rng)
        records.append(ViewRecord(view, camera, pose_v, mask,
                                  extract_contour(mask)))
    return SyntheticCase(case_id=case_id, template_path=template_path,
                         truth_path=truth_path, views=tuple(records),
                         scale=scale, template=template, truth=truth)


def _perturb_boundary(mask: Mask, rng) -> Mask:
    fg = mask.data > 0
    structure = ndimage.generate_binary_structure(2, 1)
    if rng.integers(0, 2) == 0:
        fg = ndimage.binary_dilation(fg, structure=structure)
    else:
        eroded = ndimage.binary_erosion(fg, structure=structure)
        if eroded.any():
            fg = eroded
    return Mask(mask.width, mask.height,
                np.where(fg, 255, 0).astype(np.uint8))


# ---------------------------------------------------------------------------
# COCO annotation exchange

COCO_CATEGORIES = ({"id": 1, "name": "femur"}, {"id": 2, "name": "tibia"})


def export_coco(cases) -> dict:
    """COCO 1.0 document for (image path, Mask, label) triples.

    Segmentations are the traced boundary polygons; bboxes are xywh in
    pixel counts.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("export_coco needs at least one mask")
    cat_ids = {c["name"]: c["id"] for c in COCO_CATEGORIES}
    images, annotations = [], []
    for i, (image_path, mask, label) in enumerate(cases, start=1):
        if label not in cat_ids:
            raise ValueError(f"unknown label {label!r}; expected femur or tibia")
        if mask.foreground_count == 0:
            raise EmptyMaskError(f"mask for {image_path} is empty")
        contour = extract_contour(mask)
        seg = [float(c) for xy in contour.points for c in xy]
        fg = mask.data > 0
        ys, xs = np.nonzero(fg)
        x0, y0 = int(xs.min()), int(ys.min())
        bw, bh = int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1
        images.append({"id": i, "file_name": str(image_path),
                       "width": mask.width, "height": mask.height})
        annotations.append({
            "id": i, "image_id": i, "category_id": cat_ids[label],
            "segmentation": [seg], "bbox": [x0, y0, bw, bh],
            "area": int(fg.sum()), "iscrowd": 0,
        })
    return {"images": images, "annotations": annotations,
            "categories": [dict(c) for c in COCO_CATEGORIES]}
