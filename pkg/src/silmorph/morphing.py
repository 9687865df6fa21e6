"""Deform a template mesh until its four silhouettes match target contours.

Scheme: optional similarity prefit (uniform scale by golden-section at the
registered pose), then iterate rim-vertex correspondence, ray-perpendicular
backprojection, Gaussian scatter propagation with graph-Laplacian smoothing,
and a damped vertex update. Geometry away from every silhouette rim is
governed entirely by the propagation and smoothing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import MorphError
from .geometry import (
    RigidTransform,
    TriMesh,
    bounding_box,
    save_mesh,
    scale_mesh,
)
from .imaging import (
    Camera,
    Contour,
    boundary_pixels,
    compose_view,
    project_points,
    render_silhouette,
)

GOLDEN_RATIO_CONJ = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MorphConfig:
    max_iterations: int = 50
    tolerance_mm: float = 0.05        # contour-RMS change for convergence
    step_fraction: float = 0.5
    smoothing_weight: float = 0.3     # Laplacian blend weight per pass
    smoothing_iterations: int = 3
    influence_radius_mm: float = None  # None: 5% of template bbox diagonal
    rim_threshold_px: float = 1.5
    outlier_factor: float = 5.0       # drop residuals > factor * median
    enable_prefit: bool = True
    prefit_bracket: tuple = (0.8, 1.25)
    prefit_iterations: int = 24

    def __post_init__(self):
        if not (0 < self.step_fraction <= 1):
            raise ValueError("step_fraction must be in (0, 1]")
        if self.smoothing_weight < 0 or self.tolerance_mm <= 0:
            raise ValueError("smoothing weight must be >= 0, tolerance > 0")
        if self.max_iterations <= 0 or self.smoothing_iterations < 0:
            raise ValueError("iteration counts must be positive")


@dataclass(frozen=True)
class MorphResult:
    mesh: TriMesh
    displacements: np.ndarray   # (n, 3) mm, morphed minus input template
    history_mm: tuple           # per-iteration contour RMS
    converged: bool
    iterations: int
    prefit_scale: float
    prefit_pose: RigidTransform


# ---------------------------------------------------------------------------
# similarity prefit


def similarity_prefit(template: TriMesh, observations, pose: RigidTransform,
                      bracket=(0.8, 1.25), iterations: int = 24):
    """Uniform scale minimizing the summed contour residual at a fixed pose.

    Golden-section over the bracket; the identity scale is evaluated
    explicitly and kept unless the search strictly improves on it, so a
    self-case stays exactly at 1.0.
    """
    from .registration import _MultiViewCost, RegistrationConfig

    ctx = _MultiViewCost(observations, template, RegistrationConfig())
    center = template.centroid

    def cost(s):
        try:
            return sum(ctx_cost(s))
        except Exception:
            return np.inf

    def ctx_cost(s):
        scaled = scale_mesh(template, s, center)
        vals = []
        for o, fld in zip(ctx.obs, ctx.fields):
            composed = compose_view(pose, o.view.angle_deg)
            mask = render_silhouette(o.camera, composed, scaled)
            pix = boundary_pixels(mask)
            vals.append(float(fld[pix[:, 1], pix[:, 0]].mean()))
        return vals

    lo, hi = bracket
    if not lo < hi:
        raise MorphError(f"invalid prefit bracket {bracket}")
    c = hi - (hi - lo) * GOLDEN_RATIO_CONJ
    d = lo + (hi - lo) * GOLDEN_RATIO_CONJ
    fc, fd = cost(c), cost(d)
    for _ in range(iterations):
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - (hi - lo) * GOLDEN_RATIO_CONJ
            fc = cost(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + (hi - lo) * GOLDEN_RATIO_CONJ
            fd = cost(d)
    best_scale = c if fc < fd else d
    best_cost = min(fc, fd)
    if not np.isfinite(best_cost):
        raise MorphError("prefit bracket exhausted without a valid render")
    if bracket[0] <= 1.0 <= bracket[1]:
        identity_cost = cost(1.0)
        if np.isfinite(identity_cost) and identity_cost <= best_cost:
            return 1.0, pose
    return float(best_scale), pose


# ---------------------------------------------------------------------------
# correspondence, backprojection, propagation


def silhouette_correspondences(mesh: TriMesh, camera: Camera,
                               pose_in_view: RigidTransform, target: Contour,
                               rim_threshold_px: float = 1.5):
    """Rim vertices and their 2D pixel residuals toward the target contour.

    A rim vertex is one whose projection lies within `rim_threshold_px` of
    the model's own silhouette boundary. Its residual runs from its anchor
    pixel on the model boundary to the closest target-contour point, which
    cancels the half-pixel rasterization bias shared by both contours and
    makes self-correspondence exactly zero. Returns (vertex indices (k,),
    residual vectors (k, 2) px).
    """
    proj = project_points(camera, pose_in_view, mesh.vertices)
    mask = render_silhouette(camera, pose_in_view, mesh)
    own = boundary_pixels(mask).astype(np.float64)
    own_tree = cKDTree(own)
    dist, anchor_idx = own_tree.query(proj)
    rim = np.flatnonzero(dist <= rim_threshold_px)
    if len(rim) == 0:
        raise MorphError("no silhouette-rim vertices found")
    anchors = own[anchor_idx[rim]]
    target_tree = cKDTree(target.points.astype(np.float64))
    _, nearest = target_tree.query(anchors)
    residuals = target.points[nearest].astype(np.float64) - anchors
    return rim, residuals


def backproject_displacements(vertex_indices, residuals_px, mesh: TriMesh,
                              camera: Camera, pose_in_view: RigidTransform):
    """Lift 2D pixel residuals to 3D mm displacements in the model frame.

    Each residual is scaled by the object-plane pixel size at the vertex's
    depth and constrained to the plane perpendicular to the viewing ray.
    """
    idx = np.asarray(vertex_indices, dtype=np.int64)
    res = np.asarray(residuals_px, dtype=np.float64).reshape(-1, 2)
    p_cam = pose_in_view.apply(mesh.vertices[idx])
    z = p_cam[:, 2]
    if (z <= 0).any():
        raise MorphError("rim vertex behind the source")
    mmpp = camera.pitch_mm * z / camera.sdd_mm
    raw = np.zeros((len(idx), 3))
    raw[:, 0] = res[:, 0] * mmpp
    raw[:, 1] = res[:, 1] * mmpp
    ray = p_cam / np.linalg.norm(p_cam, axis=1, keepdims=True)
    perp = raw - (np.einsum("ij,ij->i", raw, ray))[:, None] * ray
    return perp @ pose_in_view.rotation  # rotate back into model frame


def vertex_adjacency(mesh: TriMesh):
    """Row-stochastic neighbor-averaging operator over mesh edges (CSR)."""
    from scipy import sparse

    t = mesh.triangles
    edges = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    n = len(mesh.vertices)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    a = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = sparse.diags(1.0 / np.maximum(deg, 1.0))
    return inv @ a


def propagate_and_smooth(mesh: TriMesh, vertex_indices, displacements,
                         influence_radius_mm: float,
                         smoothing_weight: float = 0.3,
                         smoothing_iterations: int = 3,
                         averaging=None) -> np.ndarray:
    """Spread sparse rim displacements to a dense per-vertex field.

    Gaussian scatter with sigma = influence radius, normalized by
    max(sum of weights, 1) so a single source produces a Gaussian bump and
    dense sources reproduce their value. Then `smoothing_iterations` passes
    of new = (1 - w) * anchor + w * neighbor_mean, where the anchor is the
    assigned displacement for rim vertices and the current field elsewhere.
    """
    idx = np.asarray(vertex_indices, dtype=np.int64)
    disp = np.asarray(displacements, dtype=np.float64).reshape(-1, 3)
    if len(idx) == 0:
        raise MorphError("no sparse displacements to propagate")
    sigma = float(influence_radius_mm)
    diff = mesh.vertices[:, None, :] - mesh.vertices[idx][None, :, :]
    w = np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * sigma * sigma))
    field = (w @ disp) / np.maximum(w.sum(axis=1), 1.0)[:, None]
    if smoothing_iterations > 0 and smoothing_weight > 0:
        avg_op = averaging if averaging is not None else vertex_adjacency(mesh)
        lam = smoothing_weight
        anchor = field.copy()
        anchor[idx] = disp
        is_rim = np.zeros(len(mesh.vertices), dtype=bool)
        is_rim[idx] = True
        for _ in range(smoothing_iterations):
            avg = avg_op @ field
            base = np.where(is_rim[:, None], anchor, field)
            field = (1.0 - lam) * base + lam * avg
    return field


# ---------------------------------------------------------------------------
# the morph loop


def morph(template: TriMesh, observations, registered_pose: RigidTransform,
          cfg: MorphConfig = None) -> MorphResult:
    """Iteratively fit the template's silhouettes to the target contours.

    Returns the morphed mesh (topology identical to the template), the
    per-vertex displacement from the input template, and the contour-RMS
    history in mm at the object plane. Divergence (RMS growing three
    iterations in a row) aborts with converged=False.
    """
    cfg = cfg or MorphConfig()
    obs = list(observations)
    scale, pose = 1.0, registered_pose
    if cfg.enable_prefit:
        scale, pose = similarity_prefit(
            template, obs, registered_pose,
            bracket=cfg.prefit_bracket, iterations=cfg.prefit_iterations)
    work = scale_mesh(template, scale) if scale != 1.0 else template
    radius = cfg.influence_radius_mm
    if radius is None:
        radius = 0.05 * bounding_box(work).diagonal
    averaging = vertex_adjacency(work)
    composed = [compose_view(pose, o.view.angle_deg) for o in obs]

    verts = work.vertices.copy()
    current = work
    history = []
    converged = False
    grow_count = 0
    for _ in range(cfg.max_iterations):
        sums = np.zeros_like(verts)
        counts = np.zeros(len(verts))
        res_norm_mm = []
        per_view = []
        for o, pose_v in zip(obs, composed):
            rim, residuals = silhouette_correspondences(
                current, o.camera, pose_v, o.contour, cfg.rim_threshold_px)
            per_view.append((o, pose_v, rim, residuals))
        # pooled outlier rejection across views
        norms = np.concatenate([np.linalg.norm(r, axis=1)
                                for _, _, _, r in per_view])
        median = float(np.median(norms))
        cutoff = cfg.outlier_factor * median if median > 0 else np.inf
        for o, pose_v, rim, residuals in per_view:
            keep = np.linalg.norm(residuals, axis=1) <= cutoff
            rim, residuals = rim[keep], residuals[keep]
            if len(rim) == 0:
                continue
            disp = backproject_displacements(rim, residuals, current,
                                             o.camera, pose_v)
            np.add.at(sums, rim, disp)
            np.add.at(counts, rim, 1.0)
            z = pose_v.apply(current.vertices[rim])[:, 2]
            mmpp = o.camera.pitch_mm * z / o.camera.sdd_mm
            res_norm_mm.append(np.linalg.norm(residuals, axis=1) * mmpp)
        res_norm_mm = np.concatenate(res_norm_mm)
        rms = float(np.sqrt(np.mean(res_norm_mm ** 2)))
        history.append(rms)
        if len(history) >= 2:
            prev = history[-2]
            if abs(rms - prev) < cfg.tolerance_mm:
                converged = True
                break
            grow_count = grow_count + 1 if rms > prev else 0
            if grow_count >= 3:
                converged = False
                break
        active = counts > 0
        sparse_disp = sums[active] / counts[active][:, None]
        field = propagate_and_smooth(
            current, np.flatnonzero(active), sparse_disp, radius,
            cfg.smoothing_weight, cfg.smoothing_iterations, averaging)
        verts = verts + cfg.step_fraction * field
        current = work.with_vertices(verts)

    return MorphResult(
        mesh=current,
        displacements=current.vertices - template.vertices,
        history_mm=tuple(history),
        converged=converged,
        iterations=len(history),
        prefit_scale=scale,
        prefit_pose=pose,
    )


# ---------------------------------------------------------------------------
# persistence


def save_morph_result(result: MorphResult, out_dir, stem: str = "morph") -> dict:
    """Write morphed STL, displacement CSV, history CSV, and a JSON summary."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "mesh": out / "morphed.stl",
        "displacements": out / f"{stem}_displacements.csv",
        "history": out / f"{stem}_history.csv",
        "summary": out / f"{stem}_summary.json",
    }
    save_mesh(result.mesh, paths["mesh"])
    with open(paths["displacements"], "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["vertex_index", "dx_mm", "dy_mm", "dz_mm"])
        for i, d in enumerate(result.displacements):
            writer.writerow([i, repr(float(d[0])), repr(float(d[1])),
                             repr(float(d[2]))])
    with open(paths["history"], "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "contour_rms_mm"])
        for i, v in enumerate(result.history_mm):
            writer.writerow([i, repr(float(v))])
    disp_norm = np.linalg.norm(result.displacements, axis=1)
    summary = {
        "converged": result.converged,
        "iterations": result.iterations,
        "prefit_scale": result.prefit_scale,
        "final_contour_rms_mm": result.history_mm[-1] if result.history_mm else None,
        "displacement_rms_mm": float(np.sqrt(np.mean(disp_norm ** 2))),
        "displacement_max_mm": float(disp_norm.max()),
    }
    with open(paths["summary"], "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return {k: str(v) for k, v in paths.items()}
