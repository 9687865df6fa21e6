"""ICP alignment, per-vertex surface errors, reports, heatmaps, cohort stats."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCorrespondenceError, EmptyMeshError
from .geometry import MeshIndex, RigidTransform, TriMesh


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 200
    tolerance_mm: float = 1e-6      # change in mean distance
    subsample_above: int = 50000    # fixed-seed subsampling threshold
    seed: int = 0
    polish_iterations: int = 5      # vertex-pairing snap steps after the loop


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform   # aligns source onto target
    mean_distance_mm: float
    iterations: int
    converged: bool
    rms_history: tuple          # per-iteration RMS distance, non-increasing


@dataclass(frozen=True)
class ErrorReport:
    case_id: str
    distances_mm: np.ndarray    # per-vertex signed surface distances
    rms_mm: float
    largest_mm: float           # max of |signed|
    largest_vertex: int

    def to_json(self) -> dict:
        return {"case_id": self.case_id, "rms_mm": self.rms_mm,
                "largest_mm": self.largest_mm,
                "largest_vertex": self.largest_vertex}


@dataclass(frozen=True)
class CohortSummary:
    case_ids: tuple
    rms_mm: np.ndarray
    largest_mm: np.ndarray
    rms_mean: float
    rms_std: float       # population std
    rms_min: float
    rms_max: float
    largest_mean: float
    largest_std: float
    largest_min: float
    largest_max: float

    def to_json(self) -> dict:
        return {
            "cases": len(self.case_ids),
            "rms_mean_mm": self.rms_mean, "rms_std_mm": self.rms_std,
            "rms_min_mm": self.rms_min, "rms_max_mm": self.rms_max,
            "largest_mean_mm": self.largest_mean,
            "largest_std_mm": self.largest_std,
            "largest_min_mm": self.largest_min,
            "largest_max_mm": self.largest_max,
        }


# ---------------------------------------------------------------------------
# ICP


def icp_align(source: TriMesh, target_index: MeshIndex,
              init: RigidTransform = None,
              cfg: IcpConfig = None) -> IcpResult:
    """Point-to-point ICP against closest surface points, with SVD fits.

    The main loop pairs each source vertex with its exact closest point on
    the target surface and solves the least-squares rigid motion, so the
    surface RMS is non-increasing. A short vertex-pairing polish then snaps
    noiseless same-shape alignments to the exact transform; polish steps
    are kept only while they keep reducing the surface RMS. A large final
    residual is reported, not treated as failure.
    """
    from scipy.spatial import cKDTree

    cfg = cfg or IcpConfig()
    init = init or RigidTransform.identity()
    if len(source.vertices) == 0:
        raise EmptyMeshError("ICP source is empty")
    pts = source.vertices
    if len(pts) > cfg.subsample_above:
        rng = np.random.default_rng(cfg.seed)
        pts = pts[rng.choice(len(pts), cfg.subsample_above, replace=False)]
    if np.linalg.matrix_rank(pts - pts.mean(axis=0)) < 3:
        raise DegenerateCorrespondenceError(
            "source vertex spread has rank < 3; rotation is underdetermined")

    def surface_rms(moved):
        signed = target_index.closest_points(moved)[2]
        return float(np.sqrt(np.mean(signed ** 2)))

    current = init
    moved = current.apply(pts)
    history = []
    prev_mean = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        closest, _, signed = target_index.closest_points(moved)
        dist = np.abs(signed)
        history.append(float(np.sqrt(np.mean(dist ** 2))))
        mean = float(dist.mean())
        if abs(prev_mean - mean) < cfg.tolerance_mm:
            converged = True
            break
        prev_mean = mean
        delta = _rigid_fit(moved, closest)
        current = delta.compose(current)
        moved = current.apply(pts)

    tree = cKDTree(target_index.mesh.vertices)
    best_rms = history[-1] if history else surface_rms(moved)
    for _ in range(cfg.polish_iterations):
        _, nearest = tree.query(moved)
        delta = _rigid_fit(moved, target_index.mesh.vertices[nearest])
        candidate = delta.compose(current)
        cand_moved = candidate.apply(pts)
        cand_rms = surface_rms(cand_moved)
        if cand_rms >= best_rms:
            break
        current, moved, best_rms = candidate, cand_moved, cand_rms
        history.append(cand_rms)

    final_mean = float(np.abs(target_index.closest_points(moved)[2]).mean())
    return IcpResult(transform=current, mean_distance_mm=final_mean,
                     iterations=iterations, converged=converged,
                     rms_history=tuple(history))


def _rigid_fit(source_pts: np.ndarray, target_pts: np.ndarray) -> RigidTransform:
    """Least-squares rigid motion taking source points onto target points.

    When the correspondence covariance is rank deficient (all targets
    collapse onto a few points, as with far-apart shapes) the rotation is
    not identifiable and the optimal pure translation is used instead.
    """
    sc = source_pts.mean(axis=0)
    tc = target_pts.mean(axis=0)
    h = (source_pts - sc).T @ (target_pts - tc)
    if np.linalg.matrix_rank(h, tol=1e-9 * max(1.0, np.abs(h).max())) < 3:
        return RigidTransform(np.eye(3), tc - sc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.diag([1.0, 1.0, d])
    r = vt.T @ corr @ u.T
    return RigidTransform(r, tc - r @ sc)


# ---------------------------------------------------------------------------
# per-vertex errors and reports


def vertex_surface_errors(morphed: TriMesh, truth_index: MeshIndex) -> np.ndarray:
    """Signed closest-surface distance of every vertex (sign from the truth
    surface's outward normal; ICP alignment is assumed already applied)."""
    if len(morphed.vertices) == 0:
        raise EmptyMeshError("morphed mesh is empty")
    _, _, signed = truth_index.closest_points(morphed.vertices)
    return signed


def error_report(distances_mm, case_id: str = "") -> ErrorReport:
    d = np.asarray(distances_mm, dtype=np.float64)
    if d.size == 0:
        raise ValueError("error report needs at least one distance")
    magnitude = np.abs(d)
    largest_vertex = int(np.argmax(magnitude))  # argmax takes the lowest tie
    return ErrorReport(
        case_id=case_id,
        distances_mm=d,
        rms_mm=float(np.sqrt(np.mean(d ** 2))),
        largest_mm=float(magnitude[largest_vertex]),
        largest_vertex=largest_vertex,
    )


def summarize_cohort(reports) -> CohortSummary:
    reports = list(reports)
    if not reports:
        raise ValueError("cohort summary needs at least one report")
    rms = np.array([r.rms_mm for r in reports])
    largest = np.array([r.largest_mm for r in reports])
    return CohortSummary(
        case_ids=tuple(r.case_id for r in reports),
        rms_mm=rms, largest_mm=largest,
        rms_mean=float(rms.mean()), rms_std=float(rms.std()),
        rms_min=float(rms.min()), rms_max=float(rms.max()),
        largest_mean=float(largest.mean()), largest_std=float(largest.std()),
        largest_min=float(largest.min()), largest_max=float(largest.max()),
    )


# ---------------------------------------------------------------------------
# heatmap export


def signed_colormap(values: np.ndarray, vmax: float) -> np.ndarray:
    """Blue -> white -> red over [-vmax, +vmax], returned as (n, 3) uint8."""
    t = np.clip(values / vmax, -1.0, 1.0) if vmax > 0 else np.zeros_like(values)
    rgb = np.empty((len(t), 3))
    neg = t < 0
    # blue (0,0,255) at -1 up to white at 0
    rgb[neg, 0] = 255 * (1 + t[neg])
    rgb[neg, 1] = 255 * (1 + t[neg])
    rgb[neg, 2] = 255
    # white at 0 down to red (255,0,0) at +1
    rgb[~neg, 0] = 255
    rgb[~neg, 1] = 255 * (1 - t[~neg])
    rgb[~neg, 2] = 255 * (1 - t[~neg])
    return np.round(rgb).astype(np.uint8)


def export_heatmap(mesh: TriMesh, distances_mm, ply_path,
                   csv_path=None, range_mm: float = None):
    """Write a vertex-colored ascii PLY plus the raw distance CSV.

    The CSV (default: same stem, .csv suffix) is the authoritative data;
    colors map the signed range symmetrically (default: +- the largest
    magnitude).
    """
    from pathlib import Path

    d = np.asarray(distances_mm, dtype=np.float64)
    if len(d) != len(mesh.vertices):
        raise ValueError(
            f"{len(d)} distances for {len(mesh.vertices)} vertices")
    vmax = float(np.abs(d).max()) if range_mm is None else float(range_mm)
    colors = signed_colormap(d, vmax)
    ply_path = Path(ply_path)
    csv_path = Path(csv_path) if csv_path else ply_path.with_suffix(".csv")
    with open(ply_path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(mesh.vertices)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write(f"element face {len(mesh.triangles)}\n")
        f.write("property list uchar int vertex_indices\nend_header\n")
        for v, c in zip(mesh.vertices, colors):
            f.write(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f} {c[0]} {c[1]} {c[2]}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["vertex_index", "signed_distance_mm"])
        for i, val in enumerate(d):
            writer.writerow([i, repr(float(val))])
    return str(ply_path), str(csv_path)


# ---------------------------------------------------------------------------
# persistence


def save_report(report: ErrorReport, path) -> None:
    with open(path, "w") as f:
        json.dump(report.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_report_summary(path) -> dict:
    with open(path) as f:
        return json.load(f)


def save_cohort(summary: CohortSummary, csv_path, json_path) -> None:
    """Cohort CSV: one row per case plus a mean +- std summary row."""
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["case", "rms_mm", "largest_mm"])
        for cid, r, l in zip(summary.case_ids, summary.rms_mm,
                             summary.largest_mm):
            writer.writerow([cid, repr(float(r)), repr(float(l))])
        writer.writerow([
            "average",
            f"{summary.rms_mean:.2f} +- {summary.rms_std:.2f}",
            f"{summary.largest_mean:.2f} +- {summary.largest_std:.2f}",
        ])
    with open(json_path, "w") as f:
        json.dump(summary.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
