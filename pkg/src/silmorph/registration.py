"""Recover the 6-DOF pose of a known mesh from silhouette contours.

The cost is the mean, over the rendered model's boundary pixels, of the
target contour's Euclidean distance field (one-directional by default).
It is piecewise constant in the pose, so the search is derivative-free:
Nelder-Mead over XYZ Euler angles about the mesh centroid plus the
centroid position, with seeded rotation restarts keeping the best run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import EmptyContourError, RegistrationError, RenderError
from .geometry import (
    RigidTransform,
    TriMesh,
    rot_x_deg,
    rot_y_deg,
    rot_z_deg,
)
from .imaging import (
    Camera,
    Contour,
    ViewDefinition,
    ViewObservation,
    boundary_pixels,
    compose_view,
    distance_field,
    render_silhouette,
)

_DIM = 6


@dataclass(frozen=True)
class RegistrationConfig:
    max_iterations: int = 600          # cost evaluations per Nelder-Mead run
    tolerance_px: float = 0.01         # cost-change convergence tolerance
    simplex_scale_deg: float = 4.0
    simplex_scale_mm: float = 4.0
    rotation_restarts: int = 4
    seed: int = 0
    symmetric: bool = False            # add target->model direction to the cost
    early_stop_residual_px: float = 0.25   # skip remaining restarts below this
    accept_residual_px: float = 1.5        # converged requires residual <= this

    def __post_init__(self):
        if self.max_iterations <= 0 or self.tolerance_px <= 0:
            raise ValueError("iterations and tolerance must be positive")
        if self.simplex_scale_deg <= 0 or self.simplex_scale_mm <= 0:
            raise ValueError("simplex scales must be positive")


@dataclass(frozen=True)
class RegistrationResult:
    pose: RigidTransform
    residual_px: float            # mean over views of mean contour distance
    residual_mm: float            # at the object plane
    converged: bool
    iterations: int               # total cost evaluations
    per_view_px: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# pose parameterization: (rx, ry, rz) XYZ Euler degrees about the mesh
# centroid, plus the centroid position (mm) in camera space


def pose_from_params(params, centroid) -> RigidTransform:
    rx, ry, rz, px, py, pz = params
    r = rot_x_deg(rx) @ rot_y_deg(ry) @ rot_z_deg(rz)
    t = np.array([px, py, pz]) - r @ np.asarray(centroid, dtype=np.float64)
    return RigidTransform(r, t)


def params_from_pose(pose: RigidTransform, centroid) -> np.ndarray:
    r = pose.rotation
    ry = np.degrees(np.arcsin(np.clip(r[0, 2], -1.0, 1.0)))
    rx = np.degrees(np.arctan2(-r[1, 2], r[2, 2]))
    rz = np.degrees(np.arctan2(-r[0, 1], r[0, 0]))
    p = r @ np.asarray(centroid, dtype=np.float64) + pose.translation
    return np.array([rx, ry, rz, p[0], p[1], p[2]])


# ---------------------------------------------------------------------------
# cost


def contour_residual(camera: Camera, pose: RigidTransform, mesh: TriMesh,
                     target: Contour, symmetric: bool = False) -> float:
    """Mean distance (px) from the rendered model boundary to the target."""
    if len(target) == 0:
        raise EmptyContourError("target contour is empty")
    fld = distance_field(target, camera.width_px, camera.height_px)
    return _residual_against_field(camera, pose, mesh, fld,
                                   target if symmetric else None)


def _residual_against_field(camera, pose, mesh, fld, sym_target) -> float:
    mask = render_silhouette(camera, pose, mesh)
    pix = boundary_pixels(mask)
    forward = float(fld[pix[:, 1], pix[:, 0]].mean())
    if sym_target is None:
        return forward
    model_field = np.ones((camera.height_px, camera.width_px), dtype=bool)
    model_field[pix[:, 1], pix[:, 0]] = False
    from scipy import ndimage
    rev_fld = ndimage.distance_transform_edt(model_field)
    tp = sym_target.points
    reverse = float(rev_fld[tp[:, 1], tp[:, 0]].mean())
    return 0.5 * (forward + reverse)


class _MultiViewCost:
    """Shared state for one registration: precomputed target fields."""

    def __init__(self, observations, mesh: TriMesh, cfg: RegistrationConfig):
        self.obs = list(observations)
        for o in self.obs:
            if len(o.contour) == 0:
                raise EmptyContourError(
                    f"view {o.view.name}: target contour is empty")
        self.mesh = mesh
        self.cfg = cfg
        self.centroid = mesh.centroid
        self.fields = [
            distance_field(o.contour, o.camera.width_px, o.camera.height_px)
            for o in self.obs
        ]
        self.evaluations = 0
        self.stall_count = 0
        self.best = np.inf

    def per_view(self, pose: RigidTransform):
        vals = []
        for o, fld in zip(self.obs, self.fields):
            composed = compose_view(pose, o.view.angle_deg)
            vals.append(_residual_against_field(
                o.camera, composed, self.mesh, fld,
                o.contour if self.cfg.symmetric else None))
        return vals

    def __call__(self, params) -> float:
        try:
            total = sum(self.per_view(pose_from_params(params, self.centroid)))
        except RenderError:
            total = np.inf
        self.evaluations += 1
        # the running best improves by less than the tolerance -> stalled
        if self.best - total < self.cfg.tolerance_px:
            self.stall_count += 1
        else:
            self.stall_count = 0
        self.best = min(self.best, total)
        return total

    def mm_per_px(self, pose: RigidTransform) -> float:
        factors = []
        for o in self.obs:
            composed = compose_view(pose, o.view.angle_deg)
            depth = composed.apply(self.centroid)[2]
            factors.append(o.camera.mm_per_pixel_at(depth))
        return float(np.mean(factors))


# ---------------------------------------------------------------------------
# search


def register_multi_view(observations, mesh: TriMesh, init: RigidTransform,
                        cfg: RegistrationConfig = None) -> RegistrationResult:
    """Minimize the summed per-view residual over a single object pose."""
    cfg = cfg or RegistrationConfig()
    cost = _MultiViewCost(observations, mesh, cfg)
    x0 = params_from_pose(init, cost.centroid)

    best_x, best_f, best_stall = x0, np.inf, False
    rng = np.random.default_rng(cfg.seed)
    n_views = len(cost.obs)
    for attempt in range(1 + cfg.rotation_restarts):
        if attempt == 0:
            start = x0
        else:
            # restart from the best pose so far with the rotation kicked
            start = best_x.copy()
            start[:3] += rng.uniform(-7.5, 7.5, size=3)
        x, f, stall = _nelder_mead_run(cost, start, cfg)
        # the init is a vertex of the first simplex, so attempt 0 never
        # returns anything worse than the initial pose
        if attempt == 0 or f < best_f:
            best_x, best_f, best_stall = x, f, stall
        if best_f / n_views <= cfg.early_stop_residual_px:
            break

    if not np.isfinite(best_f):
        raise RegistrationError("no valid render at any probed pose")

    pose = pose_from_params(best_x, cost.centroid)
    per_view = cost.per_view(pose)
    residual_px = float(np.mean(per_view))
    converged = best_stall and residual_px <= cfg.accept_residual_px
    return RegistrationResult(
        pose=pose,
        residual_px=residual_px,
        residual_mm=residual_px * cost.mm_per_px(pose),
        converged=converged,
        iterations=cost.evaluations,
        per_view_px={o.view.name: float(v)
                     for o, v in zip(cost.obs, per_view)},
    )


def register_single_view(camera: Camera, mesh: TriMesh, target: Contour,
                         init: RigidTransform,
                         cfg: RegistrationConfig = None,
                         view: ViewDefinition = None) -> RegistrationResult:
    """Single-view pose search; depth is only weakly observable here."""
    view = view or ViewDefinition("ap", 0.0)
    return register_multi_view([ViewObservation(view, camera, target)],
                               mesh, init, cfg)


def _nelder_mead_run(cost: _MultiViewCost, x0: np.ndarray,
                     cfg: RegistrationConfig):
    simplex = np.tile(x0, (_DIM + 1, 1))
    for k in range(3):
        simplex[k + 1, k] += cfg.simplex_scale_deg
    for k in range(3, _DIM):
        simplex[k + 1, k] += cfg.simplex_scale_mm
    cost.stall_count = 0
    res = optimize.minimize(
        cost, x0, method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "maxfev": cfg.max_iterations,
            "xatol": 0.01,
            "fatol": cfg.tolerance_px,
            "disp": False,
        })
    stall = cost.stall_count >= 2 * (_DIM + 1)
    return np.asarray(res.x), float(res.fun), stall
