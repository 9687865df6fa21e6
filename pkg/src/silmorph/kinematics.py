"""Femorotibial translation and axial rotation curves from per-frame poses.

Conventions: tibial frame axes are (anterior, lateral, proximal) = (x, y, z).
AP translation is the anterior component of the femoral origin expressed in
the tibial frame. The relative rotation is decomposed in the Cardan sequence
flexion (about lateral y) -> adduction (about anterior x) -> axial (about
proximal z); the axial angle is the reported rotation channel.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, rot_x_deg, rot_y_deg, rot_z_deg

GIMBAL_TOL_DEG = 1e-6


@dataclass(frozen=True)
class FramePoses:
    frame: int
    femur: RigidTransform
    tibia: RigidTransform
    flexion_deg: float = None  # optional activity label


@dataclass(frozen=True)
class KinematicsTrace:
    ap_mm: np.ndarray        # per-frame anterior-posterior translation
    axial_deg: np.ndarray    # per-frame axial rotation
    flexion_deg: np.ndarray  # labels (nan where absent)
    gimbal_frames: tuple = ()

    def __post_init__(self):
        ap = np.asarray(self.ap_mm, dtype=np.float64)
        ax = np.asarray(self.axial_deg, dtype=np.float64)
        fl = np.asarray(self.flexion_deg, dtype=np.float64)
        if not (len(ap) == len(ax) == len(fl)):
            raise ValueError("trace channels must have equal length")
        if not (np.isfinite(ap).all() and np.isfinite(ax).all()):
            raise ValueError("trace values must be finite")
        for name, arr in (("ap_mm", ap), ("axial_deg", ax),
                          ("flexion_deg", fl)):
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.ap_mm)


@dataclass(frozen=True)
class KinematicsError:
    translation_mean_mm: float   # mean of absolute per-frame differences
    translation_std_mm: float    # population std of those differences
    rotation_mean_deg: float
    rotation_std_deg: float
    translation_abs_diff_mm: np.ndarray
    rotation_abs_diff_deg: np.ndarray

    def to_json(self) -> dict:
        return {
            "translation_mean_mm": self.translation_mean_mm,
            "translation_std_mm": self.translation_std_mm,
            "rotation_mean_deg": self.rotation_mean_deg,
            "rotation_std_deg": self.rotation_std_deg,
        }


def relative_pose(femur: RigidTransform, tibia: RigidTransform) -> RigidTransform:
    """Femur pose expressed in the tibia frame: tibia^-1 ∘ femur."""
    return tibia.inverse().compose(femur)


def cardan_compose_deg(flexion: float, adduction: float, axial: float) -> np.ndarray:
    """Rotation matrix for the flexion -> adduction -> axial sequence."""
    return rot_y_deg(flexion) @ rot_x_deg(adduction) @ rot_z_deg(axial)


def cardan_decompose_deg(r: np.ndarray):
    """(flexion, adduction, axial) degrees; unique for |adduction| < 90°."""
    adduction = np.degrees(np.arcsin(np.clip(-r[1, 2], -1.0, 1.0)))
    flexion = np.degrees(np.arctan2(r[0, 2], r[2, 2]))
    axial = np.degrees(np.arctan2(r[1, 0], r[1, 1]))
    return flexion, adduction, axial


def reduce_trace(frames, conventions=None) -> KinematicsTrace:
    """Per-frame AP translation and axial rotation of femur vs tibia.

    Frames whose adduction is within 1e-6° of gimbal lock are flagged and
    their axial value is carried from the nearest preceding valid frame
    (leading degenerate frames take the first valid value).
    """
    frames = list(frames)
    if not frames:
        raise ValueError("reduce_trace needs at least one frame")
    ap = np.empty(len(frames))
    axial = np.empty(len(frames))
    flexion_labels = np.full(len(frames), np.nan)
    gimbal = []
    for i, fr in enumerate(frames):
        rel = relative_pose(fr.femur, fr.tibia)
        ap[i] = rel.translation[0]
        _, add, ax = cardan_decompose_deg(rel.rotation)
        if abs(abs(add) - 90.0) <= GIMBAL_TOL_DEG:
            gimbal.append(i)
            axial[i] = np.nan
        else:
            axial[i] = ax
        if fr.flexion_deg is not None:
            flexion_labels[i] = fr.flexion_deg
    if gimbal:
        valid = np.flatnonzero(np.isfinite(axial))
        if len(valid) == 0:
            raise ValueError("every frame is gimbal-degenerate")
        for i in gimbal:
            prior = valid[valid < i]
            axial[i] = axial[prior[-1]] if len(prior) else axial[valid[0]]
    return KinematicsTrace(ap_mm=ap, axial_deg=axial,
                           flexion_deg=flexion_labels,
                           gimbal_frames=tuple(gimbal))


def compare_traces(recon: KinematicsTrace, truth: KinematicsTrace) -> KinematicsError:
    """Mean and population std of absolute per-frame channel differences."""
    if len(recon) != len(truth):
        raise ValueError(
            f"frame counts differ: {len(recon)} vs {len(truth)}")
    dt = np.abs(recon.ap_mm - truth.ap_mm)
    dr = np.abs(recon.axial_deg - truth.axial_deg)
    return KinematicsError(
        translation_mean_mm=float(dt.mean()),
        translation_std_mm=float(dt.std()),
        rotation_mean_deg=float(dr.mean()),
        rotation_std_deg=float(dr.std()),
        translation_abs_diff_mm=dt,
        rotation_abs_diff_deg=dr,
    )


# ---------------------------------------------------------------------------
# trace files


def save_trace(trace: KinematicsTrace, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "flexion_deg", "ap_mm", "axial_deg"])
        for i in range(len(trace)):
            fl = trace.flexion_deg[i]
            writer.writerow([i, "" if np.isnan(fl) else repr(float(fl)),
                             repr(float(trace.ap_mm[i])),
                             repr(float(trace.axial_deg[i]))])


def load_trace(path) -> KinematicsTrace:
    ap, axial, flexion = [], [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"frame", "flexion_deg", "ap_mm", "axial_deg"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(required)}")
        for row in reader:
            ap.append(float(row["ap_mm"]))
            axial.append(float(row["axial_deg"]))
            flexion.append(float(row["flexion_deg"])
                           if row["flexion_deg"] else np.nan)
    if not ap:
        raise ValueError(f"{path}: no frames")
    return KinematicsTrace(ap_mm=np.array(ap), axial_deg=np.array(axial),
                           flexion_deg=np.array(flexion))


def save_comparison(err: KinematicsError, json_path, csv_path=None) -> None:
    with open(json_path, "w") as f:
        json.dump(err.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame", "translation_abs_diff_mm",
                             "rotation_abs_diff_deg"])
            for i, (t, r) in enumerate(zip(err.translation_abs_diff_mm,
                                           err.rotation_abs_diff_deg)):
                writer.writerow([i, repr(float(t)), repr(float(r))])
