"""Command-line pipeline over case directories.

Subcommands: synth, import-masks, reconstruct, evaluate, cohort, kinematics.
A case directory is the unit of persistence:

    case/
      case.json                  run configuration
      template.stl  truth.stl
      views/{ap,ml,rot+45,rot-45}/
          camera.json mask.pgm contour.json pose_true.json
      registration.json morphed.stl morph_*.csv morph_summary.json
      report.json errors.csv heatmap.ply
      run_log.jsonl              stage log (the only file with timings)

Exit codes: 0 success, 2 config error, 3 stage error, 4 I/O error.
SILMORPH_OUTPUT_ROOT sets the default output root for synth.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, kinematics, morphing, registration, shapes
from .errors import (
    ConfigError,
    EmptyContourError,
    EmptyMaskError,
    MeshLoadError,
    NoGroundTruthError,
    SilmorphError,
    StageError,
)
from .geometry import (
    RigidTransform,
    build_spatial_index,
    load_mesh,
    rot_x_deg,
    rot_y_deg,
    rot_z_deg,
    save_mesh,
    save_pose,
    transform_mesh,
)
from .imaging import (
    Camera,
    NoiseConfig,
    ViewObservation,
    generate_synthetic_case,
    extract_contour,
    import_mask,
    load_camera,
    load_contour,
    save_camera,
    save_contour,
    save_mask_pgm,
    standard_views,
)

VIEW_NAMES = ("ap", "ml", "rot+45", "rot-45")
DEFAULT_RESOLUTION = 1024
DEFAULT_PITCH_AT_1024 = 0.25
DEFAULT_DEPTH_MM = 500.0

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_IO = 4


@dataclass(frozen=True)
class CaseConfig:
    case_id: str
    template: str = None           # STL path; alternative to `shape`
    shape: dict = None             # generator spec for synthetic templates
    scale: float = 1.0
    seed: int = 0
    resolution: int = DEFAULT_RESOLUTION
    camera: dict = None
    pose: dict = None              # true pose; seeded perturbation if absent
    init_pose: dict = None         # registration start; nominal if absent
    anchor_depth: bool = True      # re-gauge registered depth to the init plane
    noise: dict = None
    registration: dict = field(default_factory=dict)
    morph: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, doc: dict, source: str = "case.json") -> "CaseConfig":
        if "case_id" not in doc:
            raise ConfigError(f"{source}: missing required field 'case_id'")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"{source}: unknown fields {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class CaseResult:
    case_id: str
    registration: registration.RegistrationResult
    morph_summary: dict
    report: evaluation.ErrorReport = None
    artifacts: dict = field(default_factory=dict)
    timings_s: dict = field(default_factory=dict)


class RunLog:
    """Append-only JSON-lines stage log; the only artifact carrying timings."""

    def __init__(self, directory):
        self.path = Path(directory) / "run_log.jsonl"

    def record(self, stage: str, status: str, duration_s: float, warnings=()):
        entry = {"stage": stage, "status": status,
                 "duration_s": round(duration_s, 6),
                 "warnings": list(warnings)}
        with open(self.path, "a") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")


class _Stage:
    def __init__(self, log: RunLog, name: str):
        self.log, self.name = log, name
        self.warnings = []

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "ok" if exc_type is None else "error"
        self.log.record(self.name, status, time.perf_counter() - self.t0,
                        self.warnings)
        if exc_type is None or not issubclass(exc_type, SilmorphError):
            return False
        # config and file-format errors keep their own exit codes
        if issubclass(exc_type, (StageError, ConfigError, MeshLoadError)):
            return False
        raise StageError(self.name, str(exc)) from exc


# ---------------------------------------------------------------------------
# config helpers


def _load_case_config(case_dir: Path, overrides: dict = None) -> CaseConfig:
    path = case_dir / "case.json"
    if not path.exists():
        raise ConfigError(f"{path}: not found")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise MeshLoadError(f"{path}: invalid JSON: {e}") from e
    if overrides:
        doc.update({k: v for k, v in overrides.items() if v is not None})
    return CaseConfig.from_json(doc, str(path))


def _camera_for(config: CaseConfig) -> Camera:
    if config.camera is not None:
        cam = Camera.from_json(config.camera)
    else:
        cam = Camera()
    if config.resolution != cam.width_px:
        # rescale to the requested resolution keeping the field of view
        pitch = cam.pitch_mm * cam.width_px / config.resolution
        cam = Camera(sdd_mm=cam.sdd_mm, pitch_mm=pitch,
                     width_px=config.resolution, height_px=config.resolution)
    return cam


def _pose_from_config(doc: dict) -> RigidTransform:
    rx, ry, rz = doc.get("rotation_deg", [0.0, 0.0, 0.0])
    r = rot_x_deg(rx) @ rot_y_deg(ry) @ rot_z_deg(rz)
    return RigidTransform(r, np.asarray(doc["translation_mm"], dtype=np.float64))


def _true_pose(config: CaseConfig) -> RigidTransform:
    """Seeded rotation and in-plane offset; depth stays on the calibrated
    object plane (absolute size is only observable given that depth)."""
    if config.pose is not None:
        return _pose_from_config(config.pose)
    rng = np.random.default_rng(config.seed)
    ang = rng.uniform(-5.0, 5.0, 3)
    offset = rng.uniform(-5.0, 5.0, 2)
    r = rot_x_deg(ang[0]) @ rot_y_deg(ang[1]) @ rot_z_deg(ang[2])
    return RigidTransform(
        r, np.array([offset[0], offset[1], DEFAULT_DEPTH_MM]))


def _init_pose(config: CaseConfig) -> RigidTransform:
    if config.init_pose is not None:
        return _pose_from_config(config.init_pose)
    return RigidTransform(np.eye(3), np.array([0.0, 0.0, DEFAULT_DEPTH_MM]))


def _template_mesh(config: CaseConfig, case_dir: Path):
    if config.template:
        path = Path(config.template)
        if not path.is_absolute():
            path = case_dir / path
        if not path.exists():
            raise ConfigError(f"template mesh not found: {path}")
        return load_mesh(path)
    if config.shape:
        return _shape_mesh(config.shape)
    raise ConfigError("case config needs either 'template' or 'shape'")


def _shape_mesh(spec: dict):
    kind = spec.get("kind")
    if kind == "superellipsoid":
        return shapes.superellipsoid(
            semi_axes=tuple(spec.get("semi_axes", (30.0, 25.0, 20.0))),
            exponent=float(spec.get("exponent", 4.0)),
            subdivisions=int(spec.get("subdivisions", 3)))
    if kind == "ellipsoid":
        return shapes.ellipsoid(
            semi_axes=tuple(spec.get("semi_axes", (35.0, 22.0, 25.0))),
            subdivisions=int(spec.get("subdivisions", 3)))
    if kind == "box":
        return shapes.box(size=tuple(spec.get("size", (20.0, 20.0, 10.0))))
    raise ConfigError(f"unknown shape kind {kind!r}")


def _registration_config(config: CaseConfig) -> registration.RegistrationConfig:
    return registration.RegistrationConfig(
        seed=config.seed, **config.registration)


def _morph_config(config: CaseConfig) -> morphing.MorphConfig:
    doc = dict(config.morph)
    if "prefit_bracket" in doc:
        doc["prefit_bracket"] = tuple(doc["prefit_bracket"])
    return morphing.MorphConfig(**doc)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(config, out_dir=None) -> Path:
    """Generate a synthetic case directory from a config dict or JSON path."""
    if isinstance(config, (str, Path)):
        with open(config) as f:
            doc = json.load(f)
        config = CaseConfig.from_json(doc, str(config))
    elif isinstance(config, dict):
        config = CaseConfig.from_json(config, "<config>")
    root = Path(out_dir) if out_dir else (
        Path(os.environ.get("SILMORPH_OUTPUT_ROOT", ".")) / config.case_id)
    root.mkdir(parents=True, exist_ok=True)
    log = RunLog(root)
    with _Stage(log, "synth"):
        template = _template_mesh(config, root)
        camera = _camera_for(config)
        pose = _true_pose(config)
        noise = NoiseConfig(**config.noise) if config.noise else None
        case = generate_synthetic_case(
            template, config.scale, camera, pose, noise=noise,
            case_id=config.case_id)
        save_mesh(template, root / "template.stl")
        save_mesh(case.truth, root / "truth.stl")
        with open(root / "case.json", "w") as f:
            doc = {k: getattr(config, k)
                   for k in CaseConfig.__dataclass_fields__}
            doc = {k: v for k, v in doc.items()
                   if v not in (None, {}) or k in ("case_id", "scale", "seed")}
            doc["template"] = "template.stl"
            doc.pop("shape", None)
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        for record in case.views:
            vdir = root / "views" / record.view.name
            vdir.mkdir(parents=True, exist_ok=True)
            save_camera(record.camera, vdir / "camera.json")
            save_mask_pgm(record.mask, vdir / "mask.pgm")
            save_contour(record.contour, vdir / "contour.json")
            save_pose(record.pose, vdir / "pose_true.json")
    return root


def _load_observations(case_dir: Path):
    views = {v.name: v for v in standard_views()}
    observations = []
    for name in VIEW_NAMES:
        vdir = case_dir / "views" / name
        cam_path, contour_path = vdir / "camera.json", vdir / "contour.json"
        for p in (cam_path, contour_path):
            if not p.exists():
                raise ConfigError(f"view {name}: missing {p.name} in {vdir}")
        try:
            camera = load_camera(cam_path)
            contour = load_contour(contour_path)
        except (json.JSONDecodeError, KeyError, ValueError,
                EmptyContourError) as e:
            raise MeshLoadError(
                f"view {name}: unreadable {vdir} file: {e}") from e
        observations.append(ViewObservation(views[name], camera, contour))
    return observations


def cmd_reconstruct(case_dir, overrides: dict = None) -> CaseResult:
    """Register then morph the template against a case's target contours."""
    case_dir = Path(case_dir)
    config = _load_case_config(case_dir, overrides)
    log = RunLog(case_dir)
    timings = {}
    t0 = time.perf_counter()
    with _Stage(log, "load_inputs"):
        template = _template_mesh(config, case_dir)
        observations = _load_observations(case_dir)
    timings["load_inputs"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _Stage(log, "register"):
        reg = registration.register_multi_view(
            observations, template, _init_pose(config),
            _registration_config(config))
        from .geometry import pose_to_json
        reg_doc = {
            "pose": pose_to_json(reg.pose),
            "residual_px": reg.residual_px,
            "residual_mm": reg.residual_mm,
            "converged": reg.converged,
            "iterations": reg.iterations,
            "per_view_px": reg.per_view_px,
        }
        with open(case_dir / "registration.json", "w") as f:
            json.dump(reg_doc, f, indent=2, sort_keys=True)
            f.write("\n")
    timings["register"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _Stage(log, "morph") as stage:
        # A point source cannot tell a larger implant from a nearer one:
        # silhouettes are invariant to scaling about the source. Re-gauge
        # the registered pose onto the calibrated object plane so the
        # similarity prefit sees the size difference instead of a depth
        # offset absorbing it.
        morph_pose = reg.pose
        if config.anchor_depth:
            tz0 = _init_pose(config).translation[2]
            tz = reg.pose.translation[2]
            gauge = tz0 / tz if tz > 1.0 else np.nan
            if np.isfinite(gauge) and 0.5 <= gauge <= 2.0:
                morph_pose = RigidTransform(reg.pose.rotation,
                                            reg.pose.translation * gauge)
            else:
                stage.warnings.append(
                    f"depth anchor skipped: gauge {gauge!r} out of range")
        result = morphing.morph(template, observations, morph_pose,
                                _morph_config(config))
        paths = morphing.save_morph_result(result, case_dir)
    timings["morph"] = time.perf_counter() - t0
    paths["registration"] = str(case_dir / "registration.json")

    with open(case_dir / "morph_summary.json") as f:
        summary = json.load(f)
    return CaseResult(case_id=config.case_id, registration=reg,
                      morph_summary=summary, artifacts=paths,
                      timings_s=timings)


def cmd_evaluate(case_dir) -> evaluation.ErrorReport:
    """ICP-align morphed vs truth, write per-vertex errors and the report."""
    case_dir = Path(case_dir)
    config = _load_case_config(case_dir)
    log = RunLog(case_dir)
    truth_path = case_dir / "truth.stl"
    morphed_path = case_dir / "morphed.stl"
    if not truth_path.exists():
        raise NoGroundTruthError(
            f"{case_dir}: no ground truth (truth.stl) for evaluation")
    if not morphed_path.exists():
        raise ConfigError(f"{case_dir}: morphed.stl missing; run reconstruct")
    with _Stage(log, "evaluate"):
        truth = load_mesh(truth_path)
        morphed = load_mesh(morphed_path)
        index = build_spatial_index(truth)
        icp = evaluation.icp_align(morphed, index)
        aligned = transform_mesh(morphed, icp.transform)
        distances = evaluation.vertex_surface_errors(aligned, index)
        report = evaluation.error_report(distances, case_id=config.case_id)
        evaluation.save_report(report, case_dir / "report.json")
        evaluation.export_heatmap(aligned, distances,
                                  case_dir / "heatmap.ply",
                                  csv_path=case_dir / "errors.csv")
    return report


def cmd_cohort(case_dirs, out_dir=".") -> evaluation.CohortSummary:
    """Aggregate evaluated cases into the cohort table and summary."""
    reports = []
    for d in case_dirs:
        path = Path(d) / "report.json"
        if not path.exists():
            raise ConfigError(f"{d}: not evaluated (report.json missing)")
        doc = evaluation.load_report_summary(path)
        reports.append(evaluation.ErrorReport(
            case_id=doc["case_id"],
            distances_mm=np.array([doc["rms_mm"]]),
            rms_mm=doc["rms_mm"], largest_mm=doc["largest_mm"],
            largest_vertex=doc["largest_vertex"]))
    if not reports:
        raise ConfigError("cohort needs at least one evaluated case")
    summary = evaluation.summarize_cohort(reports)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.save_cohort(summary, out / "cohort.csv",
                           out / "cohort_summary.json")
    RunLog(out).record("cohort", "ok", 0.0)
    return summary


def cmd_kinematics(recon_csv, truth_csv, out_dir=".") -> kinematics.KinematicsError:
    """Compare two kinematics trace CSVs frame by frame."""
    try:
        recon = kinematics.load_trace(recon_csv)
        truth = kinematics.load_trace(truth_csv)
    except ValueError as e:
        raise MeshLoadError(f"malformed trace CSV: {e}") from e
    try:
        err = kinematics.compare_traces(recon, truth)
    except ValueError as e:
        raise StageError("kinematics", str(e)) from e
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kinematics.save_comparison(err, out / "kinematics_comparison.json",
                               out / "kinematics_diff.csv")
    return err


def cmd_import_masks(case_dir, mask_paths: dict) -> dict:
    """Threshold external mask files and write per-view contours.

    mask_paths maps view names (ap, ml, rot+45, rot-45) to image files.
    Multi-component masks use the largest component and are flagged in the
    run log.
    """
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    missing = [n for n in VIEW_NAMES if n not in mask_paths]
    if missing:
        raise ConfigError(f"missing mask(s) for view(s): {', '.join(missing)}")
    log = RunLog(case_dir)
    written = {}
    with _Stage(log, "import_masks") as stage:
        for name in VIEW_NAMES:
            mask = import_mask(mask_paths[name])
            if mask.foreground_count == 0:
                raise EmptyMaskError(f"view {name}: mask is empty")
            contour = extract_contour(mask)
            if contour.fragmented:
                stage.warnings.append(
                    f"view {name}: multiple components, largest kept")
            vdir = case_dir / "views" / name
            vdir.mkdir(parents=True, exist_ok=True)
            save_mask_pgm(mask, vdir / "mask.pgm")
            save_contour(contour, vdir / "contour.json")
            written[name] = str(vdir / "contour.json")
    return written


# ---------------------------------------------------------------------------
# argument parsing / process exit


def _run_reconstruct_one(args_tuple):
    case_dir, overrides = args_tuple
    cmd_reconstruct(case_dir, overrides)
    return str(case_dir)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="silmorph",
        description="Silhouette-driven implant reconstruction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic case directory")
    p.add_argument("--config", required=True, help="case config JSON")
    p.add_argument("--out", default=None, help="output case directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resolution", type=int, default=None)

    p = sub.add_parser("reconstruct", help="register + morph case directories")
    p.add_argument("--case", action="append", required=True, dest="cases")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resolution", type=int, default=None)

    p = sub.add_parser("evaluate", help="ICP + per-vertex error report")
    p.add_argument("--case", action="append", required=True, dest="cases")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("cohort", help="aggregate evaluated cases")
    p.add_argument("--case", action="append", required=True, dest="cases")
    p.add_argument("--out", default=".")

    p = sub.add_parser("kinematics", help="compare two trace CSVs")
    p.add_argument("recon_csv")
    p.add_argument("truth_csv")
    p.add_argument("--out", default=".")

    p = sub.add_parser("import-masks", help="threshold masks into contours")
    p.add_argument("--case", required=True)
    p.add_argument("masks", nargs="+",
                   help="view=path pairs, e.g. ap=a.pgm ml=b.pgm")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshLoadError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except SilmorphError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE


def _dispatch(args) -> int:
    if args.command == "synth":
        overrides = {"seed": args.seed, "resolution": args.resolution}
        with open(args.config) as f:
            doc = json.load(f)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        cmd_synth(doc, args.out)
        return EXIT_OK
    if args.command == "reconstruct":
        overrides = {"seed": args.seed, "resolution": args.resolution}
        work = [(c, overrides) for c in args.cases]
        if args.jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                list(pool.map(_run_reconstruct_one, work))
        else:
            for item in work:
                _run_reconstruct_one(item)
        return EXIT_OK
    if args.command == "evaluate":
        for c in args.cases:
            cmd_evaluate(c)
        return EXIT_OK
    if args.command == "cohort":
        cmd_cohort(args.cases, args.out)
        return EXIT_OK
    if args.command == "kinematics":
        cmd_kinematics(args.recon_csv, args.truth_csv, args.out)
        return EXIT_OK
    if args.command == "import-masks":
        pairs = {}
        for item in args.masks:
            if "=" not in item:
                raise ConfigError(f"expected view=path, got {item!r}")
            name, path = item.split("=", 1)
            pairs[name] = path
        cmd_import_masks(args.case, pairs)
        return EXIT_OK
    raise ConfigError(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
