"""Silhouette-driven 3D implant reconstruction.

Reconstructs an implant mesh from four calibrated 2D silhouette contours:
pose registration of a template, silhouette-guided template morphing, and
fidelity evaluation (ICP-aligned per-vertex surface errors, heatmaps,
cohort statistics) plus femorotibial kinematics comparison.
"""

from . import (  # noqa: F401
    evaluation,
    geometry,
    imaging,
    kinematics,
    morphing,
    registration,
    shapes,
)
from .errors import SilmorphError  # noqa: F401
from .geometry import (  # noqa: F401
    Aabb,
    MeshIndex,
    RigidTransform,
    SurfaceHit,
    TriMesh,
    bounding_box,
    build_spatial_index,
    closest_point_on_surface,
    load_mesh,
    save_mesh,
    scale_mesh,
    transform_mesh,
)
from .imaging import (  # noqa: F401
    Camera,
    Contour,
    Mask,
    SyntheticCase,
    ViewDefinition,
    ViewObservation,
    distance_field,
    export_coco,
    extract_contour,
    generate_synthetic_case,
    import_mask,
    project_point,
    render_silhouette,
    standard_views,
)

__version__ = "0.1.0"
