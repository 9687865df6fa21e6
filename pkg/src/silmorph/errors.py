"""Exception types shared across the package.

The CLI maps these onto stable exit codes (config = 2, stage = 3, I/O = 4),
so library code should raise the most specific type that applies.
"""


class SilmorphError(Exception):
    """Base class for all package errors."""


class MeshError(SilmorphError):
    """Invalid mesh data (bad indices, degenerate faces, non-finite coords)."""


class EmptyMeshError(MeshError):
    """A mesh with no vertices or no triangles where one is required."""


class MeshLoadError(MeshError):
    """Unreadable or malformed mesh file."""


class NonOrientableMeshError(MeshError):
    """Winding repair failed: the surface admits no consistent orientation."""


class RenderError(SilmorphError):
    """Silhouette rendering failed at the given camera/pose."""


class MeshBehindSourceError(RenderError):
    """Some vertex is at or behind the projection source."""


class EmptyFootprintError(RenderError):
    """The projected mesh covers no pixel of the image."""


class EmptyMaskError(SilmorphError):
    """A mask with no foreground pixels where foreground is required."""


class EmptyContourError(SilmorphError):
    """A contour with no points where points are required."""


class RegistrationError(SilmorphError):
    """Pose search could not be carried out (no valid render at any pose)."""


class MorphError(SilmorphError):
    """Morphing could not proceed (no rim vertices, no improvement in bracket)."""


class DegenerateCorrespondenceError(SilmorphError):
    """ICP correspondence set has rank < 3; rigid fit is underdetermined."""


class ConfigError(SilmorphError):
    """Invalid or incomplete run configuration."""


class StageError(SilmorphError):
    """A pipeline stage failed; carries the stage name for reporting."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class NoGroundTruthError(ConfigError):
    """Evaluation requested for a case that has no ground-truth mesh."""
