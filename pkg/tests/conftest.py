import numpy as np
import pytest

from silmorph import geometry as geo
from silmorph import imaging as im
from silmorph import shapes


@pytest.fixture(scope="session")
def unit_cube():
    return shapes.box((1.0, 1.0, 1.0))


@pytest.fixture(scope="session")
def template_mesh():
    """Convex rounded-box template used across module tests."""
    return shapes.superellipsoid((30.0, 25.0, 20.0), 4.0, subdivisions=3)


@pytest.fixture(scope="session")
def small_template():
    return shapes.superellipsoid((30.0, 25.0, 20.0), 4.0, subdivisions=2)


@pytest.fixture(scope="session")
def camera_512():
    return im.Camera(sdd_mm=1000.0, pitch_mm=0.5, width_px=512, height_px=512)


@pytest.fixture(scope="session")
def true_pose():
    r = geo.rot_x_deg(3.0) @ geo.rot_z_deg(-4.0)
    return geo.RigidTransform(r, np.array([2.0, -3.0, 500.0]))


@pytest.fixture(scope="session")
def synthetic_case_512(template_mesh, camera_512, true_pose):
    """Self-case (scale 1.0) at 512^2."""
    return im.generate_synthetic_case(template_mesh, 1.0, camera_512,
                                      true_pose, case_id="self512")


@pytest.fixture(scope="session")
def scaled_case_512(template_mesh, camera_512, true_pose):
    """x1.10 size-series case at 512^2."""
    return im.generate_synthetic_case(template_mesh, 1.10, camera_512,
                                      true_pose, case_id="scaled512")


# ---------------------------------------------------------------------------
# independent oracles shared by several test modules


def point_segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def oracle_triangle_distance(p, a, b, c):
    """Independent point-triangle distance: perpendicular foot when its
    barycentrics are inside, else the minimum over the three edge segments."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    candidates = [point_segment_distance(p, a, b),
                  point_segment_distance(p, b, c),
                  point_segment_distance(p, c, a)]
    q = p - np.dot(p - a, n) * n
    v0, v1, v2 = b - a, c - a, q - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    if v >= 0 and w >= 0 and v + w <= 1:
        candidates.append(abs(float(np.dot(p - a, n))))
    return min(candidates)


def exhaustive_closest(mesh, query):
    """Same-kernel exhaustive scan: the reference for index pruning tests."""
    corners = mesh.triangle_corners()
    q = np.tile(np.asarray(query, dtype=np.float64), (len(corners), 1))
    pts, d2 = geo.closest_point_on_triangles(corners, q)
    d = np.sqrt(d2)
    best = int(np.argmin(d))  # argmin returns the lowest tied index
    return pts[best], best, float(d[best])
