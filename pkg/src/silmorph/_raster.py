"""Numba kernel for deterministic triangle rasterization into a binary mask."""

import numpy as np
from numba import njit


@njit(cache=True)
def fill_triangles(tx, ty, width, height, out):
    """Set out[y, x] = 255 for every pixel center covered by any triangle.

    tx, ty: (m, 3) projected pixel coordinates. Pixel centers sit on the
    integer lattice. Coverage is strict-interior plus a top-left style tie
    rule on edges so that shared edges are claimed by exactly one triangle.
    """
    m = tx.shape[0]
    for k in range(m):
        x0 = tx[k, 0]
        y0 = ty[k, 0]
        x1 = tx[k, 1]
        y1 = ty[k, 1]
        x2 = tx[k, 2]
        y2 = ty[k, 2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        if area < 0.0:
            x1, x2 = x2, x1
            y1, y2 = y2, y1
        lo_x = min(x0, min(x1, x2))
        hi_x = max(x0, max(x1, x2))
        lo_y = min(y0, min(y1, y2))
        hi_y = max(y0, max(y1, y2))
        ix0 = max(0, int(np.ceil(lo_x)))
        ix1 = min(width - 1, int(np.floor(hi_x)))
        iy0 = max(0, int(np.ceil(lo_y)))
        iy1 = min(height - 1, int(np.floor(hi_y)))
        if ix1 < ix0 or iy1 < iy0:
            continue
        e0x = x1 - x0
        e0y = y1 - y0
        e1x = x2 - x1
        e1y = y2 - y1
        e2x = x0 - x2
        e2y = y0 - y2
        acc0 = e0y > 0.0 or (e0y == 0.0 and e0x < 0.0)
        acc1 = e1y > 0.0 or (e1y == 0.0 and e1x < 0.0)
        acc2 = e2y > 0.0 or (e2y == 0.0 and e2x < 0.0)
        for py in range(iy0, iy1 + 1):
            fy = float(py)
            for px in range(ix0, ix1 + 1):
                fx = float(px)
                c0 = e0x * (fy - y0) - e0y * (fx - x0)
                if c0 < 0.0 or (c0 == 0.0 and not acc0):
                    continue
                c1 = e1x * (fy - y1) - e1y * (fx - x1)
                if c1 < 0.0 or (c1 == 0.0 and not acc1):
                    continue
                c2 = e2x * (fy - y2) - e2y * (fx - x2)
                if c2 < 0.0 or (c2 == 0.0 and not acc2):
                    continue
                out[py, px] = 255
