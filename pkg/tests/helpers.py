"""Independent oracles shared across test modules.

These deliberately reimplement functionality with the dumbest correct
algorithm (scalar loops, exhaustive checks) so they cannot share bugs
with the vectorized implementations they verify.
"""

import numpy as np


def oracle_point_in_polygon(vertices, px, py, tol=1e-9):
    """Scalar even-odd crossing test, boundary inclusive."""
    n = len(vertices)
    inside = False
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        # boundary check
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        if seg2 > 0:
            cross = dx * (py - y1) - dy * (px - x1)
            t = ((px - x1) * dx + (py - y1) * dy) / seg2
            if abs(cross) / np.sqrt(seg2) <= tol and -1e-12 <= t <= 1 + 1e-12:
                return True
        if (y1 > py) != (y2 > py):
            x_at = x1 + (py - y1) * dx / dy
            if px < x_at:
                inside = not inside
    return inside


def oracle_enclosed_pixels(vertices, width, height):
    """Brute force: test every pixel in the image."""
    out = []
    for v in range(height):
        for u in range(width):
            if oracle_point_in_polygon(vertices, u, v):
                out.append((u, v))
    return out


def random_star_polygon(rng, n_min=3, n_max=10, center=(20.0, 20.0), r_min=2.0, r_max=9.0):
    """Random simple polygon (star-shaped about its center).

    Angle-sorted vertices only form a simple polygon when every angular
    gap stays below pi (otherwise a chord can pass behind the center), so
    gaps are rejection-sampled into (1e-3, 2.8).
    """
    n = int(rng.integers(n_min, n_max + 1))
    while True:
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))
        if gaps.min() > 1e-3 and gaps.max() < 2.8:
            break
    radii = rng.uniform(r_min, r_max, n)
    return np.column_stack([center[0] + radii * np.cos(angles),
                            center[1] + radii * np.sin(angles)])


def random_rotation(rng):
    """Uniform-ish random rotation matrix from a random axis-angle."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, 2 * np.pi)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def cluster_components(points, linkage):
    """Single-linkage connected components via pair enumeration."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    for i, j in tree.query_pairs(linkage):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    roots = {find(i) for i in range(n)}
    groups = {r: [] for r in roots}
    for i in range(n):
        groups[find(i)].append(i)
    return [pts[idx] for idx in groups.values()]


def central_difference(fn, x, h=1e-6):
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g
