"""Constructed closed test meshes with known genus.

The icosphere and torus grid are exact triangulations (Euler characteristic
2 and 0 by construction).  The genus-2 surface is extracted from a smooth
implicit double-torus field with marching cubes; its Euler characteristic is
checked by the callers that care.
"""

from __future__ import annotations

import numpy as np

from .cloud_io import TriMesh


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    for _ in range(subdivisions):
        edge_mid = {}
        new_faces = []
        verts_list = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in edge_mid:
                m = verts_list[i] + verts_list[j]
                m /= np.linalg.norm(m)
                edge_mid[key] = len(verts_list)
                verts_list.append(m)
            return edge_mid[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    return TriMesh(verts * radius, faces)


def torus_grid(nu: int = 48, nv: int = 96, R: float = 2.0, r: float = 0.8) -> TriMesh:
    """Quad grid over the torus parameterization, split into triangles."""
    iu, iv = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    u = 2.0 * np.pi * iu / nu
    v = 2.0 * np.pi * iv / nv
    x = (R + r * np.cos(u)) * np.cos(v)
    y = (R + r * np.cos(u)) * np.sin(v)
    z = r * np.sin(u)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)

    def vid(i, j):
        return (i % nu) * nv + (j % nv)

    faces = []
    for i in range(nu):
        for j in range(nv):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriMesh(verts, np.array(faces, dtype=np.int64))


def genus2_mesh(resolution: int = 96, level: float = 0.04) -> TriMesh:
    """Closed genus-2 surface: level set of a smooth double-torus field.

    The default level gives a fat tube whose curvature stays well resolved
    at ~10k surface samples.
    """
    from skimage.measure import marching_cubes

    lin = np.linspace(-1.6, 1.6, resolution)
    x, y, z = np.meshgrid(lin, lin, lin, indexing="ij")
    # Tube around the figure-eight curve x^2 (1 - x^2) = y^2.
    f = (x ** 2 * (1.0 - x ** 2) - y ** 2) ** 2 + 0.5 * z ** 2
    step = lin[1] - lin[0]
    verts, faces, _, _ = marching_cubes(f, level=level, spacing=(step, step, step))
    verts += np.array([lin[0], lin[0], lin[0]])
    return TriMesh(verts, faces.astype(np.int64))


def genus_mesh(genus: int, **kwargs) -> TriMesh:
    if genus == 0:
        return icosphere(**({"subdivisions": 3} | kwargs))
    if genus == 1:
        return torus_grid(**kwargs)
    if genus == 2:
        return genus2_mesh(**kwargs)
    raise ValueError(f"no constructed mesh for genus {genus}")
