"""Per-point neighborhoods, PCA moving frames, and normal orientation.

The moving frame at each point is (t, t_prime, n): two tangent vectors and a
normal, orthonormal.  PCA frames come from the trace-normalized covariance
of the k nearest neighbors; orientation makes normal signs consistent, either
by propagating along a Euclidean minimum spanning tree, by matching input
normals, or by pointing away from the centroid.

A spherical-angle chart (phi, theta) -> n = (sin t cos p, sin t sin p, cos t)
parameterizes normals for the optimization stage; the tangent pair is
completed by a fixed deterministic rule so downstream quantities that are
invariant to in-plane rotation stay well defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from . import numerics as nm
from .cloud_io import PointCloud
from .errors import DegenerateNeighborhood, KTooLarge, KTooSmall, MissingInputNormals

# Below this trace the neighborhood is a coincident blob and has no frame.
_TRACE_FLOOR = 1e-20
# Rank-1 (collinear) neighborhoods keep a frame but get flagged.
_RANK1_RATIO = 1e-12

QUALITY_OK = 0
QUALITY_RANK1 = 1


@dataclass
class Neighborhood:
    indices: np.ndarray  # (N, k) neighbor indices, self excluded
    offsets: np.ndarray  # (N, k, 3) p_neighbor - p_center

    @property
    def k(self) -> int:
        return self.indices.shape[1]


@dataclass
class MovingFrame:
    t: np.ndarray  # (N, 3)
    t_prime: np.ndarray  # (N, 3)
    n: np.ndarray  # (N, 3)
    quality: np.ndarray | None = None  # (N,) flags

    def copy(self) -> "MovingFrame":
        q = None if self.quality is None else self.quality.copy()
        return MovingFrame(self.t.copy(), self.t_prime.copy(), self.n.copy(), q)


# ---------------------------------------------------------------------------
# k nearest neighbors
# ---------------------------------------------------------------------------

def build_knn(cloud: PointCloud, k: int, workers: int = 1) -> Neighborhood:
    """Exact Euclidean kNN with ties broken toward the lower index.

    `workers` only parallelizes the tree queries; the result is identical
    for any worker count.
    """
    n = cloud.n
    if k >= n:
        raise KTooLarge(f"k={k} with only {n} points")
    if k < 5:
        raise KTooSmall(f"k={k} < 5")
    pts = cloud.positions
    tree = cKDTree(pts)
    # Query extra neighbors so distance ties crossing the k-th slot can be
    # re-sorted deterministically by (distance, index).
    pad = min(n - 1, k + 8)
    dist, idx = tree.query(pts, k=pad + 1, workers=workers)
    out = np.empty((n, k), dtype=np.int64)
    order = np.lexsort((idx, dist), axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    idx = np.take_along_axis(idx, order, axis=1)
    for i in range(n):
        row_idx = idx[i]
        row_dist = dist[i]
        keep = row_idx != i
        row_idx = row_idx[keep]
        row_dist = row_dist[keep]
        if row_dist.shape[0] > k and row_dist[k - 1] == row_dist[k]:
            # Tie group may extend beyond the padded query: recompute exactly.
            d2 = np.einsum("ij,ij->i", pts - pts[i], pts - pts[i])
            full = np.lexsort((np.arange(n), d2))
            full = full[full != i]
            row_idx = full
        out[i] = row_idx[:k]
    offsets = pts[out] - pts[:, None, :]
    return Neighborhood(indices=out, offsets=offsets)


# ---------------------------------------------------------------------------
# PCA frames
# ---------------------------------------------------------------------------

def _covariances(neigh: Neighborhood) -> np.ndarray:
    centered = neigh.offsets - neigh.offsets.mean(axis=1, keepdims=True)
    cov = np.einsum("nkj,nkl->njl", centered, centered) / neigh.k
    return cov


def pca_frames(neigh: Neighborhood) -> MovingFrame:
    """Trace-normalized neighbor covariance PCA for every point at once."""
    cov = _covariances(neigh)
    tr = np.trace(cov, axis1=1, axis2=2)
    if np.any(tr < _TRACE_FLOOR):
        bad = int(np.argmax(tr < _TRACE_FLOOR))
        raise DegenerateNeighborhood(f"coincident neighborhood at point {bad}")
    cov = cov / tr[:, None, None]
    vals, vecs = nm.eigen_sym3_batch(cov)
    quality = np.where(vals[:, 1] < _RANK1_RATIO * np.maximum(vals[:, 0], _TRACE_FLOOR),
                       QUALITY_RANK1, QUALITY_OK).astype(np.uint8)
    return MovingFrame(
        t=vecs[:, :, 0].copy(),
        t_prime=vecs[:, :, 1].copy(),
        n=vecs[:, :, 2].copy(),
        quality=quality,
    )


def pca_frame(neigh: Neighborhood, i: int) -> MovingFrame:
    """Single-point variant; returns a one-entry frame."""
    sub = Neighborhood(indices=neigh.indices[i : i + 1], offsets=neigh.offsets[i : i + 1])
    return pca_frames(sub)


# ---------------------------------------------------------------------------
# orientation
# ---------------------------------------------------------------------------

def orient_normals(cloud: PointCloud, frames: MovingFrame, method: str = "mst_propagation",
                   neigh: Neighborhood | None = None) -> MovingFrame:
    out = frames.copy()
    if method == "outward_centroid":
        centroid = cloud.positions.mean(axis=0)
        flip = np.einsum("ij,ij->i", out.n, cloud.positions - centroid) < 0.0
        out.n[flip] *= -1.0
        return out
    if method == "from_input":
        if cloud.normals is None:
            raise MissingInputNormals("cloud has no input normals")
        flip = np.einsum("ij,ij->i", out.n, cloud.normals) < 0.0
        out.n[flip] *= -1.0
        return out
    if method != "mst_propagation":
        raise ValueError(f"unknown orientation method {method!r}")

    n_pts = cloud.n
    if neigh is not None:
        rows = np.repeat(np.arange(n_pts), neigh.k)
        cols = neigh.indices.ravel()
        dists = np.linalg.norm(neigh.offsets, axis=2).ravel()
    else:
        pad = min(n_pts - 1, 10)
        if pad < 1:
            return out
        tree = cKDTree(cloud.positions)
        d, idx = tree.query(cloud.positions, k=pad + 1)
        rows = np.repeat(np.arange(n_pts), pad)
        cols = idx[:, 1:].ravel()
        dists = d[:, 1:].ravel()
    # Strictly positive weights so the sparse MST keeps zero-length edges too.
    graph = coo_matrix((dists + 1e-300, (rows, cols)), shape=(n_pts, n_pts))
    mst = minimum_spanning_tree(graph)
    sym = mst + mst.T
    n_comp, labels = connected_components(sym, directed=False)
    sign = np.ones(n_pts)
    seen = np.zeros(n_pts, dtype=bool)
    for comp in range(n_comp):
        members = np.where(labels == comp)[0]
        root = int(members[0])
        if seen[root]:
            continue
        order, predecessors = breadth_first_order(sym, root, directed=False)
        seen[order] = True
        if order.size <= 1:
            continue
        nodes = order[1:]
        parents = predecessors[nodes]
        dots = np.einsum("ij,ij->i", out.n[nodes], out.n[parents])
        edge_sign = np.where(dots < 0.0, -1.0, 1.0)
        # Sign is multiplicative along the tree path from the root; BFS order
        # guarantees the parent is resolved before the child.
        for node, parent, es in zip(nodes, parents, edge_sign):
            sign[node] = sign[parent] * es
    out.n *= sign[:, None]
    return out


# ---------------------------------------------------------------------------
# spherical-angle chart
# ---------------------------------------------------------------------------

_POLE_SIN = 1e-6


def normal_from_angles(phi, theta):
    """n = (sin t cos p, sin t sin p, cos t); accepts arrays or Duals."""
    st = nm.sin(theta)
    return (st * nm.cos(phi), st * nm.sin(phi), nm.cos(theta))


def frame_from_angles(phi, theta):
    """Deterministic frame completion for a normal given by angles.

    t = d n / d theta when sin(theta) is safely nonzero, otherwise a fixed
    fallback basis; t_prime = n x t.  Returns ((tx,ty,tz), (px,py,pz),
    (nx,ny,nz)) as component tuples so the same code path serves plain
    arrays and dual numbers.
    """
    st = nm.sin(theta)
    ct = nm.cos(theta)
    cp = nm.cos(phi)
    sp = nm.sin(phi)
    nx, ny, nz = st * cp, st * sp, ct
    safe = np.abs(nm.value_of(st)) > _POLE_SIN
    # dn/dtheta is already unit length.
    tx = nm.where(safe, ct * cp, 1.0 + 0.0 * ct)
    ty = nm.where(safe, ct * sp, 0.0 * ct)
    tz = nm.where(safe, -st, 0.0 * ct)
    # t_prime = n x t
    px = ny * tz - nz * ty
    py = nz * tx - nx * tz
    pz = nx * ty - ny * tx
    return (tx, ty, tz), (px, py, pz), (nx, ny, nz)


def frames_from_angles(phi: np.ndarray, theta: np.ndarray, quality=None) -> MovingFrame:
    (tx, ty, tz), (px, py, pz), (nx, ny, nz) = frame_from_angles(phi, theta)
    return MovingFrame(
        t=np.stack([tx, ty, tz], axis=-1),
        t_prime=np.stack([px, py, pz], axis=-1),
        n=np.stack([nx, ny, nz], axis=-1),
        quality=quality,
    )


def angles_from_normal(n: np.ndarray):
    """Inverse chart: theta in [0, pi], phi in (-pi, pi]; poles map to phi=0."""
    n = np.asarray(n, dtype=np.float64)
    theta = np.arccos(np.clip(n[..., 2], -1.0, 1.0))
    phi = np.arctan2(n[..., 1], n[..., 0])
    phi = np.where(phi <= -np.pi, np.pi, phi)
    at_pole = (n[..., 0] == 0.0) & (n[..., 1] == 0.0)
    phi = np.where(at_pole, 0.0, phi)
    return phi, theta
