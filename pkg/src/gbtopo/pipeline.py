"""Shared pipeline state: neighborhoods, angle-parameterized frames, areas.

After the initial normals are chosen (local PCA plus an orientation pass, or
the cloud's own normals), every downstream consumer sees the normal field
through its spherical angles.  Tangent bases are completed from the angles
by a fixed rule, so the chart, the curvature field, and the Euler integral
are all plain functions of (positions, neighbors, angles); the area field is
the one piece that is frozen between refreshes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import area as ar
from . import curvature as cv
from . import frames as fr
from .cloud_io import PointCloud
from .errors import MissingInputNormals


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 20
    grid_resolution: int = ar.DEFAULT_GRID_RESOLUTION
    bbox_scale: float = ar.DEFAULT_BBOX_SCALE
    solver: str = "sylvester"
    # "auto" takes the cloud's own normals when present (synthetic clouds
    # carry analytic ones) and falls back to PCA estimation otherwise.
    normals: str = "auto"
    orient: str = "mst_propagation"
    threads: int = 1


@dataclass
class PipelineState:
    cloud: PointCloud
    config: PipelineConfig
    neigh: fr.Neighborhood
    phi: np.ndarray  # (N,)
    theta: np.ndarray  # (N,)
    areas: ar.AreaField
    quality: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.cloud.n

    def frames(self) -> fr.MovingFrame:
        return fr.frames_from_angles(self.phi, self.theta, quality=self.quality)

    def chart(self) -> ar.TangentChart:
        return ar.project_to_tangent(self.neigh, self.frames())

    def refresh_areas(self) -> None:
        self.areas = ar.area_field(
            self.chart(),
            grid_resolution=self.config.grid_resolution,
            bbox_scale=self.config.bbox_scale,
            threads=self.config.threads,
        )

    def refresh_offsets(self) -> None:
        pts = self.cloud.positions
        self.neigh = fr.Neighborhood(
            indices=self.neigh.indices,
            offsets=pts[self.neigh.indices] - pts[:, None, :],
        )


def initial_normals(cloud: PointCloud, config: PipelineConfig, neigh: fr.Neighborhood):
    mode = config.normals
    if mode == "auto":
        mode = "input" if cloud.normals is not None else "pca"
    if mode == "input":
        if cloud.normals is None:
            raise MissingInputNormals("pipeline configured for input normals, cloud has none")
        return cloud.normals.copy(), None
    if mode != "pca":
        raise ValueError(f"unknown normal source {config.normals!r}")
    mf = fr.pca_frames(neigh)
    mf = fr.orient_normals(cloud, mf, method=config.orient, neigh=neigh)
    return mf.n, mf.quality


def build_state(cloud: PointCloud, config: PipelineConfig | None = None, **overrides) -> PipelineState:
    config = replace(config or PipelineConfig(), **overrides)
    neigh = fr.build_knn(cloud, config.k, workers=config.threads)
    normals, quality = initial_normals(cloud, config, neigh)
    phi, theta = fr.angles_from_normal(normals)
    state = PipelineState(
        cloud=cloud,
        config=config,
        neigh=neigh,
        phi=phi,
        theta=theta,
        areas=None,  # type: ignore[assignment]
        quality=quality,
    )
    state.refresh_areas()
    return state


def curvature_of(state: PipelineState) -> cv.CurvatureField:
    return cv.curvature_field(state.chart(), solver=state.config.solver)
