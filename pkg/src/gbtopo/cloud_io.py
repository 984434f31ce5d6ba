"""Point cloud and mesh ingestion, mesh sampling, noise, and result export.

Supported formats are deliberately small: XYZ ("x y z [nx ny nz]" per line,
'#' comments), an ASCII / binary-little-endian PLY subset with vertex and
face elements only, and triangle/polygon OBJ.  Reports go out as CSV or JSON
with stable field names.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCloud, ParseError, UnknownChannel
from .numerics import rng_for

log = logging.getLogger(__name__)

_NORMAL_TOL = 1e-6
_DEGENERATE_FACE_AREA = 1e-14


@dataclass
class PointCloud:
    """Positions with optional unit normals and named per-point channels."""

    positions: np.ndarray  # (N, 3)
    normals: np.ndarray | None = None  # (N, 3) unit vectors
    scalar_channels: dict = field(default_factory=dict)  # name -> (N,)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or self.positions.shape[0] < 1:
            raise EmptyCloud(f"positions must be (N>=1, 3), got {self.positions.shape}")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions contain non-finite values")
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.positions.shape:
                raise ValueError("normals shape mismatch")
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > _NORMAL_TOL):
                raise ValueError("normals must be unit length to 1e-6")
        for name, ch in self.scalar_channels.items():
            ch = np.ascontiguousarray(ch, dtype=np.float64)
            if ch.shape != (self.positions.shape[0],):
                raise ValueError(f"channel {name!r} has shape {ch.shape}")
            self.scalar_channels[name] = ch

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def bbox_diagonal(self) -> float:
        lo = self.positions.min(axis=0)
        hi = self.positions.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def with_channel(self, name: str, values) -> "PointCloud":
        channels = dict(self.scalar_channels)
        channels[name] = np.asarray(values, dtype=np.float64)
        return PointCloud(self.positions, self.normals, channels)


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    degenerate_dropped: int = 0

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise ParseError(
                f"face index {int(self.faces.max())} out of range for {len(self.vertices)} vertices"
            )
        if self.faces.size and self.faces.min() < 0:
            raise ParseError("negative face index after resolution")
        # Degenerate faces confuse both area sampling and Euler counting.
        if len(self.faces):
            a = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
            b = self.vertices[self.faces[:, 2]] - self.vertices[self.faces[:, 0]]
            areas = 0.5 * np.linalg.norm(np.cross(a, b), axis=1)
            keep = areas > _DEGENERATE_FACE_AREA
            dropped = int(np.count_nonzero(~keep))
            if dropped:
                log.warning("dropping %d degenerate faces", dropped)
                self.faces = self.faces[keep]
                self.degenerate_dropped += dropped

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 2]] - self.vertices[self.faces[:, 0]]
        return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    sigma_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"unsupported noise kind {self.kind!r}")
        if self.sigma_fraction < 0:
            raise ValueError("sigma_fraction must be >= 0")


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_cloud(path, fmt: str | None = None) -> PointCloud:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "xyz":
        return _load_xyz(path)
    if fmt == "ply":
        return _ply_to_cloud(_read_ply(path))
    raise ParseError(f"unknown cloud format {fmt!r}")


def load_mesh(path, fmt: str | None = None) -> TriMesh:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "obj":
        return _load_obj(path)
    if fmt == "ply":
        return _ply_to_mesh(_read_ply(path))
    raise ParseError(f"unknown mesh format {fmt!r}")


def _load_xyz(path: Path) -> PointCloud:
    positions = []
    normals = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (3, 6):
                raise ParseError(f"expected 3 or 6 fields, got {len(parts)}", line=lineno)
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            positions.append(vals[:3])
            if len(vals) == 6:
                normals.append(vals[3:])
    if not positions:
        raise EmptyCloud(f"{path} contains no points")
    if normals and len(normals) != len(positions):
        raise ParseError("some lines carry normals and some do not")
    return PointCloud(np.array(positions), np.array(normals) if normals else None)


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _read_ply(path: Path) -> dict:
    """Parse a PLY file into {element_name: {prop: array}} (vertex/face only)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise ParseError("not a PLY file (missing magic)", line=1)
    end = data.find(b"end_header")
    if end < 0:
        raise ParseError("missing end_header")
    header_block = data[:end].decode("ascii", errors="replace")
    body_start = data.find(b"\n", end) + 1
    body = data[body_start:]

    fmt = None
    elements = []  # (name, count, [(prop_name, dtype, is_list, count_dtype)])
    for lineno, line in enumerate(header_block.splitlines(), start=1):
        tok = line.strip().split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format {fmt!r}", line=lineno)
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element", line=lineno)
            if tok[1] == "list":
                count_t, item_t, name = tok[2], tok[3], tok[4]
                elements[-1][2].append((name, _PLY_TYPES[item_t], True, _PLY_TYPES[count_t]))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]], False, None))
    if fmt is None:
        raise ParseError("missing format line")

    out = {}
    if fmt == "ascii":
        lines = [ln for ln in body.decode("ascii").splitlines() if ln.strip()]
        cursor = 0
        for name, count, props in elements:
            if name not in ("vertex", "face"):
                log.warning("skipping unsupported PLY element %r (%d rows)", name, count)
                cursor += count
                continue
            columns = {p[0]: [] for p in props}
            for i in range(count):
                if cursor >= len(lines):
                    raise ParseError(f"unexpected end of data in element {name}")
                parts = lines[cursor].split()
                cursor += 1
                j = 0
                for pname, dt, is_list, _ in props:
                    try:
                        if is_list:
                            k = int(parts[j]); j += 1
                            vals = [float(parts[j + t]) for t in range(k)]
                            j += k
                            columns[pname].append(vals)
                        else:
                            columns[pname].append(float(parts[j])); j += 1
                    except (IndexError, ValueError) as exc:
                        raise ParseError(f"bad {name} row {i}: {exc}") from exc
            out[name] = columns
    else:
        offset = 0
        for name, count, props in elements:
            has_list = any(p[2] for p in props)
            if name not in ("vertex", "face"):
                if has_list:
                    raise ParseError(f"cannot skip binary element {name!r} with list properties")
                rowsize = sum(np.dtype("<" + p[1]).itemsize for p in props)
                log.warning("skipping unsupported PLY element %r (%d rows)", name, count)
                offset += rowsize * count
                continue
            if not has_list:
                dt = np.dtype([(p[0], "<" + p[1]) for p in props])
                arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
                offset += dt.itemsize * count
                out[name] = {p[0]: arr[p[0]].astype(np.float64) for p in props}
            else:
                columns = {p[0]: [] for p in props}
                for _ in range(count):
                    for pname, item_t, is_list, count_t in props:
                        if is_list:
                            cdt = np.dtype("<" + count_t)
                            k = int(np.frombuffer(body, dtype=cdt, count=1, offset=offset)[0])
                            offset += cdt.itemsize
                            idt = np.dtype("<" + item_t)
                            vals = np.frombuffer(body, dtype=idt, count=k, offset=offset)
                            offset += idt.itemsize * k
                            columns[pname].append(vals.astype(np.float64).tolist())
                        else:
                            idt = np.dtype("<" + item_t)
                            columns[pname].append(
                                float(np.frombuffer(body, dtype=idt, count=1, offset=offset)[0])
                            )
                            offset += idt.itemsize
                out[name] = columns
    return out


def _ply_to_cloud(ply: dict) -> PointCloud:
    if "vertex" not in ply:
        raise ParseError("PLY has no vertex element")
    v = ply["vertex"]
    for axis in ("x", "y", "z"):
        if axis not in v:
            raise ParseError(f"PLY vertex element missing property {axis!r}")
    positions = np.column_stack([np.asarray(v["x"]), np.asarray(v["y"]), np.asarray(v["z"])])
    if positions.shape[0] == 0:
        raise EmptyCloud("PLY vertex element is empty")
    normals = None
    if all(k in v for k in ("nx", "ny", "nz")):
        normals = np.column_stack([np.asarray(v["nx"]), np.asarray(v["ny"]), np.asarray(v["nz"])])
        lens = np.linalg.norm(normals, axis=1)
        safe = np.where(lens > 0, lens, 1.0)
        normals = normals / safe[:, None]
    skip = {"x", "y", "z", "nx", "ny", "nz", "red", "green", "blue", "alpha"}
    channels = {k: np.asarray(val, dtype=np.float64) for k, val in v.items() if k not in skip}
    return PointCloud(positions, normals, channels)


def _triangulate_fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _ply_to_mesh(ply: dict) -> TriMesh:
    cloud = _ply_to_cloud(ply)
    faces = []
    face_el = ply.get("face", {})
    key = "vertex_indices" if "vertex_indices" in face_el else "vertex_index"
    for poly in face_el.get(key, []):
        idx = [int(i) for i in poly]
        if len(idx) < 3:
            raise ParseError(f"face with {len(idx)} vertices")
        faces.extend(_triangulate_fan(idx))
    return TriMesh(cloud.positions, np.array(faces, dtype=np.int64).reshape(-1, 3))


def _load_obj(path: Path) -> TriMesh:
    vertices = []
    faces = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "v":
                if len(tok) < 4:
                    raise ParseError("vertex with fewer than 3 coordinates", line=lineno)
                vertices.append([float(tok[1]), float(tok[2]), float(tok[3])])
            elif tok[0] == "f":
                idx = []
                for t in tok[1:]:
                    s = t.split("/")[0]
                    try:
                        i = int(s)
                    except ValueError as exc:
                        raise ParseError(f"bad face index {s!r}", line=lineno) from exc
                    if i > 0:
                        i -= 1
                    else:
                        i = len(vertices) + i
                    if i < 0 or i >= len(vertices):
                        raise ParseError(f"face index {s} out of range", line=lineno)
                    idx.append(i)
                if len(idx) < 3:
                    raise ParseError("face with fewer than 3 vertices", line=lineno)
                faces.extend(_triangulate_fan(idx))
            # vn/vt/usemtl/o/g/s/mtllib are irrelevant to geometry here
    if not vertices:
        raise EmptyCloud(f"{path} contains no vertices")
    return TriMesh(np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3))


# ---------------------------------------------------------------------------
# mesh operations
# ---------------------------------------------------------------------------

def mesh_euler(mesh: TriMesh) -> int:
    """V - E + F with E counted over unique undirected edges."""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    n_edges = len(np.unique(edges, axis=0))
    return int(len(mesh.vertices) - n_edges + len(f))


def sample_mesh(mesh: TriMesh, n: int, scheme: str = "uniform_area", seed: int = 0) -> PointCloud:
    """Sample n surface points; uniform_area weights faces by area, random
    picks faces uniformly.  Bit-deterministic per seed."""
    if len(mesh.faces) == 0:
        raise EmptyCloud("mesh has no faces")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_for(seed, 11)
    if scheme == "uniform_area":
        areas = mesh.face_areas()
        cdf = np.cumsum(areas)
        cdf /= cdf[-1]
        face_idx = np.searchsorted(cdf, rng.random(n), side="right")
        face_idx = np.minimum(face_idx, len(mesh.faces) - 1)
    elif scheme == "random":
        face_idx = rng.integers(0, len(mesh.faces), size=n)
    else:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    r1 = rng.random(n)
    r2 = rng.random(n)
    u = np.sqrt(r1)
    b0 = 1.0 - u
    b1 = u * (1.0 - r2)
    b2 = u * r2
    tri = mesh.vertices[mesh.faces[face_idx]]  # (n, 3, 3)
    pts = b0[:, None] * tri[:, 0] + b1[:, None] * tri[:, 1] + b2[:, None] * tri[:, 2]
    return PointCloud(pts)


def add_noise(cloud: PointCloud, spec: NoiseSpec) -> PointCloud:
    """Displace positions by i.i.d. per-coordinate Gaussian noise with
    sigma = sigma_fraction * bounding-box diagonal.  Normals untouched."""
    if spec.sigma_fraction == 0.0:
        return PointCloud(cloud.positions.copy(), cloud.normals, dict(cloud.scalar_channels))
    sigma = spec.sigma_fraction * cloud.bbox_diagonal()
    rng = rng_for(spec.seed, 13)
    displaced = cloud.positions + rng.normal(0.0, sigma, size=cloud.positions.shape)
    return PointCloud(displaced, cloud.normals, dict(cloud.scalar_channels))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def save_cloud_ply(cloud: PointCloud, path, colors: np.ndarray | None = None) -> None:
    """ASCII PLY writer: positions, optional normals, scalar channels, and
    optional uint8 colors.  9 significant digits keeps reload lossless."""
    path = Path(path)
    names = sorted(cloud.scalar_channels)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {cloud.n}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if cloud.normals is not None:
            fh.write("property double nx\nproperty double ny\nproperty double nz\n")
        for name in names:
            fh.write(f"property double {name}\n")
        if colors is not None:
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for i in range(cloud.n):
            row = ["%.9g" % v for v in cloud.positions[i]]
            if cloud.normals is not None:
                row += ["%.9g" % v for v in cloud.normals[i]]
            row += ["%.9g" % cloud.scalar_channels[name][i] for name in names]
            if colors is not None:
                row += [str(int(c)) for c in colors[i]]
            fh.write(" ".join(row) + "\n")


def save_cloud_xyz(cloud: PointCloud, path) -> None:
    with open(path, "w") as fh:
        for i in range(cloud.n):
            row = ["%.9g" % v for v in cloud.positions[i]]
            if cloud.normals is not None:
                row += ["%.9g" % v for v in cloud.normals[i]]
            fh.write(" ".join(row) + "\n")


def export_colormapped_ply(cloud: PointCloud, channel: str, path, cmap_name: str = "coolwarm") -> None:
    """Write an ASCII PLY whose vertex colors encode a scalar channel.

    Values are clamped to the symmetric range spanned by the 2nd/98th
    percentiles so outliers cannot wash out the map; the colormap is
    diverging, centered on zero.
    """
    import matplotlib

    if channel not in cloud.scalar_channels:
        raise UnknownChannel(f"channel {channel!r} not in {sorted(cloud.scalar_channels)}")
    values = cloud.scalar_channels[channel]
    lo, hi = np.percentile(values, [2.0, 98.0])
    span = max(abs(lo), abs(hi))
    if span == 0.0:
        unit = np.full_like(values, 0.5)
    else:
        unit = (np.clip(values, -span, span) + span) / (2.0 * span)
    rgba = matplotlib.colormaps[cmap_name](unit)
    colors = (rgba[:, :3] * 255.0 + 0.5).astype(np.uint8)
    save_cloud_ply(cloud, path, colors=colors)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_FIELDS = [
    "model",
    "method",
    "density",
    "noise",
    "max_abs_err",
    "mean_abs_err",
    "euler_estimate",
    "genus",
    "wall_time_s",
]


@dataclass
class ReportRow:
    model: str
    method: str
    density: int
    noise: float
    max_abs_err: float = float("nan")
    mean_abs_err: float = float("nan")
    euler_estimate: float = float("nan")
    genus: float = float("nan")
    wall_time_s: float = 0.0
    error: str = ""

    def as_dict(self, timing: bool = True) -> dict:
        d = {
            "model": self.model,
            "method": self.method,
            "density": int(self.density),
            "noise": float(self.noise),
            "max_abs_err": float(self.max_abs_err),
            "mean_abs_err": float(self.mean_abs_err),
            "euler_estimate": float(self.euler_estimate),
            "genus": float(self.genus),
            "wall_time_s": float(self.wall_time_s) if timing else 0.0,
        }
        if self.error:
            d["error"] = self.error
        return d


def write_report(rows, path, fmt: str = "csv", timing: bool = True) -> None:
    """One row per (model, method, density, noise).  `timing=False` zeroes
    the wall-time column so byte-level reproducibility checks can pass."""
    path = Path(path)
    dicts = [r.as_dict(timing=timing) if isinstance(r, ReportRow) else dict(r) for r in rows]
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, extrasaction="ignore")
            writer.writeheader()
            for d in dicts:
                writer.writerow({k: _fmt_cell(d.get(k)) for k in REPORT_FIELDS})
    elif fmt == "json":
        # Strict JSON has no NaN; missing metrics become null.
        for d in dicts:
            for key, v in d.items():
                if isinstance(v, float) and not np.isfinite(v):
                    d[key] = None
        with open(path, "w") as fh:
            json.dump({"rows": dicts}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def _fmt_cell(v):
    if isinstance(v, float):
        return "%.9g" % v
    return v


def report_schema() -> dict:
    schema_path = Path(__file__).parent / "schemas" / "report.schema.json"
    with open(schema_path) as fh:
        return json.load(fh)
