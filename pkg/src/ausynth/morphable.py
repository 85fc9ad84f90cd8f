"""Linear morphable-model decoding, deformation colormaps and PLY export.

Geometry is mean shape plus identity and expression principal axes;
albedo is mean plus its own axes. Real PCA bases are license-restricted,
so a seeded synthetic generator (smooth low-order displacement fields on
a sphere-like mesh) ships with the package; real bases load through the
same file format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blobfile
from .errors import ConfigError, ContractError, NumericError, ParseError


@dataclass
class MorphBasis:
    """Mean shape/albedo with identity, expression and albedo principal axes."""

    mean_shape: np.ndarray   # (3N,)
    mean_albedo: np.ndarray  # (3N,) RGB in [0, 1]
    a_id: np.ndarray         # (3N, id_dim)
    a_exp: np.ndarray        # (3N, exp_dim)
    a_alb: np.ndarray        # (3N, alb_dim)
    faces: np.ndarray        # (F, 3) int

    def __post_init__(self):
        self.mean_shape = np.asarray(self.mean_shape, dtype=np.float64).reshape(-1)
        self.mean_albedo = np.asarray(self.mean_albedo, dtype=np.float64).reshape(-1)
        self.a_id = np.asarray(self.a_id, dtype=np.float64)
        self.a_exp = np.asarray(self.a_exp, dtype=np.float64)
        self.a_alb = np.asarray(self.a_alb, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int32)
        m = self.mean_shape.size
        if m % 3:
            raise ContractError("mean shape length must be a multiple of 3")
        for name, arr in (("mean_albedo", self.mean_albedo),):
            if arr.size != m:
                raise ContractError(f"{name} length {arr.size} != {m}")
        for name, arr in (("a_id", self.a_id), ("a_exp", self.a_exp),
                          ("a_alb", self.a_alb)):
            if arr.ndim != 2 or arr.shape[0] != m:
                raise ContractError(f"{name} must have {m} rows")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name} contains non-finite entries")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ContractError("faces must be (F, 3) triangle indices")
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= self.n_vertices):
            raise ContractError("face indices reference missing vertices")

    @property
    def n_vertices(self):
        return self.mean_shape.size // 3

    @property
    def id_dim(self):
        return self.a_id.shape[1]

    @property
    def exp_dim(self):
        return self.a_exp.shape[1]

    @property
    def alb_dim(self):
        return self.a_alb.shape[1]


@dataclass
class Mesh:
    """Triangle mesh with optional per-vertex scalars and uchar colors."""

    vertices: np.ndarray          # (N, 3)
    faces: np.ndarray             # (F, 3)
    colors: np.ndarray = None     # (N, 3) uint8
    scalars: np.ndarray = None    # (N,)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ContractError("vertices must be (N, 3)")
        if not np.all(np.isfinite(self.vertices)):
            raise NumericError("mesh has non-finite vertices")
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise ContractError("face indices reference missing vertices")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8)
            if self.colors.shape != (len(self.vertices), 3):
                raise ContractError("colors must be (N, 3)")
        if self.scalars is not None:
            self.scalars = np.asarray(self.scalars, dtype=np.float64)
            if self.scalars.shape != (len(self.vertices),):
                raise ContractError("scalars must be (N,)")


def _check_coeffs(x, dim, what):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != dim:
        raise ContractError(f"{what} must have {dim} entries, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite entries")
    return x


def decode_geometry(basis, x_id, x_exp):
    """Mean shape plus identity and expression offsets; exact linear map."""
    xi = _check_coeffs(x_id, basis.id_dim, "identity coefficients")
    xe = _check_coeffs(x_exp, basis.exp_dim, "expression coefficients")
    p = basis.mean_shape + basis.a_id @ xi + basis.a_exp @ xe
    return Mesh(vertices=p.reshape(-1, 3), faces=basis.faces.copy())


def decode_albedo(basis, x_alb):
    """Per-vertex RGB from albedo coefficients (unclamped; clamp on export)."""
    xa = _check_coeffs(x_alb, basis.alb_dim, "albedo coefficients")
    return (basis.mean_albedo + basis.a_alb @ xa).reshape(-1, 3)


# Perceptually monotone dark-to-bright ramp (anchors, linearly interpolated);
# brighter means larger displacement.
_RAMP = np.array([
    [0.05, 0.03, 0.10],
    [0.28, 0.06, 0.38],
    [0.62, 0.16, 0.40],
    [0.87, 0.32, 0.22],
    [0.98, 0.65, 0.10],
    [0.99, 0.95, 0.70],
])


def _ramp_colors(t):
    """Map values in [0, 1] through the fixed color table; returns uint8 RGB."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    pos = t * (len(_RAMP) - 1)
    i0 = np.minimum(pos.astype(int), len(_RAMP) - 2)
    frac = (pos - i0)[:, None]
    rgb = _RAMP[i0] * (1.0 - frac) + _RAMP[i0 + 1] * frac
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def deformation_colormap(neutral, deformed, max_displacement=None):
    """Per-vertex displacement magnitude and ramp colors between two meshes.

    Scalars are Euclidean displacements; colors normalize by the mesh's
    own maximum unless `max_displacement` pins a common scale across
    figures. Zero displacement maps to the ramp's dark end.
    """
    if len(neutral.vertices) != len(deformed.vertices):
        raise ContractError("meshes must share the vertex count")
    disp = np.linalg.norm(deformed.vertices - neutral.vertices, axis=1)
    scale = max_displacement if max_displacement is not None else disp.max()
    if scale <= 0:
        t = np.zeros_like(disp)
    else:
        t = disp / scale
    return disp, _ramp_colors(t)


# ---- PLY ---------------------------------------------------------------

def export_mesh(mesh, path):
    """ASCII PLY with positions, optional quality scalar and uchar colors."""
    has_colors = mesh.colors is not None
    has_scalars = mesh.scalars is not None
    try:
        with open(path, "w") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(mesh.vertices)}\n")
            fh.write("property float x\nproperty float y\nproperty float z\n")
            if has_scalars:
                fh.write("property float quality\n")
            if has_colors:
                fh.write("property uchar red\nproperty uchar green\n"
                         "property uchar blue\n")
            fh.write(f"element face {len(mesh.faces)}\n")
            fh.write("property list uchar int vertex_indices\nend_header\n")
            for i, v in enumerate(mesh.vertices):
                parts = [f"{v[0]:.6f}", f"{v[1]:.6f}", f"{v[2]:.6f}"]
                if has_scalars:
                    parts.append(f"{mesh.scalars[i]:.6f}")
                if has_colors:
                    parts.extend(str(int(c)) for c in mesh.colors[i])
                fh.write(" ".join(parts) + "\n")
            for f in mesh.faces:
                fh.write(f"3 {int(f[0])} {int(f[1])} {int(f[2])}\n")
    except OSError as exc:
        raise OSError(f"cannot write mesh to {path}: {exc}") from exc


def load_mesh(path):
    """Read an ASCII PLY written by `export_mesh` (positions, quality, colors)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or lines[0] != "ply":
        raise ParseError(f"{path}: not a PLY file", line=1)
    n_vertex = n_face = 0
    props = []
    element = None
    i = 1
    while i < len(lines) and lines[i] != "end_header":
        tok = lines[i].split()
        if tok[:2] == ["element", "vertex"]:
            n_vertex = int(tok[2])
            element = "vertex"
        elif tok[:2] == ["element", "face"]:
            n_face = int(tok[2])
            element = "face"
        elif tok and tok[0] == "property" and tok[1] != "list" and element == "vertex":
            props.append(tok[2])
        i += 1
    if i == len(lines):
        raise ParseError(f"{path}: missing end_header")
    body = lines[i + 1:]
    verts = np.empty((n_vertex, 3))
    scalars = np.empty(n_vertex) if "quality" in props else None
    colors = np.empty((n_vertex, 3), dtype=np.uint8) if "red" in props else None
    for j in range(n_vertex):
        tok = body[j].split()
        vals = dict(zip(props, tok))
        verts[j] = [float(vals["x"]), float(vals["y"]), float(vals["z"])]
        if scalars is not None:
            scalars[j] = float(vals["quality"])
        if colors is not None:
            colors[j] = [int(vals["red"]), int(vals["green"]), int(vals["blue"])]
    faces = np.empty((n_face, 3), dtype=np.int32)
    for j in range(n_face):
        tok = body[n_vertex + j].split()
        if tok[0] != "3":
            raise ParseError(f"{path}: only triangle faces are supported")
        faces[j] = [int(tok[1]), int(tok[2]), int(tok[3])]
    return Mesh(vertices=verts, faces=faces, colors=colors, scalars=scalars)


# ---- synthetic basis ---------------------------------------------------

def _sphere_mesh(rings, segments, radius=1.0):
    """UV sphere: (vertices (N, 3), faces (F, 3))."""
    verts = [(0.0, 0.0, radius)]
    for r in range(1, rings):
        phi = np.pi * r / rings
        for s in range(segments):
            theta = 2.0 * np.pi * s / segments
            verts.append((radius * np.sin(phi) * np.cos(theta),
                          radius * np.sin(phi) * np.sin(theta),
                          radius * np.cos(phi)))
    verts.append((0.0, 0.0, -radius))
    south = len(verts) - 1
    faces = []
    ring = lambda r, s: 1 + (r - 1) * segments + (s % segments)
    for s in range(segments):
        faces.append((0, ring(1, s), ring(1, s + 1)))
    for r in range(1, rings - 1):
        for s in range(segments):
            a, b = ring(r, s), ring(r, s + 1)
            c, d = ring(r + 1, s), ring(r + 1, s + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    for s in range(segments):
        faces.append((south, ring(rings - 1, s + 1), ring(rings - 1, s)))
    return np.array(verts), np.array(faces, dtype=np.int32)


def _smooth_fields(points, count, amplitude, rng):
    """(3N, count) matrix of smooth low-order displacement fields."""
    x, y, z = points.T
    monomials = np.stack([np.ones_like(x), x, y, z, x * y, y * z, z * x,
                          x * x, y * y, z * z], axis=1)  # (N, 10)
    cols = []
    for _ in range(count):
        coeff = rng.normal(0.0, 1.0, size=(10, 3))
        field = monomials @ coeff  # (N, 3) smooth vector field
        field *= amplitude / max(np.abs(field).max(), 1e-9)
        cols.append(field.reshape(-1))
    return np.stack(cols, axis=1)


def synthetic_basis(seed=0, rings=12, segments=16, id_dim=100, exp_dim=79,
                    alb_dim=100, exp_amplitude=0.08, id_amplitude=0.05):
    """Seeded small basis over a sphere-like mesh; all geometry paths testable."""
    if rings < 2 or segments < 3:
        raise ConfigError("sphere needs rings >= 2 and segments >= 3")
    rng = np.random.default_rng(seed)
    verts, faces = _sphere_mesh(rings, segments)
    mean_shape = verts.reshape(-1)
    a_id = _smooth_fields(verts, id_dim, id_amplitude, rng)
    a_exp = _smooth_fields(verts, exp_dim, exp_amplitude, rng)
    a_alb = _smooth_fields(verts, alb_dim, 0.1, rng)
    mean_albedo = np.tile([0.8, 0.6, 0.5], len(verts))
    return MorphBasis(mean_shape=mean_shape, mean_albedo=mean_albedo,
                      a_id=a_id, a_exp=a_exp, a_alb=a_alb, faces=faces)


def save_basis(path, basis):
    """Write a basis file (manifest plus float32/int32 blobs)."""
    meta = {"kind": "morph-basis", "n_vertices": basis.n_vertices,
            "id_dim": basis.id_dim, "exp_dim": basis.exp_dim,
            "alb_dim": basis.alb_dim,
            "fields": ["mean_shape", "mean_albedo", "a_id", "a_exp", "a_alb",
                       "faces"]}
    blobfile.write_blobfile(path, meta, [
        ("mean_shape", basis.mean_shape), ("mean_albedo", basis.mean_albedo),
        ("a_id", basis.a_id), ("a_exp", basis.a_exp), ("a_alb", basis.a_alb),
        ("faces", basis.faces)])


def load_basis(path):
    meta, arrays = blobfile.read_blobfile(path)
    if meta.get("kind") != "morph-basis":
        raise ParseError(f"{path}: not a basis file")
    return MorphBasis(mean_shape=arrays["mean_shape"].astype(np.float64),
                      mean_albedo=arrays["mean_albedo"].astype(np.float64),
                      a_id=arrays["a_id"].astype(np.float64),
                      a_exp=arrays["a_exp"].astype(np.float64),
                      a_alb=arrays["a_alb"].astype(np.float64),
                      faces=arrays["faces"])
