"""Triangle meshes, delta-blendshape evaluation and deformation transfer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .blendshapes import BLENDSHAPE_NAMES, NUM_BLENDSHAPES
from .errors import BadBasis, BadDims, DegenerateTriangle, FormatError, IoError, SingularSystem


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # V x 3
    triangles: np.ndarray  # F x 3
    region_masks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise BadDims(f"vertices must be V x 3, got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise BadDims(f"triangles must be F x 3, got {self.triangles.shape}")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise BadDims("triangle index out of range")

    def with_vertices(self, vertices) -> "TriangleMesh":
        return TriangleMesh(np.array(vertices, dtype=np.float64), self.triangles.copy(), dict(self.region_masks))

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


@dataclass
class BlendshapeBasis:
    neutral: TriangleMesh
    templates: list  # 52 TriangleMesh sharing topology with neutral

    def __post_init__(self):
        if len(self.templates) != NUM_BLENDSHAPES:
            raise BadBasis(f"expected {NUM_BLENDSHAPES} templates, got {len(self.templates)}")
        for k, t in enumerate(self.templates):
            if t.vertices.shape != self.neutral.vertices.shape or not np.array_equal(t.triangles, self.neutral.triangles):
                raise BadBasis(f"template {k} does not share the neutral topology")

    def deltas(self) -> np.ndarray:
        """``52 x V x 3`` template offsets from the neutral mesh."""
        return np.stack([t.vertices for t in self.templates]) - self.neutral.vertices


def apply_blendshapes(basis: BlendshapeBasis, coeffs) -> np.ndarray:
    """``V_t = neutral + sum_k b_tk (T_k - neutral)``, shape ``T x V x 3``."""
    b = np.asarray(getattr(coeffs, "coeffs", coeffs), dtype=np.float64)
    if b.ndim == 1:
        b = b[None]
    if b.shape[1] != NUM_BLENDSHAPES:
        raise BadDims(f"expected {NUM_BLENDSHAPES} coefficients per frame, got {b.shape[1]}")
    return basis.neutral.vertices[None] + np.einsum("tk,kvc->tvc", b, basis.deltas())


# -- deformation transfer ----------------------------------------------------

def _frames(v: np.ndarray, triangles: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Per-triangle ``3 x 3`` edge frames ``[v2-v1, v3-v1, v4-v1]`` (columns),
    with the fourth vertex offset along the normal by ``n / sqrt(|n|)``."""
    p = v[triangles]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    n = np.cross(e1, e2)
    norm = np.linalg.norm(n, axis=1)
    bad = np.flatnonzero(norm <= tol)
    if bad.size:
        raise DegenerateTriangle(f"zero-area triangle(s): {bad[:10].tolist()}")
    e3 = n / np.sqrt(norm)[:, None]
    return np.stack([e1, e2, e3], axis=2)


def source_transforms(src_neutral: TriangleMesh, src_deformed: TriangleMesh) -> np.ndarray:
    """Per-triangle affine parts ``S_j = V_deformed V_neutral^-1``."""
    if src_neutral.vertices.shape != src_deformed.vertices.shape or \
            not np.array_equal(src_neutral.triangles, src_deformed.triangles):
        raise BadBasis("source neutral and deformed meshes differ in topology")
    V = _frames(src_neutral.vertices, src_neutral.triangles)
    Vd = _frames(src_deformed.vertices, src_deformed.triangles)
    return Vd @ np.linalg.inv(V)


class DeformationTransfer:
    """Least-squares deformation transfer onto a fixed target mesh.

    The unknowns are the deformed target vertices plus one normal-offset
    vertex per triangle. Vertex ``anchor`` is pinned to its neutral position
    to remove the translation gauge. The normal matrix is factorised once, so
    transferring many source deformations costs one back-substitution each.
    """

    def __init__(self, tgt_neutral: TriangleMesh, correspondence: Sequence[int], anchor: int = 0):
        self.tgt = tgt_neutral
        self.correspondence = np.asarray(correspondence, dtype=np.int64)
        tri = tgt_neutral.triangles
        n, m = len(tgt_neutral.vertices), len(tri)
        if self.correspondence.shape != (m,):
            raise BadDims(f"correspondence must map each of the {m} target triangles")
        self.n, self.m, self.anchor = n, m, anchor
        inv = np.linalg.inv(_frames(tgt_neutral.vertices, tri))  # m x 3 x 3
        # Row block j (3 rows) of A maps unknowns X to T_j^T = V_j^-T D_j X.
        cols = np.stack([tri[:, 1], tri[:, 2], n + np.arange(m)], axis=1)  # m x 3
        rows, cidx, vals = [], [], []
        for r in range(3):
            for c in range(3):
                coef = inv[:, c, r]  # (V^-T)[r, c] = (V^-1)[c, r]
                rows.append(3 * np.arange(m) + r)
                cidx.append(cols[:, c])
                vals.append(coef)
                rows.append(3 * np.arange(m) + r)
                cidx.append(tri[:, 0])
                vals.append(-coef)
        A = scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cidx))), shape=(3 * m, n + m))
        free = np.setdiff1d(np.arange(n + m), [anchor])
        self.A = A
        self.A_free = A[:, free].tocsc()
        self.a_anchor = A[:, [anchor]].toarray()
        self.free = free
        normal = (self.A_free.T @ self.A_free).tocsc()
        try:
            with np.errstate(all="raise"):
                self.lu = scipy.sparse.linalg.splu(normal)
        except (RuntimeError, FloatingPointError) as exc:
            raise SingularSystem(f"deformation transfer system is singular: {exc}") from exc

    def _rhs(self, S: np.ndarray) -> np.ndarray:
        return S[self.correspondence].transpose(0, 2, 1).reshape(3 * self.m, 3)

    def solve_unknowns(self, S: np.ndarray) -> np.ndarray:
        """All ``(V + F) x 3`` unknowns, including the per-triangle normal vertices."""
        x0 = self.tgt.vertices[self.anchor]
        b = self._rhs(S) - self.a_anchor @ x0[None, :]
        x_free = self.lu.solve(np.asarray(self.A_free.T @ b))
        if not np.all(np.isfinite(x_free)):
            raise SingularSystem("deformation transfer produced non-finite vertices")
        X = np.empty((self.n + self.m, 3))
        X[self.free] = x_free
        X[self.anchor] = x0
        return X

    def solve(self, S: np.ndarray) -> np.ndarray:
        """Deformed target vertices (``V x 3``) best matching transforms ``S`` (``m_src x 3 x 3``)."""
        return self.solve_unknowns(S)[: self.n]

    def transfer(self, src_neutral: TriangleMesh, src_deformed: TriangleMesh) -> TriangleMesh:
        S = source_transforms(src_neutral, src_deformed)
        if self.correspondence.size and self.correspondence.max() >= len(S):
            raise BadDims("correspondence refers to a missing source triangle")
        return self.tgt.with_vertices(self.solve(S))

    def neutral_unknowns(self) -> np.ndarray:
        """The target neutral mesh written as unknowns (normal vertices from its own triangles)."""
        frames = _frames(self.tgt.vertices, self.tgt.triangles)
        fourth = self.tgt.vertices[self.tgt.triangles[:, 0]] + frames[:, :, 2]
        return np.concatenate([self.tgt.vertices, fourth])

    def residual(self, X: np.ndarray, S: np.ndarray) -> float:
        """Least-squares objective ``sum_j |T_j(X) - S_corr(j)|_F^2`` for unknowns ``X``."""
        return float(((self.A @ X - self._rhs(S)) ** 2).sum())


def deformation_transfer(src_neutral: TriangleMesh, src_deformed: TriangleMesh, tgt_neutral: TriangleMesh,
                         correspondence: Optional[Sequence[int]] = None) -> TriangleMesh:
    if correspondence is None:
        correspondence = np.arange(len(tgt_neutral.triangles))
    return DeformationTransfer(tgt_neutral, correspondence).transfer(src_neutral, src_deformed)


def build_templates(src_basis: BlendshapeBasis, tgt_neutral: TriangleMesh,
                    correspondence: Optional[Sequence[int]] = None) -> BlendshapeBasis:
    """Transfer each of the 52 source templates onto ``tgt_neutral``."""
    if correspondence is None:
        correspondence = np.arange(len(tgt_neutral.triangles))
    solver = DeformationTransfer(tgt_neutral, correspondence)
    templates = [solver.transfer(src_basis.neutral, t) for t in src_basis.templates]
    return BlendshapeBasis(tgt_neutral, templates)


# -- files ------------------------------------------------------------------

def write_obj(path, mesh: TriangleMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_obj(path) -> TriangleMesh:
    """Read ``v`` and ``f`` records; other records are ignored."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    verts, faces = [], []
    offset = 0
    for line in text.splitlines(keepends=True):
        parts = line.split()
        try:
            if parts and parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts and parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}: bad OBJ record {line.strip()!r}", offset) from exc
        offset += len(line.encode("utf-8"))
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_basis(directory, basis: BlendshapeBasis) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_obj(d / "neutral.obj", basis.neutral)
    for k, t in enumerate(basis.templates):
        write_obj(d / f"bs_{k:03d}.obj", t)
    meta = {"channels": list(BLENDSHAPE_NAMES),
            "region_masks": {k: [int(i) for i in v] for k, v in basis.neutral.region_masks.items()}}
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_basis(directory) -> BlendshapeBasis:
    d = Path(directory)
    meta_path = d / "meta.json"
    masks = {}
    if meta_path.exists():
        masks = {k: np.asarray(v, dtype=np.int64) for k, v in json.loads(meta_path.read_text()).get("region_masks", {}).items()}
    neutral = read_obj(d / "neutral.obj")
    neutral.region_masks = masks
    templates = [read_obj(d / f"bs_{k:03d}.obj") for k in range(NUM_BLENDSHAPES)]
    return BlendshapeBasis(neutral, templates)


# -- procedural fixtures --------------------------------------------------------

def cube_mesh(size: float = 1.0, origin=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed axis-aligned cube: 8 vertices, 12 outward-facing triangles."""
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64)
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # x = 0
        [4, 6, 7], [4, 7, 5],  # x = 1
        [0, 4, 5], [0, 5, 1],  # y = 0
        [2, 3, 7], [2, 7, 6],  # y = 1
        [0, 2, 6], [0, 6, 4],  # z = 0
        [1, 5, 7], [1, 7, 3],  # z = 1
    ])
    return TriangleMesh(v * size + np.asarray(origin, dtype=np.float64), f)


def _grid(nx: int, ny: int):
    xs, ys = np.meshgrid(np.linspace(-1, 1, nx), np.linspace(-1, 1, ny))
    quads = [(j * nx + i, j * nx + i + 1, (j + 1) * nx + i + 1, (j + 1) * nx + i)
             for j in range(ny - 1) for i in range(nx - 1)]
    tris = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return xs.ravel(), ys.ravel(), np.array(tris)


# Each channel group moves a Gaussian patch of the face: (centre x, centre y, radius, direction)
_CHANNEL_PATCHES = {
    "eye": (0.4, 0.35, 0.2, (0.0, -1.0, 0.0)),
    "brow": (0.4, 0.65, 0.25, (0.0, 1.0, 0.3)),
    "cheek": (0.55, -0.1, 0.25, (0.3, 0.2, 0.5)),
    "nose": (0.12, 0.05, 0.15, (0.2, 0.5, 0.0)),
    "jaw": (0.0, -0.65, 0.45, (0.0, -1.0, 0.2)),
    "mouth": (0.0, -0.4, 0.22, (0.0, -0.5, 0.4)),
    "tongue": (0.0, -0.4, 0.1, (0.0, 0.0, 1.0)),
}


def synthetic_face_basis(nx: int = 17, ny: int = 17, amplitude: float = 0.05) -> BlendshapeBasis:
    """Procedural face-like grid mesh with 52 localised templates and region masks.

    Left/right channel variants mirror their patch in x; vertex masks ``lip``,
    ``eye_forehead`` and ``upper_face`` are stored on the neutral mesh.
    """
    x, y, tris = _grid(nx, ny)
    z = 0.3 * (1.0 - 0.5 * x**2 - 0.3 * y**2)
    neutral = TriangleMesh(np.stack([x, y, z], axis=1), tris)
    templates = []
    for k, name in enumerate(BLENDSHAPE_NAMES):
        group = next(g for g in _CHANNEL_PATCHES if name.startswith(g))
        cx, cy, r, direction = _CHANNEL_PATCHES[group]
        if name.endswith("Left"):
            cx = -cx
        elif not name.endswith("Right"):
            cx = 0.0
        # the border ring stays fixed, like the back of a head
        w = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * r**2)) * (1 - x**2) * (1 - y**2)
        # channel-specific twist so no two templates coincide
        angle = 2.0 * np.pi * k / NUM_BLENDSHAPES
        d = np.asarray(direction) + 0.3 * np.array([np.cos(angle), np.sin(angle), 0.0])
        templates.append(neutral.with_vertices(neutral.vertices + amplitude * w[:, None] * d[None, :]))
    neutral.region_masks = {
        "lip": np.flatnonzero((np.abs(x) < 0.35) & (np.abs(y + 0.4) < 0.15)),
        "eye_forehead": np.flatnonzero(y > 0.2),
        "upper_face": np.flatnonzero(y > 0.0),
    }
    for t in templates:
        t.region_masks = neutral.region_masks
    return BlendshapeBasis(neutral, templates)
