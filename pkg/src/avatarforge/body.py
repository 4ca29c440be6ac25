"""Parametric body model: blend shapes, linear blend skinning, assets.

The body is a template mesh deformed by linear bases (shape / pose /
expression) plus a free per-vertex offset field, then posed by linear
blend skinning over an axis-angle joint hierarchy.  Trainable vertex
offsets are applied in canonical (unposed) space, before skinning, so a
single offset field serves every sampled pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssetParseError, ValidationError

BODY_MAGIC = "avatar-body"
BODY_VERSION = 1
POSE_MAGIC = "pose-library"
POSE_VERSION = 1

_FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class ParametricBody:
    """Template mesh plus the linear deformation and skinning machinery.

    Pose blend features are flattened (R - I) matrices of the non-root
    joints, so ``pose_basis`` has exactly ``9 * (num_joints - 1)`` rows.
    """

    template_vertices: np.ndarray  # (N, 3)
    faces: np.ndarray              # (F, 3) int, CCW winding
    uv_coords: np.ndarray          # (N, 2) in [0, 1]^2
    shape_basis: np.ndarray        # (S, N, 3)
    pose_basis: np.ndarray         # (P, N, 3), P = 9 * (J - 1)
    expr_basis: np.ndarray         # (E, N, 3)
    joint_regressor: np.ndarray    # (J, N), rows sum to 1
    skinning_weights: np.ndarray   # (N, J), rows sum to 1
    joint_parents: np.ndarray      # (J,) int, -1 for the root

    def __post_init__(self):
        object.__setattr__(self, "template_vertices", np.asarray(self.template_vertices, dtype=np.float64))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64))
        object.__setattr__(self, "uv_coords", np.asarray(self.uv_coords, dtype=np.float64))
        object.__setattr__(self, "shape_basis", np.asarray(self.shape_basis, dtype=np.float64))
        object.__setattr__(self, "pose_basis", np.asarray(self.pose_basis, dtype=np.float64))
        object.__setattr__(self, "expr_basis", np.asarray(self.expr_basis, dtype=np.float64))
        object.__setattr__(self, "joint_regressor", np.asarray(self.joint_regressor, dtype=np.float64))
        object.__setattr__(self, "skinning_weights", np.asarray(self.skinning_weights, dtype=np.float64))
        object.__setattr__(self, "joint_parents", np.asarray(self.joint_parents, dtype=np.int64))

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joint_parents.shape[0]

    @property
    def num_shape(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def num_pose_feats(self) -> int:
        return self.pose_basis.shape[0]

    @property
    def num_expr(self) -> int:
        return self.expr_basis.shape[0]


@dataclass
class BodyCoeffs:
    """Shape / pose / expression coefficients for one body instance."""

    shape: np.ndarray       # (S,)
    pose: np.ndarray        # (J, 3) axis-angle, radians
    expression: np.ndarray  # (E,)

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=np.float64)
        self.pose = np.asarray(self.pose, dtype=np.float64)
        self.expression = np.asarray(self.expression, dtype=np.float64)

    @classmethod
    def zeros(cls, body: ParametricBody) -> "BodyCoeffs":
        return cls(
            shape=np.zeros(body.num_shape),
            pose=np.zeros((body.num_joints, 3)),
            expression=np.zeros(body.num_expr),
        )


@dataclass
class PoseLibrary:
    """Labelled axis-angle poses, sampled uniformly during animation."""

    labels: list[str]
    poses: np.ndarray  # (K, J, 3)

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64)
        if len(self.labels) == 0:
            raise ValidationError("pose library is empty (non-empty invariant)")
        if self.poses.ndim != 3 or self.poses.shape[0] != len(self.labels) or self.poses.shape[2] != 3:
            raise ValidationError(f"pose array shape {self.poses.shape} does not match {len(self.labels)} labels")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("pose labels must be unique")
        if not np.isfinite(self.poses).all():
            raise ValidationError("pose library contains non-finite entries")

    @property
    def num_joints(self) -> int:
        return self.poses.shape[1]

    def get(self, label: str) -> np.ndarray:
        try:
            return self.poses[self.labels.index(label)]
        except ValueError:
            raise KeyError(f"unknown pose label {label!r}; available: {', '.join(self.labels)}") from None


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------

def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (..., 3) to rotation matrices (..., 3, 3).

    Uses series coefficients near zero so the zero vector maps exactly to
    the identity and small poses stay smooth.
    """
    v = np.asarray(axis_angle, dtype=np.float64)
    theta2 = np.sum(v * v, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < 1e-8
    # sin(t)/t and (1 - cos t)/t^2, series-expanded where t ~ 0
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zero = np.zeros_like(x)
    k = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def _pose_features(pose: np.ndarray) -> np.ndarray:
    """Flattened (R - I) of every non-root joint -> (9 * (J - 1),)."""
    rots = rodrigues(pose[1:])
    return (rots - np.eye(3)).reshape(-1)


# ---------------------------------------------------------------------------
# Core deformation operations
# ---------------------------------------------------------------------------

def blend_template(body: ParametricBody, coeffs: BodyCoeffs, offsets: np.ndarray) -> np.ndarray:
    """Template + shape/pose/expression blend shapes + vertex offsets."""
    offsets = np.asarray(offsets, dtype=np.float64)
    if coeffs.shape.shape != (body.num_shape,):
        raise ValueError(f"shape coeffs {coeffs.shape.shape} do not match basis ({body.num_shape},)")
    if coeffs.pose.shape != (body.num_joints, 3):
        raise ValueError(f"pose {coeffs.pose.shape} does not match ({body.num_joints}, 3)")
    if coeffs.expression.shape != (body.num_expr,):
        raise ValueError(f"expression coeffs {coeffs.expression.shape} do not match basis ({body.num_expr},)")
    if offsets.shape != (body.num_vertices, 3):
        raise ValueError(f"offsets {offsets.shape} do not match ({body.num_vertices}, 3)")

    out = body.template_vertices + offsets
    if body.num_shape:
        out = out + np.einsum("s,snk->nk", coeffs.shape, body.shape_basis)
    if body.num_pose_feats:
        out = out + np.einsum("p,pnk->nk", _pose_features(coeffs.pose), body.pose_basis)
    if body.num_expr:
        out = out + np.einsum("e,enk->nk", coeffs.expression, body.expr_basis)
    return out


def compute_joints(body: ParametricBody, shaped_vertices: np.ndarray) -> np.ndarray:
    """Regress joint locations from shaped vertices: (J, N) @ (N, 3)."""
    shaped_vertices = np.asarray(shaped_vertices, dtype=np.float64)
    if shaped_vertices.shape != (body.num_vertices, 3):
        raise ValueError(f"shaped vertices {shaped_vertices.shape} do not match ({body.num_vertices}, 3)")
    return body.joint_regressor @ shaped_vertices


def joint_world_transforms(body: ParametricBody, joints: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """World 4x4 transform per joint: parent chain of rotations about joints."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (body.num_joints, 3):
        raise ValueError(f"pose {pose.shape} does not match ({body.num_joints}, 3)")
    rots = rodrigues(pose)
    J = body.num_joints
    world = np.zeros((J, 4, 4))
    for j in range(J):
        parent = body.joint_parents[j]
        local = np.eye(4)
        local[:3, :3] = rots[j]
        local[:3, 3] = joints[j] if parent < 0 else joints[j] - joints[parent]
        world[j] = local if parent < 0 else world[parent] @ local
    return world


def skinning_transforms(body: ParametricBody, joints: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """Per-joint rest-relative transforms G_j; zero pose gives the identity."""
    world = joint_world_transforms(body, joints, pose)
    G = world.copy()
    # A @ translate(-joint): rotation unchanged, translation t - R @ joint
    G[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], joints)
    return G


def linear_blend_skinning(
    body: ParametricBody,
    vertices: np.ndarray,
    joints: np.ndarray,
    pose: np.ndarray,
) -> np.ndarray:
    """Pose canonical vertices by skin-weighted joint transforms."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape != (body.num_vertices, 3):
        raise ValueError(f"vertices {vertices.shape} do not match ({body.num_vertices}, 3)")
    G = skinning_transforms(body, joints, pose)
    rot = np.einsum("nj,jab->nab", body.skinning_weights, G[:, :3, :3])
    trans = body.skinning_weights @ G[:, :3, 3]
    return np.einsum("nab,nb->na", rot, vertices) + trans


def blended_rotations(body: ParametricBody, joints: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """Skin-weighted 3x3 rotation per vertex: the LBS Jacobian d(posed)/d(canonical)."""
    G = skinning_transforms(body, joints, pose)
    return np.einsum("nj,jab->nab", body.skinning_weights, G[:, :3, :3])


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals; zero accumulations fall back to +z."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    acc = np.zeros_like(vertices)
    if faces.size:
        e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
        e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
        cross = np.cross(e1, e2)  # magnitude = 2 * area
        np.add.at(acc, faces.reshape(-1), np.repeat(cross, 3, axis=0))
    norms = np.linalg.norm(acc, axis=1)
    ok = norms > 1e-12
    out = np.where(ok[:, None], acc / np.where(ok, norms, 1.0)[:, None], _FALLBACK_NORMAL)
    return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_body(body: ParametricBody) -> ParametricBody:
    """Check every ParametricBody invariant; raise ValidationError naming it."""
    n, f, j = body.num_vertices, body.num_faces, body.num_joints
    if body.template_vertices.ndim != 2 or body.template_vertices.shape[1] != 3:
        raise ValidationError(f"template_vertices must be (N, 3), got {body.template_vertices.shape}")
    if f and (body.faces.min() < 0 or body.faces.max() >= n):
        raise ValidationError("face index out of range (face index < N invariant)")
    if body.faces.ndim != 2 or body.faces.shape[1] != 3:
        raise ValidationError(f"faces must be (F, 3), got {body.faces.shape}")
    if body.uv_coords.shape != (n, 2):
        raise ValidationError(f"uv_coords must be (N, 2), got {body.uv_coords.shape}")
    if body.uv_coords.min() < -1e-9 or body.uv_coords.max() > 1 + 1e-9:
        raise ValidationError("uv_coords outside [0, 1]^2")
    if j < 1:
        raise ValidationError("body needs at least one joint")
    if body.joint_parents[0] != -1:
        raise ValidationError("joint 0 must be the root (parent -1)")
    for idx in range(1, j):
        p = body.joint_parents[idx]
        if p < 0 or p >= idx:
            raise ValidationError(
                f"joint_parents[{idx}] = {p} violates topological order (parent < index or -1 invariant)"
            )
    for name, basis, count in (
        ("shape_basis", body.shape_basis, body.num_shape),
        ("pose_basis", body.pose_basis, body.num_pose_feats),
        ("expr_basis", body.expr_basis, body.num_expr),
    ):
        if basis.shape != (count, n, 3):
            raise ValidationError(f"{name} must be (K, N, 3), got {basis.shape}")
    if body.num_pose_feats != 9 * (j - 1):
        raise ValidationError(
            f"pose_basis has {body.num_pose_feats} rows, expected 9*(J-1) = {9 * (j - 1)}"
        )
    if body.joint_regressor.shape != (j, n):
        raise ValidationError(f"joint_regressor must be (J, N), got {body.joint_regressor.shape}")
    if body.joint_regressor.min() < -1e-9:
        raise ValidationError("joint_regressor has negative entries")
    reg_sums = body.joint_regressor.sum(axis=1)
    bad = np.flatnonzero(np.abs(reg_sums - 1.0) > 1e-6)
    if bad.size:
        raise ValidationError(
            f"joint_regressor row {bad[0]} sums to {reg_sums[bad[0]]:.6g} (regressor row sum invariant)"
        )
    if body.skinning_weights.shape != (n, j):
        raise ValidationError(f"skinning_weights must be (N, J), got {body.skinning_weights.shape}")
    if body.skinning_weights.min() < -1e-9:
        raise ValidationError("skinning_weights has negative entries")
    w_sums = body.skinning_weights.sum(axis=1)
    bad = np.flatnonzero(np.abs(w_sums - 1.0) > 1e-6)
    if bad.size:
        raise ValidationError(
            f"skinning_weights row {bad[0]} sums to {w_sums[bad[0]]:.6g} (weights row sum invariant)"
        )
    for name, arr in (
        ("template_vertices", body.template_vertices),
        ("uv_coords", body.uv_coords),
        ("shape_basis", body.shape_basis),
        ("pose_basis", body.pose_basis),
        ("expr_basis", body.expr_basis),
        ("joint_regressor", body.joint_regressor),
        ("skinning_weights", body.skinning_weights),
    ):
        if not np.isfinite(arr).all():
            raise ValidationError(f"{name} contains non-finite values")
    return body


# ---------------------------------------------------------------------------
# Procedural meshes
# ---------------------------------------------------------------------------

def uv_sphere(n_lat: int, n_lon: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)):
    """UV sphere mesh: (vertices, faces, uvs).  n_lat rings between poles."""
    center = np.asarray(center, dtype=np.float64)
    verts = [center + np.array([0.0, -radius, 0.0])]
    uvs = [(0.5, 0.0)]
    for i in range(1, n_lat + 1):
        phi = -math.pi / 2 + math.pi * i / (n_lat + 1)
        y = radius * math.sin(phi)
        r = radius * math.cos(phi)
        for k in range(n_lon):
            th = 2 * math.pi * k / n_lon
            verts.append(center + np.array([r * math.sin(th), y, r * math.cos(th)]))
            uvs.append((k / n_lon, (i) / (n_lat + 1)))
    verts.append(center + np.array([0.0, radius, 0.0]))
    uvs.append((0.5, 1.0))
    faces = []
    ring = lambda i, k: 1 + i * n_lon + (k % n_lon)
    for k in range(n_lon):  # bottom fan
        faces.append((0, ring(0, k + 1), ring(0, k)))
    for i in range(n_lat - 1):
        for k in range(n_lon):
            a, b = ring(i, k), ring(i, k + 1)
            c, d = ring(i + 1, k + 1), ring(i + 1, k)
            faces.append((a, b, c))
            faces.append((a, c, d))
    top = 1 + n_lat * n_lon
    for k in range(n_lon):  # top fan
        faces.append((top, ring(n_lat - 1, k), ring(n_lat - 1, k + 1)))
    return np.array(verts), np.array(faces, dtype=np.int64), np.array(uvs)


def _capsule(p0, p1, radius, n_radial, n_axial, n_cap):
    """Capsule mesh around segment p0->p1.

    Returns (vertices, faces, ring0_idx, ring1_idx, axial_t) where ring0/ring1
    are the vertex indices of the cylinder end rings (centred exactly on p0
    and p1) and axial_t is each vertex's parameter along the segment axis.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    if length <= 0:
        raise ValueError("capsule endpoints coincide")
    z = axis / length
    ref = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(ref, z)
    u /= np.linalg.norm(u)
    w = np.cross(z, u)

    ring_specs = []  # (center, ring_radius)
    ring_specs.append(("pole", p0 - radius * z, 0.0))
    for i in range(1, n_cap + 1):
        phi = -math.pi / 2 + (math.pi / 2) * i / (n_cap + 1)
        ring_specs.append(("ring", p0 + radius * math.sin(phi) * z, radius * math.cos(phi)))
    for s in range(n_axial + 1):
        ring_specs.append(("ring", p0 + (s / n_axial) * length * z, radius))
    for i in range(1, n_cap + 1):
        phi = (math.pi / 2) * i / (n_cap + 1)
        ring_specs.append(("ring", p1 + radius * math.sin(phi) * z, radius * math.cos(phi)))
    ring_specs.append(("pole", p1 + radius * z, 0.0))

    verts = []
    rings = []  # list of vertex-index lists, poles as single-entry lists
    for kind, center, r in ring_specs:
        if kind == "pole":
            rings.append([len(verts)])
            verts.append(center)
        else:
            idx = []
            for k in range(n_radial):
                th = 2 * math.pi * k / n_radial
                idx.append(len(verts))
                verts.append(center + r * (math.cos(th) * u + math.sin(th) * w))
            rings.append(idx)

    faces = []
    for a, b in zip(rings[:-1], rings[1:]):
        if len(a) == 1:  # bottom pole fan
            for k in range(n_radial):
                faces.append((a[0], b[(k + 1) % n_radial], b[k]))
        elif len(b) == 1:  # top pole fan
            for k in range(n_radial):
                faces.append((b[0], a[k], a[(k + 1) % n_radial]))
        else:
            for k in range(n_radial):
                k2 = (k + 1) % n_radial
                faces.append((a[k], a[k2], b[k2]))
                faces.append((a[k], b[k2], b[k]))

    verts = np.array(verts)
    ring0 = np.array(rings[1 + n_cap], dtype=np.int64)
    ring1 = np.array(rings[1 + n_cap + n_axial], dtype=np.int64)
    axial_t = ((verts - p0) @ z) / length
    return verts, np.array(faces, dtype=np.int64), ring0, ring1, axial_t


_HUMANOID_JOINTS = [
    # name, position, parent
    ("pelvis", (0.0, 0.95, 0.0), -1),
    ("chest", (0.0, 1.45, 0.0), 0),
    ("head", (0.0, 1.50, 0.0), 1),
    ("l_shoulder", (0.18, 1.45, 0.0), 1),
    ("l_elbow", (0.46, 1.45, 0.0), 3),
    ("l_wrist", (0.72, 1.45, 0.0), 4),
    ("r_shoulder", (-0.18, 1.45, 0.0), 1),
    ("r_elbow", (-0.46, 1.45, 0.0), 6),
    ("r_wrist", (-0.72, 1.45, 0.0), 7),
    ("l_hip", (0.10, 0.90, 0.0), 0),
    ("l_knee", (0.10, 0.50, 0.0), 9),
    ("l_ankle", (0.10, 0.10, 0.0), 10),
    ("r_hip", (-0.10, 0.90, 0.0), 0),
    ("r_knee", (-0.10, 0.50, 0.0), 12),
    ("r_ankle", (-0.10, 0.10, 0.0), 13),
]

HUMANOID_HEAD_JOINT = 2

_HUMANOID_PARTS = [
    # p0 joint, p1 joint, radius, (weight joint a, weight joint b), (regressor: joint@ring0, joint@ring1)
    (0, 1, 0.16, (0, 1), (0, 1)),
    (2, None, 0.11, (2, 2), (2, None)),  # head capsule extends upward from the head joint
    (3, 4, 0.055, (3, 4), (3, 4)),
    (4, 5, 0.050, (4, 5), (None, 5)),
    (6, 7, 0.055, (6, 7), (6, 7)),
    (7, 8, 0.050, (7, 8), (None, 8)),
    (9, 10, 0.080, (9, 10), (9, 10)),
    (10, 11, 0.065, (10, 11), (None, 11)),
    (12, 13, 0.080, (12, 13), (12, 13)),
    (13, 14, 0.065, (13, 14), (None, 14)),
]


def generate_test_humanoid(n_segments: int = 3) -> ParametricBody:
    """Procedural capsule-limbed biped standing along +y.

    Substitutes for licensed body assets in tests: 15 joints (three per
    limb), smooth skinning weights, ring-based joint regressor, cylindrical
    body UVs, two shape directions and one expression direction.
    """
    if n_segments < 2:
        raise ValueError("n_segments must be >= 2")
    n_radial = 4 * n_segments
    n_axial = 2 * n_segments
    n_cap = max(1, n_segments - 1)

    joint_pos = np.array([p for _, p, _ in _HUMANOID_JOINTS])
    parents = np.array([par for _, _, par in _HUMANOID_JOINTS], dtype=np.int64)
    J = len(_HUMANOID_JOINTS)

    all_verts: list[np.ndarray] = []
    all_faces: list[np.ndarray] = []
    weights_rows: list[np.ndarray] = []
    reg_rings: dict[int, np.ndarray] = {}
    offset = 0
    for p0_j, p1_j, radius, (wa, wb), (reg0, reg1) in _HUMANOID_PARTS:
        p0 = joint_pos[p0_j]
        p1 = joint_pos[p1_j] if p1_j is not None else p0 + np.array([0.0, 0.18, 0.0])
        verts, faces, ring0, ring1, axial_t = _capsule(p0, p1, radius, n_radial, n_axial, n_cap)
        w = np.zeros((verts.shape[0], J))
        if wa == wb:
            w[:, wa] = 1.0
        else:
            ramp = np.clip((axial_t - 0.6) / 0.8, 0.0, 1.0)
            w[:, wa] = 1.0 - ramp
            w[:, wb] = ramp
        weights_rows.append(w)
        if reg0 is not None:
            reg_rings[reg0] = ring0 + offset
        if reg1 is not None:
            reg_rings[reg1] = ring1 + offset
        all_verts.append(verts)
        all_faces.append(faces + offset)
        offset += verts.shape[0]

    vertices = np.vstack(all_verts)
    faces = np.vstack(all_faces)
    weights = np.vstack(weights_rows)
    N = vertices.shape[0]

    regressor = np.zeros((J, N))
    for j in range(J):
        ring = reg_rings[j]
        regressor[j, ring] = 1.0 / ring.size

    # cylindrical UVs around the body's vertical axis
    u = np.arctan2(vertices[:, 0], vertices[:, 2]) / (2 * math.pi) + 0.5
    ymin, ymax = vertices[:, 1].min(), vertices[:, 1].max()
    v = (vertices[:, 1] - ymin) / (ymax - ymin)
    uv = np.clip(np.stack([u, v], axis=1), 0.0, 1.0)

    # shape 0: stature stretch about the pelvis; shape 1: radial girth
    shape_basis = np.zeros((2, N, 3))
    shape_basis[0, :, 1] = 0.08 * (vertices[:, 1] - joint_pos[0, 1])
    shape_basis[1, :, 0] = 0.04 * vertices[:, 0]
    shape_basis[1, :, 2] = 0.04 * vertices[:, 2]

    # expression 0: gaussian puff around the head
    head_center = joint_pos[HUMANOID_HEAD_JOINT] + np.array([0.0, 0.09, 0.0])
    d = vertices - head_center
    dist = np.linalg.norm(d, axis=1)
    falloff = np.exp(-(dist**2) / (2 * 0.12**2))
    dirs = d / np.maximum(dist, 1e-9)[:, None]
    expr_basis = (0.02 * falloff[:, None] * dirs)[None]

    pose_basis = np.zeros((9 * (J - 1), N, 3))

    body = ParametricBody(
        template_vertices=vertices,
        faces=faces,
        uv_coords=uv,
        shape_basis=shape_basis,
        pose_basis=pose_basis,
        expr_basis=expr_basis,
        joint_regressor=regressor,
        skinning_weights=weights,
        joint_parents=parents,
    )
    return validate_body(body)


# ---------------------------------------------------------------------------
# Asset files
# ---------------------------------------------------------------------------

_ARRAY_ORDER = [
    "vertices",
    "faces",
    "uv_coords",
    "joint_parents",
    "joint_regressor",
    "skinning_weights",
    "shape_basis",
    "pose_basis",
    "expr_basis",
]

_DTYPE_TAGS = {"f8": np.float64, "f4": np.float32, "i8": np.int64}


def _array_shapes(n, f, j, s, p, e):
    return {
        "vertices": (n, 3),
        "faces": (f, 3),
        "uv_coords": (n, 2),
        "joint_parents": (j,),
        "joint_regressor": (j, n),
        "skinning_weights": (n, j),
        "shape_basis": (s * n, 3),
        "pose_basis": (p * n, 3),
        "expr_basis": (e * n, 3),
    }


def save_body_asset(body: ParametricBody, path, sidecar: bool = False, sidecar_dtype: str = "f8") -> None:
    """Write the documented text asset format; arrays optionally in a binary sidecar."""
    from pathlib import Path

    path = Path(path)
    n, f, j = body.num_vertices, body.num_faces, body.num_joints
    s, p, e = body.num_shape, body.num_pose_feats, body.num_expr
    arrays = {
        "vertices": body.template_vertices,
        "faces": body.faces,
        "uv_coords": body.uv_coords,
        "joint_parents": body.joint_parents,
        "joint_regressor": body.joint_regressor,
        "skinning_weights": body.skinning_weights,
        "shape_basis": body.shape_basis.reshape(-1, 3),
        "pose_basis": body.pose_basis.reshape(-1, 3),
        "expr_basis": body.expr_basis.reshape(-1, 3),
    }
    lines = [f"{BODY_MAGIC} {BODY_VERSION}"]
    for key, count in (
        ("vertices", n), ("faces", f), ("joints", j),
        ("shape_coeffs", s), ("pose_feats", p), ("expr_coeffs", e),
    ):
        lines.append(f"{key} {count}")
    sidecar_path = path.with_suffix(path.suffix + ".bin") if sidecar else None
    if sidecar:
        lines.append(f"sidecar {sidecar_path.name}")
    blob = bytearray()
    for name in _ARRAY_ORDER:
        arr = arrays[name]
        if sidecar:
            tag = "i8" if arr.dtype.kind == "i" else sidecar_dtype
            offset = len(blob)
            blob.extend(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())
            lines.append(f"array {name} sidecar {tag} {offset}")
        else:
            lines.append(f"array {name} inline")
            if arr.dtype.kind == "i":
                rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
                for row in rows:
                    lines.append(" ".join(str(int(x)) for x in row))
            else:
                for row in arr:
                    lines.append(" ".join(f"{x:.17g}" for x in np.atleast_1d(row)))
    path.write_text("\n".join(lines) + "\n")
    if sidecar:
        sidecar_path.write_bytes(bytes(blob))


def load_body_asset(path) -> ParametricBody:
    """Parse and validate a body asset file (see save_body_asset for format)."""
    from pathlib import Path

    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise AssetParseError(f"cannot read body asset: {exc}", path=str(path))
    lines = raw.splitlines()

    def fail(msg, ln):
        raise AssetParseError(msg, path=str(path), line=ln + 1)

    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            stripped = lines[pos].strip()
            pos += 1
            if stripped and not stripped.startswith("#"):
                return stripped, pos - 1
        return None, len(lines)

    header, ln = next_line()
    if header is None or header.split() != [BODY_MAGIC, str(BODY_VERSION)]:
        fail(f"expected header '{BODY_MAGIC} {BODY_VERSION}', got {header!r}", ln)

    counts = {}
    for key in ("vertices", "faces", "joints", "shape_coeffs", "pose_feats", "expr_coeffs"):
        line, ln = next_line()
        if line is None:
            fail(f"missing count line '{key}'", ln)
        parts = line.split()
        if len(parts) != 2 or parts[0] != key:
            fail(f"expected '{key} <count>', got {line!r}", ln)
        try:
            counts[key] = int(parts[1])
        except ValueError:
            fail(f"count for {key} is not an integer: {parts[1]!r}", ln)
        if counts[key] < 0:
            fail(f"count for {key} is negative", ln)

    n, f, j = counts["vertices"], counts["faces"], counts["joints"]
    s, p, e = counts["shape_coeffs"], counts["pose_feats"], counts["expr_coeffs"]
    shapes = _array_shapes(n, f, j, s, p, e)

    line, ln = next_line()
    sidecar_bytes = None
    if line is not None and line.startswith("sidecar "):
        sidecar_name = line.split(maxsplit=1)[1]
        sidecar_file = path.parent / sidecar_name
        if not sidecar_file.exists():
            fail(f"sidecar file {sidecar_name!r} not found", ln)
        sidecar_bytes = sidecar_file.read_bytes()
        line, ln = next_line()

    arrays: dict[str, np.ndarray] = {}
    while line is not None:
        parts = line.split()
        if parts[0] != "array" or len(parts) < 3:
            fail(f"expected 'array <name> inline|sidecar ...', got {line!r}", ln)
        name, mode = parts[1], parts[2]
        if name not in shapes:
            fail(f"unknown array {name!r}", ln)
        if name in arrays:
            fail(f"duplicate array {name!r}", ln)
        shape = shapes[name]
        is_int = name in ("faces", "joint_parents")
        if mode == "inline":
            n_rows = 1 if len(shape) == 1 else shape[0]
            n_cols = shape[0] if len(shape) == 1 else shape[1]
            data = np.empty((n_rows, n_cols), dtype=np.int64 if is_int else np.float64)
            for r in range(n_rows):
                row_line, row_ln = next_line()
                if row_line is None:
                    fail(f"array {name!r}: expected {n_rows} rows, file ended at row {r}", row_ln)
                fields = row_line.split()
                if len(fields) != n_cols:
                    fail(f"array {name!r} row {r}: expected {n_cols} fields, got {len(fields)}", row_ln)
                try:
                    data[r] = [int(x) for x in fields] if is_int else [float(x) for x in fields]
                except ValueError as exc:
                    fail(f"array {name!r} row {r}: {exc}", row_ln)
            arrays[name] = data.reshape(shape)
        elif mode == "sidecar":
            if sidecar_bytes is None:
                fail(f"array {name!r} declared in sidecar but no sidecar file given", ln)
            if len(parts) != 5:
                fail(f"expected 'array {name} sidecar <dtype> <offset>', got {line!r}", ln)
            tag, off_s = parts[3], parts[4]
            if tag not in _DTYPE_TAGS:
                fail(f"unknown dtype tag {tag!r}", ln)
            try:
                off = int(off_s)
            except ValueError:
                fail(f"bad sidecar offset {off_s!r}", ln)
            dtype = _DTYPE_TAGS[tag]
            count = int(np.prod(shape))
            end = off + count * dtype().itemsize
            if off < 0 or end > len(sidecar_bytes):
                fail(f"array {name!r}: sidecar range [{off}, {end}) out of bounds", ln)
            data = np.frombuffer(sidecar_bytes, dtype=dtype, count=count, offset=off)
            arrays[name] = data.reshape(shape).astype(np.int64 if is_int else np.float64)
        else:
            fail(f"unknown array mode {mode!r}", ln)
        line, ln = next_line()

    missing = [name for name in _ARRAY_ORDER if name not in arrays]
    if missing:
        raise AssetParseError(f"missing arrays: {', '.join(missing)}", path=str(path))

    body = ParametricBody(
        template_vertices=arrays["vertices"],
        faces=arrays["faces"],
        uv_coords=arrays["uv_coords"],
        shape_basis=arrays["shape_basis"].reshape(s, n, 3),
        pose_basis=arrays["pose_basis"].reshape(p, n, 3),
        expr_basis=arrays["expr_basis"].reshape(e, n, 3),
        joint_regressor=arrays["joint_regressor"],
        skinning_weights=arrays["skinning_weights"],
        joint_parents=arrays["joint_parents"],
    )
    return validate_body(body)


def save_pose_library(library: PoseLibrary, path) -> None:
    lines = [f"{POSE_MAGIC} {POSE_VERSION}"]
    for label, pose in zip(library.labels, library.poses):
        flat = " ".join(f"{x:.17g}" for x in pose.reshape(-1))
        lines.append(f"{label} {flat}")
    from pathlib import Path

    Path(path).write_text("\n".join(lines) + "\n")


def load_pose_library(path) -> PoseLibrary:
    """Parse 'label + 3J floats per line' pose records."""
    from pathlib import Path

    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise AssetParseError(f"cannot read pose library: {exc}", path=str(path))
    lines = raw.splitlines()
    records = []
    header_seen = False
    for ln, line in enumerate(lines):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if not header_seen:
            if stripped.split() != [POSE_MAGIC, str(POSE_VERSION)]:
                raise AssetParseError(
                    f"expected header '{POSE_MAGIC} {POSE_VERSION}', got {stripped!r}",
                    path=str(path), line=ln + 1,
                )
            header_seen = True
            continue
        parts = stripped.split()
        label, values = parts[0], parts[1:]
        if len(values) == 0 or len(values) % 3 != 0:
            raise AssetParseError(
                f"pose {label!r}: expected 3*J values, got {len(values)}", path=str(path), line=ln + 1
            )
        try:
            pose = np.array([float(x) for x in values]).reshape(-1, 3)
        except ValueError as exc:
            raise AssetParseError(f"pose {label!r}: {exc}", path=str(path), line=ln + 1)
        records.append((label, pose, ln + 1))
    if not header_seen:
        raise AssetParseError("empty pose library file", path=str(path))
    if not records:
        raise AssetParseError("pose library has no pose records", path=str(path))
    j = records[0][1].shape[0]
    for label, pose, ln in records[1:]:
        if pose.shape[0] != j:
            raise AssetParseError(
                f"pose {label!r} has {pose.shape[0]} joints, expected {j}", path=str(path), line=ln
            )
    return PoseLibrary(labels=[r[0] for r in records], poses=np.stack([r[1] for r in records]))
