"""Deterministic software rasterizer with reverse-mode gradients.

Forward: perspective projection, z-buffered rasterization with
perspective-correct barycentrics.  Two shading modes: world-space normals
remapped into RGB, and unlit albedo sampled bilinearly from a UV-indexed
map.

Backward: pixel gradients are pulled back to vertex positions (through
interpolated shading normals) or to albedo texels (through the bilinear
weights).  Pixel coverage and barycentric weights are treated as constants
of the forward pass, so geometry learns through shading only - no
silhouette gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NORMAL_BACKGROUND = np.array([0.5, 0.5, 1.0])
ALBEDO_BACKGROUND = np.array([1.0, 1.0, 1.0])

_NEAR = 1e-3
_EDGE_EPS = 1e-10
# cap on simultaneously evaluated pixel candidates; larger scenes are chunked
_CANDIDATE_BUDGET = 4_000_000


@dataclass(frozen=True)
class CameraParams:
    """Orbit camera: spherical position around a look-at point, y-up."""

    azimuth: float          # degrees, 0 = +z toward viewer
    elevation: float        # degrees above the horizontal plane
    distance: float
    fov_y: float            # degrees
    look_at: np.ndarray = field(default_factory=lambda: np.zeros(3))
    resolution: tuple[int, int] = (800, 800)  # (width, height)

    def __post_init__(self):
        object.__setattr__(self, "look_at", np.asarray(self.look_at, dtype=np.float64))
        if not 0.0 < self.fov_y < 180.0:
            raise ValueError(f"fov_y must be in (0, 180), got {self.fov_y}")
        if self.distance <= 0:
            raise ValueError(f"distance must be positive, got {self.distance}")
        w, h = self.resolution
        if w <= 0 or h <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")

    def eye(self) -> np.ndarray:
        az = math.radians(self.azimuth)
        el = math.radians(self.elevation)
        direction = np.array(
            [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)]
        )
        return self.look_at + self.distance * direction


@dataclass
class CameraPolicy:
    """Sampling ranges for training cameras: full-body views plus occasional
    close-ups of a head anchor."""

    body_anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))
    head_anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))
    azimuth_range: tuple[float, float] = (-180.0, 180.0)
    elevation_range: tuple[float, float] = (-10.0, 30.0)
    distance_range: tuple[float, float] = (2.0, 3.0)
    head_azimuth_range: tuple[float, float] = (-60.0, 60.0)
    head_elevation_range: tuple[float, float] = (-10.0, 20.0)
    head_distance_range: tuple[float, float] = (0.4, 0.8)
    head_probability: float = 0.2
    fov_y: float = 45.0
    resolution: tuple[int, int] = (800, 800)

    def __post_init__(self):
        self.body_anchor = np.asarray(self.body_anchor, dtype=np.float64)
        self.head_anchor = np.asarray(self.head_anchor, dtype=np.float64)
        if not 0.0 <= self.head_probability <= 1.0:
            raise ValueError(f"head_probability must be in [0, 1], got {self.head_probability}")


def sample_camera(policy: CameraPolicy, rng: np.random.Generator) -> CameraParams:
    """Draw one training camera.  Consumes exactly four uniforms per call."""
    head = rng.random() < policy.head_probability
    if head:
        az_r, el_r, d_r = policy.head_azimuth_range, policy.head_elevation_range, policy.head_distance_range
        anchor = policy.head_anchor
    else:
        az_r, el_r, d_r = policy.azimuth_range, policy.elevation_range, policy.distance_range
        anchor = policy.body_anchor
    return CameraParams(
        azimuth=float(rng.uniform(*az_r)),
        elevation=float(rng.uniform(*el_r)),
        distance=float(rng.uniform(*d_r)),
        fov_y=policy.fov_y,
        look_at=anchor,
        resolution=policy.resolution,
    )


@dataclass
class RenderOutput:
    """Image plus the per-pixel fragment data the backward passes need."""

    image: np.ndarray          # (H, W, 3) in [0, 1]
    coverage_mask: np.ndarray  # (H, W) bool
    face_id: np.ndarray        # (H, W) int32, -1 for background
    bary: np.ndarray           # (H, W, 3) perspective-correct barycentrics
    depth: np.ndarray          # (H, W) view-space depth, +inf background
    mode: str                  # "normal" | "albedo"
    camera: CameraParams
    uv: np.ndarray | None = None      # (H, W, 2) interpolated uv (albedo mode)
    normal: np.ndarray | None = None  # (H, W, 3) interpolated normal (normal mode)
    # retained forward inputs for the backward pass
    vertices: np.ndarray | None = None
    faces: np.ndarray | None = None
    normals: np.ndarray | None = None
    uv_coords: np.ndarray | None = None
    albedo_shape: tuple[int, int, int] | None = None


# ---------------------------------------------------------------------------
# Projection and rasterization
# ---------------------------------------------------------------------------

def _view_matrix(camera: CameraParams) -> tuple[np.ndarray, np.ndarray]:
    eye = camera.eye()
    backward = eye - camera.look_at
    backward = backward / np.linalg.norm(backward)
    up = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(up, backward)) > 1.0 - 1e-9:
        up = np.array([0.0, 0.0, 1.0])
    right = np.cross(up, backward)
    right = right / np.linalg.norm(right)
    true_up = np.cross(backward, right)
    rot = np.stack([right, true_up, backward])
    return rot, eye


def _project(vertices: np.ndarray, camera: CameraParams):
    """World -> screen.  Returns (sx, sy, inv_depth, in_front) per vertex."""
    rot, eye = _view_matrix(camera)
    view = (vertices - eye) @ rot.T
    z = view[:, 2]
    in_front = z < -_NEAR
    safe_z = np.where(in_front, z, -1.0)
    w, h = camera.resolution
    tanf = math.tan(math.radians(camera.fov_y) / 2.0)
    aspect = w / h
    ndc_x = (view[:, 0] / -safe_z) / (tanf * aspect)
    ndc_y = (view[:, 1] / -safe_z) / tanf
    sx = (ndc_x + 1.0) * 0.5 * w
    sy = (1.0 - ndc_y) * 0.5 * h
    return sx, sy, -1.0 / safe_z, in_front


def _rasterize(vertices: np.ndarray, faces: np.ndarray, camera: CameraParams):
    """Z-buffer rasterization.  Returns (face_id, bary, depth) buffers.

    Winner resolution is nearest-depth with ties broken by face submission
    order, applied identically within and across face chunks.
    """
    w, h = camera.resolution
    face_id = np.full((h, w), -1, dtype=np.int32)
    bary = np.zeros((h, w, 3))
    depth = np.full((h, w), np.inf)
    if vertices.shape[0] == 0 or faces.shape[0] == 0:
        return face_id, bary, depth

    sx, sy, inv_d, in_front = _project(vertices, camera)
    fv = faces  # (F, 3)
    usable = in_front[fv].all(axis=1)

    p = np.stack([sx[fv], sy[fv]], axis=-1)  # (F, 3, 2)
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    usable &= np.abs(area) > 1e-12

    x_lo = np.maximum(np.ceil(p[:, :, 0].min(axis=1) - 0.5), 0).astype(np.int64)
    x_hi = np.minimum(np.floor(p[:, :, 0].max(axis=1) - 0.5), w - 1).astype(np.int64)
    y_lo = np.maximum(np.ceil(p[:, :, 1].min(axis=1) - 0.5), 0).astype(np.int64)
    y_hi = np.minimum(np.floor(p[:, :, 1].max(axis=1) - 0.5), h - 1).astype(np.int64)
    bw = x_hi - x_lo + 1
    bh = y_hi - y_lo + 1
    usable &= (bw > 0) & (bh > 0)

    active = np.flatnonzero(usable)
    if active.size == 0:
        return face_id, bary, depth
    counts = (bw[active] * bh[active]).astype(np.int64)

    # chunk faces so candidate arrays stay within budget
    splits = []
    start = 0
    running = 0
    for i, c in enumerate(counts):
        if running + c > _CANDIDATE_BUDGET and i > start:
            splits.append((start, i))
            start, running = i, 0
        running += c
    splits.append((start, len(active)))

    for lo, hi in splits:
        chunk = active[lo:hi]
        c_counts = counts[lo:hi]
        total = int(c_counts.sum())
        if total == 0:
            continue
        rep = np.repeat(np.arange(chunk.size), c_counts)
        offsets = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(c_counts)[:-1]]), c_counts)
        f = chunk[rep]
        bwr = bw[f]
        px = (x_lo[f] + offsets % bwr).astype(np.int64)
        py = (y_lo[f] + offsets // bwr).astype(np.int64)
        cx = px + 0.5
        cy = py + 0.5

        p0, p1, p2 = p[f, 0], p[f, 1], p[f, 2]
        e0 = (p2[:, 0] - p1[:, 0]) * (cy - p1[:, 1]) - (p2[:, 1] - p1[:, 1]) * (cx - p1[:, 0])
        e1 = (p0[:, 0] - p2[:, 0]) * (cy - p2[:, 1]) - (p0[:, 1] - p2[:, 1]) * (cx - p2[:, 0])
        e2 = (p1[:, 0] - p0[:, 0]) * (cy - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (cx - p0[:, 0])
        ar = area[f]
        l0, l1, l2 = e0 / ar, e1 / ar, e2 / ar
        inside = (l0 >= -_EDGE_EPS) & (l1 >= -_EDGE_EPS) & (l2 >= -_EDGE_EPS)
        if not inside.any():
            continue

        f, px, py = f[inside], px[inside], py[inside]
        l0, l1, l2 = l0[inside], l1[inside], l2[inside]
        w0, w1, w2 = inv_d[fv[f, 0]], inv_d[fv[f, 1]], inv_d[fv[f, 2]]
        denom = l0 * w0 + l1 * w1 + l2 * w2
        cand_depth = 1.0 / denom
        b = np.stack([l0 * w0, l1 * w1, l2 * w2], axis=1) / denom[:, None]

        pix = py * w + px
        order = np.lexsort((np.arange(f.size), cand_depth, pix))
        uniq, first = np.unique(pix[order], return_index=True)
        win = order[first]

        rows, cols = uniq // w, uniq % w
        better = cand_depth[win] < depth[rows, cols]
        rows, cols, win = rows[better], cols[better], win[better]
        face_id[rows, cols] = f[win]
        bary[rows, cols] = b[win]
        depth[rows, cols] = cand_depth[win]

    return face_id, bary, depth


def _interpolate(attr: np.ndarray, faces: np.ndarray, face_id: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of a per-vertex attribute over covered pixels."""
    out = np.zeros(face_id.shape + (attr.shape[1],))
    mask = face_id >= 0
    fv = faces[face_id[mask]]
    out[mask] = np.einsum("mk,mkc->mc", bary[mask], attr[fv])
    return out


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def render_normal(
    vertices: np.ndarray,
    faces: np.ndarray,
    normals: np.ndarray,
    camera: CameraParams,
) -> RenderOutput:
    """Render interpolated world-space normals remapped by (n + 1) / 2."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    normals = np.asarray(normals, dtype=np.float64)
    face_id, bary, depth = _rasterize(vertices, faces, camera)
    mask = face_id >= 0
    normal_px = _interpolate(normals, faces, face_id, bary) if faces.size else np.zeros(mask.shape + (3,))
    w, h = camera.resolution
    image = np.broadcast_to(NORMAL_BACKGROUND, (h, w, 3)).copy()
    image[mask] = np.clip((normal_px[mask] + 1.0) * 0.5, 0.0, 1.0)
    return RenderOutput(
        image=image, coverage_mask=mask, face_id=face_id, bary=bary, depth=depth,
        mode="normal", camera=camera, normal=normal_px,
        vertices=vertices, faces=faces, normals=normals,
    )


def _bilinear_setup(uv: np.ndarray, tex_h: int, tex_w: int):
    """Texel indices and weights for bilinear sampling with repeat wrapping."""
    x = uv[..., 0] * tex_w - 0.5
    y = uv[..., 1] * tex_h - 0.5
    x0f, y0f = np.floor(x), np.floor(y)
    fx, fy = x - x0f, y - y0f
    x0 = x0f.astype(np.int64) % tex_w
    x1 = (x0 + 1) % tex_w
    y0 = y0f.astype(np.int64) % tex_h
    y1 = (y0 + 1) % tex_h
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    return (y0, x0, w00), (y0, x1, w10), (y1, x0, w01), (y1, x1, w11)


def sample_albedo(albedo_map: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear texture lookup; uv outside [0,1] wraps (repeat addressing)."""
    th, tw = albedo_map.shape[0], albedo_map.shape[1]
    taps = _bilinear_setup(uv, th, tw)
    out = np.zeros(uv.shape[:-1] + (albedo_map.shape[2],))
    for yy, xx, ww in taps:
        out += ww[..., None] * albedo_map[yy, xx]
    return out


def render_albedo(
    vertices: np.ndarray,
    faces: np.ndarray,
    uv_coords: np.ndarray,
    albedo_map: np.ndarray,
    camera: CameraParams,
) -> RenderOutput:
    """Render the unlit albedo map sampled at interpolated UVs."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    uv_coords = np.asarray(uv_coords, dtype=np.float64)
    albedo_map = np.asarray(albedo_map, dtype=np.float64)
    if albedo_map.ndim != 3 or albedo_map.shape[2] != 3:
        raise ValueError(f"albedo_map must be (H, W, 3), got {albedo_map.shape}")
    face_id, bary, depth = _rasterize(vertices, faces, camera)
    mask = face_id >= 0
    uv_px = _interpolate(uv_coords, faces, face_id, bary) if faces.size else np.zeros(mask.shape + (2,))
    w, h = camera.resolution
    image = np.broadcast_to(ALBEDO_BACKGROUND, (h, w, 3)).copy()
    if mask.any():
        image[mask] = np.clip(sample_albedo(albedo_map, uv_px[mask]), 0.0, 1.0)
    return RenderOutput(
        image=image, coverage_mask=mask, face_id=face_id, bary=bary, depth=depth,
        mode="albedo", camera=camera, uv=uv_px,
        vertices=vertices, faces=faces, uv_coords=uv_coords,
        albedo_shape=albedo_map.shape,
    )


# ---------------------------------------------------------------------------
# Backward passes
# ---------------------------------------------------------------------------

def backward_albedo(output: RenderOutput, pixel_grad: np.ndarray) -> np.ndarray:
    """Scatter pixel gradients into the four bilinear source texels each."""
    if output.mode != "albedo":
        raise ValueError(f"backward_albedo needs an albedo RenderOutput, got mode {output.mode!r}")
    pixel_grad = np.asarray(pixel_grad, dtype=np.float64)
    if pixel_grad.shape != output.image.shape:
        raise ValueError(f"pixel_grad {pixel_grad.shape} does not match image {output.image.shape}")
    th, tw, tc = output.albedo_shape
    grad = np.zeros((th, tw, tc))
    mask = output.coverage_mask
    if not mask.any():
        return grad
    uv = output.uv[mask]
    g = pixel_grad[mask]
    for yy, xx, ww in _bilinear_setup(uv, th, tw):
        np.add.at(grad, (yy, xx), ww[:, None] * g)
    return grad


def _normal_accum(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    acc = np.zeros_like(vertices)
    if faces.size:
        e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
        e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
        np.add.at(acc, faces.reshape(-1), np.repeat(np.cross(e1, e2), 3, axis=0))
    return acc


def backward_normal(output: RenderOutput, pixel_grad: np.ndarray) -> np.ndarray:
    """Pull pixel gradients back to vertex positions through shading normals.

    Two chains, exact on coverage-stable pixels:
      attribute chain: pixel color -> interpolated normal -> per-vertex
        unit normals -> area-weighted accumulations -> face edge vectors ->
        vertex positions (normalization Jacobian included);
      barycentric chain: pixel color -> perspective-correct barycentric
        weights -> projected screen positions / inverse depths -> vertex
        positions.
    Coverage (which pixels a face occupies) is treated as constant, so
    silhouette motion contributes nothing.
    """
    if output.mode != "normal":
        raise ValueError(f"backward_normal needs a normal RenderOutput, got mode {output.mode!r}")
    pixel_grad = np.asarray(pixel_grad, dtype=np.float64)
    if pixel_grad.shape != output.image.shape:
        raise ValueError(f"pixel_grad {pixel_grad.shape} does not match image {output.image.shape}")
    vertices, faces = output.vertices, output.faces
    g_vert = np.zeros_like(vertices)
    mask = output.coverage_mask
    if not mask.any() or not faces.size:
        return g_vert

    # pixel -> per-vertex unit normals (attribute chain)
    g_m = pixel_grad[mask] * 0.5
    fv = faces[output.face_id[mask]]           # (M, 3)
    b = output.bary[mask]                      # (M, 3)
    g_n = np.zeros_like(vertices)
    np.add.at(g_n, fv.reshape(-1), (b[:, :, None] * g_m[:, None, :]).reshape(-1, 3))

    # unit normals -> raw accumulations (normalization Jacobian)
    acc = _normal_accum(vertices, faces)
    norms = np.linalg.norm(acc, axis=1)
    ok = norms > 1e-12
    n_unit = np.where(ok[:, None], acc / np.where(ok, norms, 1.0)[:, None], 0.0)
    g_acc = np.where(
        ok[:, None],
        (g_n - n_unit * np.sum(n_unit * g_n, axis=1, keepdims=True)) / np.where(ok, norms, 1.0)[:, None],
        0.0,
    )

    # accumulations -> positions through the face cross products
    s = g_acc[faces[:, 0]] + g_acc[faces[:, 1]] + g_acc[faces[:, 2]]
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    g_e1 = np.cross(e2, s)
    g_e2 = np.cross(s, e1)
    np.add.at(g_vert, faces[:, 0], -g_e1 - g_e2)
    np.add.at(g_vert, faces[:, 1], g_e1)
    np.add.at(g_vert, faces[:, 2], g_e2)

    g_vert += _backward_barycentric(output, g_m, n_unit)
    return g_vert


def _backward_barycentric(output: RenderOutput, g_m: np.ndarray, attr_unit: np.ndarray) -> np.ndarray:
    """Gradient of covered pixels w.r.t. vertex positions through the
    perspective-correct barycentric weights.

    For each covered pixel, pixel attr = sum_i beta_i a_i with beta_i =
    lambda_i w_i / sum_j lambda_j w_j, lambda the screen-space barycentrics
    of the pixel center and w the vertex inverse depths; both are chained
    back through the projection to world positions.  Identically zero when
    the three vertex attributes agree (flat shading).
    """
    camera = output.camera
    vertices, faces = output.vertices, output.faces
    mask = output.coverage_mask
    fv = faces[output.face_id[mask]]                      # (M, 3)
    beta = output.bary[mask]                              # (M, 3)
    g_vert = np.zeros_like(vertices)

    rot, eye = _view_matrix(camera)
    view = (vertices - eye) @ rot.T
    sx, sy, inv_d, _ = _project(vertices, camera)

    # d(pixel attr)/d(beta_i) = <g_m, a_i>
    g_beta = np.einsum("mc,mic->mi", g_m, attr_unit[fv])  # (M, 3)
    w_v = inv_d[fv]                                       # (M, 3) vertex inverse depths
    lam_raw = beta / w_v
    lam = lam_raw / lam_raw.sum(axis=1, keepdims=True)    # screen barycentrics
    D = 1.0 / output.depth[mask]                          # sum_j lambda_j w_j
    common = np.einsum("mi,mi->m", g_beta, beta)
    g_lam = w_v * (g_beta - common[:, None]) / D[:, None]  # (M, 3)
    g_w = lam * (g_beta - common[:, None]) / D[:, None]    # (M, 3)

    # screen coordinates of the face corners and the pixel centers
    s_x = sx[fv]
    s_y = sy[fv]
    ys, xs = np.nonzero(mask)
    px = xs + 0.5
    py = ys + 0.5

    # signed area and its derivative w.r.t. each corner
    area = (s_x[:, 1] - s_x[:, 0]) * (s_y[:, 2] - s_y[:, 0]) - (
        s_y[:, 1] - s_y[:, 0]
    ) * (s_x[:, 2] - s_x[:, 0])
    dA = np.empty((len(area), 3, 2))
    dA[:, 0, 0] = s_y[:, 1] - s_y[:, 2]
    dA[:, 0, 1] = s_x[:, 2] - s_x[:, 1]
    dA[:, 1, 0] = s_y[:, 2] - s_y[:, 0]
    dA[:, 1, 1] = s_x[:, 0] - s_x[:, 2]
    dA[:, 2, 0] = s_y[:, 0] - s_y[:, 1]
    dA[:, 2, 1] = s_x[:, 1] - s_x[:, 0]

    # edge function e_i = E(p; s_{i+1}, s_{i+2}); dE/da = (b_y - p_y, p_x - b_x),
    # dE/db = (p_y - a_y, a_x - p_x).  lambda_i = e_i / area.
    # d(lambda_i)/ds = (dE_i/ds - lambda_i dA/ds) / area
    g_s = np.zeros((len(area), 3, 2))
    for i in range(3):
        a_idx, b_idx = (i + 1) % 3, (i + 2) % 3
        gi = g_lam[:, i] / area
        # dE_i/d(a = s_{i+1})
        g_s[:, a_idx, 0] += gi * (s_y[:, b_idx] - py)
        g_s[:, a_idx, 1] += gi * (px - s_x[:, b_idx])
        # dE_i/d(b = s_{i+2})
        g_s[:, b_idx, 0] += gi * (py - s_y[:, a_idx])
        g_s[:, b_idx, 1] += gi * (s_x[:, a_idx] - px)
        # -lambda_i dA/ds
        g_s -= (gi * lam[:, i])[:, None, None] * dA

    # screen/inverse-depth -> view coordinates -> world
    w, h = camera.resolution
    tanf = math.tan(math.radians(camera.fov_y) / 2.0)
    cx = w / (2.0 * tanf * (w / h))
    cy = h / (2.0 * tanf)
    vz = view[:, 2][fv]                                   # (M, 3), negative
    u = inv_d[fv]                                         # -1/vz
    inv_vz2 = 1.0 / (vz * vz)
    g_view = np.zeros((len(area), 3, 3))
    g_view[..., 0] = g_s[..., 0] * cx * u
    g_view[..., 1] = -g_s[..., 1] * cy * u
    g_view[..., 2] = (
        g_s[..., 0] * cx * view[:, 0][fv] * inv_vz2
        - g_s[..., 1] * cy * view[:, 1][fv] * inv_vz2
        + g_w * inv_vz2
    )
    g_world = np.einsum("mkv,va->mka", g_view, rot)
    np.add.at(g_vert, fv.reshape(-1), g_world.reshape(-1, 3))
    return g_vert


def save_image(output, path) -> None:
    """Dump an image array or RenderOutput to a lossless PNG."""
    from PIL import Image

    image = output.image if isinstance(output, RenderOutput) else np.asarray(output)
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def load_image(path) -> np.ndarray:
    """Read a PNG back into a float (H, W, 3) array in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.float64)
    return data / 255.0
