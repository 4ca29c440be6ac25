"""Export bundles: OBJ meshes with UVs, MTL, albedo PNG, manifest.

Bundle bytes are a pure function of (avatar state, pose selection, tool
version): fixed-precision text, no timestamps, sorted manifest keys.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import numpy as np

from . import __version__
from . import body as body_mod
from .avp import AvatarParams, inference_params
from .errors import AssetParseError
from .render import load_image, save_image

BUNDLE_FORMAT = "export-bundle/1"


def write_obj(path, vertices: np.ndarray, faces: np.ndarray, uvs: np.ndarray,
              mtllib: str | None = None, material: str | None = None) -> None:
    lines = []
    if mtllib:
        lines.append(f"mtllib {mtllib}")
    if material:
        lines.append(f"usemtl {material}")
    for v in vertices:
        lines.append(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    for uv in uvs:
        lines.append(f"vt {uv[0]:.8f} {uv[1]:.8f}")
    for f in faces:
        a, b, c = (int(i) + 1 for i in f)
        lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path):
    """Read back (vertices, faces, uvs) from the OBJ subset write_obj emits."""
    path = Path(path)
    verts, uvs, faces = [], [], []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0] in ("#", "mtllib", "usemtl", "o", "g", "s"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise AssetParseError("only triangle faces supported", path=str(path), line=ln)
                faces.append([int(tok.split("/")[0]) - 1 for tok in parts[1:]])
        except (ValueError, IndexError) as exc:
            raise AssetParseError(f"bad OBJ record: {exc}", path=str(path), line=ln)
    return np.array(verts), np.array(faces, dtype=np.int64), np.array(uvs)


def _safe_label(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", label)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def export_bundle(
    body: body_mod.ParametricBody,
    avatar: AvatarParams,
    out_dir,
    poses: body_mod.PoseLibrary | None = None,
    pose: str | None = None,
    config_hash: str = "",
    config_text: str = "",
) -> dict:
    """Write the export bundle and return its manifest.

    Meshes use the mean parameters; the albedo mean is clamped to [0, 1]
    here, at export.  ``pose=None`` exports the canonical mesh plus one
    mesh per pose-library entry; a specific label (or "canonical") exports
    just that mesh.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    psi_v, psi_a = inference_params(avatar)
    psi_a = np.clip(psi_a, 0.0, 1.0)

    coeffs = body_mod.BodyCoeffs.zeros(body)
    canonical = body_mod.blend_template(body, coeffs, psi_v)
    joints = body_mod.compute_joints(
        body, body_mod.blend_template(body, coeffs, np.zeros((body.num_vertices, 3)))
    )

    albedo_name = "albedo.png"
    mtl_name = "avatar.mtl"
    save_image(psi_a, out_dir / albedo_name)
    (out_dir / mtl_name).write_text(
        "newmtl avatar\nKa 0.0 0.0 0.0\nKd 1.0 1.0 1.0\nKs 0.0 0.0 0.0\n"
        f"map_Kd {albedo_name}\n"
    )

    wanted: list[tuple[str, np.ndarray]] = []
    if pose is None or pose == "canonical":
        wanted.append(("canonical", canonical))
    if poses is not None and pose is None:
        for label in poses.labels:
            wanted.append((label, body_mod.linear_blend_skinning(body, canonical, joints, poses.get(label))))
    elif pose is not None and pose != "canonical":
        if poses is None:
            raise KeyError(f"unknown pose label {pose!r}; available: canonical")
        wanted.append((pose, body_mod.linear_blend_skinning(body, canonical, joints, poses.get(pose))))

    files = {albedo_name: None, mtl_name: None}
    for label, verts in wanted:
        name = "avatar.obj" if label == "canonical" else f"pose_{_safe_label(label)}.obj"
        write_obj(out_dir / name, verts, body.faces, body.uv_coords, mtllib=mtl_name, material="avatar")
        files[name] = None

    manifest = {
        "format": BUNDLE_FORMAT,
        "tool_version": __version__,
        "config_hash": config_hash,
        "config": config_text,
        "meshes": [n for n in files if n.endswith(".obj")],
        "files": {name: _sha256(out_dir / name) for name in sorted(files)},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
