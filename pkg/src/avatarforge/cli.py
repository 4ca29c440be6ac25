"""Command-line entry points: train, export, preview.

Every failure prints one machine-greppable line to stderr with a category
prefix (E_USAGE, E_CONFIG, E_ASSET, E_CHECKPOINT, E_GUIDANCE, E_RUNTIME)
and exits nonzero.  Log verbosity comes from the AVATARFORGE_LOG
environment variable (DEBUG/INFO/WARNING/ERROR, default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    AssetParseError,
    AvatarForgeError,
    CheckpointError,
    ConfigError,
    GuidanceError,
    TrainingError,
    ValidationError,
)


class _UsageError(Exception):
    pass


_EXIT_CODES = [
    (_UsageError, "E_USAGE", 2),
    (ConfigError, "E_CONFIG", 3),
    ((AssetParseError, ValidationError), "E_ASSET", 4),
    (CheckpointError, "E_CHECKPOINT", 5),
    (GuidanceError, "E_GUIDANCE", 6),
    ((TrainingError, AvatarForgeError), "E_RUNTIME", 7),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="avatarforge", description="Progressive text-guided avatar optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the three-stage training pipeline")
    p_train.add_argument("--config", required=True, help="run configuration file")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_export = sub.add_parser("export", help="export a mesh/albedo bundle from a checkpoint")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--pose", default="canonical", help="pose label or 'canonical'")
    p_export.add_argument("--out", required=True, help="output directory")

    p_prev = sub.add_parser("preview", help="render a single deterministic preview image")
    p_prev.add_argument("--checkpoint", required=True)
    p_prev.add_argument("--mode", choices=("normal", "albedo"), required=True)
    p_prev.add_argument("--camera", required=True, help="azimuth,elevation,distance (degrees, degrees, units)")
    p_prev.add_argument("--out", required=True, help="output image path")
    p_prev.add_argument("--width", type=int, default=None)
    p_prev.add_argument("--height", type=int, default=None)
    return parser


def _load_checkpoint_context(ckpt_path):
    """Checkpoint plus the body/poses rebuilt from its embedded config."""
    from .checkpoint import load_checkpoint
    from .config import load_run_inputs, parse_run_config

    state, meta = load_checkpoint(ckpt_path)
    text = meta.get("config_text", "")
    if not text:
        raise CheckpointError(f"{ckpt_path}: checkpoint carries no config, cannot rebuild the body")
    cfg = parse_run_config(text)
    body, poses = load_run_inputs(cfg)
    return state, meta, cfg, body, poses


def _cmd_train(args) -> int:
    from .config import parse_run_config
    from .pipeline import run_full_pipeline

    cfg = parse_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    record = run_full_pipeline(cfg, resume=args.resume)
    print(f"done: bundle at {record['output_dir']}/bundle")
    return 0


def _cmd_export(args) -> int:
    from .export import export_bundle

    state, meta, cfg, body, poses = _load_checkpoint_context(args.checkpoint)
    try:
        export_bundle(
            body=body, avatar=state.avatar, out_dir=args.out, poses=poses,
            pose=args.pose, config_hash=meta.get("config_hash", ""),
            config_text=meta.get("config_text", ""),
        )
    except KeyError as exc:
        raise _UsageError(str(exc.args[0])) from None
    print(f"exported pose {args.pose!r} to {args.out}")
    return 0


def _parse_camera(spec: str):
    parts = spec.split(",")
    if len(parts) != 3:
        raise _UsageError(f"--camera expects 'azimuth,elevation,distance', got {spec!r}")
    try:
        az, el, dist = (float(x) for x in parts)
    except ValueError:
        raise _UsageError(f"--camera values must be numeric, got {spec!r}") from None
    if dist <= 0:
        raise _UsageError("--camera distance must be positive")
    return az, el, dist


def _cmd_preview(args) -> int:
    from . import body as body_mod
    from .avp import inference_params
    from .pipeline import anchors_from_body
    from .render import CameraParams, render_albedo, render_normal, save_image

    az, el, dist = _parse_camera(args.camera)
    state, meta, cfg, body, _ = _load_checkpoint_context(args.checkpoint)
    width = args.width or cfg.render_resolution[0]
    height = args.height or cfg.render_resolution[1]
    body_anchor, _ = anchors_from_body(body)
    camera = CameraParams(
        azimuth=az, elevation=el, distance=dist, fov_y=cfg.camera.fov_y,
        look_at=body_anchor, resolution=(width, height),
    )
    psi_v, psi_a = inference_params(state.avatar)
    verts = body_mod.blend_template(body, body_mod.BodyCoeffs.zeros(body), psi_v)
    if args.mode == "normal":
        out = render_normal(verts, body.faces, body_mod.vertex_normals(verts, body.faces), camera)
    else:
        out = render_albedo(verts, body.faces, body.uv_coords, np.clip(psi_a, 0.0, 1.0), camera)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {"train": _cmd_train, "export": _cmd_export, "preview": _cmd_preview}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("AVATARFORGE_LOG", "WARNING").upper())
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (_UsageError, AvatarForgeError) as err:
        for exc_types, prefix, code in _EXIT_CODES:
            if isinstance(err, exc_types):
                message = str(err).replace("\n", " ")
                print(f"{prefix}: {message}", file=sys.stderr)
                return code
        raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
