"""Command line surface.

Subcommands: gen-data, train, reconstruct, render, eval, latent. All accept
--seed/--threads/--verbose. Exit codes: 0 success, 1 usage error, 2 data or
I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import ObjectSpec, generate_dataset, load_dataset, save_dataset
from .errors import DataError, NumericsError
from .evaluate import evaluate_model, reconstruct_object
from .expansion import expand_inference
from .io import (
    load_camera,
    load_checkpoint,
    load_train_config,
    save_checkpoint,
    write_metrics_csv,
    write_ply,
    write_ppm,
)
from .metrics import latent_interpolate, latent_pca
from .nets import FieldKind
from .rendering import isosurface_extract, render_image
from .shapes import NerfToyField, color_from_dict, normalize_to_unit, shape_from_dict
from .training import loss_step, train

log = logging.getLogger("recfield")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route to exit code 1
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (default 0; for train, overrides the config)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for per-object work")
    p.add_argument("--verbose", action="store_true", help="log progress")


def build_parser() -> _Parser:
    parser = _Parser(prog="recfield",
                     description="Recursive latent-octree codec for 3D fields")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a dataset from a shapes spec")
    p.add_argument("--shapes", required=True, help="JSON shape spec file")
    p.add_argument("--lod", type=int, required=True, help="octree max lod")
    p.add_argument("--samples", type=int, default=100_000,
                   help="supervision points per object")
    p.add_argument("--kind", choices=[k.value for k in FieldKind], default="sdf")
    p.add_argument("--normalize", action="store_true",
                   help="recenter/rescale each shape to a 0.9 bounding sphere")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("train", help="train a checkpoint on a dataset")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int, default=None,
                   help="override max_steps from the config")
    _add_common(p)

    p = sub.add_parser("reconstruct", help="extract a surface point cloud")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--object-id", required=True)
    p.add_argument("--samples-per-voxel", type=int, default=1)
    p.add_argument("--iterations", type=int, default=2)
    p.add_argument("--out", required=True, help="output PLY path")
    _add_common(p)

    p = sub.add_parser("render", help="render an object to a PPM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--object-id", required=True)
    p.add_argument("--camera", required=True, help="JSON camera file")
    p.add_argument("--renderer", choices=["sphere", "volume"], required=True)
    p.add_argument("--budget", type=int, default=128, help="volume samples per ray")
    p.add_argument("--max-steps", type=int, default=64, help="sphere-trace steps")
    p.add_argument("--out", required=True, help="output PPM path")
    _add_common(p)

    p = sub.add_parser("eval", help="write a metric report CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    _add_common(p)

    p = sub.add_parser("latent", help="latent-space analysis")
    lsub = p.add_subparsers(dest="latent_command", required=True,
                            parser_class=_Parser)
    pi = lsub.add_parser("interp", help="decode interpolated latents to PLYs")
    pi.add_argument("--checkpoint", required=True)
    pi.add_argument("--a", required=True, help="first object id")
    pi.add_argument("--b", required=True, help="second object id")
    pi.add_argument("--steps", type=int, default=4,
                    help="interpolation segments (steps+1 outputs)")
    pi.add_argument("--out", required=True, help="output directory")
    _add_common(pi)
    pp = lsub.add_parser("pca", help="2-D latent projection CSV")
    pp.add_argument("--checkpoint", required=True)
    pp.add_argument("--out", required=True, help="output CSV path")
    _add_common(pp)

    return parser


# -- gen-data --------------------------------------------------------------------


def _load_shape_spec(path, kind: FieldKind, normalize: bool) -> list[ObjectSpec]:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from e
    objects = raw.get("objects")
    if not isinstance(objects, list) or not objects:
        raise UsageError(f"{path}: spec needs a nonempty 'objects' list")
    normalize = normalize or bool(raw.get("normalize", False))
    specs = []
    for entry in objects:
        try:
            object_id = entry["id"]
            shape = shape_from_dict(entry["shape"])
            color_fn = color_from_dict(entry["color"]) if "color" in entry else None
        except (KeyError, ValueError, TypeError) as e:
            raise UsageError(f"{path}: bad object entry ({e})") from e
        if normalize:
            shape = normalize_to_unit(shape)
        toy = None
        if kind is FieldKind.NERF:
            toy_args = entry.get("toy", {})
            from .shapes import constant_color

            toy = NerfToyField(shape, color_fn or constant_color([0.8, 0.8, 0.8]),
                               **toy_args)
        specs.append(ObjectSpec(object_id, shape, color_fn=color_fn, toy=toy))
    ids = [s.object_id for s in specs]
    if len(set(ids)) != len(ids):
        raise UsageError(f"{path}: duplicate object ids")
    return specs


def _cmd_gen_data(args) -> int:
    if args.lod < 1:
        raise UsageError("--lod must be >= 1")
    if args.samples < 2:
        raise UsageError("--samples must be >= 2")
    kind = FieldKind(args.kind)
    specs = _load_shape_spec(args.shapes, kind, args.normalize)
    seed = args.seed if args.seed is not None else 0
    sets = generate_dataset(specs, max_lod=args.lod, n=args.samples,
                            kind=kind, seed=seed)
    save_dataset(args.out, sets)
    for s in sets:
        counts = " ".join(str(s.octree.count(m)) for m in range(s.max_lod + 1))
        print(f"{s.object_id}: octree cells per lod [{counts}], "
              f"{s.n} samples")
    print(f"wrote {len(sets)} objects to {args.out}")
    return 0


# -- train -----------------------------------------------------------------------


def _evaluation_loss(bundle, dataset, config) -> float:
    """Deterministic full-dataset forward loss (no parameter updates)."""
    rng = np.random.default_rng([config.seed, 0xE7A1])
    loss, _ = loss_step(bundle, dataset, rng, config)
    return float(loss.data)


def _cmd_train(args) -> int:
    config = load_train_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.steps is not None:
        if args.steps < 0:
            raise UsageError("--steps must be >= 0")
        config.max_steps = args.steps
    dataset = load_dataset(args.dataset)
    if not dataset:
        raise DataError(f"{args.dataset}: no objects")

    bundle = None
    if args.resume:
        bundle = load_checkpoint(args.resume)
        if bundle.config != config.model_config():
            raise DataError(
                f"{args.resume}: checkpoint architecture differs from config"
            )
    if config.max_steps == 0:
        if bundle is None:
            from .nets import ModelBundle

            bundle = ModelBundle.create(config.model_config(),
                                        [s.object_id for s in dataset],
                                        seed=config.seed)
        report_final = float("nan")
    else:
        bundle, report = train(dataset, config, checkpoint_path=args.out)
        report_final = report.final_loss
        print(f"trained {report.steps_run} steps in {report.wall_time:.1f}s"
              + (" (early stop: divergence)" if report.early_stopped else ""))
    save_checkpoint(args.out, bundle)
    print(f"final-loss {report_final:.6f}")
    print(f"eval-loss {_evaluation_loss(bundle, dataset, config):.6f}")
    print(f"wrote checkpoint {args.out}")
    return 0


# -- reconstruct / render ----------------------------------------------------------


def _cmd_reconstruct(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else 0
    try:
        cloud, skipped = reconstruct_object(
            bundle, args.object_id, samples_per_voxel=args.samples_per_voxel,
            iterations=args.iterations, seed=seed,
        )
    except KeyError as e:
        raise DataError(str(e)) from e
    write_ply(args.out, cloud)
    print(f"{cloud.n} points ({skipped} degenerate skipped) -> {args.out}")
    return 0


def _cmd_render(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    camera = load_camera(args.camera)
    try:
        root = bundle.latents.latent(args.object_id).data[0]
    except KeyError as e:
        raise DataError(str(e)) from e
    tree = expand_inference(root, bundle)
    img, _ = render_image(tree, bundle, camera, args.renderer,
                          budget=args.budget, max_steps=args.max_steps)
    write_ppm(args.out, img)
    print(f"rendered {camera.width}x{camera.height} {args.renderer} -> {args.out}")
    return 0


# -- eval / latent ------------------------------------------------------------------


def _cmd_eval(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    if not dataset:
        raise DataError(f"{args.dataset}: no objects")
    seed = args.seed if args.seed is not None else 0
    report = evaluate_model(bundle, dataset, seed=seed, threads=args.threads)
    write_metrics_csv(args.out, report)
    agg = report.aggregate()
    print(f"{len(report.rows)} objects, aggregate chamfer="
          f"{agg.chamfer:.6g} psnr3d={agg.psnr3d:.6g} -> {args.out}")
    return 0


def _cmd_latent_interp(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    try:
        za = bundle.latents.latent(args.a).data[0]
        zb = bundle.latents.latent(args.b).data[0]
    except KeyError as e:
        raise DataError(str(e)) from e
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seq = latent_interpolate(za, zb, args.steps)
    seed = args.seed if args.seed is not None else 0
    for k, z in enumerate(seq):
        tree = expand_inference(z, bundle)
        cloud, _ = isosurface_extract(tree, bundle,
                                      rng=np.random.default_rng(seed))
        path = out_dir / f"interp_{k:03d}.ply"
        write_ply(path, cloud)
        print(f"t={k / args.steps:.3f}: {cloud.n} points -> {path}")
    return 0


def _cmd_latent_pca(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    try:
        proj = latent_pca(bundle.latents.matrix())
    except ValueError as e:  # checkpoint with too few objects
        raise DataError(str(e)) from e
    with open(args.out, "w") as f:
        f.write("object_id,pc1,pc2\n")
        for oid, row in zip(bundle.latents.object_ids, proj):
            f.write(f"{oid},{row[0]:.8g},{row[1]:.8g}\n")
    print(f"{proj.shape[0]} projections -> {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "reconstruct": _cmd_reconstruct,
    "render": _cmd_render,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "latent":
            handler = (_cmd_latent_interp if args.latent_command == "interp"
                       else _cmd_latent_pca)
        else:
            handler = _COMMANDS[args.command]
        return handler(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericsError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
