"""``deepbb`` command line.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import metrics, models, scene_io, synthscene
from .errors import (DeepBBError, FormatError, GeometryError, PrintabilityError, SceneIOError, ShapeError,
                     ValidationError)
from .gamut import default_gamut, hex_to_rgb, load_palette, rgb_to_hex
from .optimizer import AttackConfig, generate

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


def _read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SceneIOError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None


def _load_model(path) -> models.SteeringModel:
    if not Path(path).exists():
        raise SceneIOError(f"model weights not found: {path}")
    return models.load_weights(path)


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def cmd_generate(args) -> int:
    model = _load_model(args.model)
    scene = scene_io.load_scene(args.scene, model)
    gamut = load_palette(args.palette) if args.palette else default_gamut()
    cfg = AttackConfig.from_dict(_read_json(args.config)) if args.config else AttackConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate(len(scene))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    perturbation, report = generate(scene, model, gamut, cfg)
    scene_io.save_perturbation(perturbation, out / "perturbation.png")
    scene_io.write_json(out / "report.json", report.to_dict(timing=False))
    _write_text(out / "trace.csv", report.trace_csv())
    _write_text(out / "timeline.csv", report.evaluation.timeline_csv())
    print(f"M0 {report.m0:.3f} deg  M1 {report.m1:.3f}  ({report.wall_clock_s:.1f} s)", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load_model(args.model)
    scene = scene_io.load_scene(args.scene, model)
    perturbation = scene_io.load_perturbation(args.perturbation)
    tau = metrics.tau_for(args.tau_speed_mph * metrics.MPH_TO_MPS, args.tau_interval_s, args.tau_offset_m)
    result = metrics.evaluate(scene, model, perturbation, tau, args.direction)
    doc = result.to_dict()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        scene_io.write_json(out / "evaluation.json", doc)
        _write_text(out / "timeline.csv", result.timeline_csv())
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))
    print(f"tau {tau:.2f} deg  M0 {result.m0:.3f} deg  M1 {result.m1:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_render_synthetic(args) -> int:
    spec = _read_json(args.path_spec)
    path = synthscene.DrivePath.from_dict(spec)
    dims = tuple(spec.get("dims", (32, 64)))
    prefill = hex_to_rgb(spec.get("prefill", "#FFFF00"))
    tex_dims = tuple(spec.get("billboard_dims", (16, 24)))
    if spec.get("texture"):
        texture = scene_io.read_image(Path(args.path_spec).parent / spec["texture"])
    elif spec.get("corner_marks", False):
        texture = synthscene.calibration_texture(prefill, tex_dims)
    else:
        texture = synthscene.unicolor_texture(prefill, tex_dims)
    scene = synthscene.render_scene(
        path, texture, dims, args.seed,
        curvature=float(spec.get("curvature", 0.0)),
        noise=float(spec.get("noise", 0.0)),
        min_area=float(spec.get("min_area", 400.0)),
        prefill_color=prefill,
        scene_id=str(spec.get("scene_id", "synthetic")),
    )
    manifest = scene_io.save_scene(scene, args.out)
    print(f"wrote {len(scene)} frames to {manifest}", file=sys.stderr)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    manifest = Path(args.scene)
    doc = _read_json(manifest)
    scene = scene_io.load_scene(manifest)
    prefill = hex_to_rgb(args.prefill) if args.prefill else scene.prefill_color
    for entry, frame in zip(doc["frames"], scene.frames):
        adj = scene_io.estimate_adj(frame.image, frame.quad, prefill)
        entry["adj"] = adj.tolist()
        print(f"{entry['image']}: adj {adj.r:+.4f} {adj.g:+.4f} {adj.b:+.4f}", file=sys.stderr)
    doc["prefill_color"] = rgb_to_hex(prefill)
    scene_io.write_json(manifest, doc)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_many

    model = _load_model(args.model)
    result = check_many(lambda seed: model, n_seeds=args.samples, base_seed=args.seed)
    print(f"max relative error {result.max_rel_error:.3e} over {result.checked} coordinates "
          f"({result.skipped_kinks} skipped at relu kinks)")
    return EXIT_OK if result.max_rel_error < args.tolerance else EXIT_VALIDATION


def cmd_train(args) -> int:
    data = synthscene.make_steering_dataset(args.n_scenes, args.seed + 1)
    holdout = synthscene.make_steering_dataset(max(1, args.n_scenes // 4), args.seed + 2)
    model = models.SteeringModel.tiny_dave(args.seed)
    report = models.train_toy(model, data, epochs=args.epochs, lr=args.lr, seed=args.seed, holdout=holdout)
    models.save_weights(model, args.out)
    print(f"trained {report.steps} steps, held-out MSE {report.final_mse:.4f} deg^2", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepbb", description="Joint adversarial billboard generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="optimize a printable billboard for a scene")
    p.add_argument("--scene", required=True, help="scene manifest JSON")
    p.add_argument("--model", required=True, help="steering model weights (.dbw)")
    p.add_argument("--palette", help="printable colors, one #RRGGBB per line")
    p.add_argument("--config", help="attack config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score a billboard on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--perturbation", required=True, help="perturbation PNG (sidecar JSON next to it)")
    p.add_argument("--tau-speed-mph", type=float, default=40.0)
    p.add_argument("--tau-interval-s", type=float, default=0.2)
    p.add_argument("--tau-offset-m", type=float, default=1.0)
    p.add_argument("--direction", choices=metrics.DIRECTIONS, default="left")
    p.add_argument("--out", help="output directory (default: JSON to stdout)")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; evaluation is deterministic")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render-synthetic", help="render a synthetic drive-by scene")
    p.add_argument("--path-spec", required=True, help="drive path JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render_synthetic)

    p = sub.add_parser("calibrate", help="estimate per-frame color adjustment into the manifest")
    p.add_argument("--scene", required=True)
    p.add_argument("--prefill", help="board color as #RRGGBB (default: manifest prefill_color)")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; calibration is deterministic")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, default=10, help="random frames to probe")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; probes are seeded")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train a tiny_dave model on synthetic road frames")
    p.add_argument("--out", required=True)
    p.add_argument("--n-scenes", type=int, default=600)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PrintabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SceneIOError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, GeometryError, ShapeError, DeepBBError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
