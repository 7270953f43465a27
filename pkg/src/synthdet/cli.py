"""Command line entry point: generate, validate, preview and demo-assets."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config


def _cmd_generate(args) -> int:
    from .dataset import run_generation

    config = load_config(args.config).with_overrides(
        num_images=args.num_images, seed=args.seed, mode=args.mode,
        background_mode=args.background, workers=args.workers)

    def progress(done, total):
        if done % 10 == 0 or done == total:
            print(f"{done}/{total} images", file=sys.stderr)

    manifest = run_generation(config, args.out, resume=args.resume, progress=progress)
    print(f"wrote {len(manifest.images)} images to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    from .validate import validate_dataset

    results = validate_dataset(args.dataset, replay_images=args.replay)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def _cmd_preview(args) -> int:
    from .dataset import write_previews

    paths = write_previews(args.dataset, args.out, args.limit)
    print(f"wrote {len(paths)} previews to {args.out}")
    return 0


def _cmd_demo_assets(args) -> int:
    from .assets import write_demo_assets

    path = write_demo_assets(args.out, args.num_foreground, args.num_background, args.num_photos, args.seed)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthdet", description="Synthetic object detection data generator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a dataset")
    g.add_argument("--config", required=True, type=Path)
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--num-images", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--mode", choices=["curriculum", "random"])
    g.add_argument("--background", choices=["full-synthetic", "mixed"])
    g.add_argument("--workers", type=int)
    g.add_argument("--resume", action="store_true", help="continue an interrupted run in --out")
    g.set_defaults(func=_cmd_generate)

    v = sub.add_parser("validate", help="check dataset invariants")
    v.add_argument("dataset", type=Path)
    v.add_argument("--replay", type=int, default=0, metavar="N",
                   help="also re-render the first N images and compare hashes")
    v.set_defaults(func=_cmd_validate)

    p = sub.add_parser("preview", help="draw annotation boxes onto images")
    p.add_argument("dataset", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=_cmd_preview)

    d = sub.add_parser("demo-assets", help="write procedural models, photos and a config")
    d.add_argument("--out", required=True, type=Path)
    d.add_argument("--num-foreground", type=int, default=8)
    d.add_argument("--num-background", type=int, default=40)
    d.add_argument("--num-photos", type=int, default=6)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=_cmd_demo_assets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
