"""Command-line client: talker init|edit|render|eval|serve --config <file>.

Thin wrappers over the pipeline entry points; `serve` hosts the session API.
Exit code 2 means a missing or invalid input (config, dataset, checkpoint),
1 any other failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_run_config
from .data import DataLoadError, SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="talker")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    p_init = sub.add_parser("init", help="train the original talking field")
    common(p_init)

    p_edit = sub.add_parser("edit", help="run the progressive dataset update")
    common(p_edit)
    p_edit.add_argument("--instruction", default=None)
    p_edit.add_argument("--resume", action="store_true")

    p_render = sub.add_parser("render", help="render the track from a checkpoint")
    common(p_render)
    p_render.add_argument("--checkpoint", default=None)
    p_render.add_argument("--omega", type=float, default=1.0)
    p_render.add_argument("--yaw", type=float, default=None)
    p_render.add_argument("--background", type=float, nargs=3, default=None)

    p_eval = sub.add_parser("eval", help="metric report on held-out frames")
    common(p_eval)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--omega", type=float, default=1.0)

    p_serve = sub.add_parser("serve", help="run the edit-session service")
    common(p_serve)
    p_serve.add_argument("--port", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config)
        if args.seed is not None:
            config = config.model_copy(update={"seed": args.seed})
        return _dispatch(args, config)
    except (ConfigError, DataLoadError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args, config) -> int:
    from . import pipeline

    if args.command == "init":
        result = pipeline.cmd_init(config)
        print(f"init checkpoint: {result.checkpoint}")
        print(f"digest: {result.digest}")
        print(f"test psnr: {result.test_psnr:.2f} dB")
        return 0
    if args.command == "edit":
        result = pipeline.cmd_edit(config, instruction=args.instruction,
                                   resume=args.resume)
        print(f"edited checkpoint: {result.checkpoint}")
        print(f"digest: {result.digest}")
        print(f"report: {result.report_path}")
        return 0
    if args.command == "render":
        result = pipeline.cmd_render(
            config, checkpoint=args.checkpoint, omega=args.omega,
            yaw_deg=args.yaw, background_override=args.background,
        )
        print(f"wrote {result.count} frames to {result.frames_dir}")
        return 0
    if args.command == "eval":
        report = pipeline.cmd_eval(config, checkpoint=args.checkpoint,
                                   omega=args.omega)
        import json

        print(json.dumps(report, indent=2))
        return 0
    if args.command == "serve":
        import uvicorn

        from .service.app import create_app

        app = create_app(config)
        port = args.port if args.port is not None else config.service.port
        uvicorn.run(app, host="127.0.0.1", port=port, log_level="info")
        return 0
    raise ValueError(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
