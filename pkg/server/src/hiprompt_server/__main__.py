"""Launch the model server: python -m hiprompt_server --port 8080"""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import create_app
from .config import ServerConfig
from .stacks import StackError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiprompt-server")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--denoiser", default="analytic", help="denoiser stack identifier")
    parser.add_argument("--captioner", default="echo", help="captioner stack identifier")
    parser.add_argument("--embedder", default="projection", help="embedder stack identifier")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-concurrency", type=int, default=8)
    parser.add_argument("--native-patch", type=int, default=32,
                        help="native square patch size advertised to clients")
    parser.add_argument("--channels", type=int, default=4)
    parser.add_argument("--data-std", type=float, default=0.5)
    parser.add_argument("--schedule-steps", type=int, default=1000)
    parser.add_argument("--beta-start", type=float, default=0.00085)
    parser.add_argument("--beta-end", type=float, default=0.012)
    parser.add_argument("--schedule-kind", default="scaled_linear",
                        choices=("linear", "scaled_linear"))
    parser.add_argument("--caption-text",
                        default="a sunlit palm tree over white sand, detailed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = ServerConfig(
        denoiser=args.denoiser,
        captioner=args.captioner,
        embedder=args.embedder,
        device=args.device,
        max_concurrency=args.max_concurrency,
        port=args.port,
        host=args.host,
        native_patch_h=args.native_patch,
        native_patch_w=args.native_patch,
        channels=args.channels,
        data_std=args.data_std,
        schedule_steps=args.schedule_steps,
        beta_start=args.beta_start,
        beta_end=args.beta_end,
        schedule_kind=args.schedule_kind,
        caption_text=args.caption_text,
    )
    try:
        app = create_app(config)
    except StackError as exc:
        print(f"cannot start: {exc}", file=sys.stderr)
        return 2
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
