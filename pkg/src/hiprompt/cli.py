"""Command-line entry point.

Subcommands: generate, refine-prompts, decompose, plan, schedule-dump,
selftest. Exit codes: 0 success, 2 config error, 3 backend error, 4 internal
invariant failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backends import RemoteCaptioner, ToyEmbedder
from .config import parse_config
from .decompose import split
from .errors import (
    BackendError,
    ConfigError,
    InvalidParameterError,
    InvariantFailure,
)
from .grid import read_grid, write_grid
from .prompts import build_caption_query, build_patch_records, write_manifest
from .runner import run
from .schedule import format_schedule, make_schedule
from .selfcheck import selftest
from .tiling import extract, format_layout, plan_patches
from .images import normalize_to_image, encode_image

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_INVARIANT = 4


def _add_generate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("generate", help="run base generation plus upscale stages")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--prompt", help="global prompt")
    p.add_argument("--negative-prompt", dest="negative_prompt")
    p.add_argument("--seed", type=int)
    p.add_argument("--base-h", type=int)
    p.add_argument("--base-w", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--stages", help="comma list of cumulative area labels, e.g. 4x,16x")
    p.add_argument("--steps", type=int, help="DDIM ladder length")
    p.add_argument("--eta", type=float)
    p.add_argument("--tau", type=float, help="re-noise fraction")
    p.add_argument("--alpha", type=float, help="skip-residual power (0 disables)")
    p.add_argument("--sigma", type=float, help="frequency-split Gaussian std")
    p.add_argument("--guidance", type=float, help="classifier-free guidance scale")
    p.add_argument("--combine-mode", dest="combine_mode", choices=("filtered_sum", "plain_sum"))
    p.add_argument("--backend", choices=("analytic", "remote"))
    p.add_argument("--endpoint", help="remote denoiser endpoint")
    p.add_argument("--data-std", dest="data_std", type=float)
    p.add_argument("--captioner", choices=("none", "remote"))
    p.add_argument("--caption-endpoint", dest="caption_endpoint")
    p.add_argument("--template", choices=("llava_formula", "sharecaptioner_detail"))
    p.add_argument("--embedder", choices=("toy", "remote"))
    p.add_argument("--embed-endpoint", dest="embed_endpoint")
    p.add_argument("--hp", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--nd", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--nr", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("png", "ppm", "raw"))
    p.add_argument("--workers", type=int)
    p.add_argument("--prompts-from", dest="prompts_from", action="append",
                   help="prompt manifest per stage (repeatable), bypasses captioning")


def _generate_overrides(args: argparse.Namespace) -> dict:
    doc: dict = {}

    def put(path: tuple[str, ...], value) -> None:
        if value is None:
            return
        node = doc
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    put(("prompt",), args.prompt)
    put(("negative_prompt",), args.negative_prompt)
    put(("seed",), args.seed)
    put(("base", "height"), args.base_h)
    put(("base", "width"), args.base_w)
    put(("base", "channels"), args.channels)
    if args.stages is not None:
        put(("stages",), [label for label in args.stages.split(",") if label])
    put(("sampler", "ladder_steps"), args.steps)
    put(("sampler", "eta"), args.eta)
    put(("sampler", "tau"), args.tau)
    put(("sampler", "alpha"), args.alpha)
    put(("guidance", "sigma"), args.sigma)
    put(("guidance", "scale"), args.guidance)
    put(("guidance", "combine_mode"), args.combine_mode)
    put(("backend", "kind"), args.backend)
    put(("backend", "endpoint"), args.endpoint)
    put(("backend", "data_std"), args.data_std)
    put(("captioner", "kind"), args.captioner)
    put(("captioner", "endpoint"), args.caption_endpoint)
    put(("captioner", "template_id"), args.template)
    put(("embedder", "kind"), args.embedder)
    put(("embedder", "endpoint"), args.embed_endpoint)
    put(("ablation", "hp"), args.hp)
    put(("ablation", "nd"), args.nd)
    put(("ablation", "nr"), args.nr)
    put(("output", "dir"), args.out)
    put(("output", "format"), args.format)
    put(("workers",), args.workers)
    put(("prompts_from",), args.prompts_from)
    return doc


def _cmd_generate(args: argparse.Namespace) -> int:
    config = parse_config(args.config, _generate_overrides(args))
    paths, report = run(config)
    for path in paths:
        print(path)
    print(f"report: {Path(config.out_dir) / 'report.json'}")
    return EXIT_OK


def _cmd_refine_prompts(args: argparse.Namespace) -> int:
    grid = read_grid(args.grid)
    patch = args.patch or min(grid.height, grid.width)
    stride = args.stride or max(1, patch // 2)
    layout = plan_patches(grid.height, grid.width, patch, patch, stride, stride)
    if args.captions:
        with open(args.captions, "r", encoding="utf-8") as fh:
            raw_captions = json.load(fh)
        if not isinstance(raw_captions, list) or len(raw_captions) != layout.count:
            raise ConfigError(
                f"captions file must hold a list of {layout.count} strings"
            )
    elif args.caption_endpoint:
        captioner = RemoteCaptioner(args.caption_endpoint)
        query = build_caption_query(args.template)
        raw_captions = []
        for i in range(layout.count):
            image = normalize_to_image(extract(grid, layout, i), args.norm_center, args.norm_spread)
            raw_captions.append(captioner.caption(encode_image(image, "png"), query))
    else:
        raw_captions = [""] * layout.count

    embedder = ToyEmbedder()
    cache: dict[int, object] = {}

    def score_fn(i: int, token: str) -> float:
        if i not in cache:
            cache[i] = extract(grid, layout, i)
        return embedder.score(token, cache[i])

    records = build_patch_records(args.prompt, raw_captions, score_fn, layout)
    write_manifest(args.out, args.prompt, records)
    print(args.out)
    return EXIT_OK


def _cmd_decompose(args: argparse.Namespace) -> int:
    grid = read_grid(args.grid)
    parts = split(grid, args.sigma)
    write_grid(args.low, parts.low)
    write_grid(args.high, parts.high)
    total = float(np.sum(grid.values**2))
    low_e = float(np.sum(parts.low.values**2))
    high_e = float(np.sum(parts.high.values**2))
    if total == 0.0:
        print("energy low 0.0 high 0.0")
    else:
        print(f"energy low {low_e / total:.6f} high {high_e / total:.6f}")
    return EXIT_OK


def _cmd_plan(args: argparse.Namespace) -> int:
    layout = plan_patches(
        args.grid_h, args.grid_w, args.patch_h, args.patch_w, args.stride_h, args.stride_w
    )
    if args.dump:
        sys.stdout.write(format_layout(layout))
    else:
        print(f"patches {layout.count}")
    return EXIT_OK


def _cmd_schedule_dump(args: argparse.Namespace) -> int:
    schedule = make_schedule(args.steps, args.beta_start, args.beta_end, args.kind)
    sys.stdout.write(format_schedule(schedule))
    return EXIT_OK


def _cmd_selftest(args: argparse.Namespace) -> int:
    report, ok = selftest(corrupt_kernel=args.corrupt_kernel)
    sys.stdout.write(report)
    if not ok:
        raise InvariantFailure("selftest failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiprompt",
        description="Tiled higher-resolution diffusion inference with hierarchical prompts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_generate(sub)

    p = sub.add_parser("refine-prompts", help="build a per-patch prompt manifest")
    p.add_argument("--grid", required=True, help="raw grid file to caption")
    p.add_argument("--prompt", required=True, help="global prompt")
    p.add_argument("--captions", help="JSON list of raw captions (offline mode)")
    p.add_argument("--caption-endpoint", dest="caption_endpoint")
    p.add_argument("--template", default="llava_formula",
                   choices=("llava_formula", "sharecaptioner_detail"))
    p.add_argument("--patch", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--norm-center", dest="norm_center", type=float, default=0.0)
    p.add_argument("--norm-spread", dest="norm_spread", type=float, default=1.0)
    p.add_argument("--out", required=True, help="manifest path")

    p = sub.add_parser("decompose", help="split a raw grid into low/high bands")
    p.add_argument("--grid", required=True)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--low", required=True)
    p.add_argument("--high", required=True)

    p = sub.add_parser("plan", help="show sliding-window patch placements")
    p.add_argument("--grid-h", dest="grid_h", type=int, required=True)
    p.add_argument("--grid-w", dest="grid_w", type=int, required=True)
    p.add_argument("--patch-h", dest="patch_h", type=int, required=True)
    p.add_argument("--patch-w", dest="patch_w", type=int, required=True)
    p.add_argument("--stride-h", dest="stride_h", type=int, required=True)
    p.add_argument("--stride-w", dest="stride_w", type=int, required=True)
    p.add_argument("--dump", action="store_true")

    p = sub.add_parser("schedule-dump", help="print the beta/alpha_cumprod table")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--beta-start", dest="beta_start", type=float, default=0.00085)
    p.add_argument("--beta-end", dest="beta_end", type=float, default=0.012)
    p.add_argument("--kind", default="scaled_linear", choices=("linear", "scaled_linear"))

    p = sub.add_parser("selftest", help="run the embedded invariant suite")
    p.add_argument("--corrupt-kernel", dest="corrupt_kernel", action="store_true",
                   help=argparse.SUPPRESS)
    return parser


_COMMANDS = {
    "generate": _cmd_generate,
    "refine-prompts": _cmd_refine_prompts,
    "decompose": _cmd_decompose,
    "plan": _cmd_plan,
    "schedule-dump": _cmd_schedule_dump,
    "selftest": _cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except InvariantFailure as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
