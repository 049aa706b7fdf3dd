"""Hierarchical prompt assembly: captions, unigram filtering, score thresholding.

Per-patch captions are reduced to unigrams, stripped of uninformative and
function words, then pruned to the tokens whose text-to-patch similarity is
at least the mean score. Patches with nothing usable fall back to the global
prompt so every patch always carries a non-empty condition.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from os import PathLike
from typing import Callable, Mapping, Sequence

from .errors import InvalidParameterError
from .tiling import PatchLayout

MLLM_REFINED = "mllm_refined"
FALLBACK_GLOBAL = "fallback_global"

CAPTION_TEMPLATES = {
    "llava_formula": (
        "Here's a formula for a Stable Diffusion image prompt: an image of "
        "[adjective] [subject] [material], [color scheme], [photo location], "
        "detailed. Answer in one sentence."
    ),
    "sharecaptioner_detail": "Analyze the image in a comprehensive and detailed manner.",
}

# Captions made solely of these words describe the medium, not the content.
UNINFORMATIVE_WORDS = frozenset(
    {"image", "jpg", "jpeg", "png", "picture", "photo", "background", "foreground"}
)
ARTICLES = frozenset({"a", "an", "the"})
PREPOSITIONS = frozenset(
    {"to", "of", "on", "in", "at", "by", "with", "for", "from", "under", "over"}
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class CaptionQuery:
    template_id: str
    text: str


@dataclass(frozen=True)
class HierarchicalPrompt:
    """Global text plus refined per-patch texts aligned to a PatchLayout."""

    global_text: str
    patch_texts: tuple[str, ...]
    provenance: tuple[str, ...]

    def __post_init__(self):
        if len(self.patch_texts) != len(self.provenance):
            raise InvalidParameterError("patch_texts and provenance lengths differ")
        for text, prov in zip(self.patch_texts, self.provenance):
            if not text:
                raise InvalidParameterError("patch prompts must be non-empty")
            if prov == FALLBACK_GLOBAL and text != self.global_text:
                raise InvalidParameterError("fallback entries must equal the global text")

    def tally(self) -> dict[str, int]:
        counts = {MLLM_REFINED: 0, FALLBACK_GLOBAL: 0}
        for prov in self.provenance:
            counts[prov] += 1
        return counts


def build_caption_query(template_id: str) -> CaptionQuery:
    try:
        return CaptionQuery(template_id, CAPTION_TEMPLATES[template_id])
    except KeyError:
        raise InvalidParameterError(f"unknown caption template {template_id!r}") from None


def tokenize_unigrams(caption: str) -> list[str]:
    """Lowercase unigrams split on whitespace and punctuation, order preserved."""
    return _TOKEN_RE.findall(caption.lower())


_CONTENT_FREE = UNINFORMATIVE_WORDS | ARTICLES | PREPOSITIONS


def filter_uninformative(tokens: Sequence[str]) -> tuple[list[str], bool]:
    """Drop function words; flag captions with no informative content at all.

    Stage 1 flags captions made solely of medium words plus articles and
    prepositions ("an image of background" carries nothing usable); stage 2
    strips articles and prepositions from the rest, preserving order.
    """
    if all(tok in _CONTENT_FREE for tok in tokens):
        return [], True
    kept = [tok for tok in tokens if tok not in ARTICLES and tok not in PREPOSITIONS]
    return kept, False


def refine_caption(
    caption: str,
    token_scores: Mapping[str, float],
    global_text: str,
) -> tuple[str, str]:
    """Keep tokens scoring at least the mean of the score table.

    The threshold is the arithmetic mean over the score table itself, so
    re-refining an already refined caption against the same scores is a
    no-op. Ties sit at the threshold and are kept (a one-ulp-scale tolerance
    absorbs the rounding of the mean, e.g. mean(0.4, 0.4, 0.4) > 0.4).
    Unscored tokens count as 0. Returns (text, provenance).
    """
    tokens, all_uninformative = filter_uninformative(tokenize_unigrams(caption))
    if all_uninformative or not tokens:
        return global_text, FALLBACK_GLOBAL
    threshold = sum(token_scores.values()) / len(token_scores) if token_scores else 0.0
    tie_slack = 1e-12 * max(1.0, abs(threshold))
    kept = [tok for tok in tokens if token_scores.get(tok, 0.0) >= threshold - tie_slack]
    if not kept:
        return global_text, FALLBACK_GLOBAL
    return " ".join(kept), MLLM_REFINED


@dataclass(frozen=True)
class PatchPromptRecord:
    """Everything the manifest stores about one patch's refinement."""

    index: int
    origin: tuple[int, int]
    raw_caption: str
    refined_caption: str
    provenance: str
    token_scores: dict[str, float]


def build_patch_records(
    global_text: str,
    raw_captions: Sequence[str],
    score_fn: Callable[[int, str], float],
    layout: PatchLayout,
) -> list[PatchPromptRecord]:
    if len(raw_captions) != layout.count:
        raise InvalidParameterError(
            f"expected {layout.count} captions for the layout, got {len(raw_captions)}"
        )
    records = []
    for i, raw in enumerate(raw_captions):
        tokens, all_uninformative = filter_uninformative(tokenize_unigrams(raw))
        scores: dict[str, float] = {}
        if not all_uninformative:
            for tok in dict.fromkeys(tokens):
                scores[tok] = float(score_fn(i, tok))
        refined, provenance = refine_caption(raw, scores, global_text)
        records.append(
            PatchPromptRecord(i, layout.origins[i], raw, refined, provenance, scores)
        )
    return records


def assemble_hierarchy(
    global_text: str,
    raw_captions: Sequence[str],
    score_fn: Callable[[int, str], float],
    layout: PatchLayout,
) -> HierarchicalPrompt:
    """tokenize -> filter -> refine each patch caption; package with provenance."""
    if not global_text:
        raise InvalidParameterError("global prompt must be non-empty")
    records = build_patch_records(global_text, raw_captions, score_fn, layout)
    return HierarchicalPrompt(
        global_text=global_text,
        patch_texts=tuple(r.refined_caption for r in records),
        provenance=tuple(r.provenance for r in records),
    )


def write_manifest(
    target: str | PathLike,
    global_text: str,
    records: Sequence[PatchPromptRecord],
) -> None:
    doc = {
        "global_prompt": global_text,
        "patches": [
            {
                "index": r.index,
                "origin": list(r.origin),
                "raw_caption": r.raw_caption,
                "refined_caption": r.refined_caption,
                "provenance": r.provenance,
                "token_scores": r.token_scores,
            }
            for r in records
        ],
    }
    with open(target, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(source: str | PathLike) -> tuple[str, list[PatchPromptRecord]]:
    try:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidParameterError(f"cannot read prompt manifest {source}: {exc}") from exc
    try:
        records = [
            PatchPromptRecord(
                index=int(p["index"]),
                origin=(int(p["origin"][0]), int(p["origin"][1])),
                raw_caption=p["raw_caption"],
                refined_caption=p["refined_caption"],
                provenance=p["provenance"],
                token_scores={k: float(v) for k, v in p["token_scores"].items()},
            )
            for p in doc["patches"]
        ]
        return doc["global_prompt"], records
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidParameterError(f"malformed prompt manifest {source}: {exc}") from exc


def hierarchy_from_records(
    global_text: str, records: Sequence[PatchPromptRecord], layout: PatchLayout
) -> HierarchicalPrompt:
    if len(records) != layout.count:
        raise InvalidParameterError(
            f"manifest has {len(records)} patches, layout needs {layout.count}"
        )
    for rec in records:
        if rec.origin != layout.origins[rec.index]:
            raise InvalidParameterError(
                f"manifest origin {rec.origin} != layout origin for patch {rec.index}"
            )
    ordered = sorted(records, key=lambda r: r.index)
    return HierarchicalPrompt(
        global_text=global_text,
        patch_texts=tuple(r.refined_caption for r in ordered),
        provenance=tuple(r.provenance for r in ordered),
    )
