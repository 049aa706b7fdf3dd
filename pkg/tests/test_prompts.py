import json

import numpy as np
import pytest

from hiprompt import (
    InvalidParameterError,
    LatentGrid,
    assemble_hierarchy,
    build_caption_query,
    filter_uninformative,
    refine_caption,
    tokenize_unigrams,
)
from hiprompt.prompts import (
    FALLBACK_GLOBAL,
    MLLM_REFINED,
    build_patch_records,
    hierarchy_from_records,
    load_manifest,
    write_manifest,
)
from hiprompt.tiling import plan_patches

LLAVA_TEMPLATE = (
    "Here's a formula for a Stable Diffusion image prompt: an image of "
    "[adjective] [subject] [material], [color scheme], [photo location], "
    "detailed. Answer in one sentence."
)


class TestCaptionQuery:
    def test_llava_formula_verbatim(self):
        q = build_caption_query("llava_formula")
        assert q.text == LLAVA_TEMPLATE
        assert q.template_id == "llava_formula"

    def test_sharecaptioner_verbatim(self):
        q = build_caption_query("sharecaptioner_detail")
        assert q.text == "Analyze the image in a comprehensive and detailed manner."

    def test_unknown_template(self):
        with pytest.raises(InvalidParameterError):
            build_caption_query("blip_detail")


class TestTokenize:
    def test_sentence(self):
        assert tokenize_unigrams("A corgi dog, on the beach.") == [
            "a", "corgi", "dog", "on", "the", "beach",
        ]

    def test_empty(self):
        assert tokenize_unigrams("") == []

    def test_punctuation_split(self):
        assert tokenize_unigrams("palm-tree under blue sky") == [
            "palm", "tree", "under", "blue", "sky",
        ]

    def test_duplicates_and_order_preserved(self):
        assert tokenize_unigrams("Blue blue SKY") == ["blue", "blue", "sky"]


class TestFilterUninformative:
    def test_all_uninformative(self):
        assert filter_uninformative(["image", "background"]) == ([], True)

    def test_articles_and_prepositions_dropped(self):
        assert filter_uninformative(["a", "corgi", "on", "the", "beach"]) == (
            ["corgi", "beach"],
            False,
        )

    def test_empty_is_vacuously_uninformative(self):
        assert filter_uninformative([]) == ([], True)

    def test_mixed_keeps_medium_words(self):
        # stage 1 only fires when *every* token is uninformative
        kept, flag = filter_uninformative(["photo", "of", "dunes"])
        assert not flag
        assert kept == ["photo", "dunes"]


class TestRefineCaption:
    def test_corgi_palm_fixture(self):
        scores = {"palm": 0.9, "tree": 0.8, "corgi": 0.1, "dog": 0.2}
        refined, provenance = refine_caption("a palm tree corgi dog", scores, "beach scene")
        assert refined == "palm tree"
        assert provenance == MLLM_REFINED

    def test_all_equal_scores_keep_everything(self):
        scores = {"palm": 0.5, "tree": 0.5, "sky": 0.5}
        refined, provenance = refine_caption("palm tree sky", scores, "g")
        assert refined == "palm tree sky"
        assert provenance == MLLM_REFINED

    def test_stage1_falls_back_to_global(self):
        refined, provenance = refine_caption("an image of background", {}, "the global text")
        assert refined == "the global text"
        assert provenance == FALLBACK_GLOBAL

    def test_only_function_words_falls_back(self):
        refined, provenance = refine_caption("of the on", {}, "g")
        assert (refined, provenance) == ("g", FALLBACK_GLOBAL)

    def test_missing_scores_count_as_zero(self):
        refined, _ = refine_caption("palm tree", {"palm": 0.8}, "g")
        assert refined == "palm"

    def test_idempotent_on_random_captions(self):
        rng = np.random.default_rng(77)
        vocab = [f"tok{i}" for i in range(40)]
        for _ in range(100):
            n = int(rng.integers(1, 12))
            words = [vocab[int(k)] for k in rng.integers(0, len(vocab), n)]
            caption = " ".join(words)
            scores = {w: float(rng.uniform(-1, 1)) for w in set(words)}
            once, prov1 = refine_caption(caption, scores, "g")
            twice, prov2 = refine_caption(once, scores, "g")
            assert (once, prov1) == (twice, prov2)

    def test_monotone_in_single_score(self):
        rng = np.random.default_rng(78)
        for _ in range(50):
            words = [f"w{i}" for i in range(int(rng.integers(2, 8)))]
            scores = {w: float(rng.uniform(0, 1)) for w in words}
            refined, _ = refine_caption(" ".join(words), scores, "g")
            kept = refined.split()
            target = words[int(rng.integers(0, len(words)))]
            if target not in kept:
                continue
            raised = dict(scores)
            raised[target] = raised[target] + float(rng.uniform(0, 1))
            refined2, _ = refine_caption(" ".join(words), raised, "g")
            assert target in refined2.split()

    def test_no_invention(self):
        rng = np.random.default_rng(79)
        for _ in range(50):
            words = [f"w{i}" for i in range(int(rng.integers(1, 9)))]
            caption = " ".join(words)
            scores = {w: float(rng.uniform(-1, 1)) for w in words}
            refined, provenance = refine_caption(caption, scores, "g")
            if provenance == MLLM_REFINED:
                assert set(refined.split()) <= set(tokenize_unigrams(caption))


class TestAssembleHierarchy:
    def layout(self, q=2):
        return plan_patches(8, 8 * q, 8, 8, 8, 8)

    def test_single_patch(self):
        layout = self.layout(1)
        hp = assemble_hierarchy("g", ["a sandy beach"], lambda i, t: 1.0, layout)
        assert hp.patch_texts == ("sandy beach",)
        assert hp.provenance == (MLLM_REFINED,)

    def test_fallback_mixture(self):
        layout = self.layout(2)
        hp = assemble_hierarchy(
            "g", ["a sandy beach", "an image of background"], lambda i, t: 1.0, layout
        )
        assert hp.provenance == (MLLM_REFINED, FALLBACK_GLOBAL)
        assert hp.patch_texts[1] == "g"

    def test_length_mismatch(self):
        with pytest.raises(InvalidParameterError):
            assemble_hierarchy("g", ["one"], lambda i, t: 1.0, self.layout(2))

    def test_every_patch_usable(self):
        layout = self.layout(3)
        hp = assemble_hierarchy("g", ["", "image jpg", "pure noise words"], lambda i, t: -1.0, layout)
        assert all(text for text in hp.patch_texts)
        # scoring everything below zero still keeps the max-score tokens
        assert hp.patch_texts[2] == "pure noise words"

    def test_empty_global_rejected(self):
        with pytest.raises(InvalidParameterError):
            assemble_hierarchy("", ["x"], lambda i, t: 0.0, self.layout(1))


class TestManifest:
    def test_roundtrip(self, tmp_path):
        layout = plan_patches(8, 16, 8, 8, 8, 8)
        records = build_patch_records(
            "global text",
            ["a palm tree", "an image of background"],
            lambda i, t: 0.5,
            layout,
        )
        path = tmp_path / "manifest.json"
        write_manifest(path, "global text", records)
        global_text, back = load_manifest(path)
        assert global_text == "global text"
        assert [r.refined_caption for r in back] == ["palm tree", "global text"]
        assert [r.provenance for r in back] == [MLLM_REFINED, FALLBACK_GLOBAL]
        assert back[0].token_scores == {"palm": 0.5, "tree": 0.5}
        hp = hierarchy_from_records(global_text, back, layout)
        assert hp.patch_texts == ("palm tree", "global text")

    def test_manifest_is_human_readable_json(self, tmp_path):
        layout = plan_patches(8, 8, 8, 8, 8, 8)
        records = build_patch_records("g", ["a dog"], lambda i, t: 0.1, layout)
        path = tmp_path / "m.json"
        write_manifest(path, "g", records)
        doc = json.loads(path.read_text())
        assert doc["patches"][0]["origin"] == [0, 0]
        assert {"index", "origin", "raw_caption", "refined_caption", "provenance", "token_scores"} <= set(doc["patches"][0])

    def test_origin_mismatch_rejected(self, tmp_path):
        layout = plan_patches(8, 16, 8, 8, 8, 8)
        records = build_patch_records("g", ["a", "b"], lambda i, t: 0.1, layout)
        other = plan_patches(16, 8, 8, 8, 8, 8)
        with pytest.raises(InvalidParameterError):
            hierarchy_from_records("g", records, other)

    def test_malformed_manifest(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(InvalidParameterError):
            load_manifest(path)
        path.write_text('{"patches": [{"index": 0}]}')
        with pytest.raises(InvalidParameterError):
            load_manifest(path)
