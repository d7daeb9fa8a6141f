"""Prompt grammar round-trips, toy embedder determinism, TXEMB file format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from txir.prompts import (FileEmbeddingProvider, PromptError, PromptSpec,
                          ToyEmbeddingProvider, load_embeddings, parse_prompt,
                          render_prompt, toy_embed, write_embeddings)
from txir.tensor import TxirError

SKY_PROMPT = "A photo of a sky target in the sky and ground background"

# first 4 components of toy_embed("sky", d_t=16, seed=0), frozen from the
# independent FNV-1a + splitmix64 oracle below
GOLDEN_SKY_16 = [0.45775327527775794, 0.00032204230335144886,
                 -0.06232254065049362, 0.2241245776830441]


# ---------------------------------------------------------------------------
# independent hash/PRNG oracle
# ---------------------------------------------------------------------------

_M = (1 << 64) - 1


def fnv_oracle(data: bytes) -> int:
    h = 14695981039346656037
    for byte in data:
        h ^= byte
        h = (h * 1099511628211) & _M
    return h


def splitmix_unit_stream(seed: int, n: int) -> list[float]:
    s = seed & _M
    out = []
    for _ in range(n):
        s = (s + 0x9E3779B97F4A7C15) & _M
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M
        z ^= z >> 31
        out.append(2.0 * ((z >> 11) * (1.0 / (1 << 53))) - 1.0)
    return out


# ---------------------------------------------------------------------------
# render / parse
# ---------------------------------------------------------------------------

class TestRenderParse:
    def test_reference_prompt(self):
        spec = PromptSpec(interested_region="sky", scene="sky and ground")
        assert render_prompt(spec) == SKY_PROMPT

    def test_hyphenated_scene(self):
        spec = PromptSpec(interested_region="ground", scene="ocean-sky")
        assert render_prompt(spec) == "A photo of a ground target in the ocean-sky background"

    def test_parse_reference(self):
        spec = parse_prompt(SKY_PROMPT)
        assert spec.interested_region == "sky"
        assert spec.scene == "sky and ground"

    def test_parse_rejects_empty_slots(self):
        with pytest.raises(PromptError):
            parse_prompt("A photo of a target in the background")

    def test_parse_normalizes_spaces(self):
        spec = parse_prompt("A  photo of a   sky target in the sky   background")
        assert spec.interested_region == "sky"
        assert spec.scene == "sky"

    def test_scene_containing_background_word(self):
        spec = PromptSpec(interested_region="sky", scene="deep background zone")
        assert parse_prompt(render_prompt(spec)) == spec

    def test_empty_fields_rejected(self):
        with pytest.raises(PromptError):
            PromptSpec(interested_region="", scene="sky")
        with pytest.raises(PromptError):
            PromptSpec(interested_region="sky", scene="  ")

    def test_uppercase_rejected(self):
        with pytest.raises(PromptError):
            PromptSpec(interested_region="Sky", scene="ground")

    def test_region_may_not_contain_target(self):
        with pytest.raises(PromptError):
            PromptSpec(interested_region="sky target", scene="ground")

    words = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-", min_size=1, max_size=8)\
        .filter(lambda w: w not in ("target",) and not w.startswith("-"))

    @given(region=st.lists(words, min_size=1, max_size=4),
           scene=st.lists(words, min_size=1, max_size=4))
    @settings(max_examples=150, deadline=None)
    def test_round_trip_property(self, region, scene):
        spec = PromptSpec(interested_region=" ".join(region), scene=" ".join(scene))
        assert parse_prompt(render_prompt(spec)) == spec


# ---------------------------------------------------------------------------
# toy embedder
# ---------------------------------------------------------------------------

class TestToyEmbed:
    def test_deterministic(self):
        a = toy_embed(SKY_PROMPT, d_t=64, seed=9)
        b = toy_embed(SKY_PROMPT, d_t=64, seed=9)
        assert a.vector.tobytes() == b.vector.tobytes()

    def test_bag_of_words(self):
        a = toy_embed("sky ground ocean", d_t=32, seed=1)
        b = toy_embed("ocean sky ground", d_t=32, seed=1)
        assert a.vector.tobytes() == b.vector.tobytes()

    def test_unit_norm(self):
        for prompt in (SKY_PROMPT, "x", "a b c d e f"):
            e = toy_embed(prompt, d_t=512, seed=0)
            assert abs(np.linalg.norm(e.vector) - 1.0) < 1e-6

    def test_golden_vector_frozen(self):
        e = toy_embed("sky", d_t=16, seed=0)
        np.testing.assert_allclose(e.vector[:4], GOLDEN_SKY_16, rtol=0, atol=0)

    def test_against_independent_oracle(self):
        d_t = 24
        for token, seed in (("sky", 0), ("ground", 7)):
            raw = np.array(splitmix_unit_stream(fnv_oracle(token.encode()) ^ seed, d_t))
            expected = raw / np.linalg.norm(raw)
            e = toy_embed(token, d_t=d_t, seed=seed)
            np.testing.assert_allclose(e.vector, expected, rtol=0, atol=0)

    def test_multi_token_is_sum(self):
        d_t = 16
        parts = [np.array(splitmix_unit_stream(fnv_oracle(t.encode()) ^ 3, d_t))
                 for t in ("sky", "ground")]
        total = parts[0] + parts[1]
        expected = total / np.linalg.norm(total)
        e = toy_embed("sky ground", d_t=d_t, seed=3)
        np.testing.assert_allclose(e.vector, expected, rtol=0, atol=1e-15)

    def test_errors(self):
        with pytest.raises(PromptError):
            toy_embed("", d_t=16)
        with pytest.raises(PromptError):
            toy_embed("sky", d_t=4)

    def test_shared_tokens_correlate(self):
        a = toy_embed("A photo of a sky target in the sky background", d_t=256, seed=0)
        b = toy_embed("A photo of a ground target in the ground background", d_t=256, seed=0)
        c = toy_embed("zx qv wk", d_t=256, seed=0)
        sim_ab = float(a.vector @ b.vector)
        sim_ac = float(a.vector @ c.vector)
        assert sim_ab > 0.5           # template words shared
        assert sim_ab < 0.999         # but regions differ
        assert sim_ab > sim_ac        # unrelated text is farther


# ---------------------------------------------------------------------------
# TXEMB interchange
# ---------------------------------------------------------------------------

class TestTxembFile:
    def test_write_read_bit_exact(self, tmp_path):
        path = tmp_path / "e.txemb"
        vec = toy_embed("sky", d_t=16, seed=0).vector
        write_embeddings(path, {"sky": vec})
        table = load_embeddings(path)
        assert table["sky"].vector.tobytes() == vec.tobytes()

    def test_header_and_layout(self, tmp_path):
        path = tmp_path / "e.txemb"
        write_embeddings(path, {"a": np.ones(8) / np.sqrt(8), "b": -np.ones(8) / np.sqrt(8)})
        lines = path.read_text().splitlines()
        assert lines[0] == "TXEMB 1 8"
        assert lines[1] == "a"
        assert len(lines) == 5

    def test_zero_length_vector_rejected(self, tmp_path):
        path = tmp_path / "bad.txemb"
        path.write_text("TXEMB 1 0\nprompt\n\n")
        with pytest.raises(TxirError):
            load_embeddings(path)

    def test_zero_norm_vector_rejected(self, tmp_path):
        path = tmp_path / "bad.txemb"
        path.write_text("TXEMB 1 2\nprompt\n0.0 0.0\n")
        with pytest.raises(TxirError):
            load_embeddings(path)

    def test_wrong_component_count(self, tmp_path):
        path = tmp_path / "bad.txemb"
        path.write_text("TXEMB 1 3\nprompt\n1.0 2.0\n")
        with pytest.raises(TxirError):
            load_embeddings(path)

    def test_non_unit_vectors_normalized_on_load(self, tmp_path):
        path = tmp_path / "e.txemb"
        path.write_text("TXEMB 1 2\nprompt\n3.0 4.0\n")
        table = load_embeddings(path)
        np.testing.assert_allclose(table["prompt"].vector, [0.6, 0.8], rtol=1e-12)

    def test_unknown_prompt_names_nearest(self, tmp_path):
        path = tmp_path / "e.txemb"
        write_embeddings(path, {"a photo of a sky target": np.ones(8) / np.sqrt(8)})
        provider = FileEmbeddingProvider(path)
        with pytest.raises(TxirError, match="sky target"):
            provider.get("a photo of a sky targe")

    def test_toy_provider_matches_function(self):
        provider = ToyEmbeddingProvider(d_t=32, seed=5)
        direct = toy_embed("sky ground", d_t=32, seed=5)
        assert provider.get("sky ground").vector.tobytes() == direct.vector.tobytes()
