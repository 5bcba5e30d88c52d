import itertools

import numpy as np
import pytest

from vidcap.decoder import LMConfig, forward_logprob, init_lm_params
from vidcap.errors import ParameterError
from vidcap.generation import GenerationConfig, beam_search, beam_search_ids, greedy_ids
from vidcap.text import BOS, EOS, build_vocab

# vocab_size 8 = 4 reserved ids + 4 emittable words
TINY = LMConfig(vocab_size=8, init_dim=3, persist_dim=2, depth=1, hidden=6, embed_dim=4)
WORDS = [4, 5, 6, 7]


def tiny_model(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    params = init_lm_params(TINY, rng, scale=0.8)
    init_vec = rng.normal(size=TINY.init_dim)
    persist_vec = rng.normal(size=TINY.persist_dim)
    return params, init_vec, persist_vec


def exhaustive_best(params, init_vec, persist_vec, max_len):
    """Enumerate every EOS-terminated emission sequence with at most max_len
    emissions (EOS included) and score it with the teacher-forced forward."""
    best = None
    for k in range(max_len):
        for body in itertools.product(WORDS, repeat=k):
            target = [BOS] + list(body) + [EOS]
            _, lp = forward_logprob(init_vec, persist_vec, target, params, TINY)
            key = (-lp, tuple(list(body) + [EOS]))
            if best is None or key < best[0]:
                best = (key, list(body) + [EOS], lp)
    return best[1], best[2]


class TestBeamOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_wide_beam_equals_exhaustive(self, seed):
        params, init_vec, persist_vec = tiny_model(seed)
        cfg = GenerationConfig(beam_size=512, max_len=4)
        tokens, logprob, completed = beam_search_ids(params, TINY, init_vec, persist_vec, cfg)
        ref_tokens, ref_lp = exhaustive_best(params, init_vec, persist_vec, 4)
        assert completed
        assert tokens == ref_tokens
        assert logprob == pytest.approx(ref_lp, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_beam1_equals_greedy(self, seed):
        params, init_vec, persist_vec = tiny_model(seed + 100)
        cfg = GenerationConfig(beam_size=1, max_len=8)
        tokens, logprob, _ = beam_search_ids(params, TINY, init_vec, persist_vec, cfg)
        g_tokens, g_lp = greedy_ids(params, TINY, init_vec, persist_vec, max_len=8)
        assert tokens == g_tokens
        assert logprob == pytest.approx(g_lp, abs=1e-9)


class TestBeamBehavior:
    def test_immediate_eos_gives_empty_caption(self):
        params = {k: np.zeros_like(v) for k, v in init_lm_params(TINY, np.random.default_rng(0)).items()}
        params["out_b"][EOS] = 50.0  # EOS probability ~1 at every step
        tokens, _, completed = beam_search_ids(
            params, TINY, np.ones(3), np.ones(2), GenerationConfig(beam_size=5, max_len=10))
        assert tokens == [EOS] and completed

    def test_score_consistent_with_forward(self):
        params, init_vec, persist_vec = tiny_model(7)
        cfg = GenerationConfig(beam_size=5, max_len=10)
        tokens, logprob, completed = beam_search_ids(params, TINY, init_vec, persist_vec, cfg)
        assert completed
        target = [BOS] + tokens  # tokens already end with EOS
        _, lp = forward_logprob(init_vec, persist_vec, target, params, TINY)
        assert logprob == pytest.approx(lp, abs=1e-9)

    @pytest.mark.parametrize("seed", range(8))
    def test_monotone_in_beam_size(self, seed):
        params, init_vec, persist_vec = tiny_model(seed + 50)
        scores = []
        for b in range(1, 7):
            _, lp, _ = beam_search_ids(params, TINY, init_vec, persist_vec,
                                       GenerationConfig(beam_size=b, max_len=6))
            scores.append(lp)
        for a, b in zip(scores, scores[1:]):
            assert b >= a - 1e-12

    def test_deterministic(self):
        params, init_vec, persist_vec = tiny_model(9)
        cfg = GenerationConfig(beam_size=5, max_len=10)
        first = beam_search_ids(params, TINY, init_vec, persist_vec, cfg)
        second = beam_search_ids(params, TINY, init_vec, persist_vec, cfg)
        assert first == second

    def test_never_emits_reserved_except_eos(self):
        for seed in range(5):
            params, init_vec, persist_vec = tiny_model(seed + 30)
            tokens, _, _ = beam_search_ids(params, TINY, init_vec, persist_vec,
                                           GenerationConfig(beam_size=3, max_len=6))
            body = tokens[:-1] if tokens and tokens[-1] == EOS else tokens
            assert all(t in WORDS for t in body)

    def test_bad_beam_size(self):
        with pytest.raises(ParameterError):
            GenerationConfig(beam_size=0)

    def test_decoded_caption(self):
        vocab = build_vocab(["w x y z"], min_count=1)
        assert len(vocab) == TINY.vocab_size
        params, init_vec, persist_vec = tiny_model(11)
        caption, logprob = beam_search(params, TINY, init_vec, persist_vec,
                                       GenerationConfig(beam_size=4, max_len=6), vocab)
        assert isinstance(caption, str)
        assert np.isfinite(logprob)
        for word in caption.split():
            assert word in ("w", "x", "y", "z")
