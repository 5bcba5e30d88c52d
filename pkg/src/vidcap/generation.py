"""Beam-search caption generation from a trained decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import LMConfig, zero_states, stack_step
from .errors import ParameterError
from .numerics import Params, log_softmax
from .text import PAD, BOS, EOS, UNK, Vocabulary, decode


@dataclass
class GenerationConfig:
    beam_size: int = 5
    max_len: int = 30
    length_normalize: bool = False

    def __post_init__(self):
        if self.beam_size < 1:
            raise ParameterError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_len < 1:
            raise ParameterError(f"max_len must be >= 1, got {self.max_len}")


@dataclass
class BeamHypothesis:
    tokens: list[int] = field(default_factory=list)  # emitted ids, EOS included when completed
    logprob: float = 0.0
    states: list = field(default_factory=list)
    finished: bool = False


def _final_key(hyp: BeamHypothesis, normalize: bool):
    score = hyp.logprob / max(1, len(hyp.tokens)) if normalize else hyp.logprob
    return (-score, tuple(hyp.tokens))


def beam_search_ids(params: Params, lm_cfg: LMConfig, init_vec, persist_vec,
                    gen_cfg: GenerationConfig) -> tuple[list[int], float, bool]:
    """Best emitted token sequence, its summed log-prob and a completed flag.

    Standard beam search: every live hypothesis expands over the full
    vocabulary (PAD/BOS/UNK banned from emission), the top `beam_size`
    expansions survive (ties break toward the lexicographically smaller token
    sequence), and expansions ending in EOS or reaching max_len retire. The
    best EOS-completed hypothesis wins; if none completed, the best truncated
    one is returned.
    """
    init_vec = np.asarray(init_vec, dtype=np.float64)
    persist_vec = np.asarray(persist_vec, dtype=np.float64)

    # Step 0: the projected init feature plays the role of a word embedding.
    x0 = np.concatenate([params["init_W"] @ init_vec + params["init_b"], persist_vec])
    _, states0 = stack_step(x0, zero_states(lm_cfg), params, lm_cfg)

    banned = [t for t in (PAD, BOS, UNK) if t < lm_cfg.vocab_size]
    live = [BeamHypothesis(states=states0)]
    completed: list[BeamHypothesis] = []
    truncated: list[BeamHypothesis] = []

    for _ in range(gen_cfg.max_len):
        if not live:
            break
        last = [h.tokens[-1] if h.tokens else BOS for h in live]
        x = np.concatenate(
            [params["embed"][last], np.tile(persist_vec, (len(live), 1))], axis=1)
        batched = [
            (np.stack([h.states[l][0] for h in live]), np.stack([h.states[l][1] for h in live]))
            for l in range(lm_cfg.depth)
        ]
        top, new_states = stack_step(x, batched, params, lm_cfg)
        logp = log_softmax(top @ params["out_W"].T + params["out_b"], axis=1)
        logp[:, banned] = -np.inf

        expansions = []
        for bi, hyp in enumerate(live):
            for tok in range(lm_cfg.vocab_size):
                score = hyp.logprob + logp[bi, tok]
                if np.isfinite(score):
                    expansions.append((score, hyp.tokens + [tok], bi, tok))
        expansions.sort(key=lambda e: (-e[0], tuple(e[1])))
        kept = expansions[: gen_cfg.beam_size]

        live = []
        for score, tokens, bi, tok in kept:
            hyp = BeamHypothesis(
                tokens=tokens,
                logprob=float(score),
                states=[(h[bi], c[bi]) for h, c in new_states],
            )
            if tok == EOS:
                hyp.finished = True
                completed.append(hyp)
            elif len(tokens) >= gen_cfg.max_len:
                hyp.finished = True
                truncated.append(hyp)
            else:
                live.append(hyp)

    pool = completed if completed else truncated
    best = min(pool, key=lambda h: _final_key(h, gen_cfg.length_normalize))
    return best.tokens, best.logprob, bool(completed)


def beam_search(params: Params, lm_cfg: LMConfig, init_vec, persist_vec,
                gen_cfg: GenerationConfig, vocab: Vocabulary) -> tuple[str, float]:
    """Decoded best caption and its cumulative log-probability."""
    tokens, logprob, _ = beam_search_ids(params, lm_cfg, init_vec, persist_vec, gen_cfg)
    return decode(tokens, vocab), logprob


def greedy_ids(params: Params, lm_cfg: LMConfig, init_vec, persist_vec,
               max_len: int = 30) -> tuple[list[int], float]:
    """Plain argmax decoding, written independently of the beam machinery."""
    init_vec = np.asarray(init_vec, dtype=np.float64)
    persist_vec = np.asarray(persist_vec, dtype=np.float64)
    x = np.concatenate([params["init_W"] @ init_vec + params["init_b"], persist_vec])
    _, states = stack_step(x, zero_states(lm_cfg), params, lm_cfg)
    banned = [t for t in (PAD, BOS, UNK) if t < lm_cfg.vocab_size]
    tokens: list[int] = []
    total = 0.0
    prev = BOS
    for _ in range(max_len):
        x = np.concatenate([params["embed"][prev], persist_vec])
        top, states = stack_step(x, states, params, lm_cfg)
        logp = log_softmax(top @ params["out_W"].T + params["out_b"])
        logp[banned] = -np.inf
        tok = int(np.argmax(logp))
        tokens.append(tok)
        total += float(logp[tok])
        if tok == EOS:
            break
        prev = tok
    return tokens, total
