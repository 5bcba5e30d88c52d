"""Candidate pools from several generator models and evaluator-based reranking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .decoder import LMConfig
from .errors import DataError
from .evaluator import EvaluatorConfig, project_video, _cosine, encode_sentence
from .generation import GenerationConfig, beam_search
from .numerics import Params
from .text import Vocabulary, encode, tokenize


@dataclass
class Candidate:
    caption: str
    model: str
    logprob: float
    score: float | None = None


@dataclass
class CandidatePool:
    video_id: str
    entries: list[Candidate] = field(default_factory=list)


@dataclass
class GeneratorModel:
    """A trained decoder bound to the feature names it consumes."""

    tag: str
    cfg: LMConfig
    params: Params
    init_feature: str
    persist_feature: str


def generate_pool(models: list[GeneratorModel], video_id: str, feature_of,
                  gen_cfg: GenerationConfig, vocab: Vocabulary) -> CandidatePool:
    """One beam-search caption per model; duplicates stay, tagged per source.

    feature_of(video_id, name) -> vector; a missing feature raises a DataError
    naming the model and the feature.
    """
    pool = CandidatePool(video_id=video_id)
    for m in models:
        try:
            init_vec = feature_of(video_id, m.init_feature)
            persist_vec = feature_of(video_id, m.persist_feature)
        except KeyError as e:
            raise DataError(
                f"model {m.tag!r}: feature {e.args[0]!r} missing for video {video_id!r}"
            ) from e
        caption, logprob = beam_search(m.params, m.cfg, init_vec, persist_vec, gen_cfg, vocab)
        pool.entries.append(Candidate(caption=caption, model=m.tag, logprob=logprob))
    return pool


def rerank(pool: CandidatePool, video_values: np.ndarray, eval_params: Params,
           eval_cfg: EvaluatorConfig, vocab: Vocabulary,
           blend_weight: float = 0.0) -> Candidate:
    """Score every candidate with the evaluator and return the argmax.

    Ties break toward higher generator log-prob, then the lexicographically
    smaller caption. blend_weight mixes the generator log-prob into the score
    (0 = pure evaluator, the paper-faithful default).
    """
    if not pool.entries:
        raise DataError(f"empty candidate pool for video {pool.video_id!r}")
    vid_emb = project_video(np.asarray(video_values, dtype=np.float64), eval_params)
    for cand in pool.entries:
        ids = encode(tokenize(cand.caption), vocab)
        sent = encode_sentence(ids, eval_params, eval_cfg)
        cand.score = _cosine(sent, vid_emb) + blend_weight * cand.logprob
    return min(pool.entries, key=lambda c: (-c.score, -c.logprob, c.caption))


def dump_pools(pools: list[CandidatePool], path) -> None:
    """Line-delimited JSON, one record per candidate."""
    with open(path, "w", encoding="utf-8") as f:
        for pool in pools:
            for cand in pool.entries:
                f.write(json.dumps({
                    "video_id": pool.video_id,
                    "model": cand.model,
                    "caption": cand.caption,
                    "logprob": cand.logprob,
                    "score": cand.score,
                }, sort_keys=True) + "\n")


def load_pools(path) -> list[CandidatePool]:
    pools: dict[str, CandidatePool] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pool = pools.setdefault(rec["video_id"], CandidatePool(rec["video_id"]))
                pool.entries.append(Candidate(
                    caption=rec["caption"], model=rec["model"],
                    logprob=float(rec["logprob"]),
                    score=None if rec.get("score") is None else float(rec["score"]),
                ))
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise DataError(f"{path}:{lineno}: bad pool record") from e
    return [pools[k] for k in sorted(pools)]
