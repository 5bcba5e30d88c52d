"""Dataset ingestion, feature store, synthetic benchmark and the full
train -> generate -> rerank -> score experiment driver."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import binio
from .decoder import LMConfig, init_lm_params, fit_lm, perplexity
from .ensemble import CandidatePool, GeneratorModel, dump_pools, generate_pool, rerank
from .errors import DataError, ParameterError, VidcapError
from .evaluator import EvaluatorConfig, train_evaluator
from .generation import GenerationConfig
from .metrics import score_captions
from .numerics import OptState
from .text import Vocabulary, build_vocab, encode, tokenize

N_CATEGORIES = 20
SPLITS = ("train", "val", "test")


@dataclass
class VideoRecord:
    id: str
    category: int
    captions: list[str]
    split: str

    def __post_init__(self):
        if not 0 <= self.category < N_CATEGORIES:
            raise DataError(f"video {self.id!r}: category {self.category} out of [0,{N_CATEGORIES})")
        if self.split not in SPLITS:
            raise DataError(f"video {self.id!r}: unknown split {self.split!r}")
        if self.split in ("train", "val") and not self.captions:
            raise DataError(f"video {self.id!r}: {self.split} record needs >= 1 caption")


class Dataset:
    """All splits of one benchmark; ids are unique across the dataset."""

    def __init__(self, records: list[VideoRecord]):
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate video ids: {dupes[:5]}")
        self.records = list(records)

    def split(self, name: str) -> list[VideoRecord]:
        if name not in SPLITS:
            raise ParameterError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def references(self, split: str | None = None) -> dict[str, list[str]]:
        recs = self.records if split is None else self.split(split)
        return {r.id: list(r.captions) for r in recs}

    def counts(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}


def load_dataset(path) -> Dataset:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "videos" not in doc:
        raise DataError(f"{path}: expected a top-level 'videos' array")
    records = []
    for i, item in enumerate(doc["videos"]):
        try:
            records.append(VideoRecord(
                id=str(item["id"]), category=int(item["category"]),
                captions=[str(c) for c in item["captions"]], split=str(item["split"]),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: videos[{i}]: malformed record: {e}") from e
    return Dataset(records)


def save_dataset(dataset: Dataset, path) -> None:
    doc = {"videos": [
        {"id": r.id, "category": r.category, "split": r.split, "captions": r.captions}
        for r in dataset.records
    ]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


class FeatureStore:
    """(video id, feature name) -> vector; 'a+b' names resolve by concatenation."""

    def __init__(self):
        self._data: dict[str, dict[str, np.ndarray]] = {}
        self._dims: dict[str, int] = {}

    def add(self, name: str, video_id: str, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 1:
            raise DataError(f"feature {name!r} for {video_id!r} is not a vector")
        dim = self._dims.setdefault(name, values.shape[0])
        if values.shape[0] != dim:
            raise DataError(
                f"feature {name!r}: dim {values.shape[0]} != established dim {dim}")
        self._data.setdefault(name, {})[video_id] = values

    def names(self) -> list[str]:
        return sorted(self._data)

    def videos(self, name: str) -> list[str]:
        return sorted(self._data.get(name, {}))

    def dim(self, name: str) -> int:
        if name in self._dims:
            return self._dims[name]
        if "+" in name:
            return sum(self.dim(p) for p in name.split("+"))
        raise KeyError(name)

    def get(self, video_id: str, name: str) -> np.ndarray:
        """Resolve one feature; compound names like 'feat-a+categ' concatenate
        their parts in the given order."""
        if name in self._data:
            row = self._data[name].get(video_id)
            if row is None:
                raise KeyError(name)
            return row.astype(np.float64)
        if "+" in name:
            return np.concatenate([self.get(video_id, p) for p in name.split("+")])
        raise KeyError(name)

    def has(self, video_id: str, name: str) -> bool:
        try:
            self.get(video_id, name)
            return True
        except KeyError:
            return False


def save_features(store: FeatureStore, name: str, path) -> None:
    """Write one feature family; an empty store yields a valid zero-count file."""
    rows = [(vid, store._data[name][vid]) for vid in store.videos(name)]
    binio.write_feature_file(path, name, rows)


def load_features(path, store: FeatureStore | None = None) -> FeatureStore:
    store = store if store is not None else FeatureStore()
    name, rows = binio.read_feature_file(path)
    for vid, vec in rows:
        store.add(name, vid, vec)
    return store


# --- Synthetic benchmark -------------------------------------------------
#
# Each video carries two latent concepts. Object-centric videos pair a color
# with an object and always show the one common action; action-centric videos
# pair an adverb with an action performed by the one common subject. Feature
# family A encodes (color, object) with additive noise, family B encodes
# (adverb, action), so a generator trained on A alone can only master the
# object-centric half and vice versa, mirroring complementary specialist
# models whose pooled candidates a reranker can exploit.

SYNTH_COLORS = ("red", "blue", "green", "yellow", "black", "white",
                "purple", "orange", "brown", "pink", "gray", "golden")
SYNTH_OBJECTS = ("cat", "dog", "bird", "horse", "car", "truck",
                 "robot", "monkey", "rabbit", "turtle", "panda", "tiger")
SYNTH_ADVERBS = ("slowly", "quickly", "quietly", "loudly", "calmly", "happily",
                 "sadly", "eagerly", "gently", "roughly", "smoothly", "badly")
SYNTH_ACTIONS = ("running", "jumping", "dancing", "swimming", "climbing", "sleeping",
                 "eating", "drinking", "reading", "singing", "walking", "spinning")
SYNTH_FIXED_ACTION = "posing"   # the action of every object-centric video
SYNTH_FIXED_OBJECT = "person"   # the subject of every action-centric video


@dataclass
class SynthConfig:
    n_videos: int = 200
    n_categories: int = 20
    captions_per_video: int = 3
    noise_sigma: float = 0.05
    train_frac: float = 0.70
    val_frac: float = 0.15

    def __post_init__(self):
        if self.n_videos < 1:
            raise ParameterError(f"n_videos must be >= 1, got {self.n_videos}")
        if not 1 <= self.n_categories <= N_CATEGORIES:
            raise ParameterError(f"n_categories must be in [1,{N_CATEGORIES}]")
        if not 1 <= self.captions_per_video <= 4:
            raise ParameterError("captions_per_video must be in [1,4]")
        max_videos = 2 * len(SYNTH_COLORS) * len(SYNTH_OBJECTS)
        if self.n_videos > max_videos:
            raise ParameterError(
                f"n_videos > {max_videos} would force duplicate concept pairs")


def _object_captions(color: str, obj: str, k: int) -> list[str]:
    base = f"{color} {obj} is {SYNTH_FIXED_ACTION}"
    return [f"a {base}", f"the {base}", f"a {base} today",
            f"there is a {color} {obj} {SYNTH_FIXED_ACTION}"][:k]


def _action_captions(adv: str, act: str, k: int) -> list[str]:
    base = f"{SYNTH_FIXED_OBJECT} is {adv} {act}"
    return [f"a {base}", f"the {base}", f"a {base} today",
            f"there is a {SYNTH_FIXED_OBJECT} {adv} {act}"][:k]


def _onehot_pair(i: int, n_i: int, j: int, n_j: int) -> np.ndarray:
    v = np.zeros(n_i + n_j)
    v[i] = 1.0
    v[n_i + j] = 1.0
    return v


def synth_generate(cfg: SynthConfig, rng: np.random.Generator) -> tuple[Dataset, FeatureStore]:
    """Deterministic synthetic benchmark: dataset plus feat-a / feat-b / categ
    feature families (same seed, same bytes)."""
    nc, no = len(SYNTH_COLORS), len(SYNTH_OBJECTS)
    na, nv = len(SYNTH_ADVERBS), len(SYNTH_ACTIONS)
    n_obj_videos = (cfg.n_videos + 1) // 2
    n_act_videos = cfg.n_videos - n_obj_videos
    obj_combos = rng.permutation(nc * no)[:n_obj_videos]
    act_combos = rng.permutation(na * nv)[:n_act_videos]

    n_train = int(round(cfg.train_frac * cfg.n_videos))
    n_val = int(round(cfg.val_frac * cfg.n_videos))
    records: list[VideoRecord] = []
    store = FeatureStore()
    oi = ai = 0
    for i in range(cfg.n_videos):
        vid = f"video{i:04d}"
        if i < n_train:
            split = "train"
        elif i < n_train + n_val:
            split = "val"
        else:
            split = "test"
        category = int(rng.integers(cfg.n_categories))
        if i % 2 == 0:
            combo = int(obj_combos[oi]); oi += 1
            color, obj = SYNTH_COLORS[combo // no], SYNTH_OBJECTS[combo % no]
            captions = _object_captions(color, obj, cfg.captions_per_video)
            feat_a = _onehot_pair(combo // no, nc + 1, combo % no, no + 1)
            feat_b = _onehot_pair(na, na + 1, nv, nv + 1)  # 'none' + fixed action bins
        else:
            combo = int(act_combos[ai]); ai += 1
            adv, act = SYNTH_ADVERBS[combo // nv], SYNTH_ACTIONS[combo % nv]
            captions = _action_captions(adv, act, cfg.captions_per_video)
            feat_a = _onehot_pair(nc, nc + 1, no, no + 1)  # 'none' + fixed object bins
            feat_b = _onehot_pair(combo // nv, na + 1, combo % nv, nv + 1)
        records.append(VideoRecord(id=vid, category=category, captions=captions, split=split))
        store.add("feat-a", vid, feat_a + rng.normal(0.0, cfg.noise_sigma, feat_a.shape))
        store.add("feat-b", vid, feat_b + rng.normal(0.0, cfg.noise_sigma, feat_b.shape))
        categ = np.zeros(cfg.n_categories)
        categ[category] = 1.0
        store.add("categ", vid, categ)
    return Dataset(records), store


# --- Experiment driver ----------------------------------------------------

@dataclass
class ModelSpec:
    tag: str
    init_feature: str
    persist_feature: str
    depth: int = 2


@dataclass
class ExperimentConfig:
    models: list[ModelSpec] = field(default_factory=lambda: [
        ModelSpec("m-a", "categ", "feat-a", depth=2),
        ModelSpec("m-b", "categ", "feat-b", depth=2),
    ])
    evaluator_feature: str = "feat-a+feat-b"
    seed: int = 0
    eval_split: str = "val"
    # decoder
    hidden: int = 64
    embed_dim: int = 64
    dropout_rate: float = 0.0
    lm_epochs: int = 10
    batch_size: int = 16
    # evaluator
    joint_dim: int = 64
    eval_embed_dim: int = 32
    filters_per_width: int = 32
    filter_widths: tuple[int, ...] = (2, 3, 4)
    margin: float = 0.2
    n_negatives: int = 50
    eval_epochs: int = 10
    # optimization / generation / text
    learning_rate: float = 1e-3
    decay: float = 0.9
    epsilon: float = 1e-8
    beam_size: int = 5
    max_len: int = 30
    min_count: int = 5
    blend_weight: float = 0.0
    # data: paths to load, or synth settings when data_path is None
    data_path: str | None = None
    feature_paths: list[str] = field(default_factory=list)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_widths"] = list(self.filter_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "models" in d:
            d["models"] = [ModelSpec(**m) for m in d["models"]]
        if "synth" in d:
            d["synth"] = SynthConfig(**d["synth"])
        if "filter_widths" in d:
            d["filter_widths"] = tuple(d["filter_widths"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _pool_map(fn, items):
    """Deterministically ordered map; VIDCAP_WORKERS > 1 fans out to threads."""
    workers = int(os.environ.get("VIDCAP_WORKERS", "1"))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@contextmanager
def _stage(name: str):
    """Tag errors escaping a pipeline stage with the stage name."""
    try:
        yield
    except VidcapError as e:
        if not str(e).startswith("["):
            e.args = (f"[{name}] {e}",)
        raise


def lm_examples(records, store: FeatureStore, vocab: Vocabulary,
                init_name: str, persist_name: str):
    out = []
    for r in sorted(records, key=lambda r: r.id):
        init_vec = store.get(r.id, init_name)
        persist_vec = store.get(r.id, persist_name)
        for c in r.captions:
            out.append((init_vec, persist_vec, encode(tokenize(c), vocab)))
    return out


@dataclass
class RunResult:
    model_rows: list[dict]
    ensemble_row: dict
    table_text: str
    chosen: dict[str, str]

    def to_json(self) -> str:
        return json.dumps({"models": self.model_rows, "ensemble": self.ensemble_row},
                          sort_keys=True, indent=2)


def _format_table(model_rows: list[dict], ensemble_row: dict) -> str:
    header = f"{'#':<3}{'model':<10}{'init':<16}{'persist':<16}{'depth':<7}" \
             f"{'perplex':<10}{'BLEU-4':<9}{'CIDEr':<9}{'ROUGE-L':<9}"
    lines = [header, "-" * len(header)]
    for i, row in enumerate(model_rows, 1):
        lines.append(
            f"{i:<3}{row['tag']:<10}{row['init']:<16}{row['persist']:<16}"
            f"{row['depth']:<7}{row['perplexity']:<10.4f}{row['bleu4']:<9.4f}"
            f"{row['cider']:<9.4f}{row['rouge_l']:<9.4f}")
    e = ensemble_row
    lines.append(
        f"{'E':<3}{'ensemble':<10}{'evaluator reranked pool':<39}"
        f"{'':<10}{e['bleu4']:<9.4f}{e['cider']:<9.4f}{e['rouge_l']:<9.4f}")
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None,
                   store: FeatureStore | None = None,
                   out_dir: str | None = None) -> RunResult:
    """Train every roster model and the evaluator, generate candidate pools on
    the eval split, rerank, and score singles plus the ensemble."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.models) + 2)
    with _stage("data"):
        if dataset is None or store is None:
            if cfg.data_path:
                dataset = load_dataset(cfg.data_path)
                store = FeatureStore()
                for p in cfg.feature_paths:
                    load_features(p, store)
            else:
                synth_rng = np.random.Generator(np.random.PCG64(seeds[0]))
                dataset, store = synth_generate(cfg.synth, synth_rng)

        train_records = dataset.split("train")
        eval_records = sorted(dataset.split(cfg.eval_split), key=lambda r: r.id)
        if not train_records or not eval_records:
            raise DataError(f"need non-empty train and {cfg.eval_split} splits")
        tags = [m.tag for m in cfg.models]
        if len(set(tags)) != len(tags):
            raise ParameterError(f"model tags must be unique, got {tags}")
        for spec in cfg.models:
            for name in (spec.init_feature, spec.persist_feature):
                if not store.has(train_records[0].id, name):
                    raise DataError(f"model {spec.tag!r}: feature {name!r} not in store")

        vocab = build_vocab([c for r in train_records for c in r.captions], cfg.min_count)

    models: list[GeneratorModel] = []
    model_rows: list[dict] = []
    for i, spec in enumerate(cfg.models):
        with _stage(f"train-lm:{spec.tag}"):
            rng = np.random.Generator(np.random.PCG64(seeds[i + 1]))
            lm_cfg = LMConfig(
                vocab_size=len(vocab),
                init_dim=store.dim(spec.init_feature),
                persist_dim=store.dim(spec.persist_feature),
                depth=spec.depth, hidden=cfg.hidden, embed_dim=cfg.embed_dim,
                dropout_rate=cfg.dropout_rate)
            params = init_lm_params(lm_cfg, rng)
            opt = OptState(learning_rate=cfg.learning_rate, decay=cfg.decay,
                           epsilon=cfg.epsilon)
            examples = lm_examples(train_records, store, vocab, spec.init_feature,
                                   spec.persist_feature)
            fit_lm(params, lm_cfg, examples, opt, rng, epochs=cfg.lm_epochs,
                   batch_size=cfg.batch_size)
            models.append(GeneratorModel(tag=spec.tag, cfg=lm_cfg, params=params,
                                         init_feature=spec.init_feature,
                                         persist_feature=spec.persist_feature))
            eval_examples = lm_examples(eval_records, store, vocab, spec.init_feature,
                                        spec.persist_feature)
            model_rows.append({"tag": spec.tag, "init": spec.init_feature,
                               "persist": spec.persist_feature, "depth": spec.depth,
                               "perplexity": perplexity(eval_examples, params, lm_cfg)})

    with _stage("train-eval"):
        eval_rng = np.random.Generator(np.random.PCG64(seeds[-1]))
        eval_cfg = EvaluatorConfig(
            vocab_size=len(vocab), video_dim=store.dim(cfg.evaluator_feature),
            embed_dim=cfg.eval_embed_dim, filter_widths=cfg.filter_widths,
            filters_per_width=cfg.filters_per_width, joint_dim=cfg.joint_dim,
            margin=cfg.margin, n_negatives=cfg.n_negatives,
            feature_name=cfg.evaluator_feature)
        eval_opt = OptState(learning_rate=cfg.learning_rate, decay=cfg.decay,
                            epsilon=cfg.epsilon)
        eval_params, _ = train_evaluator(
            train_records, lambda vid: store.get(vid, cfg.evaluator_feature), vocab,
            eval_cfg, eval_rng, opt=eval_opt, epochs=cfg.eval_epochs)

    gen_cfg = GenerationConfig(beam_size=cfg.beam_size, max_len=cfg.max_len)

    def _per_video(rec) -> tuple[CandidatePool, str]:
        pool = generate_pool(models, rec.id, store.get, gen_cfg, vocab)
        best = rerank(pool, store.get(rec.id, cfg.evaluator_feature), eval_params,
                      eval_cfg, vocab, blend_weight=cfg.blend_weight)
        return pool, best.caption

    with _stage("generate-rerank"):
        scored = _pool_map(_per_video, eval_records)
        pools = [p for p, _ in scored]
        chosen = {p.video_id: caption for p, caption in scored}

    with _stage("score"):
        references = dataset.references(cfg.eval_split)
        for row, model in zip(model_rows, models):
            hyps = {p.video_id: next(c.caption for c in p.entries if c.model == model.tag)
                    for p in pools}
            report = score_captions(hyps, references)
            row.update(bleu4=report.bleu4, cider=report.cider, rouge_l=report.rouge_l)
        ens_report = score_captions(chosen, references)
        ensemble_row = {"bleu4": ens_report.bleu4, "cider": ens_report.cider,
                        "rouge_l": ens_report.rouge_l}

    table = _format_table(model_rows, ensemble_row)
    result = RunResult(model_rows=model_rows, ensemble_row=ensemble_row,
                       table_text=table, chosen=chosen)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(dataset, out / "dataset.json")
        for name in store.names():
            save_features(store, name, out / f"{name}.vfea")
        vocab.save(out / "vocab.tsv")
        dump_pools(pools, out / "pools.jsonl")
        with open(out / "chosen.json", "w", encoding="utf-8") as f:
            json.dump(chosen, f, sort_keys=True, indent=1)
        with open(out / "results.txt", "w", encoding="utf-8") as f:
            f.write(table)
        with open(out / "results.json", "w", encoding="utf-8") as f:
            f.write(result.to_json() + "\n")
    return result
