"""Deterministic training loop, evaluation and variant sweeps.

A run is fully reproducible from its RunConfig: parameter init draws are
keyed by (seed, parameter name), data order by (seed, DATA_STREAM) and
dropout by (seed, DROPOUT_STREAM).  Variants sharing a seed therefore
consume identical batch sequences, and submodules with identical names
initialize identically across variants.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import (CheckpointError, config_digest, load_checkpoint,
                         save_checkpoint)
from .data import (Batch, SquadExample, TokenizedExample, Vocabulary,
                   CharVocabulary, build_char_vocab, build_vocab_tokens,
                   load_glove_vectors, load_squad_json, make_batches,
                   prepare_examples, vectors_to_vocabulary, write_squad_json)
from .metrics import EvalResult, evaluate_predictions
from .model import ModelConfig, QAModel
from .nn import Parameter
from .rng import DATA_STREAM, DROPOUT_STREAM, RngStream
from .synthetic import (generate_synthetic_corpus, synthetic_vector_rows,
                        vector_file_tokens, write_vector_file)

METRIC_HEADER = ["step", "split", "loss", "em", "f1", "avna"]


@dataclass
class MetricRecord:
    step: int
    split: str  # train | dev
    loss: float
    em: float
    f1: float
    avna: float

    def row(self) -> list[str]:
        return [str(self.step), self.split, repr(float(self.loss)),
                repr(float(self.em)), repr(float(self.f1)),
                repr(float(self.avna))]


@dataclass
class RunConfig:
    variant: str = "baseline"
    use_char: bool = False
    word_dim: int = 50
    char_dim: int = 16
    char_filters: int = 64
    char_kernel: int = 5
    hidden: int = 32
    highway_layers: int = 2
    dropout: float = 0.2
    ensemble_k: int = 0
    optimizer: str = "adam"
    lr: float = 5e-4
    grad_clip: float = 5.0
    batch_size: int = 32
    max_steps: int = 300
    eval_every: int = 50
    seed: int = 0
    max_answer_len: int = 15
    dtype: str = "float32"
    train_path: Optional[str] = None
    dev_path: Optional[str] = None
    vectors_path: Optional[str] = None
    synthetic: Optional[dict] = None
    out_dir: str = "runs/out"
    eval_train: bool = True
    workers: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        fields = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(fields) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**fields)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.variant, use_char=self.use_char,
            word_dim=self.word_dim, char_dim=self.char_dim,
            char_filters=self.char_filters, char_kernel=self.char_kernel,
            hidden=self.hidden, highway_layers=self.highway_layers,
            dropout=self.dropout, ensemble_k=self.ensemble_k,
            max_answer_len=self.max_answer_len)

    def np_dtype(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        return np.float32 if self.dtype == "float32" else np.float64

    def digest_fields(self, vocab_size: int, n_chars: int) -> dict:
        return {
            "variant": self.variant, "use_char": self.use_char,
            "word_dim": self.word_dim, "char_dim": self.char_dim,
            "char_filters": self.char_filters, "char_kernel": self.char_kernel,
            "hidden": self.hidden, "highway_layers": self.highway_layers,
            "ensemble_k": self.ensemble_k, "vocab_size": vocab_size,
            "n_chars": n_chars,
        }


# -- optimizers -----------------------------------------------------------------

class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.b1 ** self.t
        bias2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (self.lr / bias1) * m / (np.sqrt(v / bias2) + self.eps)


class Adadelta:
    def __init__(self, params: Sequence[Parameter], lr: float = 1.0,
                 rho: float = 0.95, eps: float = 1e-6):
        self.params = list(params)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.eg = [np.zeros_like(p.data) for p in self.params]
        self.ex = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, eg, ex in zip(self.params, self.eg, self.ex):
            g = p.grad
            eg *= self.rho
            eg += (1 - self.rho) * g * g
            dx = -np.sqrt(ex + self.eps) / np.sqrt(eg + self.eps) * g
            ex *= self.rho
            ex += (1 - self.rho) * dx * dx
            p.data += self.lr * dx


def make_optimizer(name: str, params: Sequence[Parameter], lr: float):
    name = name.lower()
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "adadelta":
        return Adadelta(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


def clip_global_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm.

    Returns the pre-clip norm.  The scale backs off fractionally below the
    bound so float32 rounding cannot push the post-clip norm above it.
    """
    total = 0.0
    for p in params:
        g = p.grad.astype(np.float64, copy=False)
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm * (1.0 - 1e-7) / norm
        for p in params:
            p.grad *= p.data.dtype.type(factor)
    return norm


# -- corpus plumbing ----------------------------------------------------------------

@dataclass
class PreparedData:
    train_raw: list[SquadExample]
    dev_raw: list[SquadExample]
    train: list[TokenizedExample]
    dev: list[TokenizedExample]
    vocab: Vocabulary
    char_vocab: CharVocabulary
    dropped: int


def load_corpora(config: RunConfig, write_out: bool = False) -> PreparedData:
    """Resolve corpus paths or a synthetic spec into featurized splits."""
    if config.synthetic is not None:
        spec = dict(config.synthetic)
        corpus_seed = int(spec.pop("seed", 0))
        n_train = int(spec.pop("n_train", 256))
        n_dev = int(spec.pop("n_dev", 64))
        train_raw = generate_synthetic_corpus(
            {**spec, "n_examples": n_train}, corpus_seed)
        dev_raw = generate_synthetic_corpus(
            {**spec, "n_examples": n_dev}, corpus_seed + 1)
        tokens = vector_file_tokens(train_raw + dev_raw)
        rows = synthetic_vector_rows(tokens, config.word_dim, corpus_seed)
        vocab_tokens = build_vocab_tokens(train_raw)
        vocab = vectors_to_vocabulary(
            vocab_tokens, {t: v for t, v in rows.items() if t in set(vocab_tokens)},
            config.word_dim)
        if write_out:
            os.makedirs(config.out_dir, exist_ok=True)
            write_squad_json(train_raw, os.path.join(config.out_dir, "train.json"))
            write_squad_json(dev_raw, os.path.join(config.out_dir, "dev.json"))
            write_vector_file(rows, os.path.join(config.out_dir, "vectors.txt"))
    else:
        if not config.train_path or not config.vectors_path:
            raise ValueError("config needs train_path+vectors_path or synthetic")
        train_raw = load_squad_json(config.train_path)
        dev_raw = load_squad_json(config.dev_path) if config.dev_path else []
        vocab_tokens = build_vocab_tokens(train_raw)
        vocab = load_glove_vectors(config.vectors_path, config.word_dim,
                                   vocab_tokens)
    char_vocab = build_char_vocab(train_raw)
    train, dropped_train = prepare_examples(train_raw, char_vocab)
    dev, dropped_dev = prepare_examples(dev_raw, char_vocab)
    return PreparedData(train_raw, dev_raw, train, dev, vocab, char_vocab,
                        dropped_train + dropped_dev)


# -- evaluation -----------------------------------------------------------------------

def predict_split(model: QAModel, examples: Sequence[TokenizedExample],
                  vocab: Vocabulary, batch_size: int,
                  workers: int = 0) -> dict[str, str]:
    """id -> answer text over a split; worker fan-out matches serial exactly."""
    batches = list(make_batches(examples, batch_size, vocab, shuffle=False))
    preds: dict[str, str] = {}
    if workers and workers > 1:
        def run(batch: Batch) -> dict[str, str]:
            return {eid: text for eid, (text, _) in
                    model.predict_batch(batch).items()}
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(run, batches):
                preds.update(result)
    else:
        for batch in batches:
            for eid, (text, _) in model.predict_batch(batch).items():
                preds[eid] = text
    return preds


def split_loss(model: QAModel, examples: Sequence[TokenizedExample],
               vocab: Vocabulary, batch_size: int) -> float:
    """Mean span loss over a split with dropout off."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    try:
        with T.no_grad():
            for batch in make_batches(examples, batch_size, vocab, shuffle=False):
                loss = model.loss(batch, rng=None)
                total += float(loss.data) * batch.size
                count += batch.size
    finally:
        model.train(was_training)
    return total / max(count, 1)


def evaluate_split(model: QAModel, raw: Sequence[SquadExample],
                   examples: Sequence[TokenizedExample], vocab: Vocabulary,
                   batch_size: int, workers: int = 0
                   ) -> tuple[EvalResult, dict[str, str]]:
    preds = predict_split(model, examples, vocab, batch_size, workers)
    kept_ids = {ex.id for ex in examples}
    scored = [ex for ex in raw if ex.id in kept_ids]
    return evaluate_predictions(preds, scored), preds


# -- training -------------------------------------------------------------------------

@dataclass
class TrainResult:
    config: RunConfig
    metrics_path: str
    checkpoint_path: str
    records: list[MetricRecord]
    best_f1: float
    best_em: float
    best_avna: float
    best_step: int
    final_train_em: float


class _MetricLog:
    def __init__(self, path: str):
        self.path = path
        self.records: list[MetricRecord] = []
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRIC_HEADER)

    def append(self, record: MetricRecord) -> None:
        self.records.append(record)
        self._writer.writerow(record.row())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def train(config: RunConfig, quiet: bool = False) -> TrainResult:
    """Run one training job to completion, logging metrics and the best
    checkpoint (by dev F1, falling back to train F1 without a dev split)."""
    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "config.json"), "w") as fh:
        fh.write(config.to_json())

    data = load_corpora(config, write_out=config.synthetic is not None)
    dtype = config.np_dtype()
    model = QAModel(config.model_config(), data.vocab.matrix,
                    len(data.char_vocab))
    model.initialize(config.seed, dtype)
    optimizer = make_optimizer(config.optimizer, model.parameters(), config.lr)
    data_rng = RngStream(config.seed, DATA_STREAM)
    drop_rng = RngStream(config.seed, DROPOUT_STREAM)

    log = _MetricLog(os.path.join(config.out_dir, "metrics.csv"))
    ckpt_path = os.path.join(config.out_dir, "best.ckpt")
    digest = config_digest(config.digest_fields(len(data.vocab),
                                                len(data.char_vocab)))
    best = {"f1": -1.0, "em": 0.0, "avna": 0.0, "step": 0}
    final_train_em = 0.0

    def run_eval(step: int) -> None:
        nonlocal final_train_em
        splits = []
        if config.eval_train:
            splits.append(("train", data.train_raw, data.train))
        if data.dev:
            splits.append(("dev", data.dev_raw, data.dev))
        for name, raw, examples in splits:
            result, _ = evaluate_split(model, raw, examples, data.vocab,
                                       config.batch_size, config.workers)
            loss = split_loss(model, examples, data.vocab, config.batch_size)
            log.append(MetricRecord(step, name, loss, result.em, result.f1,
                                    result.avna))
            if name == "train":
                final_train_em = result.em
            if not quiet:
                print(f"step {step:5d} {name:5s} loss {loss:.4f} "
                      f"EM {result.em:.2f} F1 {result.f1:.2f} "
                      f"AvNA {result.avna:.2f}")
            ranked = (name == "dev") or (name == "train" and not data.dev)
            if ranked and result.f1 > best["f1"]:
                best.update(f1=result.f1, em=result.em, avna=result.avna,
                            step=step)
                save_checkpoint(ckpt_path, model.state_arrays(), digest)

    run_eval(0)
    step = 0
    batch_iter = iter(())
    while step < config.max_steps:
        try:
            batch = next(batch_iter)
        except StopIteration:
            batch_iter = make_batches(data.train, config.batch_size,
                                      data.vocab, rng=data_rng, shuffle=True)
            continue
        step += 1
        model.train()
        model.zero_grad()
        loss = model.loss(batch, rng=drop_rng)
        loss_value = float(loss.data)
        if not math.isfinite(loss_value):
            raise RuntimeError(
                f"non-finite loss at step {step}: {loss_value}; "
                f"largest |param| = {max(float(np.abs(p.data).max()) for p in model.parameters()):.3e}")
        loss.backward()
        clip_global_norm(model.parameters(), config.grad_clip)
        optimizer.step()
        if step % config.eval_every == 0 or step == config.max_steps:
            run_eval(step)
    log.close()
    if best["f1"] < 0:  # no ranked split produced a score; keep final weights
        save_checkpoint(ckpt_path, model.state_arrays(), digest)
    return TrainResult(
        config=config, metrics_path=log.path, checkpoint_path=ckpt_path,
        records=log.records, best_f1=best["f1"], best_em=best["em"],
        best_avna=best["avna"], best_step=best["step"],
        final_train_em=final_train_em)


def load_model_from_checkpoint(path: str, config: RunConfig,
                               data: PreparedData) -> QAModel:
    arrays, digest = load_checkpoint(path)
    expected = config_digest(config.digest_fields(len(data.vocab),
                                                  len(data.char_vocab)))
    if digest != expected:
        raise CheckpointError(
            f"{path}: checkpoint was written for a different model "
            f"configuration (digest mismatch)")
    model = QAModel(config.model_config(), data.vocab.matrix,
                    len(data.char_vocab))
    model.initialize(config.seed, config.np_dtype())
    model.load_state_arrays(arrays)
    return model


# -- sweeps ---------------------------------------------------------------------------

def sweep(base: RunConfig, variants: Sequence[str], out_dir: str,
          quiet: bool = False) -> list[TrainResult]:
    """Train each variant under identical seeds and batch sequences."""
    os.makedirs(out_dir, exist_ok=True)
    results = []
    for variant in variants:
        sub = dict(asdict(base))
        sub["variant"] = variant
        sub["out_dir"] = os.path.join(out_dir, variant.replace(":", "_").replace("+", "-"))
        results.append(train(RunConfig(**sub), quiet=quiet))
    table_path = os.path.join(out_dir, "comparison.csv")
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "best_f1", "best_em", "best_avna",
                         "step_of_best"])
        for res in results:
            dev_records = [r for r in res.records if r.split == "dev"] or \
                          [r for r in res.records if r.split == "train"]
            best_f1 = max(r.f1 for r in dev_records)
            best_em = max(r.em for r in dev_records)
            best_avna = max(r.avna for r in dev_records)
            step_of_best = min(r.step for r in dev_records if r.f1 == best_f1)
            writer.writerow([res.config.variant, repr(best_f1), repr(best_em),
                             repr(best_avna), step_of_best])
    if not quiet:
        with open(table_path) as fh:
            print(fh.read())
    return results
