"""Training loop, prediction helpers and the finite-difference gradient check."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..corpus import Document, Entity, Sample
from ..grid import TagGrid, TagScheme, encode, EncodeConflictError
from ..metrics import ebf, prf
from .model import ENCODER_PARAMS, GridModel, ModelConfig, Vocab

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Checkpoint:
    epoch: int
    params: dict[str, np.ndarray]
    loss: float
    dev_predictions: dict[str, list[Entity]] | None = None
    dev_ebf: float | None = None
    dev_f1: float | None = None


@dataclass
class TrainResult:
    model: GridModel
    checkpoints: list[Checkpoint] = field(default_factory=list)
    skipped_entities: int = 0

    def model_at(self, checkpoint: Checkpoint) -> GridModel:
        return GridModel(self.model.config, self.model.vocab, self.model.scheme,
                         {k: v.copy() for k, v in checkpoint.params.items()})


def encode_lenient(entities: Iterable[Entity], n: int, scheme: TagScheme) -> tuple[TagGrid, int]:
    """Encode, dropping entities whose THW cell is already taken by another label."""
    kept: list[Entity] = []
    taken: dict[tuple[int, int], str] = {}
    dropped = 0
    for ent in sorted(set(entities)):
        if taken.setdefault((ent.tail, ent.head), ent.label) != ent.label:
            dropped += 1
            continue
        kept.append(ent)
    return encode(kept, n, scheme), dropped


def predict_samples(model: GridModel, samples: Sequence[Sample]) -> dict[str, list[Entity]]:
    """Predict every sample and merge entities per document, in document coordinates."""
    merged: dict[str, dict[Entity, None]] = {}
    for s in samples:
        bucket = merged.setdefault(s.doc_id, {})
        if not len(s):
            continue
        for ent in model.predict_entities(s.tokens):
            bucket.setdefault(s.to_document(ent), None)
    return {k: sorted(v) for k, v in merged.items()}


def complete(predictions: dict[str, list[Entity]], docs: Iterable[Document]) -> dict[str, list[Entity]]:
    return {d.id: list(predictions.get(d.id, ())) for d in docs}


def _lr_scale(step: int, total: int, warm_factor: float) -> float:
    warm = int(warm_factor * total)
    if warm and step < warm:
        return (step + 1) / warm
    return 1.0


def train(
    samples: Sequence[Sample],
    config: ModelConfig,
    labels: Sequence[str] | None = None,
    vocab: Vocab | None = None,
    dev_docs: Sequence[Document] | None = None,
    dev_samples: Sequence[Sample] | None = None,
    init: GridModel | None = None,
    keep_checkpoints: bool = True,
) -> TrainResult:
    """Mini-batch SGD with separate learning rates for encoder and the rest.

    After each epoch the model is scored on ``dev_samples`` (mapped back onto
    ``dev_docs``) and a checkpoint with dev EBF and F1 is recorded.
    """
    samples = [s for s in samples if len(s)]
    if not samples:
        raise ValueError("training needs at least one non-empty sample")
    if labels is None:
        labels = sorted({e.label for s in samples for e in s.gold})
    scheme = TagScheme(tuple(labels), config.scheme_mode)
    if init is not None:
        model = init.copy()
        model.config = config
    else:
        vocab = vocab or Vocab.build(s.tokens for s in samples)
        model = GridModel(config, vocab, scheme)
    result = TrainResult(model)

    data = []
    for s in samples:
        grid, dropped = encode_lenient(s.gold, len(s), model.scheme)
        result.skipped_entities += dropped
        data.append((model.vocab.ids(s.tokens), grid.cells))
    if result.skipped_entities:
        log.warning("%d gold entities dropped for THW conflicts", result.skipped_entities)

    rng = np.random.default_rng(config.seed + 1)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    lr_of = {k: (config.lr_encoder if k in ENCODER_PARAMS else config.lr_other) for k in model.params}
    n_batches = -(-len(data) // config.batch_size)
    total_steps = n_batches * config.epochs
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grads = {k: np.zeros_like(v) for k, v in model.params.items()}
            for idx in batch:  # fixed summation order by batch position
                ids, cells = data[idx]
                loss, g = model.loss_and_grads(ids, cells, rng if config.dropout else None)
                if not np.isfinite(loss):
                    raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, step {step}")
                epoch_loss += loss
                for k in grads:
                    grads[k] += g[k]
            scale = 1.0 / len(batch)
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values())) * scale
            if config.clip_norm and norm > config.clip_norm:
                scale *= config.clip_norm / norm
            lr_scale = _lr_scale(step, total_steps, config.warm_factor)
            for k, p in model.params.items():
                g = grads[k] * scale + config.weight_decay * p
                v = velocity[k]
                v *= config.momentum
                v += g
                p -= lr_scale * lr_of[k] * v
            step += 1
        epoch_loss /= len(data)
        ckpt = Checkpoint(epoch, {k: v.copy() for k, v in model.params.items()} if keep_checkpoints else {}, epoch_loss)
        if dev_docs is not None and dev_samples is not None:
            preds = complete(predict_samples(model, dev_samples), dev_docs)
            gold = {d.id: list(d.gold) for d in dev_docs}
            ckpt.dev_predictions = preds
            ckpt.dev_ebf = ebf(preds, gold)[2]
            ckpt.dev_f1 = prf(preds, gold).f1
        log.info("epoch %d loss %.4f dev_ebf %s dev_f1 %s", epoch, epoch_loss, ckpt.dev_ebf, ckpt.dev_f1)
        result.checkpoints.append(ckpt)
    return result


def predict(model: GridModel, sample: Sample | Sequence[str]) -> TagGrid:
    tokens = sample.tokens if isinstance(sample, Sample) else sample
    return model.predict_grid(tokens)


@dataclass
class GradCheckResult:
    errors: dict[str, float]
    checked: dict[str, int]

    @property
    def max_error(self) -> float:
        return max(self.errors.values())


def gradcheck(
    model: GridModel,
    tokens: Sequence[str],
    gold_cells: np.ndarray,
    step: float = 1e-3,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare analytic gradients with central finite differences.

    The error for one parameter tensor is ``|a - n| / max(|a|, |n|)`` over
    the checked entries (Euclidean norms).  ``max_entries`` caps how many
    randomly chosen entries per tensor are perturbed; ``None`` checks all.
    """
    ids = model.vocab.ids(tokens)
    _, analytic = model.loss_and_grads(ids, gold_cells)
    rng = np.random.default_rng(seed)
    errors, checked = {}, {}
    for name, p in model.params.items():
        if max_entries is None or p.size <= max_entries:
            entries = np.arange(p.size)
        else:
            entries = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        numeric = np.empty(len(entries))
        for k, flat in enumerate(entries):
            old = p.flat[flat]
            p.flat[flat] = old + step
            up = model.loss(model.forward(ids)[0], gold_cells)
            p.flat[flat] = old - step
            down = model.loss(model.forward(ids)[0], gold_cells)
            p.flat[flat] = old
            numeric[k] = (up - down) / (2 * step)
        a = analytic[name].reshape(-1)[entries]
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric))
        errors[name] = float(np.linalg.norm(a - numeric) / denom) if denom > 0 else 0.0
        checked[name] = len(entries)
    return GradCheckResult(errors, checked)


def gradcheck_probe(config: ModelConfig, n_tokens: int = 6, perturb: float = 0.3):
    """A random model and gold grid on an ``n_tokens`` probe sample.

    Parameters are jittered away from their structured initialization
    (identity CLN gains, zero biases) so every group has non-trivial
    gradients.
    """
    words = [f"w{i}" for i in range(n_tokens)]
    labels = ("ADR", "Drug")
    scheme = TagScheme(labels, config.scheme_mode)
    model = GridModel(config, Vocab.build([words]), scheme)
    rng = np.random.default_rng(config.seed)
    for k, v in model.params.items():
        v += rng.normal(0.0, perturb, v.shape)
    ents = [Entity.from_tokens("ADR", [1, 2, n_tokens - 2]), Entity.from_tokens("Drug", [n_tokens - 1])]
    gold = encode(ents, n_tokens, scheme).cells
    return model, words, gold


def make_factory(config: ModelConfig, **train_kwargs) -> Callable[[Sequence[Sample]], GridModel]:
    """A ``samples -> trained model`` callable picking the best dev-EBF epoch."""
    from ..augment import select_boundaries

    def factory(samples: Sequence[Sample], dev_docs=None, dev_samples=None) -> GridModel:
        result = train(samples, config, dev_docs=dev_docs, dev_samples=dev_samples, **train_kwargs)
        if dev_docs is None:
            return result.model
        best = select_boundaries(result.checkpoints, {d.id: list(d.gold) for d in dev_docs})
        return result.model_at(best)

    return factory
