"""Losses, NOAM scheduling, gradient accumulation/clipping, and the loop.

Batch size is one document; gradients accumulate across a fixed number of
documents before each SGD step under the NOAM learning-rate curve, and the
partial batch left at an epoch boundary is flushed (applied) so no gradient
ever crosses epochs.  In reinforced mode each document's loss is the mean of
reward-weighted cross-entropies over sampled candidate summaries.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .corpus import LabeledDocument
from .extractor import SelectionConfig, SentenceScores, select_sentences
from .model import Model
from .rouge import CandidateSet, rouge_l, rouge_n, sample_candidates, stable_seed
from .corpus import tokenize

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_scale: float = 1.0
    warmup_steps: int = 100
    accumulation_steps: int = 10
    clip_norm: float = 1.0
    epochs: int = 30
    reinforced: bool = False
    candidates_k: int = 5
    seed: int = 0
    holdout_ratio: float = 0.1
    budget_ratio: float = 0.20
    trigram_threshold: int | None = None

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "TrainConfig":
        return cls(
            lr_scale=cfg.lr_scale,
            warmup_steps=cfg.warmup_steps,
            accumulation_steps=cfg.accumulation_steps,
            clip_norm=cfg.clip_norm,
            epochs=cfg.epochs,
            reinforced=cfg.reinforced,
            candidates_k=cfg.candidates_k,
            seed=cfg.seed,
            holdout_ratio=cfg.holdout_ratio,
            budget_ratio=cfg.budget_ratio,
            trigram_threshold=cfg.trigram_threshold,
        )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def ce_loss(p: SentenceScores | ad.Tensor, labels) -> ad.Tensor:
    """Binary cross-entropy summed over sentences: -Σ [y·log p + (1-y)·log(1-p)].

    The two label groups are gathered separately so a saturated probability on
    the *correct* side contributes exactly 0 rather than 0·(-inf).
    """
    probs = p.p if isinstance(p, SentenceScores) else p
    y = np.asarray(labels, dtype=np.int64)
    n = probs.shape[0]
    if probs.ndim != 1 or y.shape != (n,):
        raise ValueError(f"ce_loss: scores shape {probs.shape} vs labels shape {y.shape}")
    column = ad.reshape(probs, (n, 1))
    pos = np.nonzero(y == 1)[0]
    neg = np.nonzero(y == 0)[0]
    total = ad.Tensor(0.0)
    if pos.size:
        total = ad.add(total, ad.tsum(ad.log(ad.gather_rows(column, pos))))
    if neg.size:
        one_minus = ad.add(1.0, ad.neg(ad.gather_rows(column, neg)))
        total = ad.add(total, ad.tsum(ad.log(one_minus)))
    return ad.neg(total)


def reinforced_loss(p: SentenceScores | ad.Tensor, candidate_labels, reward_value: float) -> ad.Tensor:
    """Reward-scaled cross-entropy against one candidate labeling."""
    if not 0.0 <= reward_value <= 1.0:
        raise ValueError(f"reward must be in [0, 1], got {reward_value}")
    return ad.scale(ce_loss(p, candidate_labels), reward_value)


def candidate_loss(p: SentenceScores, candidates: CandidateSet) -> ad.Tensor:
    """Mean reward-weighted CE over a sampled candidate set."""
    terms = [reinforced_loss(p, c.labels, c.reward.value) for c in candidates.candidates]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms))


# ---------------------------------------------------------------------------
# optimization pieces
# ---------------------------------------------------------------------------


def noam_lr(step: int, d_model: int, warmup: int, scale: float = 1.0) -> float:
    """scale · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5), peak at warmup."""
    if step < 1:
        raise ValueError(f"noam_lr: step must be >= 1, got {step}")
    if warmup < 1:
        raise ValueError(f"noam_lr: warmup must be >= 1, got {warmup}")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def clip_gradients(params, max_norm: float) -> float:
    """Global-L2 clip in place; returns the applied scale factor."""
    tensors = list(params.values() if isinstance(params, dict) else params)
    norm = ad.global_grad_norm(tensors)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for t in tensors:
        if t.grad is not None:
            t.grad = t.grad * factor
    return factor


def sgd_step(params, lr: float) -> None:
    tensors = params.values() if isinstance(params, dict) else params
    for t in tensors:
        if t.grad is not None:
            t.data = t.data - lr * t.grad


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    metrics: list[dict] = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    holdout_ids: list[str] = field(default_factory=list)
    updates: int = 0
    full_batch_updates: int = 0
    flush_updates: int = 0


def split_holdout(
    dataset: list[LabeledDocument], ratio: float, seed: int
) -> tuple[list[LabeledDocument], list[LabeledDocument]]:
    order = np.random.default_rng(stable_seed(seed, "holdout-split")).permutation(len(dataset))
    n_hold = int(round(ratio * len(dataset)))
    hold_idx = set(int(i) for i in order[:n_hold])
    train = [dataset[i] for i in range(len(dataset)) if i not in hold_idx]
    hold = [dataset[i] for i in sorted(hold_idx)]
    return train, hold


def _doc_loss(model: Model, item: LabeledDocument, tcfg: TrainConfig,
              candidate_cache: dict[str, CandidateSet]) -> ad.Tensor:
    scores = model.forward(item.document)
    if not tcfg.reinforced:
        return ce_loss(scores, item.labels)
    doc_id = item.document.id
    cands = candidate_cache.get(doc_id)
    if cands is None:
        cands = sample_candidates(
            item.document,
            np.asarray(item.labels, dtype=np.int64),
            tcfg.candidates_k,
            seed=stable_seed(tcfg.seed, "candidates", doc_id),
        )
        candidate_cache[doc_id] = cands
    return candidate_loss(scores, cands)


def evaluate_split(model: Model, items: list[LabeledDocument], tcfg: TrainConfig) -> dict:
    """Frozen-parameter evaluation: mean CE loss + selection ROUGE recalls."""
    sel = SelectionConfig(budget_ratio=tcfg.budget_ratio, trigram_threshold=tcfg.trigram_threshold)
    losses, r1s, r2s, rls = [], [], [], []
    with ad.no_grad():
        for item in items:
            scores = model.forward(item.document)
            losses.append(float(ce_loss(scores, item.labels).data))
            picked = select_sentences(item.document, scores, sel)
            cand_tokens: list[str] = []
            for i in picked:
                cand_tokens.extend(item.document.sentences[i].tokens)
            ref_tokens = tokenize(item.document.reference_summary)
            r1s.append(rouge_n(cand_tokens, ref_tokens, 1).recall)
            r2s.append(rouge_n(cand_tokens, ref_tokens, 2).recall)
            rls.append(rouge_l(cand_tokens, ref_tokens).recall)
    return {
        "loss": float(np.mean(losses)) if losses else 0.0,
        "rouge1_recall": float(np.mean(r1s)) if r1s else 0.0,
        "rouge2_recall": float(np.mean(r2s)) if r2s else 0.0,
        "rougeL_recall": float(np.mean(rls)) if rls else 0.0,
    }


def train(model: Model, dataset: list[LabeledDocument], tcfg: TrainConfig,
          on_epoch=None) -> TrainResult:
    """Run the full loop; deterministic given (dataset order, config, seed)."""
    if not dataset:
        raise ValueError("train: dataset is empty")
    train_set, holdout = split_holdout(dataset, tcfg.holdout_ratio, tcfg.seed)
    if not train_set:
        raise ValueError("train: holdout ratio left no training documents")
    result = TrainResult(
        train_ids=[it.document.id for it in train_set],
        holdout_ids=[it.document.id for it in holdout],
    )
    params = model.parameters()
    d_model = model.cfg.d_model
    epoch_rng = np.random.default_rng(stable_seed(tcfg.seed, "epoch-order"))
    candidate_cache: dict[str, CandidateSet] = {}

    pending = 0
    last_lr = 0.0

    def apply_update(flush: bool) -> None:
        nonlocal pending, last_lr
        clip_gradients(params, tcfg.clip_norm)
        step = result.updates + 1
        last_lr = noam_lr(step, d_model, tcfg.warmup_steps, tcfg.lr_scale)
        sgd_step(params, last_lr)
        model.zero_grads()
        result.updates += 1
        if flush:
            result.flush_updates += 1
        else:
            result.full_batch_updates += 1
        pending = 0

    for epoch in range(1, tcfg.epochs + 1):
        order = epoch_rng.permutation(len(train_set))
        epoch_losses = []
        for idx in order:
            item = train_set[int(idx)]
            loss = _doc_loss(model, item, tcfg, candidate_cache)
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise TrainingError(
                    f"non-finite loss {loss_val} at epoch {epoch}, update {result.updates + 1}, "
                    f"doc {item.document.id}"
                )
            epoch_losses.append(loss_val)
            ad.backward(loss)
            pending += 1
            if pending == tcfg.accumulation_steps:
                apply_update(flush=False)
        if pending:
            apply_update(flush=True)  # partial batch at epoch end

        train_row = {
            "epoch": epoch, "split": "train", "loss": float(np.mean(epoch_losses)),
            "rouge1_recall": "", "rouge2_recall": "", "rougeL_recall": "", "lr": last_lr,
        }
        result.metrics.append(train_row)
        if holdout:
            ev = evaluate_split(model, holdout, tcfg)
            result.metrics.append({"epoch": epoch, "split": "holdout", "lr": last_lr, **ev})
        log.info(
            "epoch %d: train loss %.4f%s", epoch, train_row["loss"],
            f", holdout loss {result.metrics[-1]['loss']:.4f}" if holdout else "",
        )
        if on_epoch is not None:
            on_epoch(epoch, result)
    return result


def write_metrics_csv(rows: list[dict], path, config_hash: str) -> None:
    columns = ["epoch", "split", "loss", "rouge1_recall", "rouge2_recall", "rougeL_recall", "lr"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c, "")) for c in columns) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)
