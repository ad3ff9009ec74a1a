"""Losses, the NOAM schedule, clipping, accumulation, and the training loop."""

from __future__ import annotations

import numpy as np
import pytest

from helpers import small_random_doc
from sectsum import autodiff as ad
from sectsum.config import RunConfig
from sectsum.corpus import LabeledDocument
from sectsum.model import Model
from sectsum.rouge import Candidate, CandidateSet, Reward, stable_seed
from sectsum.training import (
    TrainConfig,
    TrainingError,
    candidate_loss,
    ce_loss,
    clip_gradients,
    evaluate_split,
    noam_lr,
    reinforced_loss,
    sgd_step,
    split_holdout,
    train,
    write_metrics_csv,
)


def _dataset(n_docs: int, seed0: int = 0) -> list[LabeledDocument]:
    rng = np.random.default_rng(stable_seed(seed0, "train-tests"))
    items = []
    for i in range(n_docs):
        doc = small_random_doc(seed0 * 1000 + i)
        labels = tuple(int(x) for x in rng.integers(0, 2, size=doc.n_sentences))
        items.append(LabeledDocument(doc, labels))
    return items


def _tiny_cfg(**over) -> RunConfig:
    base = dict(
        d_model=8, layers=1, heads=2, window=2, global_ratio=0.0,
        max_sentences=12, s_max=3, len_buckets=6, ffn_dim=8, seed=0,
    )
    base.update(over)
    return RunConfig(**base)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _bce(p: np.ndarray, y: np.ndarray) -> float:
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).sum())


def test_ce_loss_matches_summed_binary_cross_entropy():
    p = ad.Tensor(np.array([0.9, 0.2, 0.5, 0.7]))
    y = [1, 0, 1, 0]
    got = ce_loss(p, y)
    assert float(got.data) == pytest.approx(_bce(p.data, np.array(y)), rel=1e-12)


def test_ce_loss_gradient_wrt_logits_is_p_minus_y():
    logits = ad.Tensor(np.array([0.3, -1.2, 2.0, 0.0]), requires_grad=True)
    y = np.array([1, 0, 0, 1])
    loss = ce_loss(ad.sigmoid(logits), y)
    ad.backward(loss)
    p = 1.0 / (1.0 + np.exp(-logits.data))
    np.testing.assert_allclose(logits.grad, p - y, atol=1e-12)


def test_ce_loss_saturated_correct_side_contributes_zero():
    p = ad.Tensor(np.array([1.0, 0.0]))  # exactly right for labels [1, 0]
    assert float(ce_loss(p, [1, 0]).data) == 0.0


def test_ce_loss_shape_mismatch():
    with pytest.raises(ValueError, match="labels shape"):
        ce_loss(ad.Tensor(np.array([0.5, 0.5])), [1, 0, 1])


@pytest.mark.parametrize("r", [0.0, 0.5, 1.0])
def test_reinforced_loss_is_exactly_reward_times_ce(r):
    y = np.array([1, 0, 1, 0, 1, 0])

    def fresh_logits():
        return ad.Tensor(np.linspace(-1.5, 1.5, 6), requires_grad=True)

    plain = fresh_logits()
    ad.backward(ce_loss(ad.sigmoid(plain), y))
    scaled = fresh_logits()
    ad.backward(reinforced_loss(ad.sigmoid(scaled), y, r))
    # rewards in {0, 1/2, 1} scale every float product exactly, so this is
    # a bitwise equality, not an approximation
    np.testing.assert_array_equal(scaled.grad, r * plain.grad)


def test_reinforced_loss_rejects_out_of_range_reward():
    p = ad.Tensor(np.array([0.5]))
    with pytest.raises(ValueError, match="reward"):
        reinforced_loss(p, [1], 1.5)
    with pytest.raises(ValueError, match="reward"):
        reinforced_loss(p, [1], -0.1)


def test_candidate_loss_is_mean_of_reward_weighted_terms():
    p = ad.Tensor(np.array([0.8, 0.3, 0.6]))
    cands = CandidateSet(
        candidates=(
            Candidate(np.array([1, 0, 0]), Reward(1.0)),
            Candidate(np.array([0, 1, 0]), Reward(0.5)),
        ),
        complete=True,
    )
    got = float(candidate_loss(p, cands).data)
    want = (
        1.0 * _bce(p.data, np.array([1, 0, 0]))
        + 0.5 * _bce(p.data, np.array([0, 1, 0]))
    ) / 2
    assert got == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------------------
# schedule, clipping, SGD
# ---------------------------------------------------------------------------


def test_noam_lr_peaks_at_warmup_then_decays():
    d, w, s = 64, 100, 2.0
    peak = noam_lr(w, d, w, s)
    assert peak == pytest.approx(s * d**-0.5 * w**-0.5, rel=1e-12)
    before = [noam_lr(t, d, w, s) for t in (1, 25, 50, 99)]
    assert before == sorted(before) and before[-1] < peak
    assert noam_lr(4 * w, d, w, s) == pytest.approx(peak / 2, rel=1e-12)
    assert noam_lr(2, d, w, s) == pytest.approx(2 * noam_lr(1, d, w, s), rel=1e-12)


def test_noam_lr_validates_step_and_warmup():
    with pytest.raises(ValueError, match="step"):
        noam_lr(0, 64, 100)
    with pytest.raises(ValueError, match="warmup"):
        noam_lr(1, 64, 0)


def test_clip_gradients_rescales_to_max_norm():
    a = ad.Tensor(np.zeros(1), requires_grad=True)
    b = ad.Tensor(np.zeros(1), requires_grad=True)
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    factor = clip_gradients({"a": a, "b": b}, 1.0)
    assert factor == pytest.approx(0.2, rel=1e-12)
    assert float(a.grad[0]) == pytest.approx(0.6) and float(b.grad[0]) == pytest.approx(0.8)
    assert ad.global_grad_norm([a, b]) == pytest.approx(1.0, rel=1e-12)


def test_clip_gradients_leaves_small_gradients_alone():
    a = ad.Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.array([0.1, 0.2])
    before = a.grad.copy()
    assert clip_gradients([a], 1.0) == 1.0
    np.testing.assert_array_equal(a.grad, before)
    zero = ad.Tensor(np.zeros(2), requires_grad=True)
    assert clip_gradients([zero], 1.0) == 1.0  # norm 0: no-op, not 0-division


def test_sgd_step_applies_lr_and_skips_gradless_tensors():
    a = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = ad.Tensor(np.array([5.0]), requires_grad=True)
    a.grad = np.array([10.0, -10.0])
    sgd_step([a, b], lr=0.1)
    np.testing.assert_allclose(a.data, [0.0, 3.0], atol=1e-15)
    np.testing.assert_array_equal(b.data, [5.0])


# ---------------------------------------------------------------------------
# holdout split
# ---------------------------------------------------------------------------


def test_split_holdout_is_deterministic_disjoint_and_sized():
    data = _dataset(20)
    train_a, hold_a = split_holdout(data, 0.25, seed=7)
    train_b, hold_b = split_holdout(data, 0.25, seed=7)
    assert [d.document.id for d in train_a] == [d.document.id for d in train_b]
    assert [d.document.id for d in hold_a] == [d.document.id for d in hold_b]
    assert len(hold_a) == round(0.25 * 20)
    ids_train = {d.document.id for d in train_a}
    ids_hold = {d.document.id for d in hold_a}
    assert not ids_train & ids_hold
    assert len(ids_train | ids_hold) == 20


def test_split_holdout_zero_ratio_keeps_everything_in_train():
    data = _dataset(10)
    tr, hold = split_holdout(data, 0.0, seed=0)
    assert len(tr) == 10 and hold == []


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


def test_update_counts_full_batches_plus_epoch_flush():
    data = _dataset(25)
    model = Model(_tiny_cfg())
    tcfg = TrainConfig(
        lr_scale=0.5, warmup_steps=10, accumulation_steps=10,
        epochs=2, holdout_ratio=0.0, seed=0,
    )
    result = train(model, data, tcfg)
    # 25 docs / accumulation 10 -> 2 full updates + 1 partial flush per epoch
    assert result.full_batch_updates == 4
    assert result.flush_updates == 2
    assert result.updates == 6
    assert result.holdout_ids == []
    assert len(result.metrics) == 2  # train row per epoch, no holdout rows


def test_zero_learning_rate_leaves_parameters_bit_identical():
    data = _dataset(6)
    model = Model(_tiny_cfg())
    before = {k: t.data.copy() for k, t in model.parameters().items()}
    train(model, data, TrainConfig(lr_scale=0.0, epochs=1, holdout_ratio=0.0, seed=0))
    for name, tensor in model.parameters().items():
        np.testing.assert_array_equal(tensor.data, before[name], err_msg=name)


def test_training_is_deterministic_across_runs():
    data = _dataset(8)
    tcfg = TrainConfig(
        lr_scale=1.0, warmup_steps=5, accumulation_steps=3,
        epochs=2, holdout_ratio=0.25, seed=11,
    )
    res_a = train(Model(_tiny_cfg()), data, tcfg)
    model_b = Model(_tiny_cfg())
    res_b = train(model_b, data, tcfg)
    assert res_a.metrics == res_b.metrics
    assert res_a.holdout_ids == res_b.holdout_ids
    model_c = Model(_tiny_cfg())
    res_c = train(model_c, data, tcfg)
    for name, tensor in model_b.parameters().items():
        np.testing.assert_array_equal(tensor.data, model_c.parameters()[name].data)
    assert res_c.metrics == res_b.metrics


def test_metrics_rows_interleave_train_and_holdout():
    data = _dataset(10)
    model = Model(_tiny_cfg())
    tcfg = TrainConfig(lr_scale=0.5, epochs=2, holdout_ratio=0.2, seed=0)
    result = train(model, data, tcfg)
    assert len(result.metrics) == 4
    for epoch in (1, 2):
        t_row = result.metrics[2 * (epoch - 1)]
        h_row = result.metrics[2 * (epoch - 1) + 1]
        assert (t_row["epoch"], t_row["split"]) == (epoch, "train")
        assert (h_row["epoch"], h_row["split"]) == (epoch, "holdout")
        # selection ROUGE is only computed on the holdout pass
        assert t_row["rouge1_recall"] == ""
        assert isinstance(h_row["rouge1_recall"], float)
        assert np.isfinite(t_row["loss"]) and np.isfinite(h_row["loss"])
        assert t_row["lr"] == h_row["lr"] > 0


def test_non_finite_loss_raises_with_location():
    data = _dataset(4)
    model = Model(_tiny_cfg())
    model.parameters()["segment_table"].data[0, 0] = float("nan")
    with pytest.raises(TrainingError, match=r"non-finite loss .* epoch 1, update 1, doc "):
        train(model, data, TrainConfig(epochs=1, holdout_ratio=0.0, seed=0))


def test_reinforced_mode_trains_without_non_finite_losses():
    data = _dataset(6)
    model = Model(_tiny_cfg())
    tcfg = TrainConfig(
        lr_scale=0.5, warmup_steps=5, accumulation_steps=4, epochs=2,
        holdout_ratio=0.0, reinforced=True, candidates_k=3, seed=2,
    )
    result = train(model, data, tcfg)
    assert result.updates == result.full_batch_updates + result.flush_updates
    assert all(np.isfinite(row["loss"]) for row in result.metrics)


def test_train_rejects_empty_and_all_holdout_datasets():
    with pytest.raises(ValueError, match="empty"):
        train(Model(_tiny_cfg()), [], TrainConfig())
    data = _dataset(3)
    with pytest.raises(ValueError, match="no training documents"):
        train(Model(_tiny_cfg()), data, TrainConfig(holdout_ratio=1.0))


def test_evaluate_split_leaves_gradients_untouched():
    data = _dataset(3)
    model = Model(_tiny_cfg())
    stats = evaluate_split(model, data, TrainConfig(budget_ratio=0.5))
    assert set(stats) == {"loss", "rouge1_recall", "rouge2_recall", "rougeL_recall"}
    assert stats["loss"] > 0
    for key in ("rouge1_recall", "rouge2_recall", "rougeL_recall"):
        assert 0.0 <= stats[key] <= 1.0
    assert all(t.grad is None for t in model.parameters().values())


def test_train_config_mirrors_run_config_fields():
    cfg = _tiny_cfg()
    tcfg = TrainConfig.from_run_config(cfg)
    assert tcfg.lr_scale == cfg.lr_scale
    assert tcfg.accumulation_steps == cfg.accumulation_steps
    assert tcfg.trigram_threshold == cfg.trigram_threshold
    assert tcfg.seed == cfg.seed


# ---------------------------------------------------------------------------
# metrics file
# ---------------------------------------------------------------------------


def test_write_metrics_csv_format(tmp_path):
    rows = [
        {"epoch": 1, "split": "train", "loss": 0.123456789,
         "rouge1_recall": "", "rouge2_recall": "", "rougeL_recall": "", "lr": 0.5},
        {"epoch": 1, "split": "holdout", "loss": 2.0,
         "rouge1_recall": 0.25, "rouge2_recall": 0.125, "rougeL_recall": 1.0, "lr": 0.5},
    ]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(rows, path, config_hash="cafe01")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=cafe01"
    assert lines[1] == "epoch,split,loss,rouge1_recall,rouge2_recall,rougeL_recall,lr"
    assert lines[2] == "1,train,0.123457,,,,0.5"
    assert lines[3] == "1,holdout,2,0.25,0.125,1,0.5"
