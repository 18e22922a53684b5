"""Objective values, mask planning, ablation flags, and the loop contract."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from ecgalign.autodiff import Tensor, backward
from ecgalign.data import normalize_record
from ecgalign.model import ModelConfig, init_model
from ecgalign.optim import cosine_schedule
from ecgalign.textenc import TextVocab
from ecgalign.training import (PretrainConfig, contrastive_loss, plan_masks,
                               pretrain, total_loss)
from ecgalign.utils import seed_rng


def _unit_rows(shape, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal(shape)
    return m / np.linalg.norm(m, axis=-1, keepdims=True)


def test_contrastive_equal_similarities_is_ln_l():
    for batch in (2, 4):
        v = np.zeros((batch, 8))
        v[:, 0] = 1.0  # identical rows -> all similarities equal 1
        loss = contrastive_loss(Tensor(v), Tensor(v.copy()), temperature=0.07)
        assert float(loss.data) == pytest.approx(math.log(batch), rel=1e-9)


def test_contrastive_two_term_closed_form():
    # s_ii = 1, s_ij = -1, eta = 0.07: loss = ln(1 + exp(-2/0.07)) ~ 4e-13
    e = np.array([[1.0, 0.0], [-1.0, 0.0]])
    t = np.array([[1.0, 0.0], [-1.0, 0.0]])
    loss = contrastive_loss(Tensor(e), Tensor(t), temperature=0.07)
    expected = math.log1p(math.exp(-2.0 / 0.07))
    assert float(loss.data) == pytest.approx(expected, abs=1e-15)
    assert float(loss.data) < 1e-6


def test_contrastive_permutation_invariance():
    e = _unit_rows((5, 8), 1)
    t = _unit_rows((5, 8), 2)
    base = float(contrastive_loss(Tensor(e), Tensor(t), 0.07).data)
    perm = np.random.default_rng(3).permutation(5)
    permuted = float(contrastive_loss(Tensor(e[perm]), Tensor(t[perm]), 0.07).data)
    assert permuted == pytest.approx(base, rel=1e-12)


def test_contrastive_requires_two_rows():
    v = _unit_rows((1, 4), 0)
    with pytest.raises(ValueError):
        contrastive_loss(Tensor(v), Tensor(v), 0.07)


def test_contrastive_nonnegative_random():
    for seed in range(5):
        e = _unit_rows((6, 16), seed)
        t = _unit_rows((6, 16), seed + 100)
        assert float(contrastive_loss(Tensor(e), Tensor(t), 0.07).data) >= 0.0


def test_contrastive_gradcheck():
    from ecgalign.autodiff import l2_normalize
    from ecgalign.gradcheck import check_gradients
    rng = np.random.default_rng(5)
    e = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    t = Tensor(rng.standard_normal((3, 6)), requires_grad=True)

    def closure():
        return contrastive_loss(l2_normalize(e), l2_normalize(t), 0.2,
                                symmetric=True)

    assert check_gradients(closure, {"e": e, "t": t}, eps=1e-6) < 1e-6


@pytest.fixture(scope="module")
def toy_batch(synth_small_module):
    dataset, vocab, labels = synth_small_module
    manifest = dataset.manifest
    entries = manifest.split_entries("train")[:4]
    records = [normalize_record(manifest.load_record(e)) for e in entries]
    bits = [labels[e.record_id] for e in entries]
    cfg = ModelConfig(num_segments=50, shared_dim=16)
    cfg = replace(cfg,
                  encoder=replace(cfg.encoder, embed_dim=16, num_layers=1,
                                  num_heads=2),
                  text=replace(cfg.text, embed_dim=16, num_heads=2),
                  cq=replace(cfg.cq, num_layers=1, num_heads=2))
    corpus = [r.report for r in records] + list(vocab.entities)
    model = init_model(cfg.validate(), TextVocab.build(corpus), seed=2,
                       dtype=np.float64)
    return records, bits, model, vocab


@pytest.fixture(scope="module")
def synth_small_module(tmp_path_factory):
    from ecgalign.mining import RuleBasedClient, mine_corpus
    from ecgalign.synthetic import generate_synthetic
    root = tmp_path_factory.mktemp("train_synth")
    dataset = generate_synthetic(16, 2, 21, root, valid_fraction=0.25,
                                 test_fraction=0.25)
    vocab, labels = mine_corpus(dataset.manifest,
                                RuleBasedClient(dataset.rule_tables),
                                root / "mining")
    return dataset, vocab, labels


def test_plan_masks_counts(toy_batch):
    records, _, model, _ = toy_batch
    pconf = PretrainConfig()
    plan = plan_masks(records, 50, pconf, seed_rng(1, "m"))
    for keep, seg in zip(plan.keep_leads, plan.masked_segments):
        assert 1 <= len(keep) <= 3
        assert len(seg) == len(keep)
        for idx in seg:
            assert len(idx) == 12  # floor(0.25 * 50)
            assert len(set(idx.tolist())) == 12


def test_total_loss_components_and_ablations(toy_batch):
    records, bits, model, vocab = toy_batch
    pconf = PretrainConfig(batch_size=4, use_dlm=False, use_lsm=False)
    plan = plan_masks(records, 50, pconf, None)
    loss, parts = total_loss(records, bits, model, list(vocab.entities),
                             pconf, plan)
    assert parts["loss_total"] == pytest.approx(
        parts["loss_contrast"] + parts["loss_cq"], rel=1e-6)
    no_cq = replace(pconf, use_cq=False)
    loss2, parts2 = total_loss(records, None, model, [], no_cq, plan)
    assert parts2["loss_cq"] == 0.0
    assert parts2["loss_total"] == pytest.approx(parts["loss_contrast"], rel=1e-6)
    no_contrast = replace(pconf, use_contrastive=False)
    loss3, parts3 = total_loss(records, bits, model, list(vocab.entities),
                               no_contrast, plan)
    assert parts3["loss_contrast"] == 0.0
    assert parts3["loss_total"] == pytest.approx(parts["loss_cq"], rel=1e-6)
    with pytest.raises(ValueError):
        PretrainConfig(use_cq=False, use_contrastive=False).validate()


def test_total_loss_gradcheck_on_toy_batch(toy_batch):
    """Full combined objective vs central differences, masks fixed by seed."""
    from ecgalign.gradcheck import check_gradients
    records, bits, model, vocab = toy_batch
    records = records[:2]
    bits = bits[:2]
    pconf = PretrainConfig(batch_size=2)
    plan = plan_masks(records, 50, pconf, seed_rng(3, "gradcheck"))

    def closure():
        loss, _ = total_loss(records, bits, model, list(vocab.entities),
                             pconf, plan)
        return loss

    err = check_gradients(closure, model.params, eps=1e-6,
                          max_coords_per_param=3, seed=4)
    assert err < 1e-4


def test_dlm_toggles_lead_embedding_gradient_sparsity(toy_batch):
    records, bits, model, vocab = toy_batch
    for p in model.params.values():
        p.grad = None
    masked_cfg = PretrainConfig(batch_size=4, use_lsm=False)
    plan = plan_masks(records, 50, masked_cfg, seed_rng(9, "sparsity"))
    loss, _ = total_loss(records, bits, model, list(vocab.entities),
                         masked_cfg, plan)
    backward(loss)
    grad_rows = np.abs(model.params["enc.lead_emb"].grad).sum(axis=1)
    surviving = set()
    for keep in plan.keep_leads:
        surviving.update(keep)
    assert set(np.flatnonzero(grad_rows > 0) + 1) == surviving

    for p in model.params.values():
        p.grad = None
    full_cfg = PretrainConfig(batch_size=4, use_dlm=False, use_lsm=False)
    plan_full = plan_masks(records, 50, full_cfg, None)
    loss, _ = total_loss(records, bits, model, list(vocab.entities),
                         full_cfg, plan_full)
    backward(loss)
    grad_rows = np.abs(model.params["enc.lead_emb"].grad).sum(axis=1)
    assert (grad_rows > 0).all()


def test_pretrain_loop_writes_artifacts(tmp_path, synth_small_module):
    dataset, vocab, labels = synth_small_module
    cfg = ModelConfig(num_segments=50, shared_dim=16)
    cfg = replace(cfg,
                  encoder=replace(cfg.encoder, embed_dim=16, num_layers=1,
                                  num_heads=2),
                  text=replace(cfg.text, embed_dim=16, num_heads=2),
                  cq=replace(cfg.cq, num_layers=1, num_heads=2))
    pconf = PretrainConfig(total_steps=6, batch_size=4, eval_every=3, seed=5)
    summary = pretrain(dataset.manifest, vocab, labels, cfg, pconf, tmp_path,
                       config_hash="deadbeef")
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 6
    for i, line in enumerate(lines, start=1):
        doc = json.loads(line)
        assert doc["step"] == i
        assert set(doc) == {"step", "lr", "loss_total", "loss_contrast", "loss_cq"}
        assert math.isfinite(doc["loss_total"])
        assert doc["lr"] == pytest.approx(
            cosine_schedule(i, 6, pconf.learning_rate, pconf.warmup_steps))
    assert (tmp_path / "checkpoint_final.ckpt").exists()
    assert (tmp_path / "checkpoint_best.ckpt").exists()
    assert summary["best_validation_loss"] is not None


def test_pretrain_missing_labels_rejected(tmp_path, synth_small_module):
    dataset, vocab, labels = synth_small_module
    incomplete = dict(list(labels.items())[:-1])
    cfg = ModelConfig(num_segments=50, shared_dim=16)
    cfg = replace(cfg, encoder=replace(cfg.encoder, embed_dim=16, num_layers=1,
                                       num_heads=2),
                  text=replace(cfg.text, embed_dim=16, num_heads=2),
                  cq=replace(cfg.cq, num_layers=1, num_heads=2))
    with pytest.raises(ValueError, match="no entity labels"):
        pretrain(dataset.manifest, vocab, incomplete, cfg,
                 PretrainConfig(total_steps=2, batch_size=4), tmp_path)


def test_non_finite_loss_aborts_with_dump(tmp_path, synth_small_module, monkeypatch):
    dataset, vocab, labels = synth_small_module
    cfg = ModelConfig(num_segments=50, shared_dim=16)
    cfg = replace(cfg, encoder=replace(cfg.encoder, embed_dim=16, num_layers=1,
                                       num_heads=2),
                  text=replace(cfg.text, embed_dim=16, num_heads=2),
                  cq=replace(cfg.cq, num_layers=1, num_heads=2))

    import ecgalign.training as training_mod
    real_total_loss = training_mod.total_loss

    def poisoned(*args, **kwargs):
        loss, parts = real_total_loss(*args, **kwargs)
        parts["loss_total"] = float("nan")
        return loss, parts

    monkeypatch.setattr(training_mod, "total_loss", poisoned)
    with pytest.raises(RuntimeError, match="non-finite loss"):
        pretrain(dataset.manifest, vocab, labels, cfg,
                 PretrainConfig(total_steps=2, batch_size=4), tmp_path)
    assert (tmp_path / "diagnostic_dump.json").exists()
