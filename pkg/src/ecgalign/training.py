"""Pretraining objective and loop.

Each step: tokenize -> dynamic lead mask -> segment mask -> encode, then an
in-batch contrastive loss between pooled ECG and report embeddings plus a
binary cross-entropy loss on entity-query logits; the two terms are summed
unweighted. Either term can be ablated by flag.

The contrastive term is standard one-directional (ECG -> text) InfoNCE with a
single temperature and the positive included in the denominator; a symmetric
variant exists behind a flag but defaults off.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import (Tensor, backward, concat, gather, logsumexp, matmul,
                       mean_pool, reshape, scale, stack_rows, sub, transpose)
from .data import NUM_LEADS, DatasetManifest, ECGRecord, normalize_record
from .encoder import (TokenGrid, draw_lead_mask, draw_segment_mask,
                      mask_segments, tokenize, encode)
from .mining import EntityVocabulary
from .model import ModelConfig, ModelState, init_model
from .optim import AdamW, cosine_schedule
from .query import cq_loss, query_forward
from .textenc import TextVocab, embed_text
from .utils import seed_rng


@dataclass
class PretrainConfig:
    batch_size: int = 16
    total_steps: int = 300
    learning_rate: float = 2e-4
    weight_decay: float = 1e-5
    temperature: float = 0.07
    warmup_steps: int = 5
    mask_ratio: float = 0.25
    min_masked_leads: int = 9
    max_masked_leads: int = 11
    use_dlm: bool = True
    use_lsm: bool = True
    use_contrastive: bool = True
    use_cq: bool = True
    symmetric_contrastive: bool = False
    seed: int = 7
    eval_every: int = 50

    def validate(self) -> "PretrainConfig":
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("contrastive loss needs batch size >= 2")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not (self.use_contrastive or self.use_cq):
            raise ValueError("at least one loss component must be enabled")
        return self


def contrastive_loss(ecg_pooled: Tensor, text_pooled: Tensor,
                     temperature: float, symmetric: bool = False) -> Tensor:
    """In-batch InfoNCE with diagonal positives, averaged over rows."""
    if ecg_pooled.shape != text_pooled.shape or ecg_pooled.ndim != 2:
        raise ValueError("pooled embeddings must be [L, d] with matching shapes")
    batch = ecg_pooled.shape[0]
    if batch < 2:
        raise ValueError("contrastive loss needs at least 2 rows")
    diag_idx = np.arange(batch) * batch + np.arange(batch)

    def one_direction(a: Tensor, b: Tensor) -> Tensor:
        logits = scale(matmul(a, transpose(b, (1, 0))), 1.0 / temperature)
        lse = logsumexp(logits)
        diag = gather(reshape(logits, (batch * batch,)), diag_idx)
        return mean_pool(sub(lse, diag), axis=0)

    loss = one_direction(ecg_pooled, text_pooled)
    if symmetric:
        other = one_direction(text_pooled, ecg_pooled)
        loss = mean_pool(stack_pair(loss, other), axis=0)
    return loss


def stack_pair(a: Tensor, b: Tensor) -> Tensor:
    return concat([reshape(a, (1,)), reshape(b, (1,))], axis=0)


def mean_of_scalars(values: list[Tensor]) -> Tensor:
    return mean_pool(concat([reshape(v, (1,)) for v in values], axis=0), axis=0)


@dataclass
class MaskPlan:
    """Pre-drawn masking decisions, so a step (or gradcheck closure) is fixed."""

    keep_leads: list[list[int] | None] = field(default_factory=list)
    masked_segments: list[list[np.ndarray] | None] = field(default_factory=list)


def plan_masks(records: list[ECGRecord], num_segments: int,
               config: PretrainConfig, rng: np.random.Generator | None) -> MaskPlan:
    plan = MaskPlan()
    for rec in records:
        keep: list[int] | None = None
        seg: list[np.ndarray] | None = None
        if config.use_dlm:
            if len(rec.lead_ids) != NUM_LEADS:
                raise ValueError(f"{rec.record_id}: dynamic lead masking needs "
                                 "all 12 leads")
            masked_rows = set(draw_lead_mask(rng, config.min_masked_leads,
                                             config.max_masked_leads).tolist())
            keep = [l for i, l in enumerate(rec.lead_ids) if i not in masked_rows]
        if config.use_lsm and int(math.floor(config.mask_ratio * num_segments)) > 0:
            n_leads = len(keep) if keep is not None else len(rec.lead_ids)
            seg = draw_segment_mask(rng, n_leads, num_segments, config.mask_ratio)
        plan.keep_leads.append(keep)
        plan.masked_segments.append(seg)
    return plan


def _masked_grid(rec: ECGRecord, model: ModelState, keep_leads, masked_seg) -> TokenGrid:
    # restricting the record before tokenizing is bit-identical to tokenizing
    # then dropping rows (tokenization is per-lead) and skips dead work
    if keep_leads is not None:
        rec = rec.restricted_to(keep_leads)
    grid = tokenize(rec, model.config.encoder, model.params)
    if masked_seg is not None:
        grid = mask_segments(grid, masked_seg)
    return grid


def total_loss(records: list[ECGRecord], label_bits: list[np.ndarray] | None,
               model: ModelState, entities: list[str], config: PretrainConfig,
               plan: MaskPlan) -> tuple[Tensor, dict[str, float]]:
    """Combined objective for one batch; components reported for logging."""
    token_features: list[Tensor] = []
    pooled: list[Tensor] = []
    for rec, keep, seg in zip(records, plan.keep_leads, plan.masked_segments):
        grid = _masked_grid(rec, model, keep, seg)
        z, p = encode(grid, model.config.encoder, model.params)
        token_features.append(z)
        pooled.append(p)

    parts: list[Tensor] = []
    logged = {"loss_contrast": 0.0, "loss_cq": 0.0}
    if config.use_contrastive:
        text_pooled = stack_rows([
            embed_text(rec.report, model.text_vocab, model.config.text, model.params)
            for rec in records])
        ecg_pooled = stack_rows(pooled)
        lc = contrastive_loss(ecg_pooled, text_pooled, config.temperature,
                              config.symmetric_contrastive)
        parts.append(lc)
        logged["loss_contrast"] = float(lc.data)
    if config.use_cq:
        if label_bits is None:
            raise ValueError("entity labels required when the query loss is enabled")
        queries = stack_rows([
            embed_text(q, model.text_vocab, model.config.text, model.params)
            for q in entities])
        per_record = []
        for z, bits in zip(token_features, label_bits):
            logits = query_forward(queries, z, model.config.cq, model.params)
            per_record.append(cq_loss(logits, bits.astype(np.float64)))
        lq = mean_of_scalars(per_record)
        parts.append(lq)
        logged["loss_cq"] = float(lq.data)

    loss = parts[0]
    for extra in parts[1:]:
        loss = loss + extra
    logged["loss_total"] = float(loss.data)
    return loss, logged


def _validation_loss(records: list[ECGRecord], labels: dict[str, np.ndarray],
                     model: ModelState, entities: list[str],
                     config: PretrainConfig) -> float | None:
    if len(records) < 2:
        return None
    chunks: list[list[ECGRecord]] = []
    for i in range(0, len(records), config.batch_size):
        chunk = records[i:i + config.batch_size]
        if len(chunk) < 2 and chunks:
            chunks[-1].extend(chunk)
        else:
            chunks.append(chunk)
    eval_cfg = replace(config, use_dlm=False, use_lsm=False)
    total, count = 0.0, 0
    for chunk in chunks:
        bits = [labels[r.record_id] for r in chunk] if config.use_cq else None
        plan = plan_masks(chunk, model.config.num_segments, eval_cfg, None)
        loss, _ = total_loss(chunk, bits, model, entities, eval_cfg, plan)
        total += float(loss.data) * len(chunk)
        count += len(chunk)
    return total / count


def pretrain(manifest: DatasetManifest, vocab: EntityVocabulary,
             labels: dict[str, np.ndarray], model_config: ModelConfig,
             config: PretrainConfig, out_dir: str | Path,
             config_hash: str = "") -> dict:
    """Run the pretraining loop; write metrics and checkpoints into out_dir."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_entries = manifest.split_entries("train")
    valid_entries = manifest.split_entries("valid")
    if not train_entries:
        raise ValueError("manifest has no train records")
    for entry in train_entries + valid_entries:
        if config.use_cq and entry.record_id not in labels:
            raise ValueError(f"no entity labels for record {entry.record_id}")

    train_records = [normalize_record(manifest.load_record(e)) for e in train_entries]
    valid_records = [normalize_record(manifest.load_record(e)) for e in valid_entries]

    corpus = [r.report for r in train_records + valid_records] + list(vocab.entities)
    text_vocab = TextVocab.build(corpus)
    model = init_model(model_config, text_vocab, config.seed)
    first_m = model_config.encoder.num_segments(train_records[0].signal.shape[1])
    if first_m != model_config.num_segments:
        raise ValueError(f"model built for M={model_config.num_segments} but data "
                         f"has M={first_m}")

    entities = list(vocab.entities)
    opt = AdamW(model.params, lr=config.learning_rate,
                weight_decay=config.weight_decay)
    batch_rng = seed_rng(config.seed, "batches")
    mask_rng = seed_rng(config.seed, "mask")

    def batch_indices():
        while True:
            order = batch_rng.permutation(len(train_records))
            for i in range(0, len(order), config.batch_size):
                chunk = order[i:i + config.batch_size]
                if len(chunk) >= 2:
                    yield chunk

    metrics_path = out_dir / "metrics.jsonl"
    best_val = math.inf
    best_path = out_dir / "checkpoint_best.ckpt"
    final_path = out_dir / "checkpoint_final.ckpt"
    batches = batch_indices()
    with open(metrics_path, "w") as log:
        for step in range(1, config.total_steps + 1):
            idx = next(batches)
            records = [train_records[i] for i in idx]
            bits = [labels[r.record_id] for r in records] if config.use_cq else None
            plan = plan_masks(records, model_config.num_segments, config, mask_rng)
            loss, parts = total_loss(records, bits, model, entities, config, plan)
            if not math.isfinite(parts["loss_total"]):
                dump = {"step": step, "parts": parts,
                        "record_ids": [r.record_id for r in records]}
                (out_dir / "diagnostic_dump.json").write_text(json.dumps(dump, indent=1))
                raise RuntimeError(f"non-finite loss at step {step}: {parts}")
            backward(loss)
            lr = cosine_schedule(step, config.total_steps, config.learning_rate,
                                 config.warmup_steps)
            opt.step(lr)
            opt.zero_grad()
            log.write(json.dumps({"step": step, "lr": lr,
                                  "loss_total": parts["loss_total"],
                                  "loss_contrast": parts["loss_contrast"],
                                  "loss_cq": parts["loss_cq"]},
                                 sort_keys=True) + "\n")
            if step % config.eval_every == 0 or step == config.total_steps:
                val = _validation_loss(valid_records, labels, model, entities, config)
                if val is not None and val < best_val:
                    best_val = val
                    model.save(best_path, config_hash=config_hash)

    model.save(final_path, config_hash=config_hash)
    if not best_path.exists():
        model.save(best_path, config_hash=config_hash)
    summary = {
        "steps": config.total_steps,
        "best_validation_loss": None if math.isinf(best_val) else best_val,
        "metrics_path": str(metrics_path),
        "checkpoint_best": str(best_path),
        "checkpoint_final": str(final_path),
    }
    return summary
