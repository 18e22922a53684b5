"""Command-line entry point wiring data, mining, training, and evaluation.

Commands compose over one run directory:

    ecgalign synth    --out runs/r0               # data/ manifest + payload
    ecgalign mine     --out runs/r0 --client rule # mining/ vocab + labels
    ecgalign pretrain --out runs/r0               # pretrain/ metrics + ckpts
    ecgalign zeroshot --out runs/r0               # eval/zeroshot.json
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kernels
from .config import RunConfig, config_hash, load_config, save_config
from .data import load_manifest
from .evaluation import (lead_sweep, linear_probe, save_sweep_csv, zero_shot)
from .gradcheck import check_gradients
from .llm import ChatCompletionClient, LLMClientConfig
from .mining import EntityVocabulary, RuleBasedClient, RuleTables, load_labels, mine_corpus
from .model import ModelConfig, ModelState
from .synthetic import generate_synthetic
from .training import plan_masks, pretrain, total_loss
from .utils import code_digest, seed_rng, write_json


def _run_paths(cfg: RunConfig) -> dict[str, Path]:
    out = Path(cfg.out_dir)
    return {
        "out": out,
        "data": out / "data",
        "manifest": Path(cfg.data.manifest) if cfg.data.manifest
        else out / "data" / "manifest.json",
        "rules": Path(cfg.mining.rules_path) if cfg.mining.rules_path
        else out / "data" / "rules.json",
        "mining": out / "mining",
        "vocab": Path(cfg.mining.vocab_path) if cfg.mining.vocab_path
        else out / "mining" / "vocab.json",
        "labels": Path(cfg.mining.labels_path) if cfg.mining.labels_path
        else out / "mining" / "labels.jsonl",
        "pretrain": out / "pretrain",
        "checkpoint": Path(cfg.evaluation.checkpoint) if cfg.evaluation.checkpoint
        else out / "pretrain" / "checkpoint_final.ckpt",
        "eval": out / "eval",
    }


def _persist_run_metadata(cfg: RunConfig) -> str:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    chash = config_hash(cfg)
    write_json(out / "run_info.json", {
        "config_hash": chash,
        "code_hash": code_digest(Path(__file__).parent),
        "seed": cfg.seed,
        "kernel_backend": kernels.BACKEND,
    })
    return chash


def _model_config(cfg: RunConfig, signal_length: int) -> ModelConfig:
    segments = cfg.encoder.num_segments(signal_length)
    return ModelConfig(encoder=cfg.encoder, text=cfg.text, cq=cfg.cq,
                       shared_dim=cfg.shared_dim, num_segments=segments).validate()


def _mining_client(cfg: RunConfig, paths: dict[str, Path]):
    if cfg.mining.client == "rule":
        return RuleBasedClient(RuleTables.load(paths["rules"]))
    if cfg.mining.client == "llm":
        return ChatCompletionClient(LLMClientConfig(
            endpoint_url=cfg.mining.endpoint_url,
            model=cfg.mining.model,
            temperature=cfg.mining.temperature,
            max_retries=cfg.mining.max_retries,
            cache_dir=cfg.mining.cache_dir or None,
            auth_token_env=cfg.mining.auth_token_env or None,
        ))
    raise ValueError(f"unknown mining client: {cfg.mining.client!r}")


def cmd_synth(cfg: RunConfig) -> int:
    _persist_run_metadata(cfg)
    paths = _run_paths(cfg)
    dataset = generate_synthetic(cfg.data.num_records, cfg.data.num_classes,
                                 cfg.seed, paths["data"],
                                 valid_fraction=cfg.data.valid_fraction,
                                 test_fraction=cfg.data.test_fraction)
    print(f"synth: wrote {len(dataset.manifest.entries)} records to {paths['data']}")
    return 0


def cmd_mine(cfg: RunConfig) -> int:
    _persist_run_metadata(cfg)
    paths = _run_paths(cfg)
    manifest = load_manifest(paths["manifest"])
    client = _mining_client(cfg, paths)
    vocab, labels = mine_corpus(manifest, client, paths["mining"])
    print(f"mine: {len(vocab)} entities, {len(labels)} labeled records "
          f"-> {paths['mining']}")
    return 0


def cmd_pretrain(cfg: RunConfig) -> int:
    chash = _persist_run_metadata(cfg)
    paths = _run_paths(cfg)
    manifest = load_manifest(paths["manifest"])
    vocab = EntityVocabulary.load(paths["vocab"])
    labels = load_labels(paths["labels"], len(vocab))
    model_cfg = _model_config(cfg, manifest.entries[0].length)
    started = time.monotonic()
    summary = pretrain(manifest, vocab, labels, model_cfg, cfg.pretrain,
                       paths["pretrain"], config_hash=chash)
    write_json(paths["pretrain"] / "timing.json",
               {"elapsed_s": round(time.monotonic() - started, 3)})
    print(f"pretrain: {summary['steps']} steps, "
          f"best validation loss {summary['best_validation_loss']}")
    return 0


def cmd_zeroshot(cfg: RunConfig, leads: int = 0) -> int:
    chash = _persist_run_metadata(cfg)
    paths = _run_paths(cfg)
    manifest = load_manifest(paths["manifest"])
    model = ModelState.load(paths["checkpoint"])
    k = leads or cfg.evaluation.leads
    subset = list(range(1, k + 1)) if k else None
    report = zero_shot(manifest, model, split=cfg.evaluation.split,
                       lead_subset=subset, zero_pad=cfg.evaluation.zero_pad,
                       config_hash=chash)
    paths["eval"].mkdir(parents=True, exist_ok=True)
    report.save(paths["eval"] / "zeroshot.json")
    report.save_csv(paths["eval"] / "zeroshot_per_class.csv")
    print(f"zeroshot: macro AUC {report.macro_auc}, macro F1 {report.macro_f1}")
    return 0


def cmd_linprobe(cfg: RunConfig, fraction: float | None = None) -> int:
    chash = _persist_run_metadata(cfg)
    paths = _run_paths(cfg)
    manifest = load_manifest(paths["manifest"])
    model = ModelState.load(paths["checkpoint"])
    frac = fraction if fraction is not None else cfg.evaluation.fraction
    k = cfg.evaluation.leads
    subset = list(range(1, k + 1)) if k else None
    report = linear_probe(manifest, model, fraction=frac, probe=cfg.probe,
                          lead_subset=subset, zero_pad=cfg.evaluation.zero_pad,
                          config_hash=chash)
    paths["eval"].mkdir(parents=True, exist_ok=True)
    report.save(paths["eval"] / f"linprobe_{frac:g}.json")
    print(f"linprobe({frac:g}): macro AUC {report.macro_auc}")
    return 0


def cmd_leadsweep(cfg: RunConfig, mode: str, zero_pad: bool) -> int:
    chash = _persist_run_metadata(cfg)
    paths = _run_paths(cfg)
    manifest = load_manifest(paths["manifest"])
    model = ModelState.load(paths["checkpoint"])
    reports = lead_sweep(manifest, model, mode=mode,
                         zero_pad=zero_pad or cfg.evaluation.zero_pad,
                         fraction=cfg.evaluation.fraction, probe=cfg.probe,
                         config_hash=chash)
    sweep_dir = paths["eval"] / "leadsweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    for k, rep in enumerate(reports, start=1):
        rep.save(sweep_dir / f"report_k{k:02d}.json")
    save_sweep_csv(reports, sweep_dir / "sweep.csv")
    aucs = ", ".join("-" if r.macro_auc is None else f"{r.macro_auc:.3f}"
                     for r in reports)
    print(f"leadsweep({mode}): macro AUC by k: {aucs}")
    return 0


def cmd_gradcheck(cfg: RunConfig, threshold: float = 1e-4,
                  coords_per_param: int = 6) -> int:
    """Verify the full combined loss against central differences, in float64."""
    from .model import init_model
    from .textenc import TextVocab
    from .mining import label_report
    import tempfile

    _persist_run_metadata(cfg)
    with tempfile.TemporaryDirectory() as tmp:
        dataset = generate_synthetic(2, 2, cfg.seed, tmp,
                                     valid_fraction=0.0, test_fraction=0.0)
        manifest = dataset.manifest
        records = [manifest.load_record(e) for e in manifest.entries]
    from .data import normalize_record
    records = [normalize_record(r) for r in records]
    vocab = dataset.vocab_truth
    tables = dataset.rule_tables
    client = RuleBasedClient(tables)
    from .mining import extract_entities
    bits = [label_report(extract_entities(r.report, client), vocab)
            for r in records]

    toy = ModelConfig(
        encoder=replace(cfg.encoder, token_length=500, embed_dim=8,
                        num_layers=1, num_heads=2),
        text=replace(cfg.text, embed_dim=8, num_heads=2),
        cq=replace(cfg.cq, num_layers=1, num_heads=2),
        shared_dim=8,
        num_segments=10,
    ).validate()
    corpus = [r.report for r in records] + list(vocab.entities)
    model = init_model(toy, TextVocab.build(corpus), cfg.seed, dtype=np.float64)

    pconf = replace(cfg.pretrain, batch_size=2)
    plan = plan_masks(records, toy.num_segments, pconf,
                      seed_rng(cfg.seed, "gradcheck-mask"))

    def closure():
        loss, _ = total_loss(records, bits, model, list(vocab.entities),
                             pconf, plan)
        return loss

    started = time.monotonic()
    # eps 1e-6: the temperature-scaled contrastive term has large third
    # derivatives, and a 1e-5 step leaves visible truncation error
    err = check_gradients(closure, model.params, eps=1e-6,
                          max_coords_per_param=coords_per_param, seed=cfg.seed)
    elapsed = time.monotonic() - started
    print(f"gradcheck: max relative error {err:.3e} "
          f"(threshold {threshold:.0e}, {elapsed:.1f}s)")
    return 0 if err < threshold else 1


def cmd_ablate(cfg: RunConfig, grid_specs: list[str]) -> int:
    """Expand a config grid into sequential pretrain+zeroshot runs."""
    _persist_run_metadata(cfg)
    axes: list[tuple[str, list[str]]] = []
    for spec in grid_specs:
        if "=" not in spec:
            raise ValueError(f"grid spec must be key=v1,v2,...: {spec!r}")
        key, values = spec.split("=", 1)
        axes.append((key.strip(), values.split(",")))
    base_out = Path(cfg.out_dir)
    rows = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        overrides = [f"{key}={val}" for (key, _), val in zip(axes, combo)]
        slug = "_".join(f"{key.split('.')[-1]}-{val}"
                        for (key, _), val in zip(axes, combo))
        sub_cfg = load_config(None, overrides=[
            *(f"{k}={json.dumps(v)}" for k, v in _flatten(cfg.to_dict())),
            *overrides,
        ], out_dir=str(base_out / "ablate" / slug))
        sub_cfg = replace(sub_cfg, data=replace(
            sub_cfg.data, manifest=str(_run_paths(cfg)["manifest"])))
        sub_cfg = replace(sub_cfg, mining=replace(
            sub_cfg.mining,
            vocab_path=str(_run_paths(cfg)["vocab"]),
            labels_path=str(_run_paths(cfg)["labels"]),
            rules_path=str(_run_paths(cfg)["rules"])))
        cmd_pretrain(sub_cfg)
        cmd_zeroshot(sub_cfg)
        report = json.loads((_run_paths(sub_cfg)["eval"] / "zeroshot.json").read_text())
        rows.append({"run": slug, **dict(zip((k for k, _ in axes), combo)),
                     "macro_auc": report["macro_auc"]})
    write_json(base_out / "ablate" / "summary.json", rows)
    print(f"ablate: {len(rows)} runs -> {base_out / 'ablate'}")
    return 0


def _flatten(doc: dict, prefix: str = "") -> list[tuple[str, object]]:
    out: list[tuple[str, object]] = []
    for key, value in doc.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            out.extend(_flatten(value, prefix=f"{dotted}."))
        else:
            out.append((dotted, value))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecgalign")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="run config JSON")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="K=V", help="dotted config override (repeatable)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="run directory")

    common(sub.add_parser("synth", help="generate a synthetic dataset"))
    mine = sub.add_parser("mine", help="mine entities from reports")
    common(mine)
    mine.add_argument("--client", choices=("llm", "rule"), default=None)
    common(sub.add_parser("pretrain", help="run pretraining"))
    zs = sub.add_parser("zeroshot", help="zero-shot classification")
    common(zs)
    zs.add_argument("--leads", type=int, default=0,
                    help="restrict to the first k canonical leads")
    lp = sub.add_parser("linprobe", help="linear probing")
    common(lp)
    lp.add_argument("--fraction", type=float, default=None)
    ls = sub.add_parser("leadsweep", help="evaluate lead prefixes k=1..12")
    common(ls)
    ls.add_argument("--mode", choices=("zero_shot", "probe"), default="zero_shot")
    ls.add_argument("--zero-pad", action="store_true",
                    help="zero-pad absent leads instead of dropping them")
    gc = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    common(gc)
    gc.add_argument("--threshold", type=float, default=1e-4)
    gc.add_argument("--coords", type=int, default=6,
                    help="sampled coordinates per parameter")
    ab = sub.add_parser("ablate", help="grid of pretrain+zeroshot runs")
    common(ab)
    ab.add_argument("--grid", action="append", default=[], metavar="K=V1,V2",
                    help="config axis to sweep (repeatable)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.overrides,
                          seed=args.seed, out_dir=args.out)
        if args.command == "mine" and args.client:
            cfg = replace(cfg, mining=replace(cfg.mining, client=args.client))
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "mine":
            return cmd_mine(cfg)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "zeroshot":
            return cmd_zeroshot(cfg, leads=args.leads)
        if args.command == "linprobe":
            return cmd_linprobe(cfg, fraction=args.fraction)
        if args.command == "leadsweep":
            return cmd_leadsweep(cfg, mode=args.mode, zero_pad=args.zero_pad)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, threshold=args.threshold,
                                 coords_per_param=args.coords)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.grid)
        raise ValueError(f"unknown command {args.command!r}")
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
