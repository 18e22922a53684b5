"""Run configuration: one JSON document covering every stage of a run.

Configs are plain nested dataclasses; overrides use dotted paths
(``--set pretrain.mask_ratio=0.5``). The config hash used for provenance
blanks filesystem-path fields first, so two runs of identical settings in
different directories stamp identical hashes into their artifacts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .encoder import TokenizerConfig
from .evaluation import ProbeConfig
from .query import CQConfig
from .textenc import TextConfig
from .training import PretrainConfig
from .utils import canonical_json, sha256_text


@dataclass
class DataConfig:
    manifest: str = ""            # blank = <out_dir>/data/manifest.json
    num_records: int = 128
    num_classes: int = 4
    valid_fraction: float = 0.25
    test_fraction: float = 0.25


@dataclass
class MiningConfig:
    client: str = "rule"          # rule | llm
    rules_path: str = ""          # blank = <out_dir>/data/rules.json
    vocab_path: str = ""          # blank = <out_dir>/mining/vocab.json
    labels_path: str = ""         # blank = <out_dir>/mining/labels.jsonl
    endpoint_url: str = ""
    model: str = ""
    temperature: float = 0.0
    max_retries: int = 3
    cache_dir: str = ""
    auth_token_env: str = ""


@dataclass
class EvalConfig:
    split: str = "test"
    fraction: float = 1.0
    zero_pad: bool = False
    leads: int = 0                # 0 = all available; k = first-k prefix
    checkpoint: str = ""          # blank = <out_dir>/pretrain/checkpoint_final.ckpt


@dataclass
class RunConfig:
    seed: int = 7
    out_dir: str = "runs/run0"
    shared_dim: int = 64
    data: DataConfig = field(default_factory=DataConfig)
    encoder: TokenizerConfig = field(default_factory=TokenizerConfig)
    text: TextConfig = field(default_factory=TextConfig)
    cq: CQConfig = field(default_factory=CQConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_seed_propagated(self) -> "RunConfig":
        return replace(self,
                       pretrain=replace(self.pretrain, seed=self.seed),
                       probe=replace(self.probe, seed=self.seed))


_SECTION_TYPES = {
    "data": DataConfig,
    "encoder": TokenizerConfig,
    "text": TextConfig,
    "cq": CQConfig,
    "pretrain": PretrainConfig,
    "probe": ProbeConfig,
    "mining": MiningConfig,
    "evaluation": EvalConfig,
}

# path-valued fields excluded from the config hash
_PATH_FIELDS = (
    ("out_dir",),
    ("data", "manifest"),
    ("mining", "rules_path"), ("mining", "vocab_path"), ("mining", "labels_path"),
    ("mining", "cache_dir"),
    ("evaluation", "checkpoint"),
)


def config_from_dict(doc: dict) -> RunConfig:
    kwargs: dict = {}
    for key, value in doc.items():
        if key in _SECTION_TYPES:
            section_cls = _SECTION_TYPES[key]
            known = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(value) - known
            if bad:
                raise ValueError(f"unknown {key} config fields: {sorted(bad)}")
            kwargs[key] = section_cls(**value)
        elif key in ("seed", "out_dir", "shared_dim"):
            kwargs[key] = value
        else:
            raise ValueError(f"unknown config field: {key}")
    return RunConfig(**kwargs)


def load_config(path: str | Path | None, overrides: list[str] | None = None,
                seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    doc = json.loads(Path(path).read_text()) if path else {}
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override must be key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    cfg = config_from_dict(doc)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out_dir is not None:
        cfg = replace(cfg, out_dir=out_dir)
    return cfg.with_seed_propagated()


def config_hash(cfg: RunConfig) -> str:
    doc = cfg.to_dict()
    for path in _PATH_FIELDS:
        node = doc
        for part in path[:-1]:
            node = node[part]
        node[path[-1]] = ""
    return sha256_text(canonical_json(doc))


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
