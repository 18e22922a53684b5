"""Full trainable state: encoder + text tower + query network in one bundle."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import TokenizerConfig, init_encoder_params
from .query import CQConfig, init_cq_params
from .textenc import TextConfig, TextVocab, init_text_params
from .utils import seed_rng


@dataclass(frozen=True)
class ModelConfig:
    encoder: TokenizerConfig = field(default_factory=TokenizerConfig)
    text: TextConfig = field(default_factory=TextConfig)
    cq: CQConfig = field(default_factory=CQConfig)
    shared_dim: int = 64
    num_segments: int = 50

    def validate(self) -> "ModelConfig":
        self.encoder.validate()
        self.text.validate()
        self.cq.validate()
        if self.shared_dim % self.cq.num_heads != 0:
            raise ValueError("shared_dim must be divisible by cq.num_heads")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(encoder=TokenizerConfig(**doc["encoder"]),
                   text=TextConfig(**doc["text"]),
                   cq=CQConfig(**doc["cq"]),
                   shared_dim=int(doc["shared_dim"]),
                   num_segments=int(doc["num_segments"]))


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, Tensor]
    text_vocab: TextVocab

    def save(self, path, config_hash: str = "") -> None:
        save_checkpoint(path, self.params, config_hash=config_hash,
                        extra={"model_config": self.config.to_dict(),
                               "text_vocab": self.text_vocab.token_to_id})

    @classmethod
    def load(cls, path) -> "ModelState":
        arrays, header = load_checkpoint(path)
        extra = header.get("extra", {})
        config = ModelConfig.from_dict(extra["model_config"]).validate()
        vocab = TextVocab({k: int(v) for k, v in extra["text_vocab"].items()})
        params = {name: Tensor(arr, requires_grad=True)
                  for name, arr in arrays.items()}
        return cls(config=config, params=params, text_vocab=vocab)


def init_model(config: ModelConfig, text_vocab: TextVocab, seed: int,
               dtype=np.float32) -> ModelState:
    """Initialize all towers from one seeded stream, in a fixed order."""
    config.validate()
    rng = seed_rng(seed, "init")
    params: dict[str, Tensor] = {}
    init_encoder_params(config.encoder, config.num_segments, config.shared_dim,
                        rng, dtype, params=params)
    init_text_params(config.text, len(text_vocab), config.shared_dim, rng,
                     dtype, params=params)
    init_cq_params(config.cq, config.shared_dim, config.encoder.embed_dim, rng,
                   dtype, params=params)
    return ModelState(config=config, params=params, text_vocab=text_vocab)


def encoder_param_names(params: dict[str, Tensor]) -> list[str]:
    return [k for k in params if k.startswith("enc.")]
