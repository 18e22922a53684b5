import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci", derandomize=True, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

from ecgalign.mining import RuleBasedClient, mine_corpus
from ecgalign.model import ModelConfig, init_model
from ecgalign.synthetic import generate_synthetic
from ecgalign.textenc import TextVocab


@pytest.fixture(scope="session")
def synth_small(tmp_path_factory):
    """24-record, 3-class corpus with mined vocabulary and labels."""
    root = tmp_path_factory.mktemp("synth_small")
    dataset = generate_synthetic(24, 3, 11, root,
                                 valid_fraction=0.25, test_fraction=0.25)
    vocab, labels = mine_corpus(dataset.manifest,
                                RuleBasedClient(dataset.rule_tables),
                                root / "mining")
    return dataset, vocab, labels


@pytest.fixture()
def tiny_model():
    """Small float64 model for exact numeric tests (M=50 to match synth data)."""
    from dataclasses import replace
    cfg = ModelConfig(num_segments=50, shared_dim=16)
    cfg = replace(cfg,
                  encoder=replace(cfg.encoder, embed_dim=16, num_layers=2,
                                  num_heads=2),
                  text=replace(cfg.text, embed_dim=16, num_heads=2),
                  cq=replace(cfg.cq, num_layers=2, num_heads=2))
    vocab = TextVocab.build(["synthetic rhythm pattern baseline case",
                             "findings consistent with strain"])
    return init_model(cfg.validate(), vocab, seed=3, dtype=np.float64)
