"""Reference text encoder and the external embedding endpoint client."""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from ecgalign.textenc import (EmbeddingEndpointConfig, EndpointError, TextConfig,
                              TextVocab, embed_batch_external, embed_text,
                              init_text_params, tokenize_text)
from ecgalign.utils import seed_rng

CFG = TextConfig(embed_dim=16, num_heads=2)
SHARED = 16


def make_params(vocab, dtype=np.float64):
    return init_text_params(CFG, len(vocab), SHARED, seed_rng(4, "txt"), dtype=dtype)


def test_tokenizer_lowercases_and_splits_punctuation():
    assert tokenize_text("Sinus Bradycardia, rate=44!") == \
        ["sinus", "bradycardia", "rate", "44"]


def test_vocab_unknown_token():
    vocab = TextVocab.build(["alpha beta"])
    assert vocab.encode("alpha gamma").tolist() == [vocab.token_to_id["alpha"], 0]
    assert vocab.encode("").tolist() == [0]


def test_embed_text_deterministic_and_normalized():
    vocab = TextVocab.build(["sinus rhythm with artifact", "atrial flutter"])
    params = make_params(vocab)
    a = embed_text("sinus rhythm", vocab, CFG, params)
    b = embed_text("sinus rhythm", vocab, CFG, params)
    np.testing.assert_array_equal(a.data, b.data)
    assert abs(np.linalg.norm(a.data) - 1.0) < 1e-6


def test_disjoint_strings_do_not_collapse_at_init():
    vocab = TextVocab.build(["alpha beta gamma", "delta epsilon zeta"])
    params = make_params(vocab)
    a = embed_text("alpha beta gamma", vocab, CFG, params)
    b = embed_text("delta epsilon zeta", vocab, CFG, params)
    assert float(a.data @ b.data) < 1.0 - 1e-6


def test_embed_text_gradcheck_through_encoder():
    from ecgalign.autodiff import Tensor, sum_all
    from ecgalign.gradcheck import check_gradients
    vocab = TextVocab.build(["one two three four"])
    params = make_params(vocab)
    cst = Tensor(np.random.default_rng(8).standard_normal(SHARED))

    def closure():
        return sum_all(embed_text("one two four", vocab, CFG, params) * cst)

    assert check_gradients(closure, params, eps=1e-5, max_coords_per_param=4) < 1e-6


class _EmbedHandler(BaseHTTPRequestHandler):
    fail_next = 0
    dim = SHARED
    calls = 0

    def do_POST(self):
        cls = type(self)
        cls.calls += 1
        if cls.fail_next > 0:
            cls.fail_next -= 1
            self.send_response(500)
            self.end_headers()
            return
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        texts = body["texts"]
        vecs = [(np.arange(1.0, cls.dim + 1.0) + len(t)).tolist() for t in texts]
        payload = json.dumps({"embeddings": vecs}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def embed_server():
    server = HTTPServer(("127.0.0.1", 0), _EmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _EmbedHandler.fail_next = 0
    _EmbedHandler.dim = SHARED
    _EmbedHandler.calls = 0
    yield f"http://127.0.0.1:{server.server_port}/embed"
    server.shutdown()


def test_external_embeddings_normalized(embed_server):
    cfg = EmbeddingEndpointConfig(url=embed_server, backoff_s=0.01)
    out = embed_batch_external(["short", "a much longer report text"], cfg, SHARED)
    assert len(out) == 2
    for emb in out:
        assert abs(np.linalg.norm(emb.vector) - 1.0) < 1e-6
        assert len(emb.source_hash) == 64
    assert out[0].source_hash != out[1].source_hash


def test_external_retries_then_succeeds(embed_server):
    _EmbedHandler.fail_next = 2
    cfg = EmbeddingEndpointConfig(url=embed_server, max_retries=3, backoff_s=0.01)
    out = embed_batch_external(["text"], cfg, SHARED)
    assert len(out) == 1
    assert _EmbedHandler.calls == 3


def test_external_hard_error_after_retries(embed_server):
    _EmbedHandler.fail_next = 10
    cfg = EmbeddingEndpointConfig(url=embed_server, max_retries=2, backoff_s=0.01)
    with pytest.raises(EndpointError, match="failed after 3 attempts"):
        embed_batch_external(["text"], cfg, SHARED)


def test_external_dimension_mismatch_without_projection(embed_server):
    _EmbedHandler.dim = SHARED + 8
    cfg = EmbeddingEndpointConfig(url=embed_server, backoff_s=0.01)
    with pytest.raises(EndpointError, match="no projection"):
        embed_batch_external(["text"], cfg, SHARED)


def test_external_dimension_mismatch_with_projection(embed_server):
    _EmbedHandler.dim = SHARED + 8
    cfg = EmbeddingEndpointConfig(url=embed_server, backoff_s=0.01,
                                  projection_seed=7)
    out = embed_batch_external(["text", "more"], cfg, SHARED)
    assert all(emb.vector.shape == (SHARED,) for emb in out)
    assert all(abs(np.linalg.norm(emb.vector) - 1.0) < 1e-6 for emb in out)


def test_external_chunking_preserves_order(embed_server):
    cfg = EmbeddingEndpointConfig(url=embed_server, chunk_size=2, backoff_s=0.01,
                                  max_in_flight=2)
    texts = [f"text number {i}" for i in range(7)]
    out = embed_batch_external(texts, cfg, SHARED)
    solo = [embed_batch_external([t], cfg, SHARED)[0] for t in texts]
    for a, b in zip(out, solo):
        np.testing.assert_allclose(a.vector, b.vector, atol=1e-6)
        assert a.source_hash == b.source_hash
