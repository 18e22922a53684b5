"""Checkpoint round-trip and byte-determinism."""

import numpy as np
import pytest

from ecgalign.autodiff import Tensor
from ecgalign.checkpoint import load_checkpoint, params_digest, save_checkpoint


def _params():
    rng = np.random.default_rng(5)
    return {
        "enc.w": Tensor(rng.standard_normal((3, 4)).astype(np.float32)),
        "txt.b": Tensor(rng.standard_normal(7).astype(np.float32)),
        "cq.head": Tensor(rng.standard_normal((4, 1)).astype(np.float32)),
    }


def test_roundtrip(tmp_path):
    params = _params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, config_hash="abc123",
                    extra={"model_config": {"d": 4}})
    arrays, header = load_checkpoint(path)
    assert header["config_hash"] == "abc123"
    assert header["extra"]["model_config"] == {"d": 4}
    assert set(arrays) == set(params)
    for name, tensor in params.items():
        np.testing.assert_array_equal(arrays[name], tensor.data)


def test_identical_states_identical_bytes(tmp_path):
    params = _params()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, params, config_hash="h")
    save_checkpoint(b, params, config_hash="h")
    assert a.read_bytes() == b.read_bytes()


def test_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(path)


def test_truncated_payload_detected(tmp_path):
    params = _params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)


def test_params_digest_tracks_values():
    params = _params()
    d1 = params_digest(params)
    params["enc.w"].data[0, 0] += 1.0
    assert params_digest(params) != d1
