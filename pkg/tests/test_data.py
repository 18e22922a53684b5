"""Manifest I/O, record validation, normalization, CSV import, synthesis."""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ecgalign.data import (CANONICAL_LEADS, ECGRecord, ManifestError,
                           lead_index, lead_name, load_manifest,
                           normalize_record, record_from_csv,
                           write_records_payload)
from ecgalign.synthetic import SIGNAL_LEN, generate_synthetic


def _record(record_id="rec0", leads=(1, 2, 3), length=40, seed=0):
    rng = np.random.default_rng(seed)
    signal = rng.standard_normal((len(leads), length)).astype(np.float32)
    return ECGRecord(record_id, signal, list(leads), 500, "sinus rhythm").validate()


def test_lead_order_is_bijective():
    assert len(CANONICAL_LEADS) == 12
    for i, name in enumerate(CANONICAL_LEADS, start=1):
        assert lead_index(name) == i
        assert lead_name(i) == name
    assert CANONICAL_LEADS[:6] == ("I", "II", "III", "aVF", "aVR", "aVL")
    with pytest.raises(ValueError):
        lead_index("V7")
    with pytest.raises(ValueError):
        lead_name(13)


def test_record_validation_errors():
    good = _record()
    bad = ECGRecord("x", good.signal, [1, 1, 2], 500, "")
    with pytest.raises(ManifestError, match="duplicate"):
        bad.validate()
    bad = ECGRecord("x", good.signal, [1, 2, 13], 500, "")
    with pytest.raises(ManifestError, match="1..12"):
        bad.validate()
    nan_sig = good.signal.copy()
    nan_sig[0, 0] = np.nan
    with pytest.raises(ManifestError, match="NaN"):
        ECGRecord("x", nan_sig, [1, 2, 3], 500, "").validate()


def test_manifest_roundtrip(tmp_path):
    records = [_record("a", (1, 2, 3)), _record("b", tuple(range(1, 13)), seed=1)]
    manifest = write_records_payload(records, tmp_path / "signals.f32",
                                     tmp_path / "manifest.json",
                                     splits=["train", "test"])
    loaded = load_manifest(tmp_path / "manifest.json")
    assert [e.record_id for e in loaded.entries] == ["a", "b"]
    for entry, rec in zip(loaded.entries, records):
        got = loaded.load_record(entry)
        np.testing.assert_array_equal(got.signal, rec.signal)
        assert got.lead_ids == rec.lead_ids
        assert got.report == rec.report
    assert loaded.entries[1].split == "test"


def test_manifest_missing_payload(tmp_path):
    records = [_record("a")]
    write_records_payload(records, tmp_path / "signals.f32", tmp_path / "m.json")
    (tmp_path / "signals.f32").unlink()
    with pytest.raises(ManifestError, match="missing payload"):
        load_manifest(tmp_path / "m.json")


def test_manifest_duplicate_id(tmp_path):
    records = [_record("a")]
    write_records_payload(records, tmp_path / "signals.f32", tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["records"].append(dict(doc["records"][0]))
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="duplicate record_id"):
        load_manifest(tmp_path / "m.json")


def test_manifest_shape_mismatch(tmp_path):
    records = [_record("a")]
    write_records_payload(records, tmp_path / "signals.f32", tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["records"][0]["length"] = 10_000
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="shorter than declared"):
        load_manifest(tmp_path / "m.json")


def test_manifest_parse_failure(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{not json")
    with pytest.raises(ManifestError, match="cannot parse"):
        load_manifest(path)


def test_normalize_constant_lead_becomes_zero():
    rec = ECGRecord("c", np.full((1, 8), 5.0, dtype=np.float32), [1], 500, "")
    out = normalize_record(rec)
    np.testing.assert_array_equal(out.signal, np.zeros((1, 8), dtype=np.float32))


def test_normalize_fixed_point():
    sig = np.array([[1.0, -1.0, 1.0, -1.0]], dtype=np.float32)
    out = normalize_record(ECGRecord("f", sig, [1], 500, ""))
    np.testing.assert_allclose(out.signal, sig, atol=1e-7)


def test_normalize_hand_computed():
    # lead [0, 2]: mean 1, population std 1 -> [-1, 1]
    sig = np.array([[0.0, 2.0]], dtype=np.float32)
    out = normalize_record(ECGRecord("h", sig, [1], 500, ""))
    np.testing.assert_allclose(out.signal, [[-1.0, 1.0]], atol=1e-7)


def test_normalize_idempotent():
    rec = _record(length=64, seed=4)
    once = normalize_record(rec)
    twice = normalize_record(once)
    np.testing.assert_allclose(once.signal, twice.signal, atol=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_normalize_idempotent_property(seed):
    rec = _record(length=32, seed=seed)
    once = normalize_record(rec)
    twice = normalize_record(once)
    assert np.max(np.abs(once.signal - twice.signal)) < 1e-6


def test_csv_import(tmp_path):
    path = tmp_path / "rec.csv"
    path.write_text("II,I\n1.0,4.0\n2.0,5.0\n3.0,6.0\n")
    rec = record_from_csv(path, "csvrec", 500)
    # canonicalized: lead I (index 1) first
    assert rec.lead_ids == [1, 2]
    np.testing.assert_allclose(rec.signal, [[4, 5, 6], [1, 2, 3]])


def test_restrict_and_zero_pad():
    rec = _record("r", tuple(range(1, 13)), seed=2)
    sub = rec.restricted_to([3, 7])
    assert sub.lead_ids == [3, 7]
    np.testing.assert_array_equal(sub.signal[0], rec.signal[2])
    padded = sub.zero_padded()
    assert padded.lead_ids == list(range(1, 13))
    np.testing.assert_array_equal(padded.signal[2], rec.signal[2])
    assert np.all(padded.signal[0] == 0)


def test_generate_synthetic_deterministic(tmp_path):
    a = generate_synthetic(16, 4, 7, tmp_path / "a")
    b = generate_synthetic(16, 4, 7, tmp_path / "b")
    assert (tmp_path / "a" / "manifest.json").read_bytes() == \
        (tmp_path / "b" / "manifest.json").read_bytes()
    assert (tmp_path / "a" / "signals.f32").read_bytes() == \
        (tmp_path / "b" / "signals.f32").read_bytes()
    assert a.vocab_truth.entities == b.vocab_truth.entities


def test_generate_synthetic_loads_bit_for_bit(tmp_path):
    dataset = generate_synthetic(8, 2, 3, tmp_path)
    reloaded = load_manifest(tmp_path / "manifest.json")
    for entry in reloaded.entries:
        rec = reloaded.load_record(entry)
        assert rec.signal.shape == (12, SIGNAL_LEN)
        assert rec.signal.dtype == np.float32


def test_generate_synthetic_dominant_frequency_ordering(tmp_path):
    dataset = generate_synthetic(8, 2, 5, tmp_path)
    manifest = dataset.manifest

    def dominant_hz(rec):
        # 10 s window -> 0.1 Hz bins. The beat-periodic morphology template
        # is exactly periodic at 5 Hz, so it lives only in exact multiples of
        # bin 50; rhythm frequencies sit between them.
        spectrum = np.abs(np.fft.rfft(rec.signal[1].astype(np.float64)))
        spectrum[0] = 0.0
        spectrum[50::50] = 0.0
        return np.argmax(spectrum) / 10.0

    freqs = {}
    for entry in manifest.entries:
        rec = manifest.load_record(entry)
        freqs.setdefault(entry.label_names[0], []).append(dominant_hz(rec))
    slow = max(freqs["synthetic bradycardia"])
    fast = min(freqs["synthetic tachycardia"])
    assert fast > slow


def test_generate_synthetic_reports_contain_entities(tmp_path):
    dataset = generate_synthetic(20, 4, 9, tmp_path)
    surfaces = set(dataset.rule_tables.dictionary)
    for entry in dataset.manifest.entries:
        report = entry.report.lower()
        assert any(s in report for s in surfaces)


def test_generate_synthetic_invalid_class_count(tmp_path):
    with pytest.raises(ValueError):
        generate_synthetic(4, 9, 1, tmp_path)
    with pytest.raises(ValueError):
        generate_synthetic(2, 4, 1, tmp_path)
