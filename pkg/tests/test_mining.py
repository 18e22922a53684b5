"""Knowledge pipeline: fixture-corpus fidelity, guards, caching, fuzzing."""

import json
from pathlib import Path

import numpy as np
import pytest

from ecgalign.llm import LLMError
from ecgalign.mining import (EXTRACTION_PROMPT, EntityVocabulary, MiningError,
                             RuleBasedClient, RuleTables, aggregate_superclasses,
                             build_vocabulary, extract_entities, label_report,
                             merge_entities, normalize_entity)

FIXTURES = Path(__file__).parent / "fixtures" / "mining"


@pytest.fixture(scope="module")
def tables():
    return RuleTables.load(FIXTURES / "rules.json")


@pytest.fixture(scope="module")
def client(tables):
    return RuleBasedClient(tables)


@pytest.fixture(scope="module")
def reports():
    return json.loads((FIXTURES / "reports.json").read_text())


def test_normalize_entity():
    assert normalize_entity("  Sinus   Bradycardia. ") == "sinus bradycardia"
    assert normalize_entity('"Atrial Fibrillation,"') == "atrial fibrillation"


def test_extraction_matches_expected(client, reports):
    expected = json.loads((FIXTURES / "expected_entities.json").read_text())
    for rid, report in reports.items():
        assert extract_entities(report, client) == expected[rid], rid


def test_extraction_example_two_findings(client):
    report = "sinus bradycardia. anterior myocardial infarction."
    assert extract_entities(report, client) == [
        "sinus bradycardia", "anterior myocardial infarction"]


def test_extraction_single_term_and_absent_term(client, tables):
    assert extract_entities("normal ecg", client) == ["normal ecg"]
    assert extract_entities("entirely unremarkable prose", client) == []


def test_substring_guard_drops_invented_entities():
    class InventingClient:
        def complete(self, prompt, bypass_cache=False):
            if prompt.startswith(EXTRACTION_PROMPT):
                return "[atrial fibrillation, fabricated finding]"
            return "YES"

    kept = extract_entities("ecg shows atrial fibrillation.", InventingClient())
    assert kept == ["atrial fibrillation"]


def test_verification_no_drops_entity():
    class RejectingClient:
        def complete(self, prompt, bypass_cache=False):
            if prompt.startswith(EXTRACTION_PROMPT):
                return "[atrial fibrillation]"
            return "NO"

    assert extract_entities("atrial fibrillation.", RejectingClient()) == []


def test_extract_rejects_empty_report(client):
    with pytest.raises(ValueError):
        extract_entities("   ", client)


def test_unparseable_output_after_retries():
    class GarbageClient:
        def complete(self, prompt, bypass_cache=False):
            return "no brackets here"

    with pytest.raises(MiningError, match="unparseable"):
        extract_entities("some report", GarbageClient())


def test_merge_matches_expected(client, reports):
    expected_entities = json.loads((FIXTURES / "expected_entities.json").read_text())
    raws = []
    for rid in reports:
        for e in expected_entities[rid]:
            if e not in raws:
                raws.append(e)
    merge_map = merge_entities(raws, client)
    expected = json.loads((FIXTURES / "expected_merge_map.json").read_text())
    assert merge_map == expected


def test_merge_singleton_identity(client):
    assert merge_entities(["atrial fibrillation"], client) == {
        "atrial fibrillation": "atrial fibrillation"}


def test_merge_synonym_pair(client):
    merge_map = merge_entities(["afib", "atrial fibrillation"], client)
    assert merge_map == {"afib": "atrial fibrillation",
                         "atrial fibrillation": "atrial fibrillation"}


def test_merge_idempotent_on_canonical_entities(client):
    canonical = ["atrial fibrillation", "sinus bradycardia", "st depression"]
    assert merge_entities(canonical, client) == {e: e for e in canonical}


def test_aggregate_superclasses(client):
    result = aggregate_superclasses(
        ["anterior myocardial infarction", "inferior myocardial infarction"], client)
    assert result == {"myocardial infarction": [
        "anterior myocardial infarction", "inferior myocardial infarction"]}
    assert aggregate_superclasses(["normal ecg", "st depression"], client) == {}


def test_full_pipeline_matches_expected_files(client, reports):
    vocab, per_report = build_vocabulary(reports.values(), client)
    expected_vocab = json.loads((FIXTURES / "expected_vocab.json").read_text())
    assert vocab.entities == expected_vocab["entities"]
    assert vocab.superclasses == expected_vocab["superclasses"]
    assert vocab.merge_map == json.loads(
        (FIXTURES / "expected_merge_map.json").read_text())
    expected_labels = json.loads((FIXTURES / "expected_labels.json").read_text())
    for rid, raw_entities in zip(reports, per_report):
        bits = label_report(raw_entities, vocab)
        assert sorted(int(i) for i in np.flatnonzero(bits)) == expected_labels[rid], rid


def test_vocab_size_is_canonical_plus_new_superclasses(client, reports):
    vocab, _ = build_vocabulary(reports.values(), client)
    canonical = sorted(set(vocab.merge_map.values()))
    new_supers = [s for s in vocab.superclasses if s not in canonical]
    assert len(vocab) == len(canonical) + len(new_supers)


def test_label_report_superclass_closure(client, reports):
    vocab, _ = build_vocabulary(reports.values(), client)
    bits = label_report(["anterior myocardial infarction"], vocab)
    assert bits[vocab.index("anterior myocardial infarction")] == 1
    assert bits[vocab.index("myocardial infarction")] == 1
    assert label_report([], vocab).sum() == 0
    unknown = label_report(["completely unknown finding"], vocab)
    assert unknown.sum() == 0


def test_label_vector_length_matches_vocab(client, reports):
    vocab, per_report = build_vocabulary(reports.values(), client)
    for raw in per_report:
        assert label_report(raw, vocab).shape == (len(vocab),)


def test_vocab_roundtrip_and_validation(client, reports, tmp_path):
    vocab, _ = build_vocabulary(reports.values(), client)
    vocab.save(tmp_path / "vocab.json")
    again = EntityVocabulary.load(tmp_path / "vocab.json")
    assert again.entities == vocab.entities
    assert again.version_hash == vocab.version_hash
    with pytest.raises(ValueError):
        EntityVocabulary(entities=["a"], superclasses={"a": ["a"]}).validate()
    with pytest.raises(ValueError):
        EntityVocabulary(entities=["a"], merge_map={"b": "missing"}).validate()


def test_fuzzed_reports_guard_and_closure(client, tables):
    """Substring guard and superclass closure over 1,000 fuzzed reports."""
    vocab, _ = build_vocabulary(
        json.loads((FIXTURES / "reports.json").read_text()).values(), client)
    rng = np.random.default_rng(99)
    noise = ["recording", "quality", "adequate", "lateral", "leads", "with",
             "minor", "artifact", "rate", "consider", "repeat", "in", "context"]
    surfaces = list(tables.dictionary)
    for _ in range(1000):
        n_terms = int(rng.integers(0, 4))
        words = []
        for _ in range(int(rng.integers(2, 7))):
            words.append(noise[int(rng.integers(len(noise)))])
        for _ in range(n_terms):
            words.insert(int(rng.integers(len(words) + 1)),
                         surfaces[int(rng.integers(len(surfaces)))])
        report = " ".join(words) + "."
        entities = extract_entities(report, client)
        normalized_report = " ".join(report.lower().split())
        for e in entities:
            assert e in normalized_report  # substring guard
        bits = label_report(entities, vocab)
        for sup, members in vocab.superclasses.items():
            member_set = any(bits[vocab.index(m)] for m in members)
            if member_set:
                assert bits[vocab.index(sup)] == 1  # closure


def test_rule_client_rejects_alien_prompt(client):
    with pytest.raises(LLMError):
        client.complete("Tell me a story about hearts")
