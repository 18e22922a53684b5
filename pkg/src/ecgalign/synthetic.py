"""Deterministic synthetic 12-lead corpus for desk-scale runs.

Each class has a fixed waveform parameterization (base frequency, amplitude,
harmonic content, per-lead phase/gain pattern); records add seeded jitter and
Gaussian noise on top. Reports are template sentences embedding one to three
surface forms of the record's class entity (canonical name, a synonym that
merges into it, or a "severe" subtype that aggregates under it), plus a
record-unique case tag so no two reports are identical.

The generator also emits the rule tables that drive the offline mining client
and the ground-truth vocabulary the mining pipeline should reproduce, built
here by direct set arithmetic rather than through the pipeline code.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (NUM_LEADS, DatasetManifest, ECGRecord, write_records_payload)
from .mining import EntityVocabulary, RuleTables
from .utils import seed_rng

SAMPLE_RATE_HZ = 500
DURATION_S = 10
SIGNAL_LEN = SAMPLE_RATE_HZ * DURATION_S
BEAT_PERIOD = 100  # samples; matches the default tokenization segment length


@dataclass(frozen=True)
class ClassSpec:
    name: str
    base_freq_hz: float
    amplitude: float
    harmonic: float
    synonym: str


CLASS_SPECS: tuple[ClassSpec, ...] = (
    ClassSpec("synthetic bradycardia", 0.7, 1.0, 0.30, "slow rhythm pattern"),
    ClassSpec("synthetic tachycardia", 2.9, 0.9, 0.20, "rapid rhythm pattern"),
    ClassSpec("synthetic atrial flutter", 4.3, 0.7, 0.45, "sawtooth baseline pattern"),
    ClassSpec("synthetic ventricular strain", 1.5, 1.2, 0.60, "strain morphology pattern"),
    ClassSpec("synthetic fibrillation", 5.6, 0.6, 0.15, "irregular chaotic pattern"),
    ClassSpec("synthetic conduction delay", 1.1, 1.1, 0.50, "delayed conduction pattern"),
    ClassSpec("synthetic st elevation", 3.5, 0.8, 0.35, "elevated st pattern"),
    ClassSpec("synthetic low voltage", 2.1, 0.4, 0.25, "attenuated amplitude pattern"),
)

_OPENERS = ("routine 12-lead recording", "portable tracing", "follow-up ecg",
            "telemetry capture")
_CLOSERS = ("no acute change otherwise", "compare with prior tracing",
            "technically adequate study", "minor baseline artifact noted")
_CODE_WORDS = ("kilo", "zulu", "echo", "tango", "lima", "oscar", "delta",
               "romeo", "sierra", "victor", "november", "quebec", "hotel",
               "bravo", "foxtrot", "juliet")


def subtype_name(class_name: str) -> str:
    return f"severe {class_name}"


@dataclass
class SyntheticDataset:
    manifest: DatasetManifest
    vocab_truth: EntityVocabulary
    rule_tables: RuleTables
    class_names: list[str]


def _smooth_template(rng: np.random.Generator) -> np.ndarray:
    """Unit-variance smooth waveform of one beat period."""
    raw = rng.normal(0.0, 1.0, size=BEAT_PERIOD)
    kernel = np.exp(-0.5 * (np.arange(-10, 11) / 4.0) ** 2)
    smooth = np.convolve(np.tile(raw, 3), kernel / kernel.sum(),
                         mode="same")[BEAT_PERIOD:2 * BEAT_PERIOD]
    return smooth / max(np.std(smooth), 1e-9)


def _lead_phase(class_idx: int, lead_idx: int) -> float:
    return 2.0 * np.pi * ((class_idx * 5 + lead_idx * 7) % 24) / 24.0


def _lead_gain(class_idx: int, lead_idx: int) -> float:
    return 0.8 + 0.4 * ((class_idx * 3 + lead_idx * 11) % 12) / 11.0


def _class_signal(spec: ClassSpec, class_idx: int, rng: np.random.Generator) -> np.ndarray:
    """Class-signature waveform plus a record-specific fingerprint.

    The fingerprint (frequency jitter, per-lead gain wobble, a record-unique
    beat tone present in every lead) keeps records of one class separable,
    which the in-batch contrastive objective needs; jitter is small enough
    that class frequency bands never overlap.
    """
    t = np.arange(SIGNAL_LEN, dtype=np.float64) / SAMPLE_RATE_HZ
    freq = spec.base_freq_hz * (1.0 + 0.06 * rng.uniform(-1.0, 1.0))
    global_shift = rng.uniform(0.0, 2.0 * np.pi)
    lead_wobble = rng.uniform(0.85, 1.15, size=NUM_LEADS)
    # beat-periodic morphology: a class-shared shape plus a record-unique
    # shape, both repeating with the tokenization segment length, so every
    # kept segment of every lead exposes class and identity alike
    template = (0.5 * _smooth_template(seed_rng(class_idx, "class-template"))
                + 0.6 * _smooth_template(rng))
    barcode = np.tile(template, SIGNAL_LEN // BEAT_PERIOD)
    leads = np.empty((NUM_LEADS, SIGNAL_LEN), dtype=np.float64)
    for lead in range(NUM_LEADS):
        phase = _lead_phase(class_idx, lead) + global_shift
        wave = (np.sin(2.0 * np.pi * freq * t + phase)
                + spec.harmonic * np.sin(4.0 * np.pi * freq * t + 2.0 * phase))
        leads[lead] = (spec.amplitude * _lead_gain(class_idx, lead)
                       * lead_wobble[lead] * wave + barcode)
    leads += rng.normal(0.0, 0.05, size=leads.shape)
    return leads.astype(np.float32)


def _report(spec: ClassSpec, record_idx: int, force_canonical: bool,
            rng: np.random.Generator) -> str:
    surfaces = [spec.name, spec.synonym, subtype_name(spec.name)]
    if force_canonical:
        primary = spec.name
    else:
        primary = surfaces[rng.choice(3, p=[0.5, 0.25, 0.25])]
    mentions = [primary]
    if rng.random() < 0.4:
        others = [s for s in surfaces if s != primary]
        mentions.append(others[int(rng.integers(len(others)))])
    if len(mentions) < 3 and rng.random() < 0.15:
        leftover = [s for s in surfaces if s not in mentions]
        if leftover:
            mentions.append(leftover[0])
    opener = _OPENERS[int(rng.integers(len(_OPENERS)))]
    closer = _CLOSERS[int(rng.integers(len(_CLOSERS)))]
    body = ". ".join(f"findings consistent with {m}" if i == 0 else f"also noted {m}"
                     for i, m in enumerate(mentions))
    # two record-unique tokens so paired reports stay separable in-batch
    code = f"{_CODE_WORDS[record_idx % len(_CODE_WORDS)]}{record_idx:03d}"
    return (f"{opener}, case {record_idx:04d} ref {code}. {body}. {closer}.")


def _ground_truth(reports: list[str], specs: list[ClassSpec]) -> EntityVocabulary:
    """Vocabulary the mining pipeline should produce, by direct set logic."""
    joined = "\n".join(r.lower() for r in reports)
    mentioned_raw = set()
    for spec in specs:
        # the subtype contains the canonical name; a standalone canonical
        # mention is one that survives deleting subtype occurrences
        without_subtype = joined.replace(subtype_name(spec.name), " ")
        if spec.name in without_subtype:
            mentioned_raw.add(spec.name)
        if spec.synonym in joined:
            mentioned_raw.add(spec.synonym)
        if subtype_name(spec.name) in joined:
            mentioned_raw.add(subtype_name(spec.name))
    merge_map = {}
    for spec in specs:
        if spec.name in mentioned_raw:
            merge_map[spec.name] = spec.name
        if spec.synonym in mentioned_raw:
            merge_map[spec.synonym] = spec.name
        if subtype_name(spec.name) in mentioned_raw:
            merge_map[subtype_name(spec.name)] = subtype_name(spec.name)
    canonical = sorted(set(merge_map.values()))
    superclasses = {}
    for spec in specs:
        if subtype_name(spec.name) in canonical:
            superclasses[spec.name] = [subtype_name(spec.name)]
    entities = canonical + [s for s in sorted(superclasses) if s not in set(canonical)]
    return EntityVocabulary(entities=entities, merge_map=merge_map,
                            superclasses=superclasses).validate()


def make_rule_tables(num_classes: int) -> RuleTables:
    specs = CLASS_SPECS[:num_classes]
    dictionary, synonyms, hierarchy = [], {}, {}
    for spec in specs:
        dictionary += [spec.name, spec.synonym, subtype_name(spec.name)]
        synonyms[spec.synonym] = spec.name
        hierarchy[spec.name] = [subtype_name(spec.name)]
    # decoy never present in any generated report
    dictionary.append("synthetic pericarditis")
    return RuleTables(dictionary=sorted(dictionary), synonyms=synonyms,
                      hierarchy=hierarchy)


def generate_synthetic(num_records: int, num_classes: int, seed: int,
                       out_dir: str | Path, *, valid_fraction: float = 0.25,
                       test_fraction: float = 0.25) -> SyntheticDataset:
    """Write a synthetic corpus (payload, manifest, rule tables) to out_dir."""
    if not 1 <= num_classes <= len(CLASS_SPECS):
        raise ValueError(f"num_classes must be in 1..{len(CLASS_SPECS)}")
    if num_records < num_classes:
        raise ValueError("need at least one record per class")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = list(CLASS_SPECS[:num_classes])

    records: list[ECGRecord] = []
    first_seen: set[int] = set()
    for i in range(num_records):
        class_idx = i % num_classes
        spec = specs[class_idx]
        rng = seed_rng(seed, "record", i)
        signal = _class_signal(spec, class_idx, rng)
        force_canonical = class_idx not in first_seen
        first_seen.add(class_idx)
        report = _report(spec, i, force_canonical, rng)
        rec = ECGRecord(record_id=f"syn-{i:05d}", signal=signal,
                        lead_ids=list(range(1, NUM_LEADS + 1)),
                        sample_rate_hz=SAMPLE_RATE_HZ, report=report,
                        label_names=[spec.name])
        records.append(rec.validate())

    splits = _assign_splits(num_records, num_classes, valid_fraction, test_fraction)
    manifest = write_records_payload(records, out_dir / "signals.f32",
                                     out_dir / "manifest.json", splits=splits)
    tables = make_rule_tables(num_classes)
    tables.save(out_dir / "rules.json")
    pretrain_reports = [r.report for r, s in zip(records, splits) if s != "test"]
    vocab = _ground_truth(pretrain_reports, specs)
    vocab.save(out_dir / "vocab_truth.json")
    return SyntheticDataset(manifest=manifest, vocab_truth=vocab,
                            rule_tables=tables,
                            class_names=[s.name for s in specs])


def _assign_splits(num_records: int, num_classes: int, valid_fraction: float,
                   test_fraction: float) -> list[str]:
    splits = ["train"] * num_records
    for k in range(num_classes):
        members = [i for i in range(num_records) if i % num_classes == k]
        n = len(members)
        n_test = int(round(test_fraction * n))
        n_valid = int(round(valid_fraction * n))
        n_train = n - n_valid - n_test
        for j, i in enumerate(members):
            if j < n_train:
                splits[i] = "train"
            elif j < n_train + n_valid:
                splits[i] = "valid"
            else:
                splits[i] = "test"
    return splits
