"""Structured-knowledge pipeline over free-text ECG reports.

Three stages against a chat client: per-report entity extraction with YES/NO
verification, corpus-wide synonym merging, and superclass aggregation. The
output is an entity vocabulary (canonical entities plus superclasses) and one
binary label vector per report. A deterministic rule-based client implements
the same interface from fixture tables, so the whole pipeline runs offline;
both clients traverse identical code paths, including the verification step.

Beyond verification, a hard substring guard drops any extracted entity that
does not occur verbatim (case-insensitively) in the report, so the client can
never introduce terms the report does not contain.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .data import DatasetManifest
from .llm import LLMError
from .utils import canonical_json, sha256_text, write_json

logger = logging.getLogger(__name__)

EXTRACTION_PROMPT = ("Please extract all positive Cardiac-related Entities from "
                     "the given ECG report. Output format is [Entity1, Entity2, ...]")
VERIFICATION_PROMPT = ("Please verify the extracted cardiac-related entities as "
                       "existing and positive in the given report. "
                       "Output format is YES or NO")
MERGE_PROMPT = ("Please merge the cardiac-related entities that have the same "
                "semantics but different expressions. "
                "Here are <all Cardiac-related Entities>. "
                "Output format is JSON, where the key is the original name and "
                "the value is the merged name.")
SUPERCLASS_PROMPT = ("Please detect all the superclasses present in "
                     "<all Cardiac-related Entities>. "
                     "Output format is JSON, where the key is the superclass name "
                     "and the values are the cardiac-related entities that belong "
                     "to this superclass.")

_ENTITY_PLACEHOLDER = "<all Cardiac-related Entities>"


class MiningError(RuntimeError):
    """Unparseable client output after retries."""


class ChatClient(Protocol):
    def complete(self, prompt: str, bypass_cache: bool = False) -> str: ...


def normalize_entity(text: str) -> str:
    """Lowercase, collapse whitespace, strip wrapping quotes/trailing punctuation."""
    out = " ".join(text.lower().split())
    out = out.strip("\"'")
    return out.rstrip(".,;:!?").strip()


def _normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def _parse_entity_list(text: str) -> list[str]:
    m = re.search(r"\[(.*?)\]", text, flags=re.DOTALL)
    if m is None:
        raise MiningError(f"no bracketed entity list in client output: {text[:200]!r}")
    inner = m.group(1).strip()
    if not inner:
        return []
    out = []
    for piece in inner.split(","):
        ent = normalize_entity(piece)
        if ent and ent not in out:
            out.append(ent)
    return out


def _parse_json_object(text: str) -> dict:
    m = re.search(r"\{.*\}", text, flags=re.DOTALL)
    if m is None:
        raise MiningError(f"no JSON object in client output: {text[:200]!r}")
    try:
        obj = json.loads(m.group(0))
    except json.JSONDecodeError as exc:
        raise MiningError(f"invalid JSON from client: {exc}") from exc
    if not isinstance(obj, dict):
        raise MiningError("client JSON is not an object")
    return obj


def _ask(client: ChatClient, prompt: str, parser):
    """One cached ask plus one cache-bypassing retry on a parse failure."""
    last: Exception | None = None
    for attempt in range(2):
        text = client.complete(prompt, bypass_cache=attempt > 0)
        try:
            return parser(text)
        except MiningError as exc:
            last = exc
    raise MiningError(f"unparseable client output after retries: {last}")


def extract_entities(report: str, client: ChatClient) -> list[str]:
    """Extract verified, report-grounded positive entities from one report."""
    if not report.strip():
        raise ValueError("empty report")
    prompt = f"{EXTRACTION_PROMPT}\n\nReport: {report}"
    candidates = _ask(client, prompt, _parse_entity_list)
    report_norm = _normalize_text(report)
    kept = []
    for cand in candidates:
        vprompt = f"{VERIFICATION_PROMPT}\n\nEntity: {cand}\nReport: {report}"
        answer = client.complete(vprompt)
        if not answer.strip().upper().startswith("YES"):
            continue
        if cand not in report_norm:
            logger.warning("dropping entity absent from report: %r", cand)
            continue
        if cand not in kept:
            kept.append(cand)
    return kept


def _resolve_chain(mapping: dict[str, str], key: str) -> str:
    seen = {key}
    cur = mapping.get(key, key)
    while cur in mapping and mapping[cur] != cur and cur not in seen:
        seen.add(cur)
        cur = mapping[cur]
    return cur


def merge_entities(all_entities: list[str], client: ChatClient) -> dict[str, str]:
    """Total raw-to-canonical map over the corpus entity list."""
    if not all_entities:
        raise ValueError("empty entity list")
    entities = sorted({normalize_entity(e) for e in all_entities})
    prompt = MERGE_PROMPT.replace(_ENTITY_PLACEHOLDER, json.dumps(entities))
    raw_map = _ask(client, prompt, _parse_json_object)
    mapping: dict[str, str] = {}
    for key, value in raw_map.items():
        k = normalize_entity(str(key))
        v = normalize_entity(str(value))
        if not v:
            raise MiningError(f"empty merged name for {k!r}")
        if k in entities:
            mapping[k] = v
    for e in entities:
        mapping.setdefault(e, e)
    return {e: _resolve_chain(mapping, e) for e in entities}


def aggregate_superclasses(entities: list[str], client: ChatClient) -> dict[str, list[str]]:
    """Superclass name -> member entities, members restricted to the input list."""
    if not entities:
        return {}
    present = set(entities)
    prompt = SUPERCLASS_PROMPT.replace(_ENTITY_PLACEHOLDER, json.dumps(sorted(entities)))
    raw = _ask(client, prompt, _parse_json_object)
    out: dict[str, list[str]] = {}
    for sup, members in raw.items():
        sup_n = normalize_entity(str(sup))
        if not sup_n or not isinstance(members, list):
            continue
        kept = []
        for m in members:
            m_n = normalize_entity(str(m))
            if m_n == sup_n:
                continue
            if m_n not in present:
                logger.warning("dropping superclass member not in entity list: %r", m_n)
                continue
            if m_n not in kept:
                kept.append(m_n)
        if kept:
            out[sup_n] = sorted(kept)
    return out


@dataclass
class EntityVocabulary:
    """Mined, merged, hierarchy-aggregated cardiac entity list."""

    entities: list[str] = field(default_factory=list)
    merge_map: dict[str, str] = field(default_factory=dict)
    superclasses: dict[str, list[str]] = field(default_factory=dict)
    version_hash: str = ""

    def __post_init__(self):
        if not self.version_hash:
            self.version_hash = self.compute_hash()
        self._index = {e: i for i, e in enumerate(self.entities)}

    def compute_hash(self) -> str:
        return sha256_text(canonical_json({
            "entities": self.entities,
            "merge_map": self.merge_map,
            "superclasses": self.superclasses,
        }))

    def __len__(self) -> int:
        return len(self.entities)

    def index(self, entity: str) -> int | None:
        return self._index.get(entity)

    def canonical(self, raw: str) -> str:
        return _resolve_chain(self.merge_map, normalize_entity(raw))

    def validate(self) -> "EntityVocabulary":
        if len(set(self.entities)) != len(self.entities):
            raise ValueError("duplicate vocabulary entities")
        for raw, merged in self.merge_map.items():
            if merged not in self._index:
                raise ValueError(f"merge target {merged!r} not in vocabulary")
        for sup, members in self.superclasses.items():
            if sup not in self._index:
                raise ValueError(f"superclass {sup!r} not in vocabulary")
            for m in members:
                if m not in self._index or m == sup:
                    raise ValueError(f"bad superclass member {m!r} under {sup!r}")
        return self

    def to_dict(self) -> dict:
        return {"entities": list(self.entities),
                "merge_map": dict(sorted(self.merge_map.items())),
                "superclasses": {k: sorted(v) for k, v in sorted(self.superclasses.items())},
                "hash": self.version_hash}

    @classmethod
    def from_dict(cls, doc: dict) -> "EntityVocabulary":
        return cls(entities=list(doc["entities"]),
                   merge_map=dict(doc.get("merge_map", {})),
                   superclasses={k: list(v) for k, v in doc.get("superclasses", {}).items()},
                   version_hash=doc.get("hash", ""))

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "EntityVocabulary":
        return cls.from_dict(json.loads(Path(path).read_text())).validate()


def build_vocabulary(reports: Iterable[str], client: ChatClient,
                     ) -> tuple[EntityVocabulary, list[list[str]]]:
    """Run the full pipeline over a corpus.

    Returns the vocabulary and the per-report raw entity lists (pre-merge),
    in corpus order.
    """
    per_report: list[list[str]] = []
    raw_order: list[str] = []
    raw_seen: set[str] = set()
    for report in reports:
        ents = extract_entities(report, client)
        per_report.append(ents)
        for e in ents:
            if e not in raw_seen:
                raw_seen.add(e)
                raw_order.append(e)
    if not raw_order:
        return EntityVocabulary(), per_report
    merge_map = merge_entities(raw_order, client)
    canonical = sorted(set(merge_map.values()))
    superclasses = aggregate_superclasses(canonical, client)
    entities = canonical + [s for s in sorted(superclasses) if s not in set(canonical)]
    vocab = EntityVocabulary(entities=entities, merge_map=merge_map,
                             superclasses=superclasses)
    return vocab.validate(), per_report


def label_report(report_entities: list[str], vocab: EntityVocabulary) -> np.ndarray:
    """Binary label vector over the vocabulary, superclass bits implied."""
    bits = np.zeros(len(vocab), dtype=np.uint8)
    for raw in report_entities:
        canon = vocab.canonical(raw)
        idx = vocab.index(canon)
        if idx is None:
            logger.warning("unknown entity ignored: %r", raw)
            continue
        bits[idx] = 1
    for sup, members in vocab.superclasses.items():
        if any(bits[vocab.index(m)] for m in members):
            bits[vocab.index(sup)] = 1
    return bits


def mine_corpus(manifest: DatasetManifest, client: ChatClient, out_dir: str | Path,
                splits: tuple[str, ...] = ("train", "valid"),
                ) -> tuple[EntityVocabulary, dict[str, np.ndarray]]:
    """Mine the pretraining splits of a manifest; write vocab + labels files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = [e for e in manifest.entries if e.split in splits]
    vocab, per_report = build_vocabulary((e.report for e in entries), client)
    labels: dict[str, np.ndarray] = {}
    lines = []
    for entry, ents in zip(entries, per_report):
        bits = label_report(ents, vocab)
        labels[entry.record_id] = bits
        indices = [int(i) for i in np.flatnonzero(bits)]
        lines.append(canonical_json({"record_id": entry.record_id, "indices": indices}))
    vocab.save(out_dir / "vocab.json")
    (out_dir / "labels.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    return vocab, labels


def load_labels(path: str | Path, vocab_size: int) -> dict[str, np.ndarray]:
    labels: dict[str, np.ndarray] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        bits = np.zeros(vocab_size, dtype=np.uint8)
        bits[np.asarray(doc["indices"], dtype=int)] = 1
        labels[doc["record_id"]] = bits
    return labels


# ---------------------------------------------------------------------------
# deterministic rule-based client
# ---------------------------------------------------------------------------

@dataclass
class RuleTables:
    """Fixture tables driving the offline client."""

    dictionary: list[str]
    synonyms: dict[str, str]
    hierarchy: dict[str, list[str]]

    def save(self, path: str | Path) -> None:
        write_json(path, {"dictionary": sorted(self.dictionary),
                          "synonyms": dict(sorted(self.synonyms.items())),
                          "hierarchy": {k: sorted(v) for k, v in sorted(self.hierarchy.items())}})

    @classmethod
    def load(cls, path: str | Path) -> "RuleTables":
        doc = json.loads(Path(path).read_text())
        return cls(dictionary=list(doc["dictionary"]),
                   synonyms=dict(doc.get("synonyms", {})),
                   hierarchy={k: list(v) for k, v in doc.get("hierarchy", {}).items()})


def _dictionary_matches(report: str, dictionary: list[str]) -> list[str]:
    """Longest-match, non-overlapping dictionary scan, in report order."""
    text = _normalize_text(report)
    spans: list[tuple[int, int, str]] = []
    for term in dictionary:
        t = _normalize_text(term)
        if not t:
            continue
        pattern = rf"(?<![a-z0-9]){re.escape(t)}(?![a-z0-9])"
        for m in re.finditer(pattern, text):
            spans.append((m.start(), m.end(), t))
    spans.sort(key=lambda s: (-(s[1] - s[0]), s[0]))
    taken: list[tuple[int, int]] = []
    chosen: list[tuple[int, str]] = []
    for start, end, term in spans:
        if any(start < te and ts < end for ts, te in taken):
            continue
        taken.append((start, end))
        chosen.append((start, term))
    out: list[str] = []
    for _, term in sorted(chosen):
        if term not in out:
            out.append(term)
    return out


class RuleBasedClient:
    """Table-driven stand-in with the chat-client interface.

    Extraction is a longest-match dictionary scan; merge and superclass calls
    answer from the synonym and hierarchy tables; verification always answers
    YES so both client kinds exercise the same pipeline path.
    """

    def __init__(self, tables: RuleTables):
        self.tables = tables

    def complete(self, prompt: str, bypass_cache: bool = False) -> str:
        if prompt.startswith(EXTRACTION_PROMPT):
            report = prompt.split("\nReport: ", 1)[1] if "\nReport: " in prompt else ""
            found = _dictionary_matches(report, self.tables.dictionary)
            return "[" + ", ".join(found) + "]"
        if prompt.startswith(VERIFICATION_PROMPT):
            return "YES"
        if prompt.startswith(MERGE_PROMPT.split(_ENTITY_PLACEHOLDER)[0]):
            entities = json.loads(re.search(r"\[.*\]", prompt, re.DOTALL).group(0))
            table = {normalize_entity(k): normalize_entity(v)
                     for k, v in self.tables.synonyms.items()}
            return json.dumps({e: table.get(e, e) for e in entities})
        if prompt.startswith(SUPERCLASS_PROMPT.split(_ENTITY_PLACEHOLDER)[0]):
            entities = set(json.loads(re.search(r"\[.*\]", prompt, re.DOTALL).group(0)))
            out = {}
            for sup, members in self.tables.hierarchy.items():
                kept = sorted(normalize_entity(m) for m in members
                              if normalize_entity(m) in entities)
                if kept:
                    out[normalize_entity(sup)] = kept
            return json.dumps(out)
        raise LLMError(f"rule-based client cannot answer prompt: {prompt[:80]!r}")
