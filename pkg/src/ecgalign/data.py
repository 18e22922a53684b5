"""ECG records, dataset manifests, and signal payload I/O.

A dataset is one JSON manifest plus raw little-endian float32 payload files
(row-major [lead x sample]). Records carry a subset of the 12 canonical leads
in a fixed canonical order, a sample rate, and the paired free-text report.
Loading and generation are pure functions of their inputs; nothing here holds
shared mutable state.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# Canonical 12-lead ordering (limb leads, augmented leads, precordial leads),
# mapped to indices 1..12. Partial-lead sweeps expand along this order.
CANONICAL_LEADS: tuple[str, ...] = (
    "I", "II", "III", "aVF", "aVR", "aVL",
    "V1", "V2", "V3", "V4", "V5", "V6",
)
NUM_LEADS = len(CANONICAL_LEADS)
LEAD_TO_INDEX: dict[str, int] = {name: i + 1 for i, name in enumerate(CANONICAL_LEADS)}
INDEX_TO_LEAD: dict[int, str] = {i + 1: name for i, name in enumerate(CANONICAL_LEADS)}


def lead_index(name: str) -> int:
    try:
        return LEAD_TO_INDEX[name]
    except KeyError:
        raise ValueError(f"unknown lead name: {name!r}") from None


def lead_name(index: int) -> str:
    try:
        return INDEX_TO_LEAD[index]
    except KeyError:
        raise ValueError(f"lead index out of range 1..12: {index}") from None


class ManifestError(ValueError):
    """Raised when a manifest or its payloads fail validation."""


@dataclass
class ECGRecord:
    """One multi-lead signal with its paired report.

    signal is [num_leads_present x S] in millivolts; lead_ids are canonical
    indices (1..12) aligned with the signal rows, kept in ascending order.
    """

    record_id: str
    signal: np.ndarray
    lead_ids: list[int]
    sample_rate_hz: int
    report: str
    label_names: list[str] | None = None

    def validate(self) -> "ECGRecord":
        if self.signal.ndim != 2:
            raise ManifestError(f"{self.record_id}: signal must be 2-D")
        if len(self.lead_ids) != self.signal.shape[0]:
            raise ManifestError(f"{self.record_id}: lead_ids/signal row mismatch")
        if len(set(self.lead_ids)) != len(self.lead_ids):
            raise ManifestError(f"{self.record_id}: duplicate lead index")
        if any(not 1 <= l <= NUM_LEADS for l in self.lead_ids):
            raise ManifestError(f"{self.record_id}: lead index outside 1..12")
        if self.signal.shape[1] <= 0:
            raise ManifestError(f"{self.record_id}: empty signal")
        if self.sample_rate_hz <= 0:
            raise ManifestError(f"{self.record_id}: non-positive sample rate")
        if not np.all(np.isfinite(self.signal)):
            raise ManifestError(f"{self.record_id}: NaN/Inf in signal")
        return self

    def canonicalized(self) -> "ECGRecord":
        """Rows sorted into ascending canonical lead order."""
        order = np.argsort(np.asarray(self.lead_ids))
        if np.array_equal(order, np.arange(len(self.lead_ids))):
            return self
        return replace(self, signal=self.signal[order],
                       lead_ids=[self.lead_ids[i] for i in order])

    def restricted_to(self, keep_leads) -> "ECGRecord":
        """Sub-record containing only the requested canonical lead ids."""
        keep = set(keep_leads)
        rows = [i for i, l in enumerate(self.lead_ids) if l in keep]
        if not rows:
            raise ValueError(f"{self.record_id}: no requested leads present")
        return replace(self, signal=self.signal[rows].copy(),
                       lead_ids=[self.lead_ids[i] for i in rows])

    def zero_padded(self) -> "ECGRecord":
        """12-lead record with absent leads filled by zeros (baseline mode)."""
        full = np.zeros((NUM_LEADS, self.signal.shape[1]), dtype=self.signal.dtype)
        for row, l in enumerate(self.lead_ids):
            full[l - 1] = self.signal[row]
        return replace(self, signal=full, lead_ids=list(range(1, NUM_LEADS + 1)))


@dataclass
class ManifestEntry:
    record_id: str
    path: str
    offset: int
    lead_ids: list[int]
    sample_rate_hz: int
    length: int
    report: str
    label_names: list[str] | None = None
    split: str = "train"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def load_record(self, entry: ManifestEntry) -> ECGRecord:
        path = self.root / entry.path
        n_leads = len(entry.lead_ids)
        count = n_leads * entry.length
        with open(path, "rb") as fh:
            fh.seek(entry.offset)
            buf = fh.read(4 * count)
        if len(buf) != 4 * count:
            raise ManifestError(f"{entry.record_id}: payload shorter than declared shape")
        signal = np.frombuffer(buf, dtype="<f4").reshape(n_leads, entry.length).copy()
        rec = ECGRecord(entry.record_id, signal, list(entry.lead_ids),
                        entry.sample_rate_hz, entry.report,
                        label_names=entry.label_names)
        return rec.validate().canonicalized()

    def load_all(self, split: str | None = None) -> list[ECGRecord]:
        entries = self.entries if split is None else self.split_entries(split)
        return [self.load_record(e) for e in entries]


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest file, checking payload existence/shape."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    if doc.get("version") != 1:
        raise ManifestError(f"unsupported manifest version: {doc.get('version')!r}")
    entries = []
    seen: set[str] = set()
    for raw in doc.get("records", []):
        entry = ManifestEntry(
            record_id=str(raw["id"]),
            path=str(raw["path"]),
            offset=int(raw.get("offset", 0)),
            lead_ids=[int(l) for l in raw["leads"]],
            sample_rate_hz=int(raw["sample_rate"]),
            length=int(raw["length"]),
            report=str(raw.get("report", "")),
            label_names=[str(s) for s in raw["labels"]] if raw.get("labels") is not None else None,
            split=str(raw.get("split", "train")),
        )
        if entry.record_id in seen:
            raise ManifestError(f"duplicate record_id: {entry.record_id}")
        seen.add(entry.record_id)
        if len(set(entry.lead_ids)) != len(entry.lead_ids) or any(
                not 1 <= l <= NUM_LEADS for l in entry.lead_ids):
            raise ManifestError(f"{entry.record_id}: invalid lead list")
        payload = path.parent / entry.path
        if not payload.exists():
            raise ManifestError(f"{entry.record_id}: missing payload {payload}")
        need = entry.offset + 4 * len(entry.lead_ids) * entry.length
        if payload.stat().st_size < need:
            raise ManifestError(f"{entry.record_id}: payload shorter than declared shape")
        entries.append(entry)
    return DatasetManifest(entries=entries, root=path.parent)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    records = []
    for e in manifest.entries:
        rec = {
            "id": e.record_id,
            "path": e.path,
            "offset": e.offset,
            "leads": list(e.lead_ids),
            "sample_rate": e.sample_rate_hz,
            "length": e.length,
            "report": e.report,
            "split": e.split,
        }
        if e.label_names is not None:
            rec["labels"] = list(e.label_names)
        records.append(rec)
    doc = {"version": 1, "records": records}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def normalize_record(rec: ECGRecord) -> ECGRecord:
    """Standardize each lead to zero mean / unit variance, independently.

    Degenerate flat leads (variance below epsilon) become all-zeros; padded
    and disconnected leads show up like that in partial-lead corpora.
    """
    x = rec.signal.astype(np.float64)
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, keepdims=True)
    centered = x - mean
    out = np.where(std < 1e-8, 0.0, centered / np.where(std < 1e-8, 1.0, std))
    return replace(rec, signal=out.astype(rec.signal.dtype))


def record_from_csv(path: str | Path, record_id: str, sample_rate_hz: int,
                    report: str = "") -> ECGRecord:
    """Convert a one-record CSV (one column per lead, header = lead names)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = [h.strip() for h in header]
        ids = [lead_index(n) for n in names]
        columns: list[list[float]] = [[] for _ in names]
        for row in reader:
            if not row:
                continue
            for i, cell in enumerate(row):
                columns[i].append(float(cell))
    signal = np.asarray(columns, dtype=np.float32)
    rec = ECGRecord(record_id, signal, ids, sample_rate_hz, report)
    return rec.validate().canonicalized()


def write_records_payload(records: list[ECGRecord], payload_path: str | Path,
                          manifest_path: str | Path,
                          splits: list[str] | None = None) -> DatasetManifest:
    """Pack records into one payload file and emit the matching manifest."""
    payload_path = Path(payload_path)
    manifest_path = Path(manifest_path)
    entries = []
    offset = 0
    rel = payload_path.name
    with open(payload_path, "wb") as fh:
        for i, rec in enumerate(records):
            data = np.ascontiguousarray(rec.signal, dtype="<f4").tobytes()
            fh.write(data)
            entries.append(ManifestEntry(
                record_id=rec.record_id,
                path=rel,
                offset=offset,
                lead_ids=list(rec.lead_ids),
                sample_rate_hz=rec.sample_rate_hz,
                length=rec.signal.shape[1],
                report=rec.report,
                label_names=rec.label_names,
                split=splits[i] if splits is not None else "train",
            ))
            offset += len(data)
    manifest = DatasetManifest(entries=entries, root=manifest_path.parent)
    write_manifest(manifest, manifest_path)
    return manifest
