"""Corpus store: append-only records, deterministic splits, export/import.

Records live in ``records.jsonl`` (one JSON object per line, append
only), images in a content-addressed ``images/`` directory, and split
assignments in ``splits.json``. Everything is plain files so a corpus
can be diffed, rsynced, and rebuilt from its own export.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import shutil
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import __version__
from .chat_templates import ChatTurn, render_turns

SOURCES = ("wikipedia", "paper_pdf", "text_only")
SPLITS = ("train", "test", "unassigned")

RECORD_FIELDS = (
    "id",
    "source",
    "image_ref",
    "image_url",
    "article_url",
    "original_caption",
    "query",
    "answer",
    "split",
)


class CorpusError(Exception):
    pass


def record_id(source: str, content_key: str, query: str) -> str:
    """Stable digest over (source, image content hash or text, query)."""
    h = hashlib.sha256()
    for part in (source, content_key, query):
        h.update(part.encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


@dataclass
class CorpusRecord:
    id: str
    source: str
    query: str
    answer: str
    image_ref: str | None = None
    image_url: str | None = None
    article_url: str | None = None
    original_caption: str | None = None
    split: str = "unassigned"

    def validate(self) -> None:
        if self.source not in SOURCES:
            raise CorpusError(f"unknown source {self.source!r}")
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}")
        if not self.query.strip() or not self.answer.strip():
            raise CorpusError("query and answer must be non-empty")
        has_image = bool(self.image_ref)
        if self.source == "text_only" and has_image:
            raise CorpusError("text_only records must not carry an image_ref")
        if self.source != "text_only" and not has_image:
            raise CorpusError(f"{self.source} records require an image_ref")
        if not self.id:
            raise CorpusError("record id missing")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in RECORD_FIELDS}

    @classmethod
    def from_json(cls, d: dict) -> "CorpusRecord":
        known = {k: d[k] for k in d if k in cls.__dataclass_fields__}
        return cls(**known)


def make_record(
    source: str,
    query: str,
    answer: str,
    image_content_hash: str | None = None,
    image_ref: str | None = None,
    image_url: str | None = None,
    article_url: str | None = None,
    original_caption: str | None = None,
) -> CorpusRecord:
    """Build a record with its id derived from content, then validate it."""
    content_key = image_content_hash if image_content_hash else answer
    rec = CorpusRecord(
        id=record_id(source, content_key, query),
        source=source,
        query=query,
        answer=answer,
        image_ref=image_ref,
        image_url=image_url,
        article_url=article_url,
        original_caption=original_caption,
    )
    rec.validate()
    return rec


@dataclass
class DatasetManifest:
    name: str
    record_count: int
    split_counts: dict[str, int]
    seed: int | None
    created_at: str
    tool_version: str

    def validate(self) -> None:
        if sum(self.split_counts.values()) != self.record_count:
            raise CorpusError("split_counts do not sum to record_count")

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


class CorpusStore:
    """Filesystem-backed corpus with an in-memory id index."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        os.makedirs(self.images_dir, exist_ok=True)
        self._records: dict[str, CorpusRecord] = {}
        self._splits: dict[str, str] = {}
        self._split_seed: int | None = None
        self._load()

    @property
    def records_path(self) -> str:
        return os.path.join(self.root, "records.jsonl")

    @property
    def images_dir(self) -> str:
        return os.path.join(self.root, "images")

    @property
    def splits_path(self) -> str:
        return os.path.join(self.root, "splits.json")

    def _load(self) -> None:
        if os.path.exists(self.records_path):
            with open(self.records_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = CorpusRecord.from_json(json.loads(line))
                    self._records[rec.id] = rec
        if os.path.exists(self.splits_path):
            with open(self.splits_path, encoding="utf-8") as fh:
                data = json.load(fh)
            self._splits = data.get("assignments", {})
            self._split_seed = data.get("seed")
            for rid, split in self._splits.items():
                if rid in self._records:
                    self._records[rid].split = split

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[CorpusRecord]:
        return sorted(self._records.values(), key=lambda r: r.id)

    def get(self, rid: str) -> CorpusRecord | None:
        return self._records.get(rid)

    @property
    def split_seed(self) -> int | None:
        return self._split_seed

    # -- ingestion ---------------------------------------------------------

    def add_records(
        self, records: list[CorpusRecord]
    ) -> tuple[int, int, list[tuple[CorpusRecord, str]]]:
        """Append new records; returns (added, duplicates, rejected)."""
        added = duplicates = 0
        rejected: list[tuple[CorpusRecord, str]] = []
        with open(self.records_path, "a", encoding="utf-8") as fh:
            for rec in records:
                try:
                    rec.validate()
                except CorpusError as exc:
                    rejected.append((rec, str(exc)))
                    continue
                if rec.id in self._records:
                    duplicates += 1
                    continue
                fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
                self._records[rec.id] = rec
                added += 1
        return added, duplicates, rejected

    def ingest_image(self, source_path: str) -> str:
        """Copy an image into the content-addressed pool; returns image_ref."""
        with open(source_path, "rb") as fh:
            payload = fh.read()
        digest = hashlib.sha256(payload).hexdigest()
        ext = os.path.splitext(source_path)[1].lower() or ".bin"
        ref = os.path.join("images", digest + ext)
        target = os.path.join(self.root, ref)
        if not os.path.exists(target):
            with open(target, "wb") as fh:
                fh.write(payload)
        return ref

    # -- splits ------------------------------------------------------------

    def assign_splits(self, ratio: float = 0.9, seed: int = 0) -> dict[str, int]:
        """Random split at ``ratio``; deterministic for a given seed."""
        if not self._records:
            raise CorpusError("cannot split an empty store")
        if not 0 < ratio < 1:
            raise CorpusError("ratio must be in (0,1)")
        ids = sorted(self._records)
        rng = random.Random(seed)
        rng.shuffle(ids)
        n_train = round(ratio * len(ids))
        assignments = {}
        for i, rid in enumerate(ids):
            split = "train" if i < n_train else "test"
            assignments[rid] = split
            self._records[rid].split = split
        self._splits = assignments
        self._split_seed = seed
        with open(self.splits_path, "w", encoding="utf-8") as fh:
            json.dump({"seed": seed, "ratio": ratio, "assignments": assignments}, fh)
        return self.split_counts()

    def split_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for rec in self._records.values():
            counts[rec.split] += 1
        return {s: n for s, n in counts.items() if n}

    # -- export / import ---------------------------------------------------

    def export(self, out_dir: str, name: str = "corpus") -> DatasetManifest:
        """One JSONL per split plus the image pool and a manifest.

        Records are stable-sorted by id. Records whose image file is
        missing go to ``export_errors.jsonl`` and are left out.
        """
        os.makedirs(out_dir, exist_ok=True)
        out_images = os.path.join(out_dir, "images")
        os.makedirs(out_images, exist_ok=True)

        by_split: dict[str, list[CorpusRecord]] = {}
        errors: list[dict] = []
        for rec in self.records():
            if rec.image_ref:
                src = os.path.join(self.root, rec.image_ref)
                if not os.path.exists(src):
                    errors.append({"id": rec.id, "error": f"missing image {rec.image_ref}"})
                    continue
                shutil.copy2(src, os.path.join(out_images, os.path.basename(rec.image_ref)))
            by_split.setdefault(rec.split, []).append(rec)

        split_counts = {}
        for split, recs in sorted(by_split.items()):
            path = os.path.join(out_dir, f"{split}.jsonl")
            with open(path, "w", encoding="utf-8") as fh:
                for rec in recs:  # already id-sorted via self.records()
                    fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
            split_counts[split] = len(recs)

        if errors:
            with open(os.path.join(out_dir, "export_errors.jsonl"), "w", encoding="utf-8") as fh:
                for row in errors:
                    fh.write(json.dumps(row) + "\n")

        manifest = DatasetManifest(
            name=name,
            record_count=sum(split_counts.values()),
            split_counts=split_counts,
            seed=self._split_seed,
            created_at=datetime.now(timezone.utc).isoformat(),
            tool_version=__version__,
        )
        manifest.validate()
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest.to_json(), fh, indent=2)
        return manifest

    @classmethod
    def import_export(cls, export_dir: str, root: str) -> "CorpusStore":
        """Rebuild a store from an export directory."""
        store = cls(root)
        records = []
        for entry in sorted(os.listdir(export_dir)):
            if not entry.endswith(".jsonl") or entry == "export_errors.jsonl":
                continue
            with open(os.path.join(export_dir, entry), encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        records.append(CorpusRecord.from_json(json.loads(line)))
        store.add_records(records)
        assignments = {r.id: r.split for r in records if r.split != "unassigned"}
        if assignments:
            manifest_path = os.path.join(export_dir, "manifest.json")
            seed = None
            if os.path.exists(manifest_path):
                with open(manifest_path, encoding="utf-8") as fh:
                    seed = json.load(fh).get("seed")
            store._splits = assignments
            store._split_seed = seed
            with open(store.splits_path, "w", encoding="utf-8") as fh:
                json.dump({"seed": seed, "ratio": None, "assignments": assignments}, fh)
        src_images = os.path.join(export_dir, "images")
        if os.path.isdir(src_images):
            for entry in os.listdir(src_images):
                target = os.path.join(store.images_dir, entry)
                if not os.path.exists(target):
                    shutil.copy2(os.path.join(src_images, entry), target)
        return store


def render_chat(records: list[CorpusRecord], family: str) -> list[str]:
    """Training strings for single-turn records; image markers appear only
    for records that actually carry an image."""
    out = []
    for rec in records:
        n_images = 0 if rec.source == "text_only" else 1
        out.append(render_turns([ChatTurn(rec.query, rec.answer)], family, n_images=n_images))
    return out
