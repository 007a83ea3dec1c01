"""Corpus statistics: token-count and image-resolution histograms.

Token counting goes through a small adapter so any vocabulary can be
plugged in: the built-in ``whitespace`` adapter counts maximal non-space
runs, and a merge-list file gives a byte-pair-style tokenizer. Histogram
binning follows numpy semantics: every bin is half-open except the last,
which also includes its upper edge.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

TOKEN_FIELDS = ("question", "answer", "combined")
AXES = ("X", "Y")


# ---------------------------------------------------------------------------
# tokenizer adapters


class TokenizerAdapter:
    """Deterministic token counter identified by ``id``."""

    def __init__(self, adapter_id: str):
        self.id = adapter_id

    def tokenize(self, text: str) -> list[str]:
        raise NotImplementedError

    def count_tokens(self, text: str) -> int:
        return len(self.tokenize(text))


class WhitespaceAdapter(TokenizerAdapter):
    def __init__(self) -> None:
        super().__init__("whitespace")

    def tokenize(self, text: str) -> list[str]:
        return text.split()


class MergeTableAdapter(TokenizerAdapter):
    """Byte-pair-style tokenizer driven by a ranked merge list.

    Each whitespace-separated word is split into characters, then adjacent
    pairs are merged greedily in rank order until no listed pair remains.
    """

    def __init__(self, adapter_id: str, merges: Sequence[tuple[str, str]]):
        super().__init__(adapter_id)
        self.ranks = {tuple(pair): rank for rank, pair in enumerate(merges)}

    def _encode_word(self, word: str) -> list[str]:
        pieces = list(word)
        while len(pieces) > 1:
            best_rank = None
            best_at = -1
            for i in range(len(pieces) - 1):
                rank = self.ranks.get((pieces[i], pieces[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_at = rank, i
            if best_at < 0:
                break
            pieces[best_at : best_at + 2] = [pieces[best_at] + pieces[best_at + 1]]
        return pieces

    def tokenize(self, text: str) -> list[str]:
        out: list[str] = []
        for word in text.split():
            out.extend(self._encode_word(word))
        return out


def load_adapter(source: str = "whitespace") -> TokenizerAdapter:
    """"whitespace", or a path to a JSON file with a ``merges`` list
    (entries either "a b" strings or [a, b] pairs)."""
    if source == "whitespace":
        return WhitespaceAdapter()
    with open(source, encoding="utf-8") as fh:
        data = json.load(fh)
    raw = data["merges"] if isinstance(data, dict) else data
    merges = []
    for entry in raw:
        if isinstance(entry, str):
            a, _, b = entry.partition(" ")
        else:
            a, b = entry
        merges.append((a, b))
    return MergeTableAdapter(os.path.basename(source), merges)


def count_tokens(text: str, adapter: TokenizerAdapter) -> int:
    return adapter.count_tokens(text)


# ---------------------------------------------------------------------------
# histograms


@dataclass(frozen=True)
class Histogram:
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    total: int
    skipped: int = 0

    def __post_init__(self) -> None:
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ValueError("counts length must be len(edges) - 1")
        if any(b <= a for a, b in zip(self.bin_edges, self.bin_edges[1:])):
            raise ValueError("bin edges must be strictly ascending")
        if sum(self.counts) != self.total:
            raise ValueError("counts do not sum to total")


def _histogram(values: Sequence[float], bins, skipped: int = 0) -> Histogram:
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        if np.isscalar(bins):
            edges = np.linspace(0.0, 1.0, int(bins) + 1)
            counts = np.zeros(int(bins), dtype=int)
        else:
            edges = np.asarray(bins, dtype=float)
            counts = np.zeros(len(edges) - 1, dtype=int)
    else:
        counts, edges = np.histogram(values, bins=bins)
    return Histogram(
        bin_edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        total=int(counts.sum()),
        skipped=skipped,
    )


def token_histogram(records: Iterable, field: str, adapter: TokenizerAdapter, bins=50) -> Histogram:
    """Histogram of per-record token counts.

    ``field`` is "question", "answer", or "combined" (question + answer).
    Records expose ``query`` and ``answer`` text attributes.
    """
    if field not in TOKEN_FIELDS:
        raise ValueError(f"field must be one of {TOKEN_FIELDS}")
    values = []
    for rec in records:
        q = count_tokens(rec.query, adapter)
        a = count_tokens(rec.answer, adapter)
        values.append({"question": q, "answer": a, "combined": q + a}[field])
    return _histogram(values, bins)


def resolution_histogram(images: Iterable, axis: str, bins=50) -> Histogram:
    """Histogram of intrinsic pixel sizes: X is width, Y is height.

    ``images`` entries are file paths or (width, height) pairs; entries
    that fail to decode are skipped and counted in ``skipped``.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    values = []
    skipped = 0
    for item in images:
        if isinstance(item, (tuple, list)) and len(item) == 2:
            w, h = item
        else:
            try:
                with Image.open(item) as im:
                    w, h = im.size
            except (OSError, ValueError):
                skipped += 1
                continue
        values.append(w if axis == "X" else h)
    return _histogram(values, bins, skipped=skipped)


def merge_histograms(a: Histogram, b: Histogram) -> Histogram:
    """Pointwise sum; both histograms must share identical edges."""
    if a.bin_edges != b.bin_edges:
        raise ValueError("cannot merge histograms with different edges")
    return Histogram(
        bin_edges=a.bin_edges,
        counts=tuple(x + y for x, y in zip(a.counts, b.counts)),
        total=a.total + b.total,
        skipped=a.skipped + b.skipped,
    )


def rebin(h: Histogram, factor: int) -> Histogram:
    """Merge each run of ``factor`` adjacent bins into one."""
    if (len(h.counts)) % factor:
        raise ValueError("bin count not divisible by factor")
    counts = tuple(
        sum(h.counts[i : i + factor]) for i in range(0, len(h.counts), factor)
    )
    edges = h.bin_edges[::factor]
    return Histogram(bin_edges=edges, counts=counts, total=h.total, skipped=h.skipped)


# ---------------------------------------------------------------------------
# report


def write_histogram_csv(h: Histogram, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, count in zip(h.bin_edges, h.bin_edges[1:], h.counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), count])


def read_histogram_csv(path: str) -> Histogram:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    edges = [float(r["bin_lo"]) for r in rows] + [float(rows[-1]["bin_hi"])]
    counts = tuple(int(r["count"]) for r in rows)
    return Histogram(tuple(edges), counts, sum(counts))


def report(records: list, images: list, adapter: TokenizerAdapter, out_dir: str, bins=50) -> dict:
    """Write the six per-figure CSVs and return their paths.

    Three token histograms (question, answer, combined), two resolution
    histograms (X, Y), and a key-value summary.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for field in TOKEN_FIELDS:
        h = token_histogram(records, field, adapter, bins)
        path = os.path.join(out_dir, f"tokens_{field}.csv")
        write_histogram_csv(h, path)
        paths[f"tokens_{field}"] = path
    skipped = 0
    for axis in AXES:
        h = resolution_histogram(images, axis, bins)
        skipped = h.skipped
        path = os.path.join(out_dir, f"resolution_{axis.lower()}.csv")
        write_histogram_csv(h, path)
        paths[f"resolution_{axis.lower()}"] = path
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerow(["records", len(records)])
        writer.writerow(["images", len(images)])
        writer.writerow(["images_skipped", skipped])
        writer.writerow(["tokenizer", adapter.id])
    paths["summary"] = summary_path
    return paths
