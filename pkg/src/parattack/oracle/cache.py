"""Memoization of oracle responses keyed by exact byte strings.

Decoder quantization makes duplicate candidate texts frequent, so the
text->IoU cache saves most segmentation requests; judge calls are memoized
for the same reason. Errors are never cached.
"""

from __future__ import annotations

import hashlib
import threading
from pathlib import Path

from .dataset import QuerySample
from .protocol import dumps, loads


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class IouCache:
    """Thread-safe (sample_id, text) -> iou map with a JSONL disk format."""

    def __init__(self):
        self._lock = threading.Lock()
        self._store: dict[tuple[str, str], float] = {}
        self.hits = 0
        self.misses = 0

    def get(self, sample_id: str, text: str):
        with self._lock:
            return self._store.get((sample_id, text))

    def put(self, sample_id: str, text: str, iou: float) -> float:
        # first writer wins so the stored value is single-valued under races
        with self._lock:
            return self._store.setdefault((sample_id, text), float(iou))

    def __len__(self) -> int:
        return len(self._store)

    def save(self, path) -> None:
        """Write sorted by (sample_id, text hash) so files are byte-stable
        regardless of request completion order."""
        with self._lock:
            rows = [
                {"sample_id": sid, "text_sha256": _sha256(text), "text": text, "iou": iou}
                for (sid, text), iou in self._store.items()
            ]
        rows.sort(key=lambda r: (r["sample_id"], r["text_sha256"]))
        Path(path).write_text("".join(dumps(r) + "\n" for r in rows))

    @classmethod
    def load(cls, path) -> "IouCache":
        cache = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            row = loads(line)
            cache.put(str(row["sample_id"]), str(row["text"]), float(row["iou"]))
        return cache


def cached_evaluate(cache: IouCache, segmenter, sample: QuerySample, text: str) -> float:
    """IoU of ``text`` on ``sample``, hitting the oracle only on cache misses."""
    hit = cache.get(sample.sample_id, text)
    if hit is not None:
        cache.hits += 1
        return hit
    iou = segmenter.query_segmentation(sample, text)
    cache.misses += 1
    return cache.put(sample.sample_id, text, iou)


class JudgeCache:
    """Thread-safe (original, paraphrase) -> score map."""

    def __init__(self):
        self._lock = threading.Lock()
        self._store: dict[tuple[str, str], int] = {}

    def score(self, judge, original: str, paraphrase: str) -> int:
        with self._lock:
            hit = self._store.get((original, paraphrase))
        if hit is not None:
            return hit
        value = judge.judge(original, paraphrase)
        with self._lock:
            return self._store.setdefault((original, paraphrase), int(value))
