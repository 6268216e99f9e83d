"""Query-sample records and their JSON-lines dataset format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .masks import BinaryMask
from .protocol import dumps, loads


@dataclass(frozen=True)
class QuerySample:
    """One attackable sample: the query text plus whatever the segmentation
    oracle needs to resolve it (an opaque image ref, optionally a ground-truth
    mask when the oracle returns predicted masks instead of IoU)."""

    sample_id: str
    image_ref: str
    query_text: str
    ground_truth: BinaryMask | None = None

    def to_wire(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "image_ref": self.image_ref,
            "query_text": self.query_text,
            "ground_truth": self.ground_truth.to_wire() if self.ground_truth else None,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "QuerySample":
        gt = obj.get("ground_truth")
        return cls(
            sample_id=str(obj["sample_id"]),
            image_ref=str(obj.get("image_ref", "")),
            query_text=str(obj["query_text"]),
            ground_truth=BinaryMask.from_wire(gt) if gt else None,
        )


def load_samples(path) -> list[QuerySample]:
    samples = []
    seen = set()
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        sample = QuerySample.from_wire(loads(line))
        if sample.sample_id in seen:
            raise ValueError(f"duplicate sample_id {sample.sample_id!r} in {path}")
        seen.add(sample.sample_id)
        samples.append(sample)
    return samples


def save_samples(samples, path) -> None:
    text = "".join(dumps(s.to_wire()) + "\n" for s in samples)
    Path(path).write_text(text)
