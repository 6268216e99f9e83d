"""Binary segmentation masks: IoU and the run-length wire encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BinaryMask:
    """Row-major binary grid; ``bits`` has shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask bits must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def to_rle(self) -> list[int]:
        """Alternating zero/one run lengths over the flat row-major bits,
        starting with the zero run (which may be 0)."""
        flat = self.bits.ravel()
        if flat.size == 0:
            return []
        changes = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate(([0], changes, [flat.size]))
        runs = np.diff(bounds).tolist()
        if flat[0]:
            runs = [0] + runs
        return [int(r) for r in runs]

    @classmethod
    def from_rle(cls, width: int, height: int, runs) -> "BinaryMask":
        runs = [int(r) for r in runs]
        if any(r < 0 for r in runs):
            raise ValueError("run lengths must be non-negative")
        total = sum(runs)
        if total != width * height:
            raise ValueError(f"run lengths sum to {total}, expected {width * height}")
        flat = np.zeros(width * height, dtype=bool)
        pos = 0
        val = False
        for r in runs:
            if val:
                flat[pos:pos + r] = True
            pos += r
            val = not val
        return cls(bits=flat.reshape(height, width))

    def to_wire(self) -> dict:
        return {"w": self.width, "h": self.height, "rle": self.to_rle()}

    @classmethod
    def from_wire(cls, obj: dict) -> "BinaryMask":
        return cls.from_rle(obj["w"], obj["h"], obj["rle"])


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union; both masks empty counts as a perfect match."""
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(a.bits & b.bits))
    return inter / union
