"""On-disk layout of attack runs: one directory per run, JSONL artifacts.

    runs/<run_id>/manifest.json        config snapshot, seed, version
    runs/<run_id>/<sample_id>.jsonl    header line, one line per iteration, end line
    runs/<run_id>/iou_cache.jsonl      sorted response cache

The manifest's created_at honors SOURCE_DATE_EPOCH so runs can be compared
byte-for-byte; all floats use the 17-significant-digit wire format.
"""

from __future__ import annotations

import datetime
import hashlib
import os
from pathlib import Path

from . import __version__
from .attack import AttackTrajectory, IterationRecord
from .evalproto import AdversarialCandidate, SRCurve
from .oracle.protocol import ProtocolError, dumps, loads


def created_at_stamp(environ=None) -> str:
    environ = environ if environ is not None else os.environ
    epoch = environ.get("SOURCE_DATE_EPOCH")
    moment = (datetime.datetime.fromtimestamp(int(epoch), tz=datetime.timezone.utc)
              if epoch else datetime.datetime.now(tz=datetime.timezone.utc))
    return moment.replace(microsecond=0).isoformat().replace("+00:00", "Z")


def derive_run_id(config_wire: dict, dataset_bytes: bytes) -> str:
    material = dumps(config_wire).encode("utf-8") + b"\x00" + dataset_bytes
    return "run-" + hashlib.sha256(material).hexdigest()[:12]


def write_manifest(run_dir: Path, run_id: str, config_wire: dict) -> Path:
    manifest = {
        "run_id": run_id,
        "created_at": created_at_stamp(),
        "tool_version": __version__,
        "config": config_wire,
    }
    path = Path(run_dir) / "manifest.json"
    path.write_text(dumps(manifest) + "\n")
    return path


def read_manifest(run_dir) -> dict:
    return loads((Path(run_dir) / "manifest.json").read_text().strip())


def trajectory_path(run_dir, sample_id: str) -> Path:
    return Path(run_dir) / f"{sample_id}.jsonl"


def write_trajectory(run_dir, trajectory: AttackTrajectory) -> Path:
    lines = [dumps({"type": "header", "schema": 1,
                    "sample_id": trajectory.sample_id,
                    "query_text": trajectory.query_text,
                    "original_iou": trajectory.original_iou})]
    lines += [dumps(it.to_wire()) for it in trajectory.iterations]
    lines.append(dumps({"type": "end", "complete": trajectory.complete,
                        "error": trajectory.error}))
    path = trajectory_path(run_dir, trajectory.sample_id)
    path.write_text("".join(line + "\n" for line in lines))
    return path


def read_trajectory(path) -> AttackTrajectory:
    lines = [loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ValueError(f"{path} is not a trajectory file (missing header)")
    header = lines[0]
    trajectory = AttackTrajectory(sample_id=str(header["sample_id"]),
                                  original_iou=float(header["original_iou"]),
                                  query_text=str(header.get("query_text", "")))
    for obj in lines[1:]:
        if obj.get("type") == "iteration":
            trajectory.iterations.append(IterationRecord.from_wire(obj))
        elif obj.get("type") == "end":
            trajectory.complete = bool(obj["complete"])
            trajectory.error = obj.get("error")
    return trajectory


def list_trajectories(run_dir) -> list[Path]:
    run_dir = Path(run_dir)
    skip = {"manifest.json", "iou_cache.jsonl"}
    return sorted(p for p in run_dir.glob("*.jsonl") if p.name not in skip)


def trajectory_candidates(trajectory: AttackTrajectory,
                          source_attack: str) -> list[AdversarialCandidate]:
    """Flatten a trajectory into the evaluation pool: per iteration, the
    sampled candidates in draw order, then the decoded mean."""
    pool = []
    for it in trajectory.iterations:
        for cand in it.candidates:
            pool.append(AdversarialCandidate(sample_id=trajectory.sample_id,
                                             text=cand.text, iou=cand.iou,
                                             source_attack=source_attack))
        pool.append(AdversarialCandidate(sample_id=trajectory.sample_id,
                                         text=it.mean_text, iou=it.mean_iou,
                                         source_attack=source_attack))
    return pool


def load_candidate_file(path) -> tuple[dict[str, list[AdversarialCandidate]], int]:
    """External candidate JSONL: {sample_id, text, iou, source_attack} rows.

    Malformed lines are skipped; returns (pools keyed by sample_id, skip count).
    """
    pools: dict[str, list[AdversarialCandidate]] = {}
    skipped = 0
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        try:
            row = loads(line)
            cand = AdversarialCandidate(
                sample_id=str(row["sample_id"]), text=str(row["text"]),
                iou=float(row["iou"]),
                source_attack=str(row.get("source_attack", "external")))
        except (ProtocolError, KeyError, TypeError, ValueError):
            skipped += 1
            continue
        pools.setdefault(cand.sample_id, []).append(cand)
    return pools, skipped


def load_originals_file(path) -> dict[str, tuple[str, float]]:
    """JSONL of {sample_id, original_text, original_iou} records."""
    originals = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row = loads(line)
        originals[str(row["sample_id"])] = (str(row["original_text"]),
                                            float(row["original_iou"]))
    return originals


def write_verdicts(path, outcomes: dict) -> None:
    lines = []
    for sample_id in sorted(outcomes):
        outcome = outcomes[sample_id]
        for cand, verdict in outcome.verdicts:
            row = {"sample_id": sample_id, "text": cand.text, "iou": cand.iou,
                   "source_attack": cand.source_attack}
            row.update(verdict.to_wire())
            lines.append(dumps(row))
    Path(path).write_text("".join(line + "\n" for line in lines))


def write_best(path, outcomes: dict) -> None:
    lines = []
    for sample_id in sorted(outcomes):
        outcome = outcomes[sample_id]
        row = {"sample_id": sample_id, "original_iou": outcome.original_iou,
               "unattackable": outcome.unattackable}
        if outcome.winner is not None:
            row.update({"text": outcome.winner.text, "iou": outcome.winner.iou,
                        "delta_iou": outcome.delta_iou,
                        "source_attack": outcome.winner.source_attack})
        else:
            row.update({"text": None, "iou": None, "delta_iou": None,
                        "source_attack": None})
        lines.append(dumps(row))
    Path(path).write_text("".join(line + "\n" for line in lines))


def write_curve(path, curve: SRCurve) -> None:
    Path(path).write_text(dumps(curve.to_wire()) + "\n")


def write_metrics_csv(path, rows: list[dict]) -> None:
    """Columns mirror the reported metric table: attack, mSR, SR_5, SR_10."""
    out = ["attack,mSR,SR_5,SR_10"]
    for row in rows:
        out.append(f"{row['attack']},{row['msr']:.6f},{row['sr5']:.6f},{row['sr10']:.6f}")
    Path(path).write_text("".join(line + "\n" for line in out))
