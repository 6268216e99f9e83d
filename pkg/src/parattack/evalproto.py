"""Automatic evaluation of adversarial paraphrase pools.

Candidates flow through: exact-text dedup, strict IoU-degradation, a
capitalization/terminal-punctuation shape check, an embedding-cosine filter
(strict > threshold), and an external judge that must award a perfect score.
Survivors compete on relative IoU drop; success-rate curves summarize the
per-sample winners over the 0..100% drop-threshold grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DEFAULT_COSINE_THRESHOLD = 0.825
DEFAULT_TERMINAL_PUNCTUATION = ".!?"
THETA_GRID = np.arange(101)
PERFECT_SCORE = 5


@dataclass(frozen=True)
class AdversarialCandidate:
    sample_id: str
    text: str
    iou: float
    source_attack: str = ""

    def __post_init__(self):
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"candidate iou must lie in [0, 1], got {self.iou}")


@dataclass
class ValidityVerdict:
    duplicate: bool = False
    degrades: bool = False
    regex_ok: bool = False
    cosine: Optional[float] = None
    cosine_ok: bool = False
    llm_score: Optional[int] = None
    valid: bool = False

    def to_wire(self) -> dict:
        row = {
            "duplicate": self.duplicate,
            "degrades": self.degrades,
            "regex_ok": self.regex_ok,
            "cosine": self.cosine,
            "cosine_ok": self.cosine_ok,
            "valid": self.valid,
        }
        if self.llm_score is not None:
            row["llm_score"] = self.llm_score
        return row


@dataclass(frozen=True)
class ProtocolConfig:
    cosine_threshold: float = DEFAULT_COSINE_THRESHOLD
    terminal_punctuation: str = DEFAULT_TERMINAL_PUNCTUATION
    use_judge: bool = True


def dedup(candidates: list[AdversarialCandidate]) -> list[AdversarialCandidate]:
    """Keep the first occurrence of each exact text per sample."""
    seen: set[tuple[str, str]] = set()
    kept = []
    for cand in candidates:
        key = (cand.sample_id, cand.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(cand)
    return kept


def drop_non_degrading(candidates: list[AdversarialCandidate],
                       original_iou: float) -> list[AdversarialCandidate]:
    """Keep only candidates that strictly reduce the IoU."""
    if not 0.0 <= original_iou <= 1.0:
        raise ValueError(f"original_iou must lie in [0, 1], got {original_iou}")
    return [c for c in candidates if c.iou < original_iou]


def _first_alpha_case(text: str) -> Optional[str]:
    for ch in text:
        if ch.isalpha():
            return "upper" if ch.isupper() else "lower"
    return None


def _terminal_punct(text: str, punctuation: str) -> Optional[str]:
    return text[-1] if text and text[-1] in punctuation else None


def regex_consistency(original: str, paraphrase: str,
                      terminal_punctuation: str = DEFAULT_TERMINAL_PUNCTUATION) -> bool:
    """True iff the paraphrase preserves the case class of the first alphabetic
    character and the terminal punctuation (one of the configured set, or none)."""
    if not original or not paraphrase:
        raise ValueError("both texts must be non-empty")
    return (_first_alpha_case(original) == _first_alpha_case(paraphrase)
            and _terminal_punct(original, terminal_punctuation)
            == _terminal_punct(paraphrase, terminal_punctuation))


def cosine_filter(embedder, original: str, paraphrase: str,
                  threshold: float = DEFAULT_COSINE_THRESHOLD) -> tuple[float, bool]:
    """Embedding cosine of the pair and whether it strictly exceeds the threshold."""
    if not -1.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [-1, 1], got {threshold}")
    a = np.asarray(embedder.embed_text(original), dtype=float)
    b = np.asarray(embedder.embed_text(paraphrase), dtype=float)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cannot compute cosine of a zero-norm embedding")
    cosine = float(a @ b) / (na * nb)
    return cosine, cosine > threshold


def judge_validity(judge, original: str, paraphrase: str) -> int:
    """Integer 1..5 from the external judge oracle (range-checked by the client)."""
    return judge.judge(original, paraphrase)


def relative_iou_drop(original_iou: float, adv_iou: float) -> float:
    """Relative IoU degradation in percent; negative when the IoU went up."""
    if original_iou <= 0.0:
        raise ValueError("relative drop is undefined for original_iou = 0")
    return 100.0 * (original_iou - adv_iou) / original_iou


def select_best(valid_candidates: list[AdversarialCandidate],
                original_iou: float) -> Optional[AdversarialCandidate]:
    """Largest relative IoU drop wins; ties go to the earliest candidate."""
    best = None
    best_drop = None
    for cand in valid_candidates:
        drop = relative_iou_drop(original_iou, cand.iou)
        if best is None or drop > best_drop:
            best, best_drop = cand, drop
    return best


def evaluate_pool(candidates: list[AdversarialCandidate], original_text: str,
                  original_iou: float, embedder=None, judge=None,
                  config: ProtocolConfig = ProtocolConfig()
                  ) -> list[tuple[AdversarialCandidate, ValidityVerdict]]:
    """Full filter pipeline over one sample's pool.

    Cheap predicates (dedup, degradation, shape, cosine) are evaluated for
    every candidate; the judge is only consulted for candidates that already
    pass everything else, since judge calls are the expensive step. The valid
    set is unaffected by evaluation order because the predicates are
    independent.
    """
    if embedder is None:
        raise ValueError("an embedder is required for the cosine filter")
    if config.use_judge and judge is None:
        raise ValueError("a judge is required unless use_judge is disabled")
    seen: set[str] = set()
    results = []
    for cand in candidates:
        verdict = ValidityVerdict()
        verdict.duplicate = cand.text in seen
        seen.add(cand.text)
        verdict.degrades = original_iou > 0.0 and cand.iou < original_iou
        verdict.regex_ok = regex_consistency(original_text, cand.text,
                                             config.terminal_punctuation)
        verdict.cosine, verdict.cosine_ok = cosine_filter(
            embedder, original_text, cand.text, config.cosine_threshold)
        passed = (not verdict.duplicate and verdict.degrades
                  and verdict.regex_ok and verdict.cosine_ok)
        if passed and config.use_judge:
            verdict.llm_score = judge_validity(judge, original_text, cand.text)
            verdict.valid = verdict.llm_score == PERFECT_SCORE
        else:
            verdict.valid = passed and not config.use_judge
        results.append((cand, verdict))
    return results


@dataclass(frozen=True)
class SRCurve:
    """Success rate per integer drop-threshold percent, with its summaries."""

    grid: np.ndarray
    sr: np.ndarray
    msr: float
    sr5: float
    sr10: float
    attackable: int = 0
    unattackable: int = 0

    def to_wire(self) -> dict:
        return {
            "grid": [int(t) for t in self.grid],
            "sr": [float(s) for s in self.sr],
            "msr": self.msr,
            "sr5": self.sr5,
            "sr10": self.sr10,
            "attackable": self.attackable,
            "unattackable": self.unattackable,
        }


def sr_curve(per_sample_deltas: list[Optional[float]],
             unattackable: int = 0) -> SRCurve:
    """Curve over theta = 0..100: share of samples whose valid winner achieves
    a relative drop >= theta. Entries of None are samples with no valid
    paraphrase; they count as failures at every threshold."""
    n = len(per_sample_deltas)
    if n == 0:
        raise ValueError("sr_curve needs at least one sample")
    deltas = np.array([d for d in per_sample_deltas if d is not None], dtype=float)
    # integer hit counts with single divisions keep every value exactly equal
    # to its rational definition (no float summation-order effects in msr)
    hits = np.array([int((deltas >= theta).sum()) for theta in THETA_GRID])
    sr = hits / n
    msr = int(hits.sum()) / (len(THETA_GRID) * n)
    return SRCurve(grid=THETA_GRID.copy(), sr=sr, msr=msr,
                   sr5=float(sr[5]), sr10=float(sr[10]),
                   attackable=n, unattackable=unattackable)


@dataclass
class SampleOutcome:
    """Per-sample result of the pipeline: the winner (if any) and its drop."""

    sample_id: str
    original_iou: float
    winner: Optional[AdversarialCandidate] = None
    delta_iou: Optional[float] = None
    unattackable: bool = False
    verdicts: list = field(default_factory=list)


def evaluate_sample(sample_id: str, candidates: list[AdversarialCandidate],
                    original_text: str, original_iou: float, embedder=None,
                    judge=None, config: ProtocolConfig = ProtocolConfig()) -> SampleOutcome:
    outcome = SampleOutcome(sample_id=sample_id, original_iou=original_iou)
    if original_iou <= 0.0:
        # nothing can reduce a zero IoU; excluded from curve denominators
        outcome.unattackable = True
        return outcome
    outcome.verdicts = evaluate_pool(candidates, original_text, original_iou,
                                     embedder=embedder, judge=judge, config=config)
    valid = [cand for cand, verdict in outcome.verdicts if verdict.valid]
    outcome.winner = select_best(valid, original_iou)
    if outcome.winner is not None:
        outcome.delta_iou = relative_iou_drop(original_iou, outcome.winner.iou)
    return outcome


def unify(result_sets: list[dict[str, list[AdversarialCandidate]]],
          originals: dict[str, tuple[str, float]], embedder=None, judge=None,
          config: ProtocolConfig = ProtocolConfig()) -> dict[str, SampleOutcome]:
    """Merge candidate pools from several attacks and pick per-sample winners.

    ``originals`` maps sample_id -> (original_text, original_iou). The winning
    candidate keeps its source_attack tag, identifying which attack won."""
    merged: dict[str, list[AdversarialCandidate]] = {}
    for pool in result_sets:
        for sample_id, candidates in pool.items():
            merged.setdefault(sample_id, []).extend(candidates)
    outcomes = {}
    for sample_id in sorted(merged):
        if sample_id not in originals:
            raise KeyError(f"no original record for sample {sample_id!r}")
        text, iou = originals[sample_id]
        outcomes[sample_id] = evaluate_sample(
            sample_id, merged[sample_id], text, iou,
            embedder=embedder, judge=judge, config=config)
    return outcomes
