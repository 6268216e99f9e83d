import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parattack.evalproto import (
    AdversarialCandidate,
    ProtocolConfig,
    SRCurve,
    cosine_filter,
    dedup,
    drop_non_degrading,
    evaluate_pool,
    evaluate_sample,
    judge_validity,
    regex_consistency,
    relative_iou_drop,
    select_best,
    sr_curve,
    unify,
)
from parattack.oracle.synthetic import (
    HashingEmbedder,
    InProcessEmbedder,
    InProcessJudge,
    SyntheticOracleSuite,
)


class _DirectEmbedder:
    """Synthetic embedder with the client-call surface, in process."""

    def __init__(self, dim=2):
        self._embedder = HashingEmbedder(dim=dim)

    def embed_text(self, text):
        return self._embedder.embed(text)


def cand(sample_id="s", text="t", iou=0.5, source="a"):
    return AdversarialCandidate(sample_id=sample_id, text=text, iou=iou,
                                source_attack=source)


def test_dedup():
    pool = [cand(text="x", iou=0.1), cand(text="x", iou=0.9), cand(text="y")]
    kept = dedup(pool)
    assert [c.text for c in kept] == ["x", "y"]
    assert kept[0].iou == 0.1  # first occurrence survives
    assert dedup([cand(text="a"), cand(text="b")]) == [cand(text="a"), cand(text="b")]
    assert [c.text for c in dedup([cand(text="Case"), cand(text="case")])] == ["Case", "case"]


def test_drop_non_degrading():
    pool = [cand(text="same", iou=0.8), cand(text="less", iou=0.79)]
    kept = drop_non_degrading(pool, original_iou=0.8)
    assert [c.text for c in kept] == ["less"]
    assert drop_non_degrading(pool, original_iou=0.0) == []


def test_regex_consistency_paper_example():
    assert not regex_consistency("a person is calling someone",
                                 "A person is calling someone.")
    assert regex_consistency("Find the cup.", "Locate the cup.")
    assert not regex_consistency("find the cup", "find the cup?")


def test_regex_consistency_edge_cases():
    # first alphabetic character governs the case check, not the first byte
    assert regex_consistency('"Find" the cup.', "Find the cup.")
    assert regex_consistency("123 go!", "42 go!")
    assert not regex_consistency("Go now", "go now")
    with pytest.raises(ValueError):
        regex_consistency("", "x")


@given(st.text(min_size=1).filter(lambda s: s.strip()))
@settings(max_examples=100)
def test_regex_consistency_reflexive(text):
    assert regex_consistency(text, text)


def test_cosine_filter():
    emb = _DirectEmbedder(dim=2)
    cos, ok = cosine_filter(emb, "Find the cup.", "Find the cup.")
    assert cos == pytest.approx(1.0) and ok
    cos, ok = cosine_filter(emb, "L[1.0,0.0]", "L[0.0,1.0]")
    assert cos == pytest.approx(0.0) and not ok
    # strict inequality: a cosine exactly at the threshold fails
    cos, _ = cosine_filter(emb, "L[1.0,0.0]", "L[1.0,1.0]")
    _, ok = cosine_filter(emb, "L[1.0,0.0]", "L[1.0,1.0]", threshold=cos)
    assert not ok
    with pytest.raises(ValueError):
        cosine_filter(emb, "L[0.0,0.0]", "L[1.0,1.0]")


def test_judge_validity_stub():
    suite = SyntheticOracleSuite(dim=2, grid=0.5)
    judge = InProcessJudge(suite)
    assert judge_validity(judge, "L[1.0,2.0]", "L[1.0,2.0]") == 5
    assert judge_validity(judge, "one fixture text", "a totally different one") == 1


def test_relative_iou_drop():
    assert relative_iou_drop(0.8, 0.6) == pytest.approx(25.0)
    assert relative_iou_drop(0.8, 0.8) == 0.0
    assert relative_iou_drop(0.5, 0.0) == 100.0
    assert relative_iou_drop(0.5, 0.6) == pytest.approx(-20.0)
    with pytest.raises(ValueError):
        relative_iou_drop(0.0, 0.0)


def test_select_best():
    only = cand(text="only", iou=0.4)
    assert select_best([only], 0.8) is only
    a = cand(text="a", iou=0.6)   # drop 25
    b = cand(text="b", iou=0.4)   # drop 50
    assert select_best([a, b], 0.8) is b
    tie1 = cand(text="t1", iou=0.4)
    tie2 = cand(text="t2", iou=0.4)
    assert select_best([tie1, tie2], 0.8) is tie1
    assert select_best([], 0.8) is None


def test_sr_curve_trivial_and_worked_example():
    all_invalid = sr_curve([None, None])
    assert np.all(all_invalid.sr == 0.0) and all_invalid.msr == 0.0

    one_total = sr_curve([100.0])
    assert np.all(one_total.sr == 1.0) and one_total.msr == 1.0

    curve = sr_curve([100.0, 50.0, None])
    expected_msr = (51 * (2 / 3) + 50 * (1 / 3)) / 101
    assert curve.msr == pytest.approx(expected_msr, abs=1e-9)
    assert curve.sr5 == pytest.approx(2 / 3)
    assert curve.sr10 == pytest.approx(2 / 3)
    assert len(curve.grid) == 101

    with pytest.raises(ValueError):
        sr_curve([])


def _brute_force_curve(deltas):
    """Independent exact-rational oracle over the 101-point grid."""
    from fractions import Fraction

    n = len(deltas)
    sr = []
    total = 0
    for theta in range(101):
        hits = sum(1 for d in deltas if d is not None and d >= theta)
        total += hits
        sr.append(hits / n)
    return sr, float(Fraction(total, 101 * n))


@given(st.lists(st.one_of(st.none(), st.floats(min_value=-50, max_value=150)),
                min_size=1, max_size=30))
@settings(max_examples=100)
def test_sr_curve_matches_brute_force_and_is_monotone(deltas):
    curve = sr_curve(deltas)
    brute_sr, brute_msr = _brute_force_curve(deltas)
    assert list(curve.sr) == brute_sr
    assert curve.msr == brute_msr
    assert np.all(np.diff(curve.sr) <= 0)
    assert curve.sr5 == curve.sr[5] and curve.sr10 == curve.sr[10]


@pytest.fixture
def protocol_fixture():
    suite = SyntheticOracleSuite(dim=3, grid=0.5)
    embedder = InProcessEmbedder(suite)
    judge = InProcessJudge(suite)
    original = "L[2.0,1.0,0.5]"
    return embedder, judge, original


def test_evaluate_pool_verdicts(protocol_fixture):
    embedder, judge, original = protocol_fixture
    pool = [
        cand(text="L[2.0,1.0,0.0]", iou=0.5),        # valid: close, degrades
        cand(text="L[2.0,1.0,0.0]", iou=0.5),        # duplicate
        cand(text="L[2.0,1.0,0.5]", iou=0.9),        # does not degrade (iou >= orig IoU 0.8? no: 0.9 > 0.8)
        cand(text="L[-2.0,-1.0,-0.5]", iou=0.1),     # far away: cosine fails
    ]
    results = evaluate_pool(pool, original, 0.8, embedder=embedder, judge=judge)
    verdicts = [v for _, v in results]
    assert verdicts[0].valid and verdicts[0].llm_score == 5
    assert verdicts[1].duplicate and not verdicts[1].valid
    assert verdicts[1].llm_score is None  # judge not consulted for rejected rows
    assert not verdicts[2].degrades and not verdicts[2].valid
    assert not verdicts[3].cosine_ok and not verdicts[3].valid
    assert all(v.cosine is not None for v in verdicts)


def test_filter_order_independence(protocol_fixture):
    embedder, judge, original = protocol_fixture
    rng = np.random.default_rng(8)
    base = np.array([2.0, 1.0, 0.5])
    pool = []
    for i in range(24):
        vec = base + rng.normal(0, rng.choice([0.05, 0.5, 3.0]), size=3)
        text = "L[" + ",".join(repr(float(round(v * 2) / 2)) for v in vec) + "]"
        pool.append(cand(text=text, iou=float(rng.uniform(0, 1))))
    original_iou = 0.7

    results = evaluate_pool(pool, original, original_iou,
                            embedder=embedder, judge=judge)
    pipeline_valid = {c.text for c, v in results if v.valid}

    survivors = dedup(drop_non_degrading(pool, original_iou))
    predicates = {
        "regex": lambda c: regex_consistency(original, c.text),
        "cosine": lambda c: cosine_filter(embedder, original, c.text)[1],
        "judge": lambda c: judge_validity(judge, original, c.text) == 5,
    }
    import itertools
    for order in itertools.permutations(predicates):
        remaining = list(survivors)
        for name in order:
            remaining = [c for c in remaining if predicates[name](c)]
        assert {c.text for c in remaining} == pipeline_valid


def test_evaluate_sample_and_unattackable(protocol_fixture):
    embedder, judge, original = protocol_fixture
    pool = [cand(text="L[2.0,1.0,0.0]", iou=0.4),
            cand(text="L[2.0,0.5,0.5]", iou=0.2)]
    outcome = evaluate_sample("s", pool, original, 0.8, embedder=embedder, judge=judge)
    assert outcome.winner is not None
    assert outcome.winner.iou == 0.2
    assert outcome.delta_iou == pytest.approx(75.0)

    zero = evaluate_sample("z", pool, original, 0.0, embedder=embedder, judge=judge)
    assert zero.unattackable and zero.winner is None and zero.delta_iou is None


def test_unify_single_pool_equals_select_best(protocol_fixture):
    embedder, judge, original = protocol_fixture
    pool = {"s": [cand(text="L[2.0,1.0,0.0]", iou=0.4, source="alpha"),
                  cand(text="L[2.0,0.5,0.5]", iou=0.3, source="alpha")]}
    originals = {"s": (original, 0.8)}
    outcomes = unify([pool], originals, embedder=embedder, judge=judge)
    solo = evaluate_sample("s", pool["s"], original, 0.8,
                           embedder=embedder, judge=judge)
    assert outcomes["s"].winner == solo.winner


def test_unify_disjoint_winners_and_dominance(protocol_fixture):
    embedder, judge, original = protocol_fixture
    pool_a = {
        "s1": [cand("s1", "L[2.0,1.0,0.0]", 0.2, "alpha")],
        "s2": [cand("s2", "L[2.0,1.0,0.0]", 0.6, "alpha")],
    }
    pool_b = {
        "s1": [cand("s1", "L[2.0,0.5,0.5]", 0.5, "beta")],
        "s2": [cand("s2", "L[2.0,0.5,0.5]", 0.1, "beta")],
    }
    originals = {"s1": (original, 0.8), "s2": (original, 0.8)}
    unified = unify([pool_a, pool_b], originals, embedder=embedder, judge=judge)
    assert unified["s1"].winner.source_attack == "alpha"
    assert unified["s2"].winner.source_attack == "beta"
    # never worse than any constituent attack on any sample
    for pool in (pool_a, pool_b):
        single = unify([pool], originals, embedder=embedder, judge=judge)
        for sid in originals:
            if single[sid].delta_iou is not None:
                assert unified[sid].delta_iou >= single[sid].delta_iou


def test_unify_empty_pools(protocol_fixture):
    embedder, judge, original = protocol_fixture
    outcomes = unify([{"s": []}], {"s": (original, 0.8)},
                     embedder=embedder, judge=judge)
    assert outcomes["s"].winner is None
