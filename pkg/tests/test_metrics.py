import itertools

from hypothesis import given, strategies as st

from sireason import evalcli
from sireason.core import (
    LabeledContext,
    ReasoningStep,
    ReasoningTrace,
    Statement,
)
from sireason.evalcli import (
    exact_match,
    jaccard_metrics,
    made_up_fact_rate,
    rouge1,
    rougeL,
    rouge_scores,
    rouge_tokenize,
)


def _trace(context, steps):
    ctx = LabeledContext.from_statements(context)
    trace = ReasoningTrace(base_context=ctx)
    for selection, inference in steps:
        trace = trace.extended(
            ReasoningStep(
                selection=tuple(Statement(s) for s in selection),
                inference=Statement(inference),
            )
        )
    return trace


CONTEXT = ["rule one", "fact a", "fact b", "fact c"]


def test_jaccard_identity_and_disjoint():
    gold = _trace(CONTEXT, [(["rule one", "fact a"], "derived x")])
    same = _trace(CONTEXT, [(["rule one", "fact a"], "derived x")])
    other = _trace(CONTEXT, [(["fact b", "fact c"], "derived y")])
    assert jaccard_metrics(gold, same) == (1.0, 1.0, 1.0)
    leaves, steps, inter = jaccard_metrics(gold, other)
    assert leaves == 0.0 and steps == 0.0 and inter == 0.0


def test_jaccard_leaves_partial_overlap():
    # selections {rule one, fact a} vs {rule one, fact b}: 1 shared of 3
    a = _trace(CONTEXT, [(["rule one", "fact a"], "derived x")])
    b = _trace(CONTEXT, [(["rule one", "fact b"], "derived x")])
    leaves, steps, inter = jaccard_metrics(a, b)
    assert leaves == 1 / 3
    assert steps == 0.0  # selections differ, so the step pairs differ
    assert inter == 1.0


def test_jaccard_ignores_step_order():
    ab = _trace(
        CONTEXT,
        [(["rule one", "fact a"], "x"), (["rule one", "fact b"], "y")],
    )
    ba = _trace(
        CONTEXT,
        [(["rule one", "fact b"], "y"), (["rule one", "fact a"], "x")],
    )
    assert jaccard_metrics(ab, ba) == (1.0, 1.0, 1.0)


@given(
    st.lists(st.sampled_from(CONTEXT[1:]), min_size=1, max_size=3),
    st.lists(st.sampled_from(CONTEXT[1:]), min_size=1, max_size=3),
)
def test_jaccard_symmetric_and_bounded(sel_a, sel_b):
    a = _trace(CONTEXT, [(["rule one"] + sel_a, "x")])
    b = _trace(CONTEXT, [(["rule one"] + sel_b, "y")])
    forward = jaccard_metrics(a, b)
    backward = jaccard_metrics(b, a)
    assert forward == backward
    assert all(0.0 <= v <= 1.0 for v in forward)


def test_rouge_tokenize():
    assert rouge_tokenize("An ice CUBE, is solid.") == [
        "an", "ice", "cube", "is", "solid",
    ]
    assert rouge_tokenize("") == []


def test_rouge_identity_and_disjoint():
    assert rouge1("a b c", "a b c") == 1.0
    assert rougeL("a b c", "a b c") == 1.0
    assert rouge1("a b", "c d") == 0.0
    assert rougeL("a b", "c d") == 0.0


def test_rouge_hand_counted_pair():
    # prediction has 7 tokens, gold has 9, every prediction token appears in
    # the gold exactly once: unigram F1 = 2*(7/7 * 7/9)/(7/7 + 7/9) = 7/8.
    # The longest common subsequence keeps 6 tokens, so the LCS F1 is
    # 2*(6/7 * 6/9)/(6/7 + 6/9) = 3/4.
    pred = "an ice cube is in solid state"
    gold = "an ice cube is solid in its physical state"
    assert rouge1(pred, gold) == 2 * ((7 / 7) * (7 / 9)) / ((7 / 7) + (7 / 9))
    assert round(rouge1(pred, gold), 12) == 0.875
    assert rougeL(pred, gold) == 2 * ((6 / 7) * (6 / 9)) / ((6 / 7) + (6 / 9))
    assert round(rougeL(pred, gold), 12) == 0.75


def test_rouge1_clips_repeated_tokens():
    # "a a" vs "a": overlap clipped to 1 -> F1 = 2*(1/2*1/1)/(1/2+1/1) = 2/3
    assert rouge1("a a", "a") == 2 / 3


def _brute_lcs(a, b):
    best = 0
    for n in range(len(a), 0, -1):
        for combo in itertools.combinations(range(len(a)), n):
            sub = [a[i] for i in combo]
            it = iter(b)
            if all(tok in it for tok in sub):
                return n
    return best


@given(
    st.lists(st.sampled_from("abcd"), max_size=7),
    st.lists(st.sampled_from("abcd"), max_size=7),
)
def test_lcs_against_brute_force(a, b):
    assert evalcli._lcs_len(a, b) == _brute_lcs(a, b)


def test_rouge_scores_empty_cases():
    assert rouge_scores([], []) == (1.0, 1.0)
    r1, rl = rouge_scores(["something"], [])
    assert r1 == 0.0 and rl == 0.0


def test_rouge_scores_unordered_alignment():
    pred = ["the cow is kind", "the tiger likes the cow"]
    gold = ["the tiger likes the cow", "the cow is kind"]
    assert rouge_scores(pred, gold, ordered=False) == (1.0, 1.0)
    r1_ordered, _ = rouge_scores(pred, gold, ordered=True)
    assert r1_ordered < 1.0


def test_rouge_scores_averages_over_longer_side():
    pred = ["the cow is kind"]
    gold = ["the cow is kind", "the tiger likes the cow"]
    r1, _ = rouge_scores(pred, gold)
    assert r1 == 0.5


def test_exact_match_normalizes_surfaces():
    a = _trace(CONTEXT, [(["rule one", "fact a"], "derived x")])
    b = _trace(CONTEXT, [(["rule one", "fact a"], "Derived X.")])
    c = _trace(CONTEXT, [(["rule one", "fact a"], "derived y")])
    assert exact_match(a, b)
    assert not exact_match(a, c)


def test_made_up_fact_rate():
    good = _trace(CONTEXT, [(["rule one", "fact a"], "derived x")])
    bad = _trace(CONTEXT, [(["made up premise"], "derived z")])
    rate, unreadable = made_up_fact_rate([good, bad, None])
    assert rate == 0.5
    assert unreadable == 1
    rate, unreadable = made_up_fact_rate([good])
    assert rate == 0.0 and unreadable == 0
