import pytest
from hypothesis import given, settings, strategies as st

from sireason import cnl, symbolic
from sireason.core import (
    Answer,
    LabeledContext,
    ReasoningStep,
    Statement,
    is_valid,
)
from sireason.symbolic import (
    NOTHING_FOLLOWS,
    NoEntailment,
    NoProof,
    closure,
    entail_step,
    evaluate_hypothesis,
    generate_problem,
    is_step_correct,
    shortest_proof,
)

RULE = Statement("If something is kind then it likes the cow")
FACT = Statement("the tiger is kind")


def test_entail_step_single_premise_rule():
    inferred = entail_step([RULE, FACT])
    assert inferred == Statement("the tiger likes the cow")


def test_entail_step_two_premise_rule():
    rule = Statement(
        "If something is red and it likes the tiger then it needs the dog"
    )
    inferred = entail_step(
        [rule, Statement("the cat is red"), Statement("the cat likes the tiger")]
    )
    assert inferred == Statement("the cat needs the dog")


def test_entail_step_ground_rule():
    rule = Statement("If Gary is kind and Gary is rough then Gary is quiet")
    inferred = entail_step(
        [rule, Statement("Gary is kind"), Statement("Gary is rough")]
    )
    assert inferred == Statement("Gary is quiet")


def test_entail_step_order_of_premises_does_not_matter():
    assert entail_step([FACT, RULE]) == Statement("the tiger likes the cow")


def test_entail_step_failures():
    with pytest.raises(NoEntailment):
        entail_step([RULE, Statement("the tiger is cold")])
    with pytest.raises(symbolic.MalformedSelection):
        entail_step([FACT])  # no rule in the selection
    with pytest.raises(symbolic.MalformedSelection):
        entail_step([Statement("a fly is a kind of insect"), FACT])


def test_is_step_correct():
    good = ReasoningStep(
        selection=(RULE, FACT), inference=Statement("the tiger likes the cow")
    )
    bad = ReasoningStep(
        selection=(RULE, FACT), inference=Statement("the tiger is green")
    )
    nothing = ReasoningStep(
        selection=(RULE, Statement("the tiger is cold")),
        inference=Statement(NOTHING_FOLLOWS),
    )
    assert is_step_correct(good)
    assert not is_step_correct(bad)
    assert is_step_correct(nothing)


WORST_1 = LabeledContext.from_statements(
    [
        "If something is kind then it likes the cow",
        "If something likes the cow then the cow is kind",
        "the cow is big",
        "the mouse eats the bear",
        "the tiger is kind",
        "the bear visits the tiger",
    ]
)


def _hyp(surface):
    parsed = cnl.parse_statement(surface, strict=True)
    return cnl.Hypothesis(atom=parsed.atom, surface=surface)


def test_closure_derives_expected_atoms():
    world = closure(WORST_1)
    derived = {cnl.render_atom(a) for a in world.derived}
    assert "the tiger likes the cow" in derived
    assert "the cow is kind" in derived
    assert "the cow likes the cow" in derived
    assert "the bear likes the cow" not in derived


def test_closure_tracks_depth():
    world = closure(WORST_1)
    base = cnl.parse_statement("the tiger is kind").atom
    assert world.depth(base) == 0
    step1 = cnl.parse_statement("the tiger likes the cow").atom
    assert world.depth(step1) == 1
    step3 = cnl.parse_statement("the cow likes the cow").atom
    assert world.depth(step3) == 3


def test_evaluate_hypothesis_open_world():
    world = closure(WORST_1)
    assert evaluate_hypothesis(world, _hyp("the cow likes the cow")) == Answer.TRUE
    assert (
        evaluate_hypothesis(world, _hyp("the cow does not like the cow"))
        == Answer.FALSE
    )
    # not provable either way: Unknown, not False
    assert evaluate_hypothesis(world, _hyp("the bear is kind")) == Answer.UNKNOWN
    assert (
        evaluate_hypothesis(world, _hyp("the bear is not kind")) == Answer.UNKNOWN
    )


def test_shortest_proof_is_valid_and_minimal():
    world = closure(WORST_1)
    trace = shortest_proof(world, _hyp("the cow likes the cow"))
    assert len(trace.steps) == 3
    report = is_valid(trace, is_step_correct)
    assert report.valid
    assert trace.steps[-1].inference == Statement("the cow likes the cow")


def test_shortest_proof_negated_hypothesis_targets_complement():
    world = closure(WORST_1)
    trace = shortest_proof(world, _hyp("the cow does not like the cow"))
    assert trace.steps[-1].inference == Statement("the cow likes the cow")


def test_shortest_proof_unprovable_raises():
    world = closure(WORST_1)
    with pytest.raises(NoProof):
        shortest_proof(world, _hyp("the bear is kind"))


def test_generate_problem_deterministic():
    a = generate_problem(seed=42, depth=3)
    b = generate_problem(seed=42, depth=3)
    assert a.context == b.context
    assert a.question == b.question
    assert a.gold_answer == b.gold_answer
    assert [s.inference for s in a.gold_proof.steps] == [
        s.inference for s in b.gold_proof.steps
    ]
    c = generate_problem(seed=43, depth=3)
    assert (a.context, a.question) != (c.context, c.question)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(min_value=0, max_value=10**6),
    st.sampled_from([1, 2, 3, 5]),
)
def test_generated_problems_are_sound(seed, depth):
    gen = generate_problem(seed=seed, depth=depth)
    assert len(gen.gold_proof.steps) == depth
    report = is_valid(gen.gold_proof, is_step_correct)
    assert report.valid
    world = closure(gen.context)
    hyp = cnl.parse_question(gen.question)
    assert evaluate_hypothesis(world, hyp) == gen.gold_answer
    assert gen.gold_answer in (Answer.TRUE, Answer.FALSE)
