import pytest

from sireason import models, symbolic
from sireason.core import Answer, LabeledContext, Statement, is_valid
from sireason.engine import (
    BeamConfig,
    BeamEntry,
    RoleBindings,
    SelectionSyntaxError,
    SolveStats,
    beam_search,
    score_trace,
    selection_step,
    si_answer,
)
from sireason.models import GeneratorRole, OracleBackend, ScriptedBackend
from sireason.datasets import Problem



def _problem(context, question, answer="True", choices=None, tag="pw"):
    return Problem(
        id="test",
        context=LabeledContext.from_statements(context),
        question=question,
        choices=choices,
        gold_answer=Answer.parse(answer) if choices is None else Answer.of_choice(answer),
        dataset_tag=tag,
    )


WORST_1 = _problem(
    [
        "If something is kind then it likes the cow",
        "If something likes the cow then the cow is kind",
        "the cow is big",
        "the mouse eats the bear",
        "the tiger is kind",
        "the bear visits the tiger",
    ],
    'Does it imply that the statement "The cow likes the cow" is True?',
    "True",
)


def test_selection_step_parses_labels():
    ctx = WORST_1.context
    script = {GeneratorRole.SELECTION: [" sent 1. We know that sent 5."]}
    backend = ScriptedBackend(script=script)
    selection, labels = selection_step(WORST_1.question, ctx, backend)
    assert [l.index for l in labels] == [1, 5]
    assert selection[1] == Statement("the tiger is kind")


def test_selection_step_dedups_repeated_labels():
    ctx = WORST_1.context
    script = {GeneratorRole.SELECTION: [" sent 1. We know that sent 5 and sent 5."]}
    selection, labels = selection_step(
        WORST_1.question, ctx, ScriptedBackend(script=script)
    )
    assert [l.index for l in labels] == [1, 5]
    assert len(selection) == 2


@pytest.mark.parametrize(
    "bad",
    ["", " no labels here", " sent 99. We know that sent 1.", " sent zero"],
)
def test_selection_step_rejects_malformed_output(bad):
    stats = SolveStats()
    backend = ScriptedBackend(script={GeneratorRole.SELECTION: [bad]})
    with pytest.raises(SelectionSyntaxError):
        selection_step(WORST_1.question, WORST_1.context, backend, stats)
    assert stats.selection_syntax_errors == 1
    assert stats.selection_calls == 1


def test_si_answer_oracle_solves_and_traces():
    answer, trace = si_answer(WORST_1, RoleBindings.uniform(OracleBackend()))
    assert answer == Answer.TRUE
    assert trace.halted
    assert trace.answer == Answer.TRUE
    assert len(trace.steps) == 3
    assert is_valid(trace, symbolic.is_step_correct).valid


def test_si_answer_halts_early_on_single_step():
    problem = _problem(
        [
            "If someone eats the bald eagle then the bald eagle is not kind",
            "the cat eats the bald eagle",
        ],
        'Does it imply that the statement "The bald eagle is kind" is True?',
        "False",
    )
    answer, trace = si_answer(problem, RoleBindings.uniform(OracleBackend()))
    assert answer == Answer.FALSE
    assert len(trace.steps) == 1


def test_si_answer_unknown_on_selection_garbage():
    stats = SolveStats()
    backend = ScriptedBackend(
        base=OracleBackend(),
        script={GeneratorRole.SELECTION: ["complete nonsense"]},
    )
    bindings = RoleBindings(
        selection=backend,
        inference=OracleBackend(),
        halter_ready=OracleBackend(),
        halter_answer=OracleBackend(),
    )
    answer, trace = si_answer(WORST_1, bindings, stats=stats)
    assert answer.is_unknown
    assert trace.halted
    assert trace.steps == ()
    assert stats.selection_syntax_errors == 1


def test_si_answer_unknown_when_out_of_steps():
    answer, trace = si_answer(
        WORST_1, RoleBindings.uniform(OracleBackend()), max_steps=2
    )
    assert answer.is_unknown
    assert len(trace.steps) == 2


def test_si_answer_multi_choice(eb_problems):
    ice = next(p for p in eb_problems if p.id == "eb-d1-ice-cube")
    script = {
        GeneratorRole.SELECTION: [" sent 1. We know that sent 2."],
        GeneratorRole.INFERENCE: [" an ice cube is solid in its physical state."],
    }
    # one scripted backend holds both queues; the two roles share it
    shared = ScriptedBackend(script=script)
    bindings = RoleBindings(
        selection=shared,
        inference=shared,
        halter_ready=OracleBackend(),
        halter_answer=OracleBackend(),
    )
    answer, trace = si_answer(ice, bindings)
    assert answer == Answer.of_choice("solid")
    assert len(trace.steps) == 1


def test_beam_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(beam_width=4, proposals_per_trace=2)
    with pytest.raises(ValueError):
        BeamConfig(max_steps=0)
    with pytest.raises(ValueError):
        BeamConfig(score_mode="median")


def test_score_trace_modes():
    from sireason.core import ReasoningTrace

    entry = BeamEntry(
        trace=ReasoningTrace(base_context=WORST_1.context), cumulative_score=-1.0
    )
    assert score_trace(entry, -2.0, "sum") == -3.0
    assert score_trace(entry, -2.0, "last") == -2.0
    halted = BeamEntry(
        trace=ReasoningTrace(base_context=WORST_1.context),
        cumulative_score=-1.0,
        halted=True,
    )
    assert score_trace(halted, -2.0, "sum") == -1.0


def test_beam_search_matches_oracle_greedy(pw_problems):
    cfg = BeamConfig(beam_width=2, proposals_per_trace=2, max_steps=10)
    for problem in pw_problems[:4]:
        bindings = RoleBindings.uniform(OracleBackend())
        answer, trace, entries = beam_search(problem, bindings, cfg)
        assert answer == problem.gold_answer
        assert trace.halted
        assert is_valid(trace, symbolic.is_step_correct).valid
        assert entries  # the returned pool is never empty on success


def test_beam_search_scores_steps_with_value_function():
    bindings = RoleBindings.uniform(OracleBackend())
    cfg = BeamConfig(beam_width=2, proposals_per_trace=2)
    answer, trace, _ = beam_search(WORST_1, bindings, cfg)
    assert answer == Answer.TRUE
    assert all(step.value_score is not None for step in trace.steps)
    # on-path steps score as certainly correct
    assert all(step.value_score == models.CERTAIN_GOOD for step in trace.steps)


def test_beam_search_recovers_from_noise():
    # with noise rate 0.5 the greedy run goes off-path for this seed while
    # the beam finds the proof; both are deterministic given the seed
    noisy = lambda: ScriptedBackend(base=OracleBackend(), noise_rate=0.5, seed=3)

    def bindings():
        oracle = OracleBackend()
        return RoleBindings(
            selection=noisy(),
            inference=oracle,
            halter_ready=oracle,
            halter_answer=oracle,
            value=oracle,
        )

    cfg = BeamConfig(beam_width=4, proposals_per_trace=4, max_steps=4)
    answer, trace, _ = beam_search(WORST_1, bindings(), cfg)
    assert answer == Answer.TRUE
    again, _, _ = beam_search(WORST_1, bindings(), cfg)
    assert again == answer


def test_beam_search_unknown_when_nothing_halts():
    # a selection script that immediately exhausts leaves nothing to expand
    shared = ScriptedBackend(script={GeneratorRole.SELECTION: ["", "", "", ""]})
    oracle = OracleBackend()
    bindings = RoleBindings(
        selection=shared,
        inference=oracle,
        halter_ready=oracle,
        halter_answer=oracle,
        value=oracle,
    )
    cfg = BeamConfig(beam_width=2, proposals_per_trace=2, max_steps=3)
    answer, trace, _ = beam_search(WORST_1, bindings, cfg)
    assert answer.is_unknown
    assert trace.halted
