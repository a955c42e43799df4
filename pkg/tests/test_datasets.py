import json

import pytest

from sireason import datasets
from sireason.core import Answer, Statement
from sireason.datasets import (
    SchemaError,
    ValueExtractionReport,
    extract_halter_pairs,
    extract_si_pairs,
    extract_value_pairs,
    generate_problem_set,
    load_problems,
    problem_from_doc,
    save_problems,
    validate_problems,
)
from sireason.models import CORRECT, INCORRECT, GeneratorRole


def _doc():
    return {
        "id": "p1",
        "context": [
            "If someone eats the bald eagle then the bald eagle is not kind",
            "the cat eats the bald eagle",
        ],
        "question": 'Does it imply that the statement "The bald eagle is kind" is True?',
        "answer": "False",
        "proof": [{"selection": [1, 2], "inference": "the bald eagle is not kind"}],
        "depth": 1,
    }


def test_problem_from_doc_resolves_proof_indices():
    problem = problem_from_doc(_doc())
    assert problem.gold_answer == Answer.FALSE
    step = problem.gold_proof.steps[0]
    assert step.selection[1] == Statement("the cat eats the bald eagle")
    assert step.inference == Statement("the bald eagle is not kind")


def test_proof_indices_can_reference_prior_inferences():
    doc = _doc()
    doc["context"] = [
        "If something is kind then it likes the cow",
        "If something likes the cow then the cow is kind",
        "the tiger is kind",
    ]
    doc["question"] = 'Does it imply that the statement "The cow is kind" is True?'
    doc["answer"] = "True"
    doc["depth"] = 2
    doc["proof"] = [
        {"selection": [1, 3], "inference": "the tiger likes the cow"},
        {"selection": [2, 4], "inference": "the cow is kind"},
    ]
    problem = problem_from_doc(doc)
    assert problem.gold_proof.steps[1].selection[1] == Statement(
        "the tiger likes the cow"
    )


def test_proof_index_out_of_range():
    doc = _doc()
    doc["proof"] = [{"selection": [1, 9], "inference": "x"}]
    with pytest.raises(SchemaError):
        problem_from_doc(doc)


def test_missing_fields_raise_schema_errors():
    for field in ("id", "context", "question", "answer"):
        doc = _doc()
        del doc[field]
        with pytest.raises(SchemaError):
            problem_from_doc(doc)


def test_eb_problems_require_choices():
    doc = _doc()
    doc["answer"] = "solid"
    with pytest.raises((SchemaError, ValueError)):
        problem_from_doc(doc, tag="eb")


def test_load_problems_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps(_doc())
    path.write_text(good + "\n{not json}\n")
    with pytest.raises(SchemaError) as err:
        load_problems(path)
    assert err.value.line_number == 2


def test_save_load_round_trip(tmp_path, pw_problems):
    path = tmp_path / "round.jsonl"
    save_problems(pw_problems, path)
    loaded = load_problems(path)
    assert loaded == pw_problems
    # a second save is byte-identical
    path2 = tmp_path / "round2.jsonl"
    save_problems(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_validate_problems_flags_broken_proofs():
    doc = _doc()
    doc["proof"] = [{"selection": [1, 2], "inference": "the bald eagle is kind"}]
    problem = problem_from_doc(doc)
    findings = validate_problems([problem])
    assert findings
    assert "p1" in findings[0]


def test_generate_problem_set_is_deterministic():
    a = generate_problem_set(3, {1: 2, 3: 2})
    b = generate_problem_set(3, {1: 2, 3: 2})
    assert a == b
    assert [p.id for p in a] == [
        "gen-d1-s3-0", "gen-d1-s3-1", "gen-d3-s3-0", "gen-d3-s3-1",
    ]
    assert validate_problems(a) == []
    assert a != generate_problem_set(4, {1: 2, 3: 2})


def test_extract_si_pairs_targets():
    problem = problem_from_doc(_doc())
    pairs = extract_si_pairs(problem)
    assert [p.role for p in pairs] == [
        GeneratorRole.SELECTION,
        GeneratorRole.INFERENCE,
    ]
    sel, inf = pairs
    assert sel.target == " sent 1. We know that sent 2."
    assert sel.input.endswith("Selection:")
    assert inf.input == (
        "If someone eats the bald eagle then the bald eagle is not kind. "
        "We know that the cat eats the bald eagle. Therefore,"
    )
    assert inf.target == " the bald eagle is not kind."


def test_extract_si_pairs_single_premise_target():
    doc = _doc()
    doc["proof"] = [{"selection": [2], "inference": "the cat eats the bald eagle"}]
    pairs = extract_si_pairs(problem_from_doc(doc))
    assert pairs[0].target == " sent 2."


def test_extract_halter_pairs_implication():
    problem = problem_from_doc(_doc())
    pairs = extract_halter_pairs(problem)
    assert len(pairs) == 1
    assert pairs[0].role == GeneratorRole.HALTER_READY
    assert pairs[0].input == (
        "Given the bald eagle is not kind. "
        'Does it imply that the statement "The bald eagle is kind" is True?'
    )
    assert pairs[0].target == " False"


def test_extract_halter_pairs_intermediate_steps_say_unknown():
    doc = _doc()
    doc["context"] = [
        "If something is kind then it likes the cow",
        "If something likes the cow then the cow is kind",
        "the tiger is kind",
    ]
    doc["question"] = 'Does it imply that the statement "The cow is kind" is True?'
    doc["answer"] = "True"
    doc["proof"] = [
        {"selection": [1, 3], "inference": "the tiger likes the cow"},
        {"selection": [2, 4], "inference": "the cow is kind"},
    ]
    pairs = extract_halter_pairs(problem_from_doc(doc))
    assert [p.target for p in pairs] == [" Unknown", " True"]


def test_extract_halter_pairs_multi_choice(eb_problems):
    ice = next(p for p in eb_problems if p.id == "eb-d1-ice-cube")
    pairs = extract_halter_pairs(ice)
    ready = [p for p in pairs if p.role == GeneratorRole.HALTER_READY]
    answer = [p for p in pairs if p.role == GeneratorRole.HALTER_ANSWER]
    assert [p.target for p in ready] == [" Yes."]
    assert len(answer) == 1
    assert answer[0].target == " solid"
    assert answer[0].input == (
        "Given an ice cube is solid in its physical state. "
        "Which of these most closely matches gas OR solid OR liquid OR plasma?"
    )


def test_extract_value_pairs_alternate_targets():
    problems = generate_problem_set(11, {3: 3})
    for problem in problems:
        report = ValueExtractionReport()
        pairs = extract_value_pairs(problem, seed=5, report=report)
        assert report.pairs_emitted == len(pairs)
        targets = [p.target for p in pairs]
        assert targets.count(CORRECT) == len(problem.gold_proof.steps)
        # each prefix yields a positive, and usually a corrupted sibling
        assert set(targets) <= {CORRECT, INCORRECT}
        assert (
            targets.count(INCORRECT)
            + report.collisions
            + report.corruption_impossible
            == len(problem.gold_proof.steps)
        )


def test_extract_value_pairs_deterministic():
    problem = generate_problem_set(13, {3: 1})[0]
    a = extract_value_pairs(problem, seed=2)
    b = extract_value_pairs(problem, seed=2)
    assert a == b
    assert a != extract_value_pairs(problem, seed=3)


def test_extract_value_pairs_empty_without_proof():
    problem = problem_from_doc({k: v for k, v in _doc().items() if k != "proof"})
    assert extract_value_pairs(problem, seed=0) == []


def test_save_training_pairs_jsonl(tmp_path):
    problem = problem_from_doc(_doc())
    pairs = extract_si_pairs(problem)
    path = tmp_path / "pairs.jsonl"
    datasets.save_training_pairs(pairs, path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(pairs)
    first = json.loads(lines[0])
    assert first["role"] == "selection"
    assert first["target"] == " sent 1. We know that sent 2."
