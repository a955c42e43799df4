"""Problem file ingestion and training-pair extraction.

Problem files are line-delimited JSON documents:

    {"id": ..., "context": [...], "question": ..., "choices": [...]?,
     "answer": ..., "proof": [{"selection": [indices], "inference": str}]?,
     "depth": int?}

Proof selections refer to context sentences by 1-based index; an index
past the end of the context refers to the j-th inference of the proof
itself (index len(context) + j), which keeps gold proofs label-stable.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from . import models, symbolic
from .core import (
    Answer,
    LabeledContext,
    ReasoningStep,
    ReasoningTrace,
    SentenceLabel,
    Statement,
    is_valid,
    normalize_key,
    normalize_statement,
    render_trace,
)
from .models import GeneratorRole


class SchemaError(ValueError):
    """A problem file line that does not match the schema."""

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class CorruptionImpossible(Exception):
    """No alternative context statement exists for a corruption."""


@dataclass(frozen=True)
class Problem:
    id: str
    context: LabeledContext
    question: str
    choices: Optional[tuple[str, ...]]
    gold_answer: Answer
    gold_proof: Optional[ReasoningTrace] = None
    depth: Optional[int] = None
    dataset_tag: str = "pw"

    def __post_init__(self) -> None:
        if self.dataset_tag not in ("pw", "eb"):
            raise ValueError(f"bad dataset tag: {self.dataset_tag}")
        if self.dataset_tag == "eb" and (self.choices is None or len(self.choices) < 2):
            raise ValueError("multiple-choice problems need at least 2 choices")


@dataclass(frozen=True)
class TrainingPair:
    role: GeneratorRole
    input: str
    target: str
    source_problem_id: str
    step_index: Optional[int] = None


def _proof_from_indices(
    context: LabeledContext, proof_doc: Sequence[dict]
) -> ReasoningTrace:
    """Resolve a stored proof's index lists into statements, step by step."""
    base_len = len(context)
    inferences: list[Statement] = []
    steps: list[ReasoningStep] = []
    for step_no, doc in enumerate(proof_doc, start=1):
        indices = doc["selection"]
        inference = normalize_statement(doc["inference"])
        selection: list[Statement] = []
        labels: list[SentenceLabel] = []
        for idx in indices:
            if not isinstance(idx, int) or idx < 1:
                raise SchemaError(f"step {step_no}: bad selection index {idx!r}")
            if idx <= base_len:
                stmt = context.lookup(SentenceLabel(idx))
            else:
                j = idx - base_len
                if j > len(inferences):
                    raise SchemaError(
                        f"step {step_no}: selection index {idx} references "
                        f"inference {j} which does not exist yet"
                    )
                stmt = inferences[j - 1]
            selection.append(stmt)
            labels.append(SentenceLabel(idx))
        steps.append(
            ReasoningStep(
                selection=tuple(selection),
                inference=inference,
                selection_labels=tuple(labels),
            )
        )
        inferences.append(inference)
    return ReasoningTrace(base_context=context, steps=tuple(steps))


def problem_from_doc(doc: dict, tag: str = "pw") -> Problem:
    try:
        context = LabeledContext.from_statements(doc["context"])
        choices = tuple(doc["choices"]) if doc.get("choices") else None
        proof = (
            _proof_from_indices(context, doc["proof"])
            if doc.get("proof") is not None
            else None
        )
        return Problem(
            id=str(doc["id"]),
            context=context,
            question=doc["question"],
            choices=choices,
            gold_answer=Answer.parse(str(doc["answer"])),
            gold_proof=proof,
            depth=doc.get("depth"),
            dataset_tag=tag,
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(str(exc)) from exc


def problem_to_doc(problem: Problem) -> dict:
    doc: dict = {
        "id": problem.id,
        "context": [s.surface for s in problem.context.statements()],
        "question": problem.question,
        "answer": problem.gold_answer.render(),
    }
    if problem.choices is not None:
        doc["choices"] = list(problem.choices)
    if problem.gold_proof is not None:
        doc["proof"] = [
            {
                "selection": [l.index for l in step.selection_labels],
                "inference": step.inference.surface,
            }
            for step in problem.gold_proof.steps
        ]
    if problem.depth is not None:
        doc["depth"] = problem.depth
    return doc


def load_problems(path, tag: str = "pw") -> list[Problem]:
    problems: list[Problem] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"not valid JSON: {exc}", line_no) from exc
            try:
                problems.append(problem_from_doc(doc, tag))
            except SchemaError as exc:
                raise SchemaError(str(exc), line_no) from exc
    return problems


def save_problems(problems: Iterable[Problem], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in problems:
            fh.write(json.dumps(problem_to_doc(p), sort_keys=True) + "\n")


def validate_problems(problems: Iterable[Problem]) -> list[str]:
    """Lint gold proofs: connectivity plus step-by-step entailment."""
    findings: list[str] = []
    for p in problems:
        if p.gold_proof is None:
            continue
        if p.dataset_tag != "pw":
            continue
        report = is_valid(p.gold_proof, symbolic.is_step_correct)
        if not report.valid:
            for verdict in report.step_verdicts:
                if verdict.status != "ok":
                    findings.append(
                        f"{p.id}: step {verdict.index + 1} {verdict.status}: "
                        f"{verdict.detail}"
                    )
            if not report.connectivity.connected:
                findings.append(f"{p.id}: trace is not connected")
    return findings


def generated_problem_to_problem(gen: symbolic.GeneratedProblem, ident: str) -> Problem:
    return Problem(
        id=ident,
        context=gen.context,
        question=gen.question,
        choices=None,
        gold_answer=gen.gold_answer,
        gold_proof=gen.gold_proof,
        depth=gen.depth,
        dataset_tag="pw",
    )


def generate_problem_set(
    seed: int, counts: dict[int, int], **kwargs
) -> list[Problem]:
    """A batch of generated problems, `counts` mapping depth -> how many."""
    problems: list[Problem] = []
    for depth in sorted(counts):
        for i in range(counts[depth]):
            gen = symbolic.generate_problem(seed=seed * 100003 + i, depth=depth, **kwargs)
            problems.append(
                generated_problem_to_problem(gen, f"gen-d{depth}-s{seed}-{i}")
            )
    return problems


# ---------------------------------------------------------------------------
# Training-pair extraction.
# ---------------------------------------------------------------------------

def _selection_target(step: ReasoningStep) -> str:
    labels = [l.index for l in step.selection_labels]
    first, rest = labels[0], labels[1:]
    known = " and ".join(f"sent {i}" for i in rest)
    if not rest:
        return f" sent {first}."
    return f" sent {first}. We know that {known}."


def extract_si_pairs(problem: Problem) -> list[TrainingPair]:
    if problem.gold_proof is None:
        return []
    pairs: list[TrainingPair] = []
    trace = problem.gold_proof
    for k, step in enumerate(trace.steps):
        context_k = trace.context_before(k)
        pairs.append(
            TrainingPair(
                role=GeneratorRole.SELECTION,
                input=models.format_selection_prompt(problem.question, context_k),
                target=_selection_target(step),
                source_problem_id=problem.id,
                step_index=k,
            )
        )
        pairs.append(
            TrainingPair(
                role=GeneratorRole.INFERENCE,
                input=models.format_inference_prompt(step.selection),
                target=f" {step.inference.surface}.",
                source_problem_id=problem.id,
                step_index=k,
            )
        )
    return pairs


def extract_halter_pairs(problem: Problem) -> list[TrainingPair]:
    if problem.gold_proof is None:
        return []
    steps = problem.gold_proof.steps
    pairs: list[TrainingPair] = []
    if problem.choices is None:
        for k, step in enumerate(steps):
            final = k == len(steps) - 1
            target = f" {problem.gold_answer.render()}" if final else " Unknown"
            pairs.append(
                TrainingPair(
                    role=GeneratorRole.HALTER_READY,
                    input=f"Given {step.inference.surface}. {problem.question}",
                    target=target,
                    source_problem_id=problem.id,
                    step_index=k,
                )
            )
        return pairs
    for k, step in enumerate(steps):
        final = k == len(steps) - 1
        pairs.append(
            TrainingPair(
                role=GeneratorRole.HALTER_READY,
                input=(
                    f"Question: {problem.question}. "
                    f"Given {step.inference.surface}. Do you know the answer?"
                ),
                target=" Yes." if final else " No.",
                source_problem_id=problem.id,
                step_index=k,
            )
        )
    joined = " OR ".join(problem.choices)
    final_inference = steps[-1].inference.surface
    pairs.append(
        TrainingPair(
            role=GeneratorRole.HALTER_ANSWER,
            input=(
                f"Given {final_inference}. "
                f"Which of these most closely matches {joined}?"
            ),
            target=f" {problem.gold_answer.render()}",
            source_problem_id=problem.id,
            step_index=len(steps) - 1,
        )
    )
    return pairs


@dataclass
class ValueExtractionReport:
    pairs_emitted: int = 0
    corruption_impossible: int = 0
    collisions: int = 0


def _oracle_inference(selection: Sequence[Statement]) -> Statement:
    try:
        return symbolic.entail_step(selection)
    except (symbolic.NoEntailment, symbolic.MalformedSelection):
        return normalize_statement(symbolic.NOTHING_FOLLOWS)


def _is_on_gold_path(step: ReasoningStep, gold_keys: set[str]) -> bool:
    return (
        symbolic.is_step_correct(step)
        and normalize_key(step.inference.surface) in gold_keys
    )


def extract_value_pairs(
    problem: Problem,
    seed: int,
    report: Optional[ValueExtractionReport] = None,
    infer=None,
) -> list[TrainingPair]:
    """Positive/negative value pairs per proof prefix.

    Each corrupted sibling replaces exactly one statement of the newest
    step's selection with a different statement from the same context and
    recomputes the inference.  Corruptions that still land on the gold
    path are collisions: dropped and counted.
    """
    if problem.gold_proof is None:
        return []
    if infer is None:
        infer = _oracle_inference
    rng = random.Random(("value-pairs", problem.id, seed).__repr__())
    trace = problem.gold_proof
    gold_keys = {normalize_key(s.inference.surface) for s in trace.steps}
    pairs: list[TrainingPair] = []
    for n in range(1, len(trace.steps) + 1):
        prefix = ReasoningTrace(base_context=trace.base_context, steps=trace.steps[:n])
        positive = models.format_value_prompt(
            problem.context, problem.question, render_trace(prefix)
        )
        pairs.append(
            TrainingPair(
                role=GeneratorRole.VALUE,
                input=positive,
                target=models.CORRECT,
                source_problem_id=problem.id,
                step_index=n - 1,
            )
        )
        if report is not None:
            report.pairs_emitted += 1
        step = trace.steps[n - 1]
        context_n = trace.context_before(n - 1)
        selection_keys = {s.key for s in step.selection}
        alternatives = [
            s for s in context_n.statements() if s.key not in selection_keys
        ]
        if not alternatives:
            if report is not None:
                report.corruption_impossible += 1
            continue
        slot = rng.randrange(len(step.selection))
        replacement = rng.choice(alternatives)
        corrupted_selection = list(step.selection)
        corrupted_selection[slot] = replacement
        corrupted_inference = infer(corrupted_selection)
        corrupted_step = ReasoningStep(
            selection=tuple(corrupted_selection),
            inference=corrupted_inference,
        )
        if _is_on_gold_path(corrupted_step, gold_keys):
            if report is not None:
                report.collisions += 1
            continue
        corrupted_prefix = replace(
            prefix, steps=prefix.steps[:-1] + (corrupted_step,)
        )
        pairs.append(
            TrainingPair(
                role=GeneratorRole.VALUE,
                input=models.format_value_prompt(
                    problem.context, problem.question, render_trace(corrupted_prefix)
                ),
                target=models.INCORRECT,
                source_problem_id=problem.id,
                step_index=n - 1,
            )
        )
        if report is not None:
            report.pairs_emitted += 1
    return pairs


def save_training_pairs(pairs: Iterable[TrainingPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {
                        "role": p.role.value,
                        "input": p.input,
                        "target": p.target,
                        "source_problem_id": p.source_problem_id,
                        "step_index": p.step_index,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
