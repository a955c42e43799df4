"""The step loop: select by label, infer, halt, and optionally beam-search.

Selections are made purely by sentence label.  The raw generator output is
scanned for "sent N" tokens, out-of-range labels are dropped, and the
surviving labels are substituted back into statements.  A selected
statement therefore always comes from the context, which is what rules out
made-up facts structurally.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import models, symbolic
from .core import (
    Answer,
    LabeledContext,
    ReasoningStep,
    ReasoningTrace,
    SentenceLabel,
    Statement,
    normalize_key,
    normalize_statement,
    render_trace,
)
from .models import CompletionRequest, GeneratorRole

_LABEL_TOKEN = re.compile(r"sent (\d+)")


class SelectionSyntaxError(Exception):
    """The selection output contained no usable in-range sentence label."""


@dataclass
class RoleBindings:
    """One backend per generator role."""

    selection: object
    inference: object
    halter_ready: object
    halter_answer: object
    value: Optional[object] = None

    @classmethod
    def uniform(cls, backend) -> "RoleBindings":
        return cls(backend, backend, backend, backend, backend)

    def reset(self) -> None:
        for b in {
            id(x): x
            for x in (self.selection, self.inference, self.halter_ready,
                      self.halter_answer, self.value)
            if x is not None
        }.values():
            if hasattr(b, "reset"):
                b.reset()


@dataclass
class SolveStats:
    """Failure counters accumulated across a batch."""

    selection_syntax_errors: int = 0
    selection_calls: int = 0
    backend_failures: int = 0
    notes: list[str] = field(default_factory=list)


def selection_step(
    question: str, context: LabeledContext, backend, stats: Optional[SolveStats] = None
) -> tuple[list[Statement], list[SentenceLabel]]:
    if len(context) == 0:
        raise ValueError("selection needs a non-empty context")
    prompt = models.format_selection_prompt(question, context)
    raw = backend.complete(
        CompletionRequest(GeneratorRole.SELECTION, prompt)
    ).text
    if stats is not None:
        stats.selection_calls += 1
    labels: list[SentenceLabel] = []
    seen: set[int] = set()
    for token in _LABEL_TOKEN.findall(raw):
        index = int(token)
        if not 1 <= index <= len(context):
            if stats is not None:
                stats.selection_syntax_errors += 1
            raise SelectionSyntaxError(
                f"label sent {index} outside context of {len(context)} in {raw!r}"
            )
        if index in seen:
            continue
        seen.add(index)
        labels.append(SentenceLabel(index))
    if not labels:
        if stats is not None:
            stats.selection_syntax_errors += 1
        raise SelectionSyntaxError(f"no in-range labels in output {raw!r}")
    return [context.lookup(label) for label in labels], labels


def _infer(selection: Sequence[Statement], backend) -> Statement:
    prompt = models.format_inference_prompt(selection)
    text = backend.complete(
        CompletionRequest(GeneratorRole.INFERENCE, prompt)
    ).text
    text = text.strip()
    if text.endswith("."):
        text = text[:-1]
    if not text:
        text = symbolic.NOTHING_FOLLOWS
    return normalize_statement(text)


def _halt_check(
    question: str,
    choices: Optional[Sequence[str]],
    inference: Statement,
    bindings: RoleBindings,
) -> Optional[Answer]:
    """Ask the halter; an answer means stop, None means keep reasoning."""
    ready_prompt, answer_prompt = models.format_halter_prompts(
        question, inference.surface, choices
    )
    ready = bindings.halter_ready.complete(
        CompletionRequest(GeneratorRole.HALTER_READY, ready_prompt)
    ).text.strip()
    if choices is not None:
        if ready.rstrip(".") != "Yes":
            return None
        answer_text = bindings.halter_answer.complete(
            CompletionRequest(GeneratorRole.HALTER_ANSWER, answer_prompt)
        ).text.strip()
        return Answer.of_choice(answer_text)
    if ready in ("True", "False"):
        return Answer.parse(ready)
    return None


def si_answer(
    problem,
    bindings: RoleBindings,
    max_steps: int = 10,
    stats: Optional[SolveStats] = None,
) -> tuple[Answer, ReasoningTrace]:
    """Greedy loop: select, infer, extend the context, check the halter.

    Returns the first halter answer, or Unknown once `max_steps` passes
    (or a step fails) without one.  The trace covers every step taken.
    """
    trace = ReasoningTrace(base_context=problem.context)
    answer = Answer.UNKNOWN
    for _ in range(max_steps):
        context = trace.full_context
        try:
            selection, labels = selection_step(
                problem.question, context, bindings.selection, stats
            )
        except SelectionSyntaxError:
            break
        except models.BackendError as exc:
            if stats is not None:
                stats.backend_failures += 1
                stats.notes.append(f"{problem.id}: selection backend: {exc}")
            break
        try:
            inference = _infer(selection, bindings.inference)
            step = ReasoningStep(
                selection=tuple(selection),
                inference=inference,
                selection_labels=tuple(labels),
            )
            trace = trace.extended(step)
            maybe = _halt_check(problem.question, problem.choices, inference, bindings)
        except models.BackendError as exc:
            if stats is not None:
                stats.backend_failures += 1
                stats.notes.append(f"{problem.id}: backend: {exc}")
            break
        if maybe is not None:
            answer = maybe
            break
    trace = replace(trace, halted=True, answer=answer)
    return answer, trace


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 4
    proposals_per_trace: int = 4
    max_steps: int = 10
    score_mode: str = "sum"

    def __post_init__(self) -> None:
        if not 1 <= self.beam_width <= self.proposals_per_trace:
            raise ValueError("need 1 <= beam_width <= proposals_per_trace")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.score_mode not in ("sum", "last"):
            raise ValueError("score_mode must be 'sum' or 'last'")


@dataclass
class BeamEntry:
    trace: ReasoningTrace
    cumulative_score: float = 0.0
    halted: bool = False
    answer: Optional[Answer] = None


def score_trace(entry: BeamEntry, new_step_score: float, mode: str) -> float:
    if entry.halted:
        return entry.cumulative_score
    if mode == "sum":
        return entry.cumulative_score + new_step_score
    if mode == "last":
        return new_step_score
    raise ValueError(f"unknown score mode {mode!r}")


def _value_score(problem, trace: ReasoningTrace, backend) -> float:
    prompt = models.format_value_prompt(
        problem.context, problem.question, render_trace(trace)
    )
    response = backend.complete(
        CompletionRequest(
            GeneratorRole.VALUE,
            prompt,
            scored_continuations=(models.CORRECT, models.INCORRECT),
        )
    )
    logprobs = response.continuation_logprobs or {}
    return logprobs.get(models.CORRECT, models.CERTAIN_BAD)


def _rank_key(entry: BeamEntry) -> tuple:
    return (-entry.cumulative_score, len(entry.trace.steps), render_trace(entry.trace))


def beam_search(
    problem,
    bindings: RoleBindings,
    cfg: BeamConfig = BeamConfig(),
    stats: Optional[SolveStats] = None,
) -> tuple[Answer, ReasoningTrace, list[BeamEntry]]:
    """Value-guided search over reasoning traces.

    Each live trace proposes up to `proposals_per_trace` next steps
    (deduplicated by selection set plus inference), every extension is
    scored by the value generator, and the best `beam_width` entries
    survive.  Halted entries keep competing with frozen scores until every
    entry has halted or the step cap is reached.
    """
    if bindings.value is None:
        raise ValueError("beam search needs a value backend")
    entries: list[BeamEntry] = [BeamEntry(ReasoningTrace(base_context=problem.context))]
    for _ in range(cfg.max_steps):
        if all(e.halted for e in entries):
            break
        pool: list[BeamEntry] = [e for e in entries if e.halted]
        for entry in entries:
            if entry.halted:
                continue
            context = entry.trace.full_context
            candidates: list[ReasoningStep] = []
            seen: set[tuple] = set()
            for _ in range(cfg.proposals_per_trace):
                try:
                    selection, labels = selection_step(
                        problem.question, context, bindings.selection, stats
                    )
                    inference = _infer(selection, bindings.inference)
                except SelectionSyntaxError:
                    continue
                except models.BackendError as exc:
                    if stats is not None:
                        stats.backend_failures += 1
                        stats.notes.append(f"{problem.id}: backend: {exc}")
                    continue
                sig = (
                    frozenset(l.index for l in labels),
                    normalize_key(inference.surface),
                )
                if sig in seen:
                    continue
                seen.add(sig)
                candidates.append(
                    ReasoningStep(
                        selection=tuple(selection),
                        inference=inference,
                        selection_labels=tuple(labels),
                    )
                )
            if not candidates:
                # Dead branch: no expansion survived, drop it from the beam.
                continue
            for step in candidates:
                new_trace = entry.trace.extended(step)
                try:
                    value = _value_score(problem, new_trace, bindings.value)
                    maybe = _halt_check(
                        problem.question, problem.choices, step.inference, bindings
                    )
                except models.BackendError as exc:
                    if stats is not None:
                        stats.backend_failures += 1
                        stats.notes.append(f"{problem.id}: backend: {exc}")
                    continue
                scored_step = replace(step, value_score=value)
                new_trace = replace(
                    new_trace, steps=new_trace.steps[:-1] + (scored_step,)
                )
                score = score_trace(entry, value, cfg.score_mode)
                if maybe is not None:
                    pool.append(
                        BeamEntry(
                            trace=replace(new_trace, halted=True, answer=maybe),
                            cumulative_score=score,
                            halted=True,
                            answer=maybe,
                        )
                    )
                else:
                    pool.append(BeamEntry(trace=new_trace, cumulative_score=score))
        if not pool:
            break
        pool.sort(key=_rank_key)
        entries = pool[: cfg.beam_width]
    final = sorted(entries, key=_rank_key)
    halted = [e for e in final if e.halted]
    if halted:
        best = halted[0]
        return best.answer or Answer.UNKNOWN, best.trace, final
    # Nothing halted with an answer before the step cap.
    trace = final[0].trace if final else ReasoningTrace(base_context=problem.context)
    return Answer.UNKNOWN, replace(trace, halted=True, answer=Answer.UNKNOWN), final
