"""Formal reasoning-trace objects and the structural checks over them.

A trace is a base context plus a sequence of (selection, inference) steps.
Connectedness and validity are decided here; logical step correctness is
delegated to a caller-supplied oracle.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence


class EmptyStatement(ValueError):
    """Raised when a statement normalizes to nothing."""


class TraceParseError(ValueError):
    """Raised when trace text cannot be read back into steps."""


_NON_ALPHA = re.compile(r"[^a-z]+")


def normalize_key(raw: str) -> str:
    """Equality key: lowercase with every non-alphabetic character removed."""
    return _NON_ALPHA.sub("", raw.lower())


@dataclass(frozen=True, eq=False)
class Statement:
    """A sentence. Equality and hashing use the normalized key only;
    the original surface is kept for rendering."""

    surface: str

    @property
    def key(self) -> str:
        return normalize_key(self.surface)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Statement):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __str__(self) -> str:
        return self.surface


def normalize_statement(raw: str) -> Statement:
    """Build a Statement from raw text.

    Trims whitespace and a trailing period. Raises EmptyStatement if the
    normalized equality key is empty.
    """
    surface = raw.strip()
    if surface.endswith("."):
        surface = surface[:-1].rstrip()
    if not normalize_key(surface):
        raise EmptyStatement(f"statement is empty after normalization: {raw!r}")
    return Statement(surface)


_LABEL_RE = re.compile(r"^sent (\d+)$")


@dataclass(frozen=True, order=True)
class SentenceLabel:
    index: int

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"sentence label index must be >= 1, got {self.index}")

    def render(self) -> str:
        return f"sent {self.index}"

    @classmethod
    def parse(cls, text: str) -> "SentenceLabel":
        m = _LABEL_RE.match(text.strip())
        if not m:
            raise ValueError(f"not a sentence label: {text!r}")
        return cls(int(m.group(1)))


class LabeledContext:
    """An ordered, immutable list of labeled statements.

    Labels are contiguous from 1. `extended` returns a new context with the
    statement appended under the next label; existing entries are shared.
    """

    __slots__ = ("entries",)

    def __init__(self, entries: Sequence[tuple[SentenceLabel, Statement]]):
        entries = tuple(entries)
        for pos, (label, _) in enumerate(entries, start=1):
            if label.index != pos:
                raise ValueError(
                    f"labels must be contiguous from 1; position {pos} has {label.render()}"
                )
        object.__setattr__(self, "entries", entries)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("LabeledContext is immutable")

    @classmethod
    def from_statements(cls, statements: Iterable[Statement | str]) -> "LabeledContext":
        entries = []
        for i, s in enumerate(statements, start=1):
            stmt = s if isinstance(s, Statement) else normalize_statement(s)
            entries.append((SentenceLabel(i), stmt))
        return cls(entries)

    def extended(self, statement: Statement) -> "LabeledContext":
        label = SentenceLabel(len(self.entries) + 1)
        return LabeledContext(self.entries + ((label, statement),))

    def statements(self) -> tuple[Statement, ...]:
        return tuple(s for _, s in self.entries)

    def lookup(self, label: SentenceLabel) -> Statement:
        if not 1 <= label.index <= len(self.entries):
            raise KeyError(f"{label.render()} out of range 1..{len(self.entries)}")
        return self.entries[label.index - 1][1]

    def label_of(self, statement: Statement) -> Optional[SentenceLabel]:
        for label, s in self.entries:
            if s == statement:
                return label
        return None

    def __contains__(self, statement: Statement) -> bool:
        return self.label_of(statement) is not None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledContext):
            return NotImplemented
        return self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    def __repr__(self) -> str:
        return f"LabeledContext({len(self.entries)} sentences)"


@dataclass(frozen=True)
class ReasoningStep:
    """One step: a non-empty ordered selection and the inference drawn from it."""

    selection: tuple[Statement, ...]
    inference: Statement
    selection_labels: tuple[SentenceLabel, ...] = ()
    value_score: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.selection:
            raise ValueError("selection must be non-empty")

    def with_score(self, score: float) -> "ReasoningStep":
        return replace(self, value_score=score)


@dataclass(frozen=True)
class Answer:
    """True | False | Unknown | Choice(text)."""

    kind: str  # "true" | "false" | "unknown" | "choice"
    choice: Optional[str] = None

    TRUE: "Answer" = None  # type: ignore[assignment]
    FALSE: "Answer" = None  # type: ignore[assignment]
    UNKNOWN: "Answer" = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.kind not in ("true", "false", "unknown", "choice"):
            raise ValueError(f"bad answer kind: {self.kind}")
        if (self.kind == "choice") != (self.choice is not None):
            raise ValueError("choice text iff kind == 'choice'")

    @classmethod
    def of_choice(cls, text: str) -> "Answer":
        return cls("choice", text)

    @classmethod
    def parse(cls, text: str) -> "Answer":
        t = text.strip()
        if t == "True":
            return cls.TRUE
        if t == "False":
            return cls.FALSE
        if t == "Unknown":
            return cls.UNKNOWN
        return cls.of_choice(t)

    @property
    def is_unknown(self) -> bool:
        return self.kind == "unknown"

    def render(self) -> str:
        if self.kind == "choice":
            return self.choice  # type: ignore[return-value]
        return self.kind.capitalize()


Answer.TRUE = Answer("true")
Answer.FALSE = Answer("false")
Answer.UNKNOWN = Answer("unknown")


@dataclass(frozen=True)
class ReasoningTrace:
    base_context: LabeledContext
    steps: tuple[ReasoningStep, ...] = ()
    halted: bool = False
    answer: Optional[Answer] = None

    def __post_init__(self) -> None:
        if (
            self.halted
            and self.answer is not None
            and not self.answer.is_unknown
            and not self.steps
        ):
            raise ValueError("halted trace with a definite answer must have steps")

    def context_before(self, step_index: int) -> LabeledContext:
        """Context in force when step `step_index` was taken."""
        ctx = self.base_context
        for step in self.steps[:step_index]:
            ctx = ctx.extended(step.inference)
        return ctx

    @property
    def full_context(self) -> LabeledContext:
        return self.context_before(len(self.steps))

    def extended(self, step: ReasoningStep) -> "ReasoningTrace":
        return replace(self, steps=self.steps + (step,))


@dataclass(frozen=True)
class ConnectivityReport:
    connected: bool
    offenders: tuple[tuple[int, Statement], ...] = ()


@dataclass(frozen=True)
class StepVerdict:
    index: int
    status: str  # "ok" | "bad" | "undecidable"
    detail: str = ""


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    connectivity: ConnectivityReport
    step_verdicts: tuple[StepVerdict, ...] = ()


def is_connected(trace: ReasoningTrace) -> ConnectivityReport:
    """Every selected statement must be a context member or a prior inference."""
    known = set(trace.base_context.statements())
    offenders = []
    for k, step in enumerate(trace.steps):
        for q in step.selection:
            if q not in known:
                offenders.append((k, q))
        known.add(step.inference)
    return ConnectivityReport(connected=not offenders, offenders=tuple(offenders))


def is_valid(
    trace: ReasoningTrace,
    step_oracle: Callable[[ReasoningStep], bool],
) -> ValidityReport:
    """Connected and every step accepted by the oracle.

    Oracle exceptions mark the step "undecidable" rather than aborting; an
    undecidable step makes the trace invalid.
    """
    connectivity = is_connected(trace)
    verdicts = []
    ok = connectivity.connected
    for k, step in enumerate(trace.steps):
        try:
            accepted = step_oracle(step)
        except Exception as exc:  # noqa: BLE001 - oracle failures demoted to verdicts
            verdicts.append(StepVerdict(k, "undecidable", str(exc)))
            ok = False
            continue
        if accepted:
            verdicts.append(StepVerdict(k, "ok"))
        else:
            verdicts.append(StepVerdict(k, "bad"))
            ok = False
    return ValidityReport(valid=ok, connectivity=connectivity, step_verdicts=tuple(verdicts))


def render_step(step: ReasoningStep) -> str:
    head = step.selection[0].surface
    rest = [s.surface for s in step.selection[1:]]
    if rest:
        return f"{head}. We know that {' and '.join(rest)}. Therefore, {step.inference.surface}."
    return f"{head}. Therefore, {step.inference.surface}."


def render_trace(trace: ReasoningTrace) -> str:
    return "\n".join(render_step(step) for step in trace.steps)


_THEREFORE = re.compile(r"\s*Therefore,\s*")


def parse_trace_text(text: str, base_context: LabeledContext) -> ReasoningTrace:
    """Lenient reader for the step format, tolerating arbitrary surface text.

    Accepts lines of the form "X. We know that Y and Z. Therefore, W." and a
    final "Answer: ..." line.
    """
    steps = []
    answer = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("Answer:"):
            answer = Answer.parse(line[len("Answer:"):])
            continue
        parts = _THEREFORE.split(line)
        if len(parts) != 2:
            raise TraceParseError(f"line {lineno}: no 'Therefore,' clause: {line!r}")
        premise_part, inference_part = parts
        premise_part = premise_part.strip()
        if premise_part.endswith("."):
            premise_part = premise_part[:-1]
        if ". We know that " in premise_part:
            first, rest = premise_part.split(". We know that ", 1)
            premises = [first] + rest.split(" and ")
        else:
            premises = [premise_part]
        try:
            selection = tuple(normalize_statement(p) for p in premises)
            inference = normalize_statement(inference_part)
        except EmptyStatement as exc:
            raise TraceParseError(f"line {lineno}: {exc}") from exc
        steps.append(ReasoningStep(selection=selection, inference=inference))
    return ReasoningTrace(
        base_context=base_context,
        steps=tuple(steps),
        halted=answer is not None,
        answer=answer,
    )
