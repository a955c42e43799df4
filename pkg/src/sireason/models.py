"""Role-typed text generators and the three interchangeable backends.

The reasoning engine talks to four kinds of generators: Selection (pick
sentence labels), Inference (complete an entailment), Halter (decide
whether the accumulated inference answers the question), and Value (score
a partial trace).  All of them share one request/response contract so a
symbolic oracle, a scripted table, and a remote model server can be
swapped without touching the engine.
"""

from __future__ import annotations

import json
import subprocess
import sys
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Mapping, Optional, Sequence

from . import cnl, symbolic
from .core import LabeledContext, Statement, normalize_key, normalize_statement

CORRECT = " correct"
INCORRECT = " incorrect"
# Finite stand-in for certainty about a wrong step; keeps score sums total.
CERTAIN_GOOD = 0.0
CERTAIN_BAD = -1e9


class GeneratorRole(str, Enum):
    SELECTION = "selection"
    INFERENCE = "inference"
    HALTER_READY = "halter_ready"
    HALTER_ANSWER = "halter_answer"
    VALUE = "value"


@dataclass(frozen=True)
class CompletionRequest:
    role: GeneratorRole
    prompt: str
    max_new_tokens: int = 64
    scored_continuations: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    continuation_logprobs: Optional[Mapping[str, float]] = None


class BackendError(Exception):
    """A backend could not produce a usable completion."""


class ScriptExhausted(BackendError):
    """A table-driven script ran out of queued responses."""


class RemoteError(BackendError):
    """Transport or protocol failure while talking to a remote backend."""


# ---------------------------------------------------------------------------
# Prompt templates.
# ---------------------------------------------------------------------------

def format_selection_prompt(question: str, context: LabeledContext) -> str:
    lines = [
        f"{label.render()}: {stmt.surface}" for label, stmt in context
    ]
    lines.append(f"Question: {question}")
    lines.append("Selection:")
    return "\n".join(lines)


def format_inference_prompt(selection: Sequence[Statement]) -> str:
    if not selection:
        raise ValueError("inference prompt needs at least one selected statement")
    head = selection[0].surface
    if len(selection) == 1:
        return f"{head}. Therefore,"
    rest = " and ".join(s.surface for s in selection[1:])
    return f"{head}. We know that {rest}. Therefore,"


def format_halter_prompts(
    question: str,
    inference: str,
    choices: Optional[Sequence[str]] = None,
) -> tuple[str, Optional[str]]:
    """Build the halting prompt(s).

    Multiple-choice questions use a two-stage halter: a readiness check and
    a choice-matching prompt.  True/False/Unknown questions use a single
    prompt and the answer doubles as the halting signal (second element is
    None in that mode).
    """
    if choices is not None:
        joined = " OR ".join(choices)
        ready = (
            f"Question:{question} {joined}. "
            f"Given {inference}. Do you know the answer?"
        )
        answer = (
            f"Given {inference}. Which of the following most closely matches:"
            f" {joined}? Answer:"
        )
        return ready, answer
    return f"Given {inference}. {question}", None


def format_value_prompt(context: LabeledContext, question: str, rendered_steps: str) -> str:
    if not rendered_steps.strip():
        raise ValueError("value prompt needs at least one reasoning step")
    ctx_text = " ".join(f"{stmt.surface}." for _, stmt in context)
    return (
        f"Context: {ctx_text} Question: {question} "
        f"Reason: {rendered_steps} The above reasoning steps are"
    )


# ---------------------------------------------------------------------------
# Prompt readers shared by oracle and scripted noise.  The oracle receives
# only prompt text, exactly like a model would, and parses it back into
# structured form so every backend honours the same interface.
# ---------------------------------------------------------------------------

def _read_selection_prompt(prompt: str) -> tuple[str, LabeledContext]:
    lines = prompt.split("\n")
    if len(lines) < 3 or lines[-1] != "Selection:" or not lines[-2].startswith("Question: "):
        raise BackendError("malformed selection prompt")
    question = lines[-2][len("Question: "):]
    surfaces = []
    for i, line in enumerate(lines[:-2], start=1):
        prefix = f"sent {i}: "
        if not line.startswith(prefix):
            raise BackendError(f"malformed sentence line {i!r}")
        surfaces.append(line[len(prefix):])
    return question, LabeledContext.from_statements(surfaces)


def _count_selection_sentences(prompt: str) -> int:
    try:
        _, ctx = _read_selection_prompt(prompt)
    except BackendError:
        return 0
    return len(ctx)


def _read_inference_prompt(prompt: str) -> list[Statement]:
    if not prompt.endswith(" Therefore,"):
        raise BackendError("malformed inference prompt")
    body = prompt[: -len(" Therefore,")]
    if ". We know that " in body:
        head, rest = body.split(". We know that ", 1)
        parts = [head] + rest.rstrip(".").split(" and ")
    else:
        parts = [body.rstrip(".")]
    return [normalize_statement(p) for p in parts]


def _read_value_prompt(prompt: str) -> tuple[list[str], str, str]:
    tail = " The above reasoning steps are"
    if not prompt.startswith("Context: ") or not prompt.endswith(tail):
        raise BackendError("malformed value prompt")
    body = prompt[len("Context: "): -len(tail)]
    try:
        ctx_text, rest = body.split(" Question: ", 1)
        question, reason = rest.split(" Reason: ", 1)
    except ValueError as exc:
        raise BackendError("malformed value prompt") from exc
    surfaces = [s for s in (p.strip() for p in ctx_text.split(". ")) if s]
    if surfaces and surfaces[-1].endswith("."):
        surfaces[-1] = surfaces[-1][:-1]
    return surfaces, question, reason


# ---------------------------------------------------------------------------
# Oracle backend.
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4096)
def _world_for(surfaces: tuple[str, ...]):
    ctx = LabeledContext.from_statements(surfaces)
    return ctx, symbolic.closure(ctx)


def _overlap_score(choice: str, inference: str) -> float:
    choice_tokens = [t for t in cnl_tokenize(choice) if t]
    inf_tokens = set(cnl_tokenize(inference))
    if not choice_tokens:
        return 0.0
    hit = sum(1 for t in choice_tokens if t in inf_tokens)
    return hit / len(choice_tokens)


def cnl_tokenize(text: str) -> list[str]:
    return [t for t in "".join(c if c.isalpha() else " " for c in text.lower()).split() if t]


class OracleBackend:
    """Symbolic stand-in for the fine-tuned generators.

    Selection enumerates candidate steps for each distinct prompt: the step
    that advances the shortest proof first, then every other rule firing in
    label order.  Repeated calls with the same prompt walk down that list,
    which is how beam search obtains distinct proposals.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._selection_cursor: dict[str, int] = {}

    def reset(self) -> None:
        with self._lock:
            self._selection_cursor.clear()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        role = GeneratorRole(request.role)
        if role is GeneratorRole.SELECTION:
            return self._complete_selection(request)
        if role is GeneratorRole.INFERENCE:
            return self._complete_inference(request)
        if role is GeneratorRole.HALTER_READY:
            return self._complete_halter_ready(request)
        if role is GeneratorRole.HALTER_ANSWER:
            return self._complete_halter_answer(request)
        if role is GeneratorRole.VALUE:
            return self._complete_value(request)
        raise BackendError(f"unknown role: {request.role!r}")

    # -- selection ----------------------------------------------------------

    def _complete_selection(self, request: CompletionRequest) -> CompletionResponse:
        question, ctx = _read_selection_prompt(request.prompt)
        candidates = _selection_candidates(tuple(s.surface for _, s in ctx), question)
        with self._lock:
            cursor = self._selection_cursor.get(request.prompt, 0)
            self._selection_cursor[request.prompt] = cursor + 1
        if cursor >= len(candidates):
            return CompletionResponse(text="")
        return CompletionResponse(text=candidates[cursor])

    # -- inference ----------------------------------------------------------

    def _complete_inference(self, request: CompletionRequest) -> CompletionResponse:
        selection = _read_inference_prompt(request.prompt)
        try:
            inferred = symbolic.entail_step(selection)
        except (symbolic.NoEntailment, symbolic.MalformedSelection):
            return CompletionResponse(text=f" {symbolic.NOTHING_FOLLOWS}.")
        return CompletionResponse(text=f" {inferred.surface}.")

    # -- halting ------------------------------------------------------------

    def _complete_halter_ready(self, request: CompletionRequest) -> CompletionResponse:
        prompt = request.prompt
        if prompt.startswith("Question:") and prompt.endswith(" Do you know the answer?"):
            q_and_inf = prompt[len("Question:"): -len(" Do you know the answer?")]
            try:
                question, inference = q_and_inf.rsplit(" Given ", 1)
            except ValueError as exc:
                raise BackendError("malformed readiness prompt") from exc
            inference = inference.rstrip(".")
            parsed = cnl.parse_question(question)
            if not isinstance(parsed, cnl.MultiChoiceQuestion):
                raise BackendError("readiness prompt without choices")
            ready = _matched_choice(parsed.choices, inference) is not None
            return CompletionResponse(text=" Yes." if ready else " No.")
        # Single-prompt True/False/Unknown halting.
        return CompletionResponse(text=_pw_halt_text(prompt))

    def _complete_halter_answer(self, request: CompletionRequest) -> CompletionResponse:
        prompt = request.prompt
        marker = ". Which of the following most closely matches: "
        if prompt.startswith("Given ") and marker in prompt and prompt.endswith("? Answer:"):
            given, rest = prompt[len("Given "):].split(marker, 1)
            choices = rest[: -len("? Answer:")].split(" OR ")
            best = _matched_choice(choices, given)
            if best is None:
                best = max(choices, key=lambda c: (_overlap_score(c, given), c))
            return CompletionResponse(text=f" {best}")
        return CompletionResponse(text=_pw_halt_text(prompt))

    # -- value --------------------------------------------------------------

    def _complete_value(self, request: CompletionRequest) -> CompletionResponse:
        if request.scored_continuations is None:
            raise BackendError("value request without scored continuations")
        surfaces, question, reason = _read_value_prompt(request.prompt)
        good = _judge_steps(tuple(surfaces), question, reason)
        logprobs = {
            CORRECT: CERTAIN_GOOD if good else CERTAIN_BAD,
            INCORRECT: CERTAIN_BAD if good else CERTAIN_GOOD,
        }
        missing = [c for c in request.scored_continuations if c not in logprobs]
        for c in missing:
            logprobs[c] = CERTAIN_BAD
        preferred = CORRECT if good else INCORRECT
        return CompletionResponse(text=preferred, continuation_logprobs=logprobs)


def _pw_halt_text(prompt: str) -> str:
    if not prompt.startswith("Given "):
        raise BackendError("malformed halting prompt")
    try:
        inference, question = prompt[len("Given "):].split(". ", 1)
    except ValueError as exc:
        raise BackendError("malformed halting prompt") from exc
    if normalize_key(inference) == normalize_key(symbolic.NOTHING_FOLLOWS):
        return " Unknown"
    parsed = cnl.parse_question(question)
    if not isinstance(parsed, cnl.Hypothesis):
        raise BackendError("halting prompt without a hypothesis question")
    try:
        inf_stmt = cnl.parse_statement(inference, strict=True)
    except cnl.ParseError:
        return " Unknown"
    if not isinstance(inf_stmt, cnl.Fact):
        return " Unknown"
    if inf_stmt.atom == parsed.atom:
        return " True"
    if cnl.is_negation_of(inf_stmt.atom, parsed.atom):
        return " False"
    return " Unknown"


def _matched_choice(choices: Sequence[str], inference: str) -> Optional[str]:
    scored = sorted(
        ((_overlap_score(c, inference), c) for c in choices), reverse=True
    )
    if not scored or scored[0][0] <= 0.0:
        return None
    if len(scored) > 1 and scored[0][0] == scored[1][0]:
        return None
    return scored[0][1]


@lru_cache(maxsize=8192)
def _selection_candidates(surfaces: tuple[str, ...], question: str) -> tuple[str, ...]:
    """Ordered selection completions for one prompt, best candidate first."""
    ctx, world = _world_for(surfaces)
    present = {stmt.key for _, stmt in ctx}
    parsed_q = cnl.parse_question(question)

    on_path: Optional[tuple[int, ...]] = None
    if isinstance(parsed_q, cnl.Hypothesis):
        try:
            proof = symbolic.shortest_proof(world, parsed_q)
            for step in proof.steps:
                if normalize_key(step.inference.surface) not in present:
                    on_path = tuple(lbl.index for lbl in step.selection_labels)
                    break
        except symbolic.NoProof:
            pass

    facts, rules, _ = symbolic.parse_context(ctx)
    fact_atoms = sorted(
        ((label, atom) for atom, label in facts.items()), key=lambda p: p[0].index
    )
    firings: list[tuple[int, ...]] = []
    seen: set[tuple[int, frozenset[int]]] = set()
    for rule_label, rule in rules:
        for combo in _firing_combos(rule, fact_atoms):
            head_key = combo[0]
            labels = combo[1]
            if head_key in present:
                continue
            sig = (rule_label.index, frozenset(l.index for l in labels))
            if sig in seen:
                continue
            seen.add(sig)
            firings.append((rule_label.index,) + tuple(l.index for l in labels))
    firings.sort()

    ordered: list[tuple[int, ...]] = []
    if on_path is not None:
        ordered.append(on_path)
    for f in firings:
        if on_path is not None and frozenset(f) == frozenset(on_path):
            continue
        ordered.append(f)
    return tuple(_render_selection(labels) for labels in ordered)


def _firing_combos(rule, fact_atoms):
    """Yield (head key, premise labels) for every way the rule body matches."""
    import itertools

    n = len(rule.body)
    for combo in itertools.combinations(fact_atoms, n):
        try:
            head = symbolic.apply_rule(rule, [atom for _, atom in combo])
        except symbolic.NoEntailment:
            continue
        labels = sorted((label for label, _ in combo), key=lambda l: l.index)
        yield normalize_key(cnl.render_atom(head)), labels


def _render_selection(labels: Sequence[int]) -> str:
    first, rest = labels[0], labels[1:]
    if not rest:
        raise BackendError("selection needs a rule and at least one premise")
    known = " and ".join(f"sent {i}" for i in rest)
    return f" sent {first}. We know that {known}."


@lru_cache(maxsize=8192)
def _judge_steps(surfaces: tuple[str, ...], question: str, reason: str) -> bool:
    """Decide whether the newest rendered step is valid and on a shortest proof."""
    from . import core

    ctx, world = _world_for(surfaces)
    parsed_q = cnl.parse_question(question)
    if not isinstance(parsed_q, cnl.Hypothesis):
        raise BackendError("value oracle needs a hypothesis question")
    try:
        trace = core.parse_trace_text(reason, ctx)
    except core.TraceParseError:
        return False
    if not trace.steps:
        return False
    step = trace.steps[-1]
    if normalize_key(step.inference.surface) == normalize_key(symbolic.NOTHING_FOLLOWS):
        return False
    if not symbolic.is_step_correct(step):
        return False
    try:
        gold = symbolic.shortest_proof(world, parsed_q)
    except symbolic.NoProof:
        return False
    gold_keys = {normalize_key(s.inference.surface) for s in gold.steps}
    return normalize_key(step.inference.surface) in gold_keys


def oracle_backend() -> OracleBackend:
    return OracleBackend()


# ---------------------------------------------------------------------------
# Scripted backend.
# ---------------------------------------------------------------------------

class ScriptedBackend:
    """Replays queued responses and/or perturbs a base backend.

    `script` maps a role to a FIFO list of response texts.  Roles without a
    script entry fall through to `base`.  With noise rate ε, selection
    outputs are replaced (with probability ε, seeded) by a uniformly random
    well-formed label sentence over the prompt's sentence range.
    """

    def __init__(
        self,
        base=None,
        script: Optional[Mapping[GeneratorRole, Sequence[str]]] = None,
        noise_rate: float = 0.0,
        seed: int = 0,
    ) -> None:
        if not 0.0 <= noise_rate <= 1.0:
            raise ValueError("noise rate must be within [0, 1]")
        self._base = base
        self._script = {
            GeneratorRole(role): list(items) for role, items in (script or {}).items()
        }
        self._noise_rate = noise_rate
        self._rng = __import__("random").Random(("scripted", seed).__repr__())
        self._lock = threading.Lock()

    def reset(self) -> None:
        if self._base is not None and hasattr(self._base, "reset"):
            self._base.reset()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        role = GeneratorRole(request.role)
        with self._lock:
            # Noise pre-empts the underlying generator: the call itself is
            # replaced, so repeated proposals stay independent draws.
            if role is GeneratorRole.SELECTION and self._noise_rate > 0.0:
                if self._rng.random() < self._noise_rate:
                    return CompletionResponse(text=self._random_selection(request.prompt))
            if role in self._script:
                queue = self._script[role]
                if not queue:
                    raise ScriptExhausted(f"no scripted responses left for {role.value}")
                return CompletionResponse(text=queue.pop(0))
            if self._base is None:
                raise ScriptExhausted(f"no script and no base backend for {role.value}")
            return self._base.complete(request)

    def _random_selection(self, prompt: str) -> str:
        n = _count_selection_sentences(prompt)
        if n < 2:
            return ""
        rule = self._rng.randint(1, n)
        n_premises = self._rng.choice([1, 2])
        premises = [self._rng.randint(1, n) for _ in range(n_premises)]
        return _render_selection([rule] + premises)


def scripted_backend(
    base=None,
    script: Optional[Mapping[GeneratorRole, Sequence[str]]] = None,
    noise_rate: float = 0.0,
    seed: int = 0,
) -> ScriptedBackend:
    return ScriptedBackend(base=base, script=script, noise_rate=noise_rate, seed=seed)


# ---------------------------------------------------------------------------
# Remote backend: one JSON document per request/response over a byte stream.
# ---------------------------------------------------------------------------

def encode_request(request: CompletionRequest) -> bytes:
    doc = {
        "role": GeneratorRole(request.role).value,
        "prompt": request.prompt,
        "max_new_tokens": request.max_new_tokens,
        "scored_continuations": (
            list(request.scored_continuations)
            if request.scored_continuations is not None
            else None
        ),
    }
    return (json.dumps(doc, sort_keys=True) + "\n").encode("utf-8")


def decode_request(data: bytes) -> CompletionRequest:
    try:
        doc = json.loads(data.decode("utf-8"))
        cont = doc["scored_continuations"]
        return CompletionRequest(
            role=GeneratorRole(doc["role"]),
            prompt=doc["prompt"],
            max_new_tokens=int(doc["max_new_tokens"]),
            scored_continuations=tuple(cont) if cont is not None else None,
        )
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise RemoteError(f"bad request document: {exc}") from exc


def encode_response(response: CompletionResponse) -> bytes:
    doc = {
        "text": response.text,
        "continuation_logprobs": (
            dict(response.continuation_logprobs)
            if response.continuation_logprobs is not None
            else None
        ),
    }
    return (json.dumps(doc, sort_keys=True) + "\n").encode("utf-8")


def decode_response(data: bytes) -> CompletionResponse:
    try:
        doc = json.loads(data.decode("utf-8"))
        logprobs = doc["continuation_logprobs"]
        return CompletionResponse(
            text=doc["text"],
            continuation_logprobs=(
                {k: float(v) for k, v in logprobs.items()}
                if logprobs is not None
                else None
            ),
        )
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise RemoteError(f"bad response document: {exc}") from exc


class PipeTransport:
    """Runs a server subprocess and exchanges newline-delimited documents."""

    def __init__(self, argv: Optional[Sequence[str]] = None) -> None:
        self._argv = list(argv) if argv else [sys.executable, "-m", "sireason.models"]
        self._proc: Optional[subprocess.Popen] = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self._argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        return self._proc

    def exchange(self, payload: bytes) -> bytes:
        proc = self._ensure()
        try:
            proc.stdin.write(payload)
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise RemoteError(f"pipe transport failed: {exc}") from exc
        if not line:
            raise RemoteError("pipe transport: server closed the stream")
        return line

    def close(self) -> None:
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None


class HttpTransport:
    """POSTs each document to an HTTP endpoint and reads the reply body."""

    def __init__(self, endpoint: str, timeout: float = 30.0) -> None:
        self._endpoint = endpoint
        self._timeout = timeout

    def exchange(self, payload: bytes) -> bytes:
        req = urllib.request.Request(
            self._endpoint,
            data=payload,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self._timeout) as resp:
                return resp.read()
        except (urllib.error.URLError, OSError) as exc:
            raise RemoteError(f"http transport failed: {exc}") from exc

    def close(self) -> None:
        pass


class RemoteBackend:
    """Client side of the wire protocol with a retry budget and flight cap."""

    def __init__(self, transport, retries: int = 2, max_in_flight: int = 4) -> None:
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        self._transport = transport
        self._retries = retries
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        payload = encode_request(request)
        last: Optional[Exception] = None
        for _ in range(self._retries + 1):
            with self._gate:
                try:
                    raw = self._transport.exchange(payload)
                except RemoteError as exc:
                    last = exc
                    continue
            response = decode_response(raw)
            if request.scored_continuations is not None:
                lp = response.continuation_logprobs or {}
                missing = [c for c in request.scored_continuations if c not in lp]
                if missing:
                    raise RemoteError(f"response missing logprobs for {missing!r}")
            return response
        raise RemoteError(f"retry budget exhausted: {last}")

    def close(self) -> None:
        self._transport.close()


def remote_backend(endpoint: str, retries: int = 2, max_in_flight: int = 4) -> RemoteBackend:
    """Connect to a server.  `pipe:` endpoints spawn a subprocess, others POST."""
    if endpoint.startswith("pipe:"):
        argv = endpoint[len("pipe:"):]
        transport = PipeTransport(argv.split() if argv else None)
    else:
        transport = HttpTransport(endpoint)
    return RemoteBackend(transport, retries=retries, max_in_flight=max_in_flight)


def serve(backend, rfile, wfile) -> None:
    """Answer newline-delimited request documents until the stream closes."""
    for line in rfile:
        if not line.strip():
            continue
        request = decode_request(line)
        response = backend.complete(request)
        wfile.write(encode_response(response))
        wfile.flush()


def _main() -> None:
    serve(oracle_backend(), sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    _main()
