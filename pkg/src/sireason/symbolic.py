"""Deterministic forward-chaining reasoner over the parsed rule language.

Provides single-step entailment (the reference inference model), exhaustive
closure with provenance and minimal proof sizes, hypothesis evaluation under
open-world semantics, shortest-proof extraction, and a seeded random problem
generator.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .cnl import (
    Atom,
    Fact,
    Hypothesis,
    RuleAst,
    Term,
    VAR,
    const,
    negate,
    parse_statement,
    render_atom,
)
from .core import (
    Answer,
    LabeledContext,
    ReasoningStep,
    ReasoningTrace,
    SentenceLabel,
    Statement,
    normalize_statement,
)


class NoEntailment(ValueError):
    """The facts do not instantiate the rule body."""


class MalformedSelection(ValueError):
    """The selection is not one rule plus ground facts."""


class NoProof(ValueError):
    """Raised when a proof is requested for an unprovable hypothesis."""


class GenerationFailure(RuntimeError):
    """Problem generation did not converge within the retry budget."""


NOTHING_FOLLOWS = "nothing follows"


def _match_body(body: tuple[Atom, ...], facts: list[Atom]) -> Optional[Optional[Term]]:
    """Find a variable binding under which `facts` cover `body` one-to-one.

    Returns the binding term (or None for variable-free rules) if a consistent
    bijection exists; returns no match as a raised NoEntailment.
    """
    if len(body) != len(facts):
        raise NoEntailment(
            f"rule body has {len(body)} atoms but {len(facts)} facts were selected"
        )
    for perm in itertools.permutations(facts):
        binding: Optional[Term] = None
        ok = True
        for pattern, fact in zip(body, perm):
            if pattern.predicate != fact.predicate or pattern.negated != fact.negated:
                ok = False
                break
            if bool(pattern.obj) != bool(fact.obj):
                ok = False
                break
            pairs = [(pattern.subject, fact.subject)]
            if pattern.obj is not None:
                pairs.append((pattern.obj, fact.obj))
            for pat_term, fact_term in pairs:
                if pat_term.is_variable:
                    if binding is None:
                        binding = fact_term
                    elif binding != fact_term:
                        ok = False
                        break
                elif pat_term != fact_term:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return binding
    raise NoEntailment("facts do not instantiate the rule body under one binding")


def apply_rule(rule: RuleAst, facts: list[Atom]) -> Atom:
    """Instantiated head if the facts match the body; NoEntailment otherwise."""
    binding = _match_body(rule.body, facts)
    head = rule.head.substitute(binding)
    if not head.is_ground:
        raise NoEntailment("rule head remains unbound")
    return head


def entail_step(selection: Iterable[Statement]) -> Statement:
    """One deductive step: exactly one rule plus its supporting ground facts."""
    rules: list[RuleAst] = []
    facts: list[Atom] = []
    for stmt in selection:
        parsed = parse_statement(stmt.surface)
        if isinstance(parsed, RuleAst):
            rules.append(parsed)
        elif isinstance(parsed, Fact):
            facts.append(parsed.atom)
        else:
            raise MalformedSelection(f"unparseable statement: {stmt.surface!r}")
    if len(rules) != 1:
        raise MalformedSelection(f"selection must contain exactly one rule, got {len(rules)}")
    if not facts:
        raise MalformedSelection("selection contains no facts")
    head = apply_rule(rules[0], facts)
    return normalize_statement(render_atom(head))


def is_step_correct(step: ReasoningStep) -> bool:
    """True iff the inference equals what the rule and facts entail.

    A selection that entails nothing is faithfully reported by the
    "nothing follows" inference, which therefore also counts as correct.
    """
    try:
        return entail_step(step.selection) == step.inference
    except (MalformedSelection, NoEntailment):
        return step.inference == normalize_statement(NOTHING_FOLLOWS)


@dataclass(frozen=True)
class Derivation:
    """One rule application: premises (ground atoms) to head."""

    rule_label: SentenceLabel
    premises: tuple[Atom, ...]
    head: Atom


@dataclass(frozen=True)
class AtomProof:
    depth: int
    steps: frozenset[Derivation]
    derivation: Optional[Derivation]  # None for base facts


@dataclass
class WorldClosure:
    context: LabeledContext
    derived: dict[Atom, AtomProof]
    fact_labels: dict[Atom, SentenceLabel]
    rule_entries: list[tuple[SentenceLabel, RuleAst]]
    opaque_labels: list[SentenceLabel] = field(default_factory=list)

    def depth(self, atom: Atom) -> Optional[int]:
        proof = self.derived.get(atom)
        return proof.depth if proof else None


def _atom_sort_key(atom: Atom) -> tuple:
    return (
        atom.predicate,
        atom.subject.name,
        atom.obj.name if atom.obj else "",
        atom.negated,
    )


def _candidate_key(rule_label: SentenceLabel, premises: tuple[Atom, ...]) -> tuple:
    return (rule_label.index, tuple(_atom_sort_key(a) for a in premises))


def parse_context(context: LabeledContext):
    """Split a labeled context into fact atoms, rules, and opaque labels."""
    fact_labels: dict[Atom, SentenceLabel] = {}
    rules: list[tuple[SentenceLabel, RuleAst]] = []
    opaque: list[SentenceLabel] = []
    for label, stmt in context:
        parsed = parse_statement(stmt.surface)
        if isinstance(parsed, Fact):
            fact_labels.setdefault(parsed.atom, label)
        elif isinstance(parsed, RuleAst):
            rules.append((label, parsed))
        else:
            opaque.append(label)
    return fact_labels, rules, opaque


def closure(context: LabeledContext) -> WorldClosure:
    """Least fixed point of rule application, with one minimal proof per atom.

    Proof size counts distinct rule applications (shared sub-proofs counted
    once). Ties break on the lowest rule label, then on premise atoms, for
    deterministic provenance.
    """
    fact_labels, rules, opaque = parse_context(context)

    derived: dict[Atom, AtomProof] = {
        atom: AtomProof(depth=0, steps=frozenset(), derivation=None)
        for atom in fact_labels
    }

    constants = set()
    for atom in fact_labels:
        constants.add(atom.subject)
        if atom.obj:
            constants.add(atom.obj)
    for _, rule in rules:
        for a in list(rule.body) + [rule.head]:
            for t in (a.subject, a.obj):
                if t is not None and not t.is_variable:
                    constants.add(t)
    constants = sorted(constants, key=lambda t: (t.name, t.proper))

    def bindings_for(rule: RuleAst):
        uses_var = any(
            a.subject.is_variable or (a.obj and a.obj.is_variable)
            for a in list(rule.body) + [rule.head]
        )
        return constants if uses_var else [None]

    changed = True
    while changed:
        changed = False
        for label, rule in rules:
            for binding in bindings_for(rule):
                premises = tuple(a.substitute(binding) for a in rule.body)
                if any(not p.is_ground for p in premises):
                    continue
                if any(p not in derived for p in premises):
                    continue
                head = rule.head.substitute(binding)
                if not head.is_ground:
                    continue
                step = Derivation(rule_label=label, premises=premises, head=head)
                steps = frozenset().union(*(derived[p].steps for p in premises)) | {step}
                cost = len(steps)
                current = derived.get(head)
                if current is not None and current.depth < cost:
                    continue
                if (
                    current is not None
                    and current.depth == cost
                    and current.derivation is not None
                    and _candidate_key(
                        current.derivation.rule_label, current.derivation.premises
                    )
                    <= _candidate_key(label, premises)
                ):
                    continue
                if current is not None and current.depth == 0:
                    continue  # base facts keep their trivial proof
                derived[head] = AtomProof(depth=cost, steps=steps, derivation=step)
                changed = True

    return WorldClosure(
        context=context,
        derived=derived,
        fact_labels=fact_labels,
        rule_entries=rules,
        opaque_labels=opaque,
    )


def evaluate_hypothesis(world: WorldClosure, hypothesis: Hypothesis) -> Answer:
    """Open-world: True if derivable, False if the negation is, else Unknown.

    If both are derivable the shallower derivation wins; ties go to True.
    """
    pos = world.derived.get(hypothesis.atom)
    neg = world.derived.get(negate(hypothesis.atom))
    if pos is not None and (neg is None or pos.depth <= neg.depth):
        return Answer.TRUE
    if neg is not None:
        return Answer.FALSE
    return Answer.UNKNOWN


def proof_target(world: WorldClosure, hypothesis: Hypothesis) -> Atom:
    """The atom a proof should derive: the hypothesis or its negation."""
    answer = evaluate_hypothesis(world, hypothesis)
    if answer is Answer.TRUE:
        return hypothesis.atom
    if answer is Answer.FALSE:
        return negate(hypothesis.atom)
    raise NoProof(f"hypothesis is Unknown: {hypothesis.surface!r}")


def _ordered_derivations(world: WorldClosure, steps: frozenset[Derivation]) -> list[Derivation]:
    """Topological order (premises before use) with deterministic tie-breaks."""
    remaining = sorted(
        steps, key=lambda d: (world.derived[d.head].depth, _candidate_key(d.rule_label, d.premises))
    )
    available = set(world.fact_labels)
    ordered: list[Derivation] = []
    while remaining:
        for i, d in enumerate(remaining):
            if all(p in available for p in d.premises):
                ordered.append(d)
                available.add(d.head)
                del remaining[i]
                break
        else:  # pragma: no cover - closure provenance is always well-founded
            raise NoProof("cyclic provenance")
    return ordered


def shortest_proof(world: WorldClosure, hypothesis: Hypothesis) -> ReasoningTrace:
    """A minimal valid trace deriving the hypothesis (or its negation)."""
    target = proof_target(world, hypothesis)
    proof = world.derived[target]
    answer = evaluate_hypothesis(world, hypothesis)
    if proof.depth == 0:
        # The target is a base statement; there is no derivation to show.
        raise NoProof(f"hypothesis is settled by the context: {hypothesis.surface!r}")

    ordered = _ordered_derivations(world, proof.steps)
    context = world.context
    inference_labels: dict[Atom, SentenceLabel] = {}
    steps: list[ReasoningStep] = []
    for d in ordered:
        rule_stmt = context.lookup(d.rule_label)
        premise_entries = []
        for p in d.premises:
            label = world.fact_labels.get(p) or inference_labels.get(p)
            if label is None:  # pragma: no cover
                raise NoProof(f"premise without provenance: {render_atom(p)}")
            premise_entries.append((label, context.lookup(label)))
        premise_entries.sort(key=lambda e: e[0].index)
        inference = normalize_statement(render_atom(d.head))
        labels = (d.rule_label,) + tuple(l for l, _ in premise_entries)
        steps.append(
            ReasoningStep(
                selection=(rule_stmt,) + tuple(s for _, s in premise_entries),
                inference=inference,
                selection_labels=labels,
            )
        )
        context = context.extended(inference)
        inference_labels.setdefault(d.head, SentenceLabel(len(context)))
    return ReasoningTrace(
        base_context=world.context, steps=tuple(steps), halted=True, answer=answer
    )


# ---------------------------------------------------------------------------
# Random problem generation


@dataclass(frozen=True)
class GeneratedProblem:
    context: LabeledContext
    question: str
    hypothesis: Hypothesis
    gold_answer: Answer
    gold_proof: ReasoningTrace
    depth: int
    seed: int


_ENTITIES = [
    "cat", "dog", "mouse", "tiger", "lion", "bear", "rabbit", "squirrel",
    "cow", "bald eagle", "fox", "wolf",
]
_ADJECTIVES = [
    "kind", "nice", "green", "blue", "red", "round", "rough", "cold",
    "young", "big", "quiet", "smart", "furry", "happy",
]
_VERBS = ["eats", "likes", "sees", "needs", "chases", "visits"]
_VERB_LEMMA = {"eats": "eat", "likes": "like", "sees": "see", "needs": "need",
               "chases": "chase", "visits": "visit"}


def _render_rule(body_atoms: list[Atom], head: Atom, quantifier: str) -> str:
    """Render a rule whose variable (if any) is written with the quantifier
    introducing it and pronouns thereafter."""
    parts = []
    var_seen = False

    def term_text(t: Term, as_subject: bool) -> str:
        nonlocal var_seen
        if not t.is_variable:
            return t.name if t.proper else f"the {t.name}"
        if not var_seen:
            var_seen = True
            return quantifier
        return "it" if quantifier == "something" else "they"

    def atom_text(a: Atom) -> str:
        subj = term_text(a.subject, True)
        plural = subj == "they"
        if a.is_attribute:
            copula = "are" if plural else "is"
            if a.negated:
                return f"{subj} {copula} not {a.predicate}"
            return f"{subj} {copula} {a.predicate}"
        obj = term_text(a.obj, False)
        if a.negated:
            do = "do" if plural else "does"
            return f"{subj} {do} not {_VERB_LEMMA[_third_of(a.predicate)]} {obj}"
        verb = _third_of(a.predicate) if not plural else a.predicate
        return f"{subj} {verb} {obj}"

    for a in body_atoms:
        parts.append(atom_text(a))
    head_text = atom_text(head)
    return f"If {' and '.join(parts)} then {head_text}"


def _third_of(lemma: str) -> str:
    for third, lem in _VERB_LEMMA.items():
        if lem == lemma:
            return third
    return lemma


def generate_problem(
    seed: int,
    depth: int,
    n_distractor_rules: int = 2,
    n_distractor_facts: int = 4,
    max_attempts: int = 40,
) -> GeneratedProblem:
    """Seeded-deterministic problem with a gold proof of exactly `depth` steps.

    The gold answer is True or False (never Unknown); distractor rules and
    facts never shorten the proof (verified by recomputing the closure).
    """
    if depth not in (1, 2, 3, 5):
        raise ValueError(f"depth must be one of 1, 2, 3, 5; got {depth}")
    rng = random.Random(("sireason", seed, depth).__repr__())
    last_error = "no attempt made"
    for _ in range(max_attempts):
        try:
            problem = _generate_once(rng, seed, depth, n_distractor_rules, n_distractor_facts)
        except _RetryGeneration as exc:
            last_error = str(exc)
            continue
        return problem
    raise GenerationFailure(f"no problem after {max_attempts} attempts: {last_error}")


class _RetryGeneration(Exception):
    pass


def _generate_once(rng, seed, depth, n_distractor_rules, n_distractor_facts):
    entities = rng.sample(_ENTITIES, k=min(6, len(_ENTITIES)))
    adjectives = rng.sample(_ADJECTIVES, k=len(_ADJECTIVES))
    adj_iter = iter(adjectives)

    def fresh_attribute(subject: Term) -> Atom:
        try:
            return Atom(next(adj_iter), subject)
        except StopIteration:
            raise _RetryGeneration("adjective pool exhausted")

    used_relations: set[tuple[str, str, str]] = set()

    def fresh_relation(subject: Term) -> Atom:
        for _ in range(30):
            verb = _VERB_LEMMA[rng.choice(_VERBS)]
            obj = const(rng.choice(entities))
            if (verb, subject.name, obj.name) not in used_relations:
                used_relations.add((verb, subject.name, obj.name))
                return Atom(verb, subject, obj=obj)
        raise _RetryGeneration("relation pool exhausted")

    subject = const(rng.choice(entities))
    current = fresh_attribute(subject) if rng.random() < 0.5 else fresh_relation(subject)

    facts: list[str] = [render_atom(current)]
    rules: list[str] = []

    def generalize(atom: Atom) -> Atom:
        return Atom(atom.predicate, VAR, obj=atom.obj, negated=atom.negated)

    for level in range(depth):
        body = [generalize(current)]
        side_fact = None
        if rng.random() < 0.4:
            side = (
                fresh_attribute(current.subject)
                if rng.random() < 0.5
                else fresh_relation(current.subject)
            )
            body.append(generalize(side))
            side_fact = side
        negated_head = level == depth - 1 and rng.random() < 0.5
        if rng.random() < 0.6:
            head = Atom(
                next(adj_iter, None) or "",
                VAR,
                negated=negated_head,
            )
            if not head.predicate:
                raise _RetryGeneration("adjective pool exhausted")
            head_ground = Atom(head.predicate, current.subject, negated=negated_head)
        else:
            rel = fresh_relation(current.subject)
            head = Atom(rel.predicate, VAR, obj=rel.obj, negated=negated_head)
            head_ground = Atom(rel.predicate, current.subject, obj=rel.obj, negated=negated_head)
        quantifier = rng.choice(["something", "someone"])
        rules.append(_render_rule(body, head, quantifier))
        if side_fact is not None:
            facts.append(render_atom(side_fact))
        current = head_ground

    target = current

    # Distractors: rules firing off attributes never asserted, and inert facts.
    for _ in range(n_distractor_rules):
        adj = next(adj_iter, None)
        head_adj = next(adj_iter, None)
        if adj is None or head_adj is None:
            break
        quantifier = rng.choice(["something", "someone"])
        rules.append(
            _render_rule([Atom(adj, VAR)], Atom(head_adj, VAR), quantifier)
        )
    for _ in range(n_distractor_facts):
        who = const(rng.choice(entities))
        distractor = fresh_relation(who)
        if rng.random() < 0.25:
            distractor = negate(distractor)
        facts.append(render_atom(distractor))

    sentences = rules + facts
    rng.shuffle(sentences)
    context = LabeledContext.from_statements(sentences)

    world = closure(context)
    if target not in world.derived or world.derived[target].depth != depth:
        raise _RetryGeneration("distractors perturbed the target depth")
    for atom in world.derived:
        if not atom.negated and negate(atom) in world.derived:
            raise _RetryGeneration("contradictory world")

    ask_negation = rng.random() < 0.5
    asked_atom = negate(target) if ask_negation else target
    hyp_surface = render_atom(asked_atom)
    hypothesis = Hypothesis(atom=asked_atom, surface=hyp_surface)
    gold_answer = evaluate_hypothesis(world, hypothesis)
    if gold_answer is Answer.UNKNOWN:  # pragma: no cover - target is derivable
        raise _RetryGeneration("hypothesis unexpectedly unknown")
    question_text = (
        f'Does it imply that the statement "{hyp_surface[0].upper()}{hyp_surface[1:]}" is True?'
    )
    gold_proof = shortest_proof(world, hypothesis)
    if len(gold_proof.steps) != depth:  # pragma: no cover - guarded by depth check
        raise _RetryGeneration("proof length mismatch")
    return GeneratedProblem(
        context=context,
        question=question_text,
        hypothesis=hypothesis,
        gold_answer=gold_answer,
        gold_proof=gold_proof,
        depth=depth,
        seed=seed,
    )
