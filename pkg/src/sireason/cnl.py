"""Parser and renderer for the rule-language statements the symbolic reasoner
consumes.

Supported productions (versioned; see grammar.txt shipped with the package):

  facts   "the X VERBs the Y" | "the X does not VERB the Y"
          "<subject> is ADJ" | "<subject> is not ADJ"
  rules   "If A then B" | "If A and B then C"
          "All ADJ things/people are ADJ2"
          "All ADJ1, ADJ2 things/people are ADJ3"
          "ADJ1, ADJ2 things/people are ADJ3"

Within a rule, "something"/"someone" introduces the quantified variable and
"it"/"they"/"them" refer back to it; "the X" and capitalized names are
constants. Anything outside the grammar becomes an Opaque statement, usable
as text but not by the reasoner.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Union


class ParseError(ValueError):
    def __init__(self, message: str, text: str, position: int = 0, expected: str = ""):
        self.text = text
        self.position = position
        self.expected = expected
        detail = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at position {position} in {text!r}{detail}")


# Closed, extensible map of inflected verb forms to lemmas.
_VERB_FORMS: dict[str, str] = {}
# Preferred third-person-singular surface per lemma, for rendering.
_THIRD_PERSON: dict[str, str] = {}


def register_verb(third_person: str, lemma: str) -> None:
    """Add a relation verb to the closed lemma table."""
    _VERB_FORMS[third_person] = lemma
    _VERB_FORMS[lemma] = lemma
    _THIRD_PERSON[lemma] = third_person
    try:
        parse_statement.cache_clear()
    except NameError:
        pass


def unregister_verb(third_person: str) -> None:
    """Undo register_verb, mainly useful for test isolation."""
    lemma = _VERB_FORMS.pop(third_person, None)
    if lemma is not None:
        _VERB_FORMS.pop(lemma, None)
        _THIRD_PERSON.pop(lemma, None)
    try:
        parse_statement.cache_clear()
    except NameError:
        pass


for _third, _lemma in [
    ("eats", "eat"),
    ("likes", "like"),
    ("sees", "see"),
    ("needs", "need"),
    ("chases", "chase"),
    ("visits", "visit"),
]:
    register_verb(_third, _lemma)


@dataclass(frozen=True)
class Term:
    name: str = ""
    is_variable: bool = False
    proper: bool = False

    def __post_init__(self) -> None:
        if not self.is_variable and not self.name:
            raise ValueError("constant terms need a name")


VAR = Term(is_variable=True)


def const(name: str, proper: bool = False) -> Term:
    return Term(name=name, proper=proper)


@dataclass(frozen=True)
class Atom:
    """Attribute atoms have no object; relation atoms have exactly one."""

    predicate: str
    subject: Term
    obj: Optional[Term] = None
    negated: bool = False

    @property
    def is_attribute(self) -> bool:
        return self.obj is None

    @property
    def is_ground(self) -> bool:
        return not self.subject.is_variable and not (self.obj and self.obj.is_variable)

    def substitute(self, binding: Optional[Term]) -> "Atom":
        subject = binding if self.subject.is_variable and binding else self.subject
        obj = self.obj
        if obj is not None and obj.is_variable and binding:
            obj = binding
        return replace(self, subject=subject, obj=obj)


def negate(atom: Atom) -> Atom:
    return replace(atom, negated=not atom.negated)


def is_negation_of(a: Atom, b: Atom) -> bool:
    return a == negate(b)


@dataclass(frozen=True)
class Fact:
    atom: Atom
    surface: str


@dataclass(frozen=True)
class RuleAst:
    body: tuple[Atom, ...]
    head: Atom
    surface: str

    def __post_init__(self) -> None:
        if not self.body:
            raise ValueError("rule body must be non-empty")


@dataclass(frozen=True)
class Opaque:
    surface: str


Parsed = Union[Fact, RuleAst, Opaque]


@dataclass(frozen=True)
class Hypothesis:
    atom: Atom
    surface: str

    def __post_init__(self) -> None:
        if not self.atom.is_ground:
            raise ValueError("hypothesis must be ground")


@dataclass(frozen=True)
class MultiChoiceQuestion:
    question: str
    choices: tuple[str, ...]


_PRONOUNS = {"it", "they", "them"}
_QUANTIFIERS = {"something", "someone", "anything", "anyone"}
_NAME_RE = re.compile(r"^[A-Z][a-z]+$")


class _AtomParser:
    """Parses atoms inside one statement, tracking the quantified variable."""

    def __init__(self, text: str):
        self.text = text
        self.has_variable = False
        self.last_subject: Optional[Term] = None

    def parse_term_tokens(self, tokens: list[str]) -> Term:
        if not tokens:
            raise ParseError("missing term", self.text, expected="term")
        if tokens[0].lower() == "the":
            if len(tokens) < 2:
                raise ParseError("bare article", self.text, expected="noun")
            name = " ".join(tokens[1:]).lower()
            # "the same entity" binds to the quantified variable
            if name == "same entity":
                self.has_variable = True
                return VAR
            return const(name)
        joined = " ".join(tokens)
        if joined.lower() in _QUANTIFIERS:
            self.has_variable = True
            return VAR
        if joined.lower() in _PRONOUNS:
            self.has_variable = True
            return VAR
        if len(tokens) == 1 and _NAME_RE.match(tokens[0]):
            return const(tokens[0], proper=True)
        raise ParseError(f"cannot read term {joined!r}", self.text, expected="term")

    def parse_atom(self, text: str) -> Atom:
        tokens = text.split()
        if not tokens:
            raise ParseError("empty atom", self.text, expected="atom")

        # Bare-adjective continuation: "kind", "not young" share the previous
        # subject ("If someone is red and kind then ...").
        if self.last_subject is not None and len(tokens) <= 2:
            if tokens[0] == "not" and len(tokens) == 2:
                return Atom(tokens[1].lower(), self.last_subject, negated=True)
            if len(tokens) == 1 and tokens[0].lower() not in _PRONOUNS:
                return Atom(tokens[0].lower(), self.last_subject)

        # Find the verb pivot: is/are or a known relation verb, optionally
        # preceded by "does not" / "do not".
        for i, tok in enumerate(tokens):
            low = tok.lower()
            if low in ("is", "are") and i > 0:
                subject = self.parse_term_tokens(tokens[:i])
                rest = tokens[i + 1:]
                negated = False
                if rest and rest[0] == "not":
                    negated = True
                    rest = rest[1:]
                if len(rest) != 1:
                    raise ParseError(
                        f"expected one adjective, got {' '.join(rest)!r}",
                        self.text,
                        position=i,
                        expected="adjective",
                    )
                self.last_subject = subject
                return Atom(rest[0].lower(), subject, negated=negated)
            if low in ("does", "do") and i + 2 < len(tokens) and tokens[i + 1] == "not":
                verb = tokens[i + 2].lower()
                if verb in _VERB_FORMS:
                    subject = self.parse_term_tokens(tokens[:i])
                    obj = self.parse_term_tokens(tokens[i + 3:])
                    self.last_subject = subject
                    return Atom(_VERB_FORMS[verb], subject, obj=obj, negated=True)
            if low in _VERB_FORMS and i > 0:
                subject = self.parse_term_tokens(tokens[:i])
                obj = self.parse_term_tokens(tokens[i + 1:])
                self.last_subject = subject
                return Atom(_VERB_FORMS[low], subject, obj=obj)
        raise ParseError(f"no verb found in {text!r}", self.text, expected="is/are or relation verb")


def _split_body(text: str) -> list[str]:
    return text.split(" and ")


def _strip_period(raw: str) -> str:
    raw = raw.strip()
    if raw.endswith("."):
        raw = raw[:-1].rstrip()
    return raw


def _parse_adjective_class_rule(text: str, surface: str) -> Optional[RuleAst]:
    """"All cold things are nice" / "Blue, rough people are red"."""
    body_text = text
    if body_text.lower().startswith("all "):
        body_text = body_text[4:]
    m = re.match(r"^([A-Za-z]+(?:\s*,\s*[A-Za-z]+)*) (things|people) are ([a-z]+)$", body_text)
    if not m:
        return None
    adjectives = [a.strip().lower() for a in m.group(1).split(",")]
    head_adj = m.group(3).lower()
    body = tuple(Atom(adj, VAR) for adj in adjectives)
    return RuleAst(body=body, head=Atom(head_adj, VAR), surface=surface)


def _parse_if_rule(text: str, surface: str) -> RuleAst:
    rest = text[3:] if text.lower().startswith("if ") else text
    if " then " not in rest:
        raise ParseError("rule without 'then'", surface, expected="'then'")
    body_text, head_text = rest.split(" then ", 1)
    parser = _AtomParser(surface)
    body = tuple(parser.parse_atom(chunk) for chunk in _split_body(body_text))
    head = parser.parse_atom(head_text)
    if head.subject.is_variable and not any(
        a.subject.is_variable or (a.obj and a.obj.is_variable) for a in body
    ):
        raise ParseError("head variable not bound in body", surface, expected="bound variable")
    return RuleAst(body=body, head=head, surface=surface)


@lru_cache(maxsize=65536)
def parse_statement(raw: str, strict: bool = False) -> Parsed:
    """Parse one context statement into a fact or rule AST.

    With strict=False (the default) anything outside the grammar comes back
    as Opaque; with strict=True a ParseError is raised instead.
    """
    surface = _strip_period(raw)
    try:
        if not surface:
            raise ParseError("empty statement", raw, expected="statement")
        if surface.lower().startswith("if "):
            return _parse_if_rule(surface, surface)
        class_rule = _parse_adjective_class_rule(surface, surface)
        if class_rule is not None:
            return class_rule
        parser = _AtomParser(surface)
        atom = parser.parse_atom(surface)
        if not atom.is_ground:
            raise ParseError("fact must be ground", surface, expected="ground atom")
        return Fact(atom=atom, surface=surface)
    except ParseError:
        if strict:
            raise
        return Opaque(surface=surface)


def _render_term(term: Term) -> str:
    if term.is_variable:
        return "something"
    return term.name if term.proper else f"the {term.name}"


def render_atom(atom: Atom) -> str:
    """Render a ground atom in fact form."""
    subject = _render_term(atom.subject)
    if atom.is_attribute:
        copula = "is not" if atom.negated else "is"
        return f"{subject} {copula} {atom.predicate}"
    obj = _render_term(atom.obj)
    if atom.negated:
        return f"{subject} does not {atom.predicate} {obj}"
    verb = _THIRD_PERSON.get(atom.predicate, atom.predicate)
    return f"{subject} {verb} {obj}"


def render_statement(ast: Parsed) -> str:
    if isinstance(ast, Fact):
        return render_atom(ast.atom)
    if isinstance(ast, RuleAst):
        return ast.surface
    if isinstance(ast, Opaque):
        return ast.surface
    raise TypeError(f"cannot render {type(ast).__name__}")


_PW_QUESTION_RE = re.compile(
    r'^Does it imply that the statement "(?P<hyp>.+)" is True\?$'
)


def _decapitalize(text: str) -> str:
    if text.startswith("The "):
        return "the" + text[3:]
    return text


def parse_question(raw: str) -> Union[Hypothesis, MultiChoiceQuestion]:
    """PW implication questions, or free-text questions with " OR " choices."""
    text = raw.strip()
    if not text:
        raise ParseError("empty question", raw, expected="question")
    m = _PW_QUESTION_RE.match(text)
    if m:
        hyp_surface = _decapitalize(m.group("hyp"))
        parsed = parse_statement(hyp_surface, strict=True)
        if not isinstance(parsed, Fact):
            raise ParseError("hypothesis is not a ground fact", raw, expected="ground fact")
        return Hypothesis(atom=parsed.atom, surface=hyp_surface)
    if "?" in text and " OR " in text:
        cut = text.rindex("?") + 1
        question = text[:cut].strip()
        tail = text[cut:].strip()
        if tail.endswith("."):
            tail = tail[:-1]
        choices = tuple(c.strip() for c in tail.split(" OR ") if c.strip())
        if len(choices) >= 2:
            return MultiChoiceQuestion(question=question, choices=choices)
    raise ParseError(
        "question matches neither supported form",
        raw,
        expected='\'Does it imply that the statement "H" is True?\' or "q? a OR b"',
    )
