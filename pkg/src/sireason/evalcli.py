"""Metrics, faithfulness probes, batch evaluation, and the command line.

The solver abstraction used throughout is a callable
`solver(problem) -> (Answer, ReasoningTrace)`; `make_solver` builds one
from backend/search settings so probes can also wrap test doubles.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import cnl, datasets, engine, models
from .core import (
    Answer,
    LabeledContext,
    ReasoningTrace,
    TraceParseError,
    is_connected,
    normalize_key,
    parse_trace_text,
    render_trace,
)
from .datasets import Problem

REMOTE_ENDPOINT_ENV = "SIREASON_REMOTE_ENDPOINT"


# ---------------------------------------------------------------------------
# Metrics.
# ---------------------------------------------------------------------------

def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


def _leaves(trace: ReasoningTrace) -> set[str]:
    base = {s.key for s in trace.base_context.statements()}
    out: set[str] = set()
    for step in trace.steps:
        for stmt in step.selection:
            if stmt.key in base:
                out.add(stmt.key)
    return out


def _step_sigs(trace: ReasoningTrace) -> set[tuple]:
    return {
        (frozenset(s.key for s in step.selection), step.inference.key)
        for step in trace.steps
    }


def _intermediates(trace: ReasoningTrace) -> set[str]:
    return {step.inference.key for step in trace.steps}


def jaccard_metrics(
    predicted: ReasoningTrace, gold: ReasoningTrace
) -> tuple[float, float, float]:
    """(leaves, steps, intermediates), all order-insensitive."""
    return (
        _jaccard(_leaves(predicted), _leaves(gold)),
        _jaccard(_step_sigs(predicted), _step_sigs(gold)),
        _jaccard(_intermediates(predicted), _intermediates(gold)),
    )


def rouge_tokenize(text: str) -> list[str]:
    return [t.strip(".,;:!?\"'") for t in text.lower().split() if t.strip(".,;:!?\"'")]


def _f1(overlap: float, plen: int, glen: int) -> float:
    if plen == 0 or glen == 0 or overlap == 0:
        return 0.0
    p = overlap / plen
    r = overlap / glen
    return 2 * p * r / (p + r)


def rouge1(predicted: str, gold: str) -> float:
    from collections import Counter

    p = Counter(rouge_tokenize(predicted))
    g = Counter(rouge_tokenize(gold))
    overlap = sum(min(p[t], g[t]) for t in p)
    return _f1(overlap, sum(p.values()), sum(g.values()))


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rougeL(predicted: str, gold: str) -> float:
    p = rouge_tokenize(predicted)
    g = rouge_tokenize(gold)
    return _f1(_lcs_len(p, g), len(p), len(g))


def rouge_scores(
    predicted: Sequence[str], gold: Sequence[str], ordered: bool = False
) -> tuple[float, float]:
    """Average (rouge1, rougeL) over aligned sentence pairs.

    Ordered mode aligns by position.  Unordered mode aligns greedily by
    best rouge1 match.  Unmatched sentences on either side count as 0.
    """
    n = max(len(predicted), len(gold))
    if n == 0:
        return 1.0, 1.0
    pairs: list[tuple[str, str]] = []
    if ordered:
        pairs = [
            (predicted[i], gold[i]) for i in range(min(len(predicted), len(gold)))
        ]
    else:
        remaining_p = list(range(len(predicted)))
        remaining_g = list(range(len(gold)))
        while remaining_p and remaining_g:
            best = max(
                ((rouge1(predicted[i], gold[j]), -i, -j) for i in remaining_p
                 for j in remaining_g),
            )
            _, ni, nj = best
            i, j = -ni, -nj
            pairs.append((predicted[i], gold[j]))
            remaining_p.remove(i)
            remaining_g.remove(j)
    r1 = sum(rouge1(p, g) for p, g in pairs) / n
    rl = sum(rougeL(p, g) for p, g in pairs) / n
    return r1, rl


def exact_match(predicted: ReasoningTrace, gold: ReasoningTrace) -> bool:
    return normalize_key(render_trace(predicted)) == normalize_key(render_trace(gold))


def made_up_fact_rate(
    traces: Sequence[ReasoningTrace],
) -> tuple[float, int]:
    """(fraction of traces selecting out-of-context statements, unreadable count)."""
    if not traces:
        return 0.0, 0
    flagged = 0
    unreadable = 0
    for trace in traces:
        if trace is None:
            unreadable += 1
            continue
        if not is_connected(trace).connected:
            flagged += 1
    denom = len(traces) - unreadable
    return (flagged / denom if denom else 0.0), unreadable


def ingest_trace_file(path, problems: Sequence[Problem]) -> list[Optional[ReasoningTrace]]:
    """Read externally produced trace text, one JSON doc per line.

    Each line: {"id": ..., "trace": "..."}; unreadable traces load as None.
    """
    by_id = {p.id: p for p in problems}
    traces: list[Optional[ReasoningTrace]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            problem = by_id[str(doc["id"])]
            try:
                traces.append(parse_trace_text(doc["trace"], problem.context))
            except TraceParseError:
                traces.append(None)
    return traces


# ---------------------------------------------------------------------------
# Solvers.
# ---------------------------------------------------------------------------

Solver = Callable[[Problem], tuple[Answer, ReasoningTrace]]


@dataclass
class SolverConfig:
    backend: str = "oracle"  # oracle | scripted | remote
    noise_rate: float = 0.0
    seed: int = 0
    beam_width: int = 1
    proposals_per_trace: int = 1
    max_steps: int = 10
    score_mode: str = "sum"
    endpoint: Optional[str] = None


def make_bindings(cfg: SolverConfig, problem_index: int = 0) -> engine.RoleBindings:
    if cfg.backend == "oracle":
        return engine.RoleBindings.uniform(models.oracle_backend())
    if cfg.backend == "scripted":
        oracle = models.oracle_backend()
        noisy = models.scripted_backend(
            base=oracle, noise_rate=cfg.noise_rate,
            seed=cfg.seed * 1000003 + problem_index,
        )
        return engine.RoleBindings(
            selection=noisy, inference=oracle, halter_ready=oracle,
            halter_answer=oracle, value=oracle,
        )
    if cfg.backend == "remote":
        endpoint = cfg.endpoint or os.environ.get(REMOTE_ENDPOINT_ENV)
        if not endpoint:
            raise ValueError(
                f"remote backend needs --endpoint or ${REMOTE_ENDPOINT_ENV}"
            )
        return engine.RoleBindings.uniform(models.remote_backend(endpoint))
    raise ValueError(f"unknown backend {cfg.backend!r}")


def make_solver(cfg: SolverConfig, stats: Optional[engine.SolveStats] = None) -> Solver:
    counter = {"i": 0}

    def solve(problem: Problem) -> tuple[Answer, ReasoningTrace]:
        bindings = make_bindings(cfg, counter["i"])
        counter["i"] += 1
        if cfg.beam_width == 1 and cfg.proposals_per_trace == 1:
            return engine.si_answer(problem, bindings, cfg.max_steps, stats)
        beam_cfg = engine.BeamConfig(
            beam_width=cfg.beam_width,
            proposals_per_trace=cfg.proposals_per_trace,
            max_steps=cfg.max_steps,
            score_mode=cfg.score_mode,
        )
        answer, trace, _ = engine.beam_search(problem, bindings, beam_cfg, stats)
        return answer, trace

    return solve


def question_shortcut_solver(problem: Problem) -> tuple[Answer, ReasoningTrace]:
    """Test double that answers from rule heads without reasoning.

    It looks for a rule whose head predicate matches the hypothesis and
    answers from the polarity alone.  Used by the probes to show what a
    context-shortcut looks like.
    """
    # The empty, unhalted trace marks that no actual reasoning happened.
    trace = ReasoningTrace(base_context=problem.context)
    parsed = cnl.parse_question(problem.question)
    if not isinstance(parsed, cnl.Hypothesis):
        return Answer.UNKNOWN, trace
    hyp = parsed.atom
    for stmt in problem.context.statements():
        s = cnl.parse_statement(stmt.surface)
        if not isinstance(s, cnl.RuleAst):
            continue
        head = s.head
        if head.predicate != hyp.predicate:
            continue
        if (head.obj is None) != (hyp.obj is None):
            continue
        answer = Answer.TRUE if head.negated == hyp.negated else Answer.FALSE
        return answer, trace
    return Answer.UNKNOWN, trace


# ---------------------------------------------------------------------------
# Probes.
# ---------------------------------------------------------------------------

def _accuracy(problems: Sequence[Problem], solver: Solver) -> tuple[float, float, list]:
    results = [solver(p) for p in problems]
    correct = sum(1 for p, (a, _) in zip(problems, results) if a == p.gold_answer)
    unknown = sum(1 for a, _ in results if a.is_unknown)
    n = len(problems)
    return (correct / n if n else 0.0), (unknown / n if n else 0.0), results


def derangement(n: int, seed: int) -> list[int]:
    """A seeded permutation of range(n) with no fixed point (n >= 2)."""
    if n < 2:
        raise ValueError("derangement needs at least 2 items")
    rng = random.Random(("derangement", seed).__repr__())
    perm = list(range(n))
    while True:
        rng.shuffle(perm)
        if all(i != v for i, v in enumerate(perm)):
            return perm


@dataclass(frozen=True)
class RandomContextProbe:
    accuracy_random: float
    accuracy_correct: float
    delta: float
    unknown_rate_random: float


def probe_random_context(
    problems: Sequence[Problem], solver: Solver, seed: int
) -> RandomContextProbe:
    acc_correct, _, _ = _accuracy(problems, solver)
    perm = derangement(len(problems), seed)
    from dataclasses import replace as _replace

    swapped = [
        _replace(p, context=problems[perm[i]].context, gold_proof=None)
        for i, p in enumerate(problems)
    ]
    acc_random, unk, _ = _accuracy(swapped, solver)
    return RandomContextProbe(
        accuracy_random=acc_random,
        accuracy_correct=acc_correct,
        delta=acc_correct - acc_random,
        unknown_rate_random=unk,
    )


@dataclass(frozen=True)
class IncompleteContextProbe:
    accuracy_incomplete: float
    accuracy_complete: float
    delta: float
    unknown_rate: float


def strip_facts(context: LabeledContext) -> LabeledContext:
    rules = [
        stmt.surface
        for stmt in context.statements()
        if isinstance(cnl.parse_statement(stmt.surface), cnl.RuleAst)
    ]
    return LabeledContext.from_statements(rules)


def probe_incomplete_context(
    problems: Sequence[Problem], solver: Solver
) -> IncompleteContextProbe:
    acc_complete, _, _ = _accuracy(problems, solver)
    from dataclasses import replace as _replace

    stripped = [
        _replace(p, context=strip_facts(p.context), gold_proof=None)
        for p in problems
    ]
    acc_inc, unk, _ = _accuracy(stripped, solver)
    return IncompleteContextProbe(
        accuracy_incomplete=acc_inc,
        accuracy_complete=acc_complete,
        delta=acc_complete - acc_inc,
        unknown_rate=unk,
    )


# ---------------------------------------------------------------------------
# Batch evaluation.
# ---------------------------------------------------------------------------

@dataclass
class DepthReport:
    count: int = 0
    correct: int = 0
    known: int = 0
    known_correct: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.count if self.count else 0.0

    @property
    def known_only_accuracy(self) -> float:
        return self.known_correct / self.known if self.known else 0.0

    @property
    def unknown_rate(self) -> float:
        return 1.0 - self.known / self.count if self.count else 0.0

    def to_doc(self) -> dict:
        return {
            "count": self.count,
            "accuracy": self.accuracy,
            "known_only_accuracy": self.known_only_accuracy,
            "unknown_rate": self.unknown_rate,
        }


@dataclass
class EvalReport:
    overall: DepthReport = field(default_factory=DepthReport)
    per_depth: dict = field(default_factory=dict)
    jaccard_leaves: float = 0.0
    jaccard_steps: float = 0.0
    jaccard_intermediates: float = 0.0
    rouge1_intermediates: float = 0.0
    rougeL_intermediates: float = 0.0
    exact_match_rate: float = 0.0
    made_up_fact_rate: float = 0.0
    halt_depth_histogram: dict = field(default_factory=dict)
    selection_syntax_errors: int = 0
    selection_calls: int = 0
    failures: list = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "overall": self.overall.to_doc(),
            "per_depth": {str(k): v.to_doc() for k, v in sorted(self.per_depth.items())},
            "jaccard": {
                "leaves": self.jaccard_leaves,
                "steps": self.jaccard_steps,
                "intermediates": self.jaccard_intermediates,
            },
            "rouge_intermediates": {
                "rouge1": self.rouge1_intermediates,
                "rougeL": self.rougeL_intermediates,
            },
            "exact_match_rate": self.exact_match_rate,
            "made_up_fact_rate": self.made_up_fact_rate,
            "halt_depth_histogram": {
                f"{k[0]}/{k[1]}": v
                for k, v in sorted(self.halt_depth_histogram.items())
            },
            "selection_syntax_errors": self.selection_syntax_errors,
            "selection_calls": self.selection_calls,
            "failures": list(self.failures),
        }


def evaluate(problems: Sequence[Problem], cfg: SolverConfig) -> EvalReport:
    stats = engine.SolveStats()
    solver = make_solver(cfg, stats)
    report = EvalReport()
    gold_compared = 0
    j_sums = [0.0, 0.0, 0.0]
    r_sums = [0.0, 0.0]
    exact = 0
    traces: list[ReasoningTrace] = []
    for problem in problems:
        try:
            answer, trace = solver(problem)
        except Exception as exc:  # recorded, never silently dropped
            report.failures.append(f"{problem.id}: {exc}")
            continue
        traces.append(trace)
        buckets = [report.overall]
        if problem.depth is not None:
            buckets.append(report.per_depth.setdefault(problem.depth, DepthReport()))
        correct = answer == problem.gold_answer
        for b in buckets:
            b.count += 1
            if correct:
                b.correct += 1
            if not answer.is_unknown:
                b.known += 1
                if correct:
                    b.known_correct += 1
        if problem.gold_proof is not None:
            gold_compared += 1
            j = jaccard_metrics(trace, problem.gold_proof)
            for i in range(3):
                j_sums[i] += j[i]
            r1, rl = rouge_scores(
                [s.inference.surface for s in trace.steps],
                [s.inference.surface for s in problem.gold_proof.steps],
            )
            r_sums[0] += r1
            r_sums[1] += rl
            if exact_match(trace, problem.gold_proof):
                exact += 1
            key = (len(trace.steps), len(problem.gold_proof.steps))
            report.halt_depth_histogram[key] = report.halt_depth_histogram.get(key, 0) + 1
    if gold_compared:
        report.jaccard_leaves = j_sums[0] / gold_compared
        report.jaccard_steps = j_sums[1] / gold_compared
        report.jaccard_intermediates = j_sums[2] / gold_compared
        report.rouge1_intermediates = r_sums[0] / gold_compared
        report.rougeL_intermediates = r_sums[1] / gold_compared
        report.exact_match_rate = exact / gold_compared
    rate, _ = made_up_fact_rate(traces)
    report.made_up_fact_rate = rate
    report.selection_syntax_errors = stats.selection_syntax_errors
    report.selection_calls = stats.selection_calls
    assert report.overall.known_only_accuracy >= report.overall.accuracy or (
        report.overall.known == report.overall.count
    ), "known-only accuracy fell below overall accuracy"
    return report


# ---------------------------------------------------------------------------
# CLI.
# ---------------------------------------------------------------------------

def _add_solver_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=["oracle", "scripted", "remote"],
                        default="oracle")
    parser.add_argument("--noise", type=float, default=0.0)
    parser.add_argument("--beam", type=int, default=1)
    parser.add_argument("--proposals", type=int, default=1)
    parser.add_argument("--max-steps", type=int, default=10)
    parser.add_argument("--score-mode", choices=["sum", "last"], default="sum")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--endpoint", default=None,
                        help=f"remote endpoint (or ${REMOTE_ENDPOINT_ENV})")


def _solver_config(args) -> SolverConfig:
    return SolverConfig(
        backend=args.backend,
        noise_rate=args.noise,
        seed=args.seed,
        beam_width=args.beam,
        proposals_per_trace=args.proposals,
        max_steps=args.max_steps,
        score_mode=args.score_mode,
        endpoint=args.endpoint,
    )


def _cmd_solve(args) -> int:
    problems = datasets.load_problems(args.problems, args.dataset)
    stats = engine.SolveStats()
    solver = make_solver(_solver_config(args), stats)
    for problem in problems:
        answer, trace = solver(problem)
        text = render_trace(trace)
        if text:
            print(text)
        print(f"Answer: {answer.render()}")
        print(json.dumps({
            "id": problem.id,
            "answer": answer.render(),
            "gold": problem.gold_answer.render(),
            "steps": len(trace.steps),
        }, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    problems = datasets.load_problems(args.problems, args.dataset)
    report = evaluate(problems, _solver_config(args))
    if args.report == "json":
        print(json.dumps(report.to_doc(), sort_keys=True, indent=2))
    else:
        doc = report.to_doc()
        print(f"problems: {doc['overall']['count']}")
        print(f"accuracy: {doc['overall']['accuracy']:.4f}")
        print(f"known-only accuracy: {doc['overall']['known_only_accuracy']:.4f}")
        print(f"unknown rate: {doc['overall']['unknown_rate']:.4f}")
        for depth, d in doc["per_depth"].items():
            print(f"depth {depth}: accuracy {d['accuracy']:.4f} over {d['count']}")
        print(f"jaccard leaves/steps/intermediates: "
              f"{doc['jaccard']['leaves']:.4f} {doc['jaccard']['steps']:.4f} "
              f"{doc['jaccard']['intermediates']:.4f}")
        print(f"rouge1/rougeL: {doc['rouge_intermediates']['rouge1']:.4f} "
              f"{doc['rouge_intermediates']['rougeL']:.4f}")
        print(f"exact match: {doc['exact_match_rate']:.4f}")
        print(f"made-up-fact rate: {doc['made_up_fact_rate']:.4f}")
        print(f"selection syntax errors: {doc['selection_syntax_errors']}"
              f"/{doc['selection_calls']}")
        for f in doc["failures"]:
            print(f"failure: {f}")
    return 1 if report.failures else 0


def _cmd_probe(args) -> int:
    problems = datasets.load_problems(args.problems, args.dataset)
    solver = make_solver(_solver_config(args))
    if args.kind == "random":
        probe = probe_random_context(problems, solver, args.seed)
        doc = {
            "kind": "random",
            "accuracy_random": probe.accuracy_random,
            "accuracy_correct": probe.accuracy_correct,
            "delta": probe.delta,
            "unknown_rate_random": probe.unknown_rate_random,
        }
    else:
        probe = probe_incomplete_context(problems, solver)
        doc = {
            "kind": "incomplete",
            "accuracy_incomplete": probe.accuracy_incomplete,
            "accuracy_complete": probe.accuracy_complete,
            "delta": probe.delta,
            "unknown_rate": probe.unknown_rate,
        }
    if args.report == "json":
        print(json.dumps(doc, sort_keys=True, indent=2))
    else:
        for k, v in doc.items():
            print(f"{k}: {v}")
    return 0


def _cmd_validate(args) -> int:
    problems = datasets.load_problems(args.problems, args.dataset)
    findings = datasets.validate_problems(problems)
    for f in findings:
        print(f)
    print(f"{len(problems)} problems, {len(findings)} findings")
    return 1 if findings else 0


def _cmd_gen_problems(args) -> int:
    depths = [int(d) for d in args.depths.split(",")]
    counts = {d: args.count for d in depths}
    problems = datasets.generate_problem_set(args.seed, counts)
    datasets.save_problems(problems, args.out)
    print(f"wrote {len(problems)} problems to {args.out}")
    return 0


def _cmd_extract_training(args) -> int:
    problems = datasets.load_problems(args.problems, args.mode)
    roles = set(args.roles.split(","))
    bad = roles - {"sel", "inf", "halt", "value"}
    if bad:
        raise SystemExit(f"unknown roles: {sorted(bad)}")
    pairs: list[datasets.TrainingPair] = []
    report = datasets.ValueExtractionReport()
    for problem in problems:
        if roles & {"sel", "inf"}:
            si = datasets.extract_si_pairs(problem)
            if "sel" not in roles:
                si = [p for p in si if p.role is not models.GeneratorRole.SELECTION]
            if "inf" not in roles:
                si = [p for p in si if p.role is not models.GeneratorRole.INFERENCE]
            pairs.extend(si)
        if "halt" in roles:
            pairs.extend(datasets.extract_halter_pairs(problem))
        if "value" in roles:
            pairs.extend(datasets.extract_value_pairs(problem, args.seed, report))
    datasets.save_training_pairs(pairs, args.out)
    print(
        f"wrote {len(pairs)} pairs to {args.out} "
        f"(corruption impossible: {report.corruption_impossible}, "
        f"collisions: {report.collisions})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sireason",
        description="Faithful step-by-step reasoning over rule/fact contexts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve problems and print traces")
    p.add_argument("--problems", required=True)
    p.add_argument("--dataset", choices=["pw", "eb"], default="pw")
    _add_solver_args(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("eval", help="batch evaluation with the metric suite")
    p.add_argument("--problems", required=True)
    p.add_argument("--dataset", choices=["pw", "eb"], default="pw")
    p.add_argument("--report", choices=["json", "text"], default="text")
    _add_solver_args(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("probe", help="faithfulness probes")
    p.add_argument("--kind", choices=["random", "incomplete"], required=True)
    p.add_argument("--problems", required=True)
    p.add_argument("--dataset", choices=["pw", "eb"], default="pw")
    p.add_argument("--report", choices=["json", "text"], default="text")
    _add_solver_args(p)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("validate", help="lint gold proofs in a problem file")
    p.add_argument("--problems", required=True)
    p.add_argument("--dataset", choices=["pw", "eb"], default="pw")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("gen-problems", help="generate seeded problems")
    p.add_argument("--count", type=int, default=100, help="problems per depth")
    p.add_argument("--depths", default="1,2,3,5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_problems)

    p = sub.add_parser("extract-training", help="extract training pairs")
    p.add_argument("--problems", required=True)
    p.add_argument("--roles", default="sel,inf,halt,value")
    p.add_argument("--mode", choices=["pw", "eb"], default="pw")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract_training)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
