"""Synthetic deduction benchmark: random computation graphs, fixed-hop questions,
prefixed instances and balanced (hop, prefix) binning."""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import partial
from importlib import resources
from typing import Iterable, Mapping, Protocol, Sequence

from .graph import (
    ComputationGraph,
    GraphError,
    Node,
    Path,
    RuleSet,
    Style,
    builtin_ruleset,
    evaluate_graph,
    graph_document,
    render_cot_steps,
)
from .instances import EvalInstance
from .numeric import encode_value
from .seeding import derive_rng

log = logging.getLogger(__name__)

_DIVIDE_RETRIES = 10


class ConfigError(ValueError):
    pass


class Exhausted(GraphError):
    def __init__(self, node: str):
        super().__init__(f"no valid parent assignment for node {node!r}")
        self.node = node


@dataclass(frozen=True)
class GenParams:
    num_graphs: int = 100
    m: int = 60
    num_inputs: int = 3
    unary_ratio: float = 0.0
    naming_mode: str = "noun"
    max_hops: int = 24
    max_graphs_per_hop: int = 4000
    value_range: tuple[int, int] = (1, 10)
    seed: int = 0
    logic_mode: str | None = None  # accepted for command-line parity; has no effect

    def validate(self) -> None:
        if self.num_graphs < 0:
            raise ConfigError("num_graphs must be >= 0")
        if self.m < 2:
            raise ConfigError("m must be >= 2")
        if not 1 <= self.num_inputs < self.m:
            raise ConfigError("num_inputs must be in [1, m)")
        if not 0.0 <= self.unary_ratio <= 1.0:
            raise ConfigError("unary_ratio must be in [0, 1]")
        if self.naming_mode not in ("noun", "symbolic"):
            raise ConfigError(f"unknown naming_mode {self.naming_mode!r}")
        if self.max_hops < 1:
            raise ConfigError("max_hops must be >= 1")
        if self.max_graphs_per_hop < 1:
            raise ConfigError("max_graphs_per_hop must be >= 1")
        lo, hi = self.value_range
        if not lo < hi:
            raise ConfigError("value_range needs min < max")


@dataclass(frozen=True)
class TransformParams:
    max_hops: int = 12
    max_items_per_hop: int = 120
    max_prefixes: int = 12
    max_prefix_length: int | None = None
    seed: int = 0

    def validate(self) -> None:
        for name in ("max_hops", "max_items_per_hop", "max_prefixes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.max_prefix_length is not None and self.max_prefix_length < 1:
            raise ConfigError("max_prefix_length must be >= 1")
        if self.max_items_per_hop % self.max_prefixes:
            raise ConfigError("max_items_per_hop must be divisible by max_prefixes")

    @property
    def per_cell(self) -> int:
        return self.max_items_per_hop // self.max_prefixes

    @property
    def prefix_cap(self) -> int:
        if self.max_prefix_length is None:
            return self.max_prefixes
        return min(self.max_prefixes, self.max_prefix_length)


def load_nouns(path: str | None = None) -> list[str]:
    if path is None:
        text = resources.files("dedcons.resources").joinpath("nouns.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    nouns = json.loads(text)
    return list(dict.fromkeys(nouns))


def _node_names(rng, count: int, mode: str, nouns: Sequence[str]) -> list[str]:
    if mode == "symbolic":
        return [f"N{i}" for i in range(count)]
    if count <= len(nouns):
        return rng.sample(list(nouns), count)
    # noun list exhausted: reuse nouns with an index suffix
    names = rng.sample(list(nouns), len(nouns))
    i = 0
    taken = set(names)
    while len(names) < count:
        candidate = f"{nouns[i % len(nouns)]}{i // len(nouns) + 2}"
        if candidate not in taken:
            names.append(candidate)
            taken.add(candidate)
        i += 1
    return names


def sample_graph(
    params: GenParams,
    graph_index: int,
    ruleset: RuleSet | None = None,
    nouns: Sequence[str] | None = None,
) -> ComputationGraph:
    """Draw one graph; deterministic in (params.seed, graph_index)."""
    ruleset = ruleset or builtin_ruleset()
    nouns = nouns if nouns is not None else load_nouns()
    if params.unary_ratio > 0 and not ruleset.unary:
        raise ConfigError("unary_ratio > 0 but the rule set has no unary operator")
    rng = derive_rng(params.seed, "graph", graph_index)
    names = _node_names(rng, params.m, params.naming_mode, nouns)
    lo, hi = params.value_range

    nodes: list[Node] = []
    values: dict[str, Fraction] = {}
    for name in names[: params.num_inputs]:
        node = Node.input(name, rng.randint(lo, hi))
        nodes.append(node)
        values[name] = node.value

    binary = ruleset.binary
    for i in range(params.num_inputs, params.m):
        name = names[i]
        earlier = names[:i]
        if ruleset.unary and params.unary_ratio > 0 and rng.random() < params.unary_ratio:
            op = rng.choice(ruleset.unary)
            parents = (rng.choice(earlier),)
        else:
            op = rng.choice(binary)
            parents = _draw_pair(rng, earlier)
            if op.semantics == "divide":
                tries = 0
                while values[parents[1]] == 0 and tries < _DIVIDE_RETRIES:
                    parents = _draw_pair(rng, earlier)
                    tries += 1
                if values[parents[1]] == 0:
                    fallback = [o for o in binary if o.semantics != "divide"]
                    if not fallback:
                        raise Exhausted(name)
                    op = rng.choice(fallback)
        node = Node.derived(name, op.name, parents)
        nodes.append(node)
        values[name] = op.apply(*(values[p] for p in parents))

    return ComputationGraph(
        nodes=tuple(nodes),
        seed=params.seed,
        graph_id=f"g{graph_index:06d}",
    )


def _draw_pair(rng, earlier: Sequence[str]) -> tuple[str, str]:
    if len(earlier) >= 2:
        a, b = rng.sample(list(earlier), 2)
        return a, b
    return earlier[0], earlier[0]


def extract_paths(graph: ComputationGraph, max_hops: int) -> list[Path]:
    """One path per derived node: its derived ancestors plus itself, in graph order.

    The hop count is the number of derived steps needed to reach the target
    from the input premises.
    """
    index = graph.index()
    order = {n.name: i for i, n in enumerate(graph.nodes)}
    closure: dict[str, frozenset[str]] = {}
    paths = []
    for node in graph.nodes:
        if node.is_input:
            closure[node.name] = frozenset()
            continue
        anc = {node.name}
        for parent in node.parents:
            anc |= closure[parent]
        closure[node.name] = frozenset(anc)
        if len(anc) <= max_hops:
            steps = tuple(sorted(anc, key=order.__getitem__))
            paths.append(Path(target=node.name, steps=steps))
    assert all(not index[s].is_input for p in paths for s in p.steps)
    return paths


def path_values(graph: ComputationGraph, path: Path, values: Mapping[str, Fraction]) -> dict[str, Fraction]:
    """Ground truth restricted to the path: the inputs it uses and its derived steps."""
    index = graph.index()
    names = set(path.steps)
    for step in path.steps:
        names.update(p for p in index[step].parents if index[p].is_input)
    return {n.name: values[n.name] for n in graph.nodes if n.name in names}


def build_prefixed_instances(
    graph: ComputationGraph,
    path: Path,
    style: Style | str = Style.ORIGINAL,
    max_prefixes: int = 12,
    max_prefix_length: int | None = None,
    *,
    include_zero: bool = False,
    ruleset: RuleSet | None = None,
    values: Mapping[str, Fraction] | None = None,
    prefixes: Iterable[int] | None = None,
) -> list[EvalInstance]:
    """Instances for prefix lengths k = 1..min(max_prefixes, max_prefix_length, hops - 1).

    ``prefixes`` restricts emission to the given k values. A prefix that
    covers the whole path leaves nothing to predict and is never emitted.
    """
    ruleset = ruleset or builtin_ruleset()
    style = Style(style)
    values = values if values is not None else evaluate_graph(graph, ruleset)
    n = path.hop_count
    if n < 1:
        return []
    cap = max_prefixes if max_prefix_length is None else min(max_prefixes, max_prefix_length)
    ks = list(range(0 if include_zero else 1, min(cap, n - 1) + 1))
    if prefixes is not None:
        wanted = set(prefixes)
        ks = [k for k in ks if k in wanted]
    if not ks:
        return []
    steps = render_cot_steps(graph, path, style, ruleset, values)
    question = graph_document(graph, path.target, style, ruleset)
    truth = path_values(graph, path, values)
    problem_id = f"{graph.graph_id}:{path.target}"
    out = []
    for k in ks:
        hops = {name: j for j, name in enumerate(path.steps[k:], start=1)}
        out.append(
            EvalInstance(
                instance_id=f"{problem_id}:k{k}:{style.value}",
                problem_id=problem_id,
                graph_ref=graph.graph_id,
                question_text=question,
                target=path.target,
                prefix_k=k,
                hop_total=n - k,
                per_variable_hops=hops,
                ground_truth=dict(truth),
                final_answer=values[path.target],
                style=style.value,
                prefix_text="\n".join(steps[:k]),
                source="syndeduct",
            )
        )
    return out


# -- generation stage -------------------------------------------------------


@dataclass
class RawQuestion:
    question_id: str
    graph: ComputationGraph
    path: Path
    answer: Fraction

    @property
    def hop_count(self) -> int:
        return self.path.hop_count

    def to_dict(self, ruleset: RuleSet | None = None) -> dict:
        ruleset = ruleset or builtin_ruleset()
        return {
            "question_id": self.question_id,
            "hop_count": self.hop_count,
            "target": self.path.target,
            "path": list(self.path.steps),
            "answer": encode_value(self.answer),
            "question_text": graph_document(self.graph, self.path.target, Style.ORIGINAL, ruleset),
            "cot": render_cot_steps(self.graph, self.path, Style.ORIGINAL, ruleset),
            "graph": self.graph.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> RawQuestion:
        from .numeric import decode_value

        return cls(
            question_id=data["question_id"],
            graph=ComputationGraph.from_dict(data["graph"]),
            path=Path(target=data["target"], steps=tuple(data["path"])),
            answer=decode_value(data["answer"]),
        )


def _graph_questions(index: int, params: GenParams, ruleset: RuleSet, nouns: Sequence[str]) -> list[RawQuestion]:
    graph = sample_graph(params, index, ruleset, nouns)
    values = evaluate_graph(graph, ruleset)
    return [
        RawQuestion(f"{graph.graph_id}:{p.target}", graph, p, values[p.target])
        for p in extract_paths(graph, params.max_hops)
    ]


def generate_questions(
    params: GenParams,
    ruleset: RuleSet | None = None,
    nouns: Sequence[str] | None = None,
    workers: int = 1,
) -> tuple[list[RawQuestion], dict[int, int]]:
    """Sample graphs, extract paths, undersample each hop bin to max_graphs_per_hop.

    Returns the kept questions (ordered by hop, then graph order) and the
    per-hop counts before undersampling.
    """
    params.validate()
    ruleset = ruleset or builtin_ruleset()
    nouns = list(nouns) if nouns is not None else load_nouns()
    work = partial(_graph_questions, params=params, ruleset=ruleset, nouns=nouns)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_graph = list(pool.map(work, range(params.num_graphs), chunksize=16))
    else:
        per_graph = [work(i) for i in range(params.num_graphs)]

    pool_by_hop: dict[int, list[RawQuestion]] = defaultdict(list)
    for questions in per_graph:
        for q in questions:
            pool_by_hop[q.hop_count].append(q)
    available = {h: len(qs) for h, qs in sorted(pool_by_hop.items())}

    kept: list[RawQuestion] = []
    for hop in sorted(pool_by_hop):
        qs = pool_by_hop[hop]
        if len(qs) > params.max_graphs_per_hop:
            rng = derive_rng(params.seed, "undersample", hop)
            chosen = sorted(rng.sample(range(len(qs)), params.max_graphs_per_hop))
            qs = [qs[i] for i in chosen]
        kept.extend(qs)
    return kept, available


def hop_summary(questions: Iterable[RawQuestion | Mapping], limit: int) -> str:
    counts = Counter(q["hop_count"] if isinstance(q, Mapping) else q.hop_count for q in questions)
    lines = [f"Steps kept and undersampled to {limit}:"]
    lines += [f"Hop {h}: {counts[h]}" for h in sorted(counts)]
    return "\n".join(lines)


# -- transform stage --------------------------------------------------------


class Binnable(Protocol):
    hop_total: int
    prefix_k: int


@dataclass(frozen=True)
class EmptyBin:
    hop: int
    prefix: int
    available: int
    quota: int

    def __str__(self) -> str:
        return f"EmptyBin(hop={self.hop}, prefix={self.prefix}): {self.available}/{self.quota} available"


def bin_and_undersample(items: Sequence[Binnable], t: TransformParams) -> tuple[list, list[EmptyBin]]:
    """Balanced (hop, prefix) cells of exactly ``t.per_cell`` items each.

    Cells short of quota keep everything available and produce an EmptyBin
    warning. Output is ordered by hop, then prefix, then input order.
    """
    t.validate()
    cells: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, item in enumerate(items):
        cells[(item.hop_total, item.prefix_k)].append(i)
    quota = t.per_cell
    dataset = []
    warnings: list[EmptyBin] = []
    for hop in range(1, t.max_hops + 1):
        for k in range(1, t.max_prefixes + 1):
            idx = cells.get((hop, k), [])
            if len(idx) > quota:
                rng = derive_rng(t.seed, "bin", hop, k)
                idx = sorted(rng.sample(idx, quota))
            elif len(idx) < quota:
                warnings.append(EmptyBin(hop, k, len(idx), quota))
            dataset.extend(items[i] for i in idx)
    return dataset, warnings


@dataclass(frozen=True)
class _Candidate:
    question: int
    prefix_k: int
    hop_total: int


def transform_questions(
    questions: Sequence[RawQuestion],
    t: TransformParams,
    styles: Sequence[Style | str] = (Style.ORIGINAL,),
    ruleset: RuleSet | None = None,
) -> tuple[list[EvalInstance], list[EmptyBin]]:
    """Expand questions into prefixed candidates, bin them, then materialize the kept ones."""
    t.validate()
    ruleset = ruleset or builtin_ruleset()
    candidates = []
    for qi, q in enumerate(questions):
        n = q.hop_count
        for k in range(1, min(t.prefix_cap, n - 1) + 1):
            if n - k <= t.max_hops:
                candidates.append(_Candidate(qi, k, n - k))
    chosen, warnings = bin_and_undersample(candidates, t)

    wanted: dict[int, list[int]] = defaultdict(list)
    for c in chosen:
        wanted[c.question].append(c.prefix_k)
    built: dict[tuple[int, int, str], EvalInstance] = {}
    for qi, ks in wanted.items():
        q = questions[qi]
        values = evaluate_graph(q.graph, ruleset)
        for style in styles:
            for inst in build_prefixed_instances(
                q.graph, q.path, style, t.max_prefixes, t.max_prefix_length,
                ruleset=ruleset, values=values, prefixes=ks,
            ):
                built[(qi, inst.prefix_k, Style(style).value)] = inst
    dataset = [
        built[(c.question, c.prefix_k, Style(s).value)] for c in chosen for s in styles
    ]
    return dataset, warnings


def distribution_summary(dataset: Iterable[EvalInstance], t: TransformParams) -> str:
    counts = Counter((inst.hop_total, inst.prefix_k) for inst in dataset)
    lines = ["Prefix Length Distribution Per Hop Category (After Undersampling):", ""]
    for hop in range(1, t.max_hops + 1):
        cells = ", ".join(f"Prefix{k}: {counts[(hop, k)]}" for k in range(1, t.max_prefixes + 1))
        lines.append(f"Hop {hop}: {cells}")
    lines += ["", "Total Prefix Length Distribution Across Hops:", ""]
    for k in range(1, t.max_prefixes + 1):
        lines.append(f"Prefix{k}: {sum(counts[(h, k)] for h in range(1, t.max_hops + 1))}")
    lines += ["", "Number Of Items per Hop", ""]
    for hop in range(1, t.max_hops + 1):
        lines.append(f"Hop: {hop} - {sum(counts[(hop, k)] for k in range(1, t.max_prefixes + 1))}")
    lines.append(f"Total entries in transformed JSON: {sum(counts.values())}")
    return "\n".join(lines)


def params_dict(params: GenParams | TransformParams) -> dict:
    return asdict(params)
