"""The evaluation unit shared by the synthetic and the perturbed-benchmark pipelines."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .numeric import decode_value, encode_value


@dataclass
class EvalInstance:
    instance_id: str
    problem_id: str
    question_text: str
    target: str
    prefix_k: int
    hop_total: int
    per_variable_hops: dict[str, int]
    ground_truth: dict[str, Fraction]
    final_answer: Fraction
    style: str = "original"
    prefix_text: str = ""
    source: str = "syndeduct"
    graph_ref: str = ""
    mutation_id: int = 0
    explanations: dict[str, str] = field(default_factory=dict)

    def post_prefix_variables(self) -> list[str]:
        """Scored variables ordered by hop, ties kept in insertion order."""
        return sorted(self.per_variable_hops, key=self.per_variable_hops.__getitem__)

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "problem_id": self.problem_id,
            "mutation_id": self.mutation_id,
            "source": self.source,
            "graph_ref": self.graph_ref,
            "style": self.style,
            "target": self.target,
            "prefix_k": self.prefix_k,
            "hop_total": self.hop_total,
            "per_variable_hops": dict(self.per_variable_hops),
            "ground_truth": {k: encode_value(v) for k, v in self.ground_truth.items()},
            "final_answer": encode_value(self.final_answer),
            "question_text": self.question_text,
            "prefix_text": self.prefix_text,
            "explanations": dict(self.explanations),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> EvalInstance:
        return cls(
            instance_id=data["instance_id"],
            problem_id=data["problem_id"],
            mutation_id=int(data.get("mutation_id", 0)),
            source=data.get("source", "syndeduct"),
            graph_ref=data.get("graph_ref", ""),
            style=data.get("style", "original"),
            target=data["target"],
            prefix_k=int(data["prefix_k"]),
            hop_total=int(data["hop_total"]),
            per_variable_hops={k: int(v) for k, v in data["per_variable_hops"].items()},
            ground_truth={k: decode_value(v) for k, v in data["ground_truth"].items()},
            final_answer=decode_value(data["final_answer"]),
            question_text=data["question_text"],
            prefix_text=data.get("prefix_text", ""),
            explanations=dict(data.get("explanations", {})),
        )
