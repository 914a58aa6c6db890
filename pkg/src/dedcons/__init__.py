"""Deductive-consistency evaluation: synthetic graph questions, perturbed benchmark
problems, response collection and per-hop consistency metrics."""

__version__ = "0.1.0"
