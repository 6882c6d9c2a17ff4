"""Batch LLM code optimization: Mixture-of-Agents, GA prompt evolution and
individual optimizers, ranked by an ELO pairwise judge tournament."""

__version__ = "0.1.0"
