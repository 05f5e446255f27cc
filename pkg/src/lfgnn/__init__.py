"""Directed causal graphs from Liang-Kleeman information flow and a dual-branch
graph network (global DIFFPOOL branch, local attention branch) built on them."""

__version__ = "0.1.0"
