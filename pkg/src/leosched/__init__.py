"""Desk-scale satellite-terrestrial downlink scheduling toolkit.

Building blocks: fading channel models with a finite-state Markov
quantization, link-group scheduling instances with a quadratic utility,
offline solvers (branch-and-bound, ADMM heuristic, greedy), an MDP wrapper
with a telescoping reward, a small from-scratch neural network kernel, a
meta-critic learner with Wolpertinger action mapping, and a
dynamic-environment benchmark harness.
"""

__version__ = "0.1.0"
