"""Deterministic simulator and analysis library for communication-efficient momentum SGD.

Subpackages:
    numerics        counter-based random streams, order-fixed reductions, eigensolving
    problems        synthetic stochastic objectives with certified constants
    momentum_rules  heavy-ball / Nesterov update rules and the restart step
    topology        symmetric doubly stochastic mixing matrices
    engine          the iteration engine (restarted and gossip variants)
    theory          step-size gates, convergence bounds, communication formulas
    cli             batch entry point: validate / run / sweep / report
"""

from . import engine, momentum_rules, numerics, problems, theory, topology

__version__ = "0.1.0"

__all__ = ["engine", "momentum_rules", "numerics", "problems", "theory", "topology"]
