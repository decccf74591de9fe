"""qCCS: quantum CCS terms, their probabilistic transition systems, and
equivalence checking by schedulers, strategies and open bisimulation."""

__version__ = "0.1.0"
