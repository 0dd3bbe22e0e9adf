"""Decompose-and-verify math word problem harness.

Pipeline: render a decomposition prompt, parse the model's structured
solution, execute each subproblem's code in a sandbox while an exact
decimal expression oracle cross-checks it, compose the final answer,
compare against gold, and loop human (or synthesized) feedback up to a
capped number of refinement turns. Batch runs aggregate accuracy and
persist every session for the review console.
"""

__version__ = "0.1.0"
