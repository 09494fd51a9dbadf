"""Exact robustness verification of binarized neural networks.

The package is organized around five parts: `model` (network format and exact
inference), `encoder` (lowering a robustness query to clauses and reified
cardinality constraints), `solver` (a CDCL core that propagates cardinality
constraints natively), `backends` (CNF/pseudo-Boolean encodings and file
formats) and `verifier` (end-to-end orchestration, oracle, batch runs, CLI).
"""

__version__ = "0.1.0"
