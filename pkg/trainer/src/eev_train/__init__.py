"""Training of sparse, verification-friendly binarized networks.

Produces models in the verifier's JSON format: sign weights masked by a
separately-trained binary mask, batch-norm statistics recomputed over the
full training set, and a scalar-normalized output layer. Interoperates with
the verifier purely through its external interfaces (model files, dataset
containers, CLI).
"""

__version__ = "0.1.0"
