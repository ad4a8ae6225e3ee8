"""Preference elicitation with soft attributes.

Subpackages cover the item/tag catalog, concept-vector training, user
response models, Bayesian belief tracking, acquisition functions, query
optimizers, a simulation harness with CLI, and an HTTP session service.
"""

__version__ = "0.1.0"
