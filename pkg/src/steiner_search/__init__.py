"""Contextual search laboratory.

Learners that binary-search a hidden function under comparison feedback,
the convex geometry and hypothesis-net machinery they need, adversarial
environments, tree-dimension tools for the full-feedback case, and a
seeded experiment CLI.
"""

__version__ = "0.1.0"
