"""Projection Hopfield networks, binary-gaussian RBMs and the exact map between them.

Submodules: ``data_io``, ``patterns``, ``hopfield``, ``forward_map``, ``rbm``,
``evaluation``, ``reverse_map``, ``poe``, ``baselines``, ``experiments``,
``cli``.  Nothing heavy is imported here so the CLI can pin thread counts
before numpy loads.
"""

__version__ = "0.1.0"
