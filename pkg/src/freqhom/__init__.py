"""Frequency-domain Hong-Ou-Mandel interference through a four-wave-mixing
frequency beam splitter: source model, splitter transform, correlation
functions, counting simulation, visibility estimation and phase-matching design.
"""

__version__ = "0.1.0"
