"""Numerical toolkit for the subcritical Yamabe equation on products ``M × N``.

The core reduces the Yamabe problem on ``(M × N, g + ε²h)`` to a semilinear equation
on the base ``M``, minimizes the associated energy over its Nehari manifold on
triangulated or gridded manifolds, and compares the results against the Euclidean
ground state.
"""

__version__ = "0.1.0"
