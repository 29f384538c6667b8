"""Continuous-time graph dynamics for node classification.

Sparse graph utilities, a small reverse-mode tensor engine, hyperbolic
positional encodings, a convection-diffusion message-passing field, fixed
and adaptive ODE solvers, a training loop, and analysis tools.
"""

__version__ = "0.1.0"
