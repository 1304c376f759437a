"""Execute generic Python over learned vector semantics.

The package lowers source to a four-instruction set (lookup, store, guess,
lambda), runs every statement exactly once against small attention networks,
and trains those networks with execution-derived objectives, including a
white-box variable-misuse pipeline.
"""

__version__ = "0.1.0"
