"""Monte Carlo laboratory for simple random walk on the discrete torus."""

__version__ = "0.1.0"
