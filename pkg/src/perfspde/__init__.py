"""Monte Carlo homogenization study for a stochastic heat equation in a perforated square."""

__version__ = "0.1.0"
