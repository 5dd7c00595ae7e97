"""Monte Carlo toolkit for multivariate normal approximation of Poisson
functionals via second-order Poincare-type bounds."""

__version__ = "0.1.0"
