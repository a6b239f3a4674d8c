"""Numerical laboratory for Edgeworth expansions of Markov additive functionals."""
