"""Parametric DTMC model checking with Bayesian runtime assurance.

Computes closed-form reachability functions for discrete-time Markov
chains whose transition probabilities are unknown parameters, learns
those parameters from operational traces (point, interval, and
conservative Bayesian estimators), and re-verifies reachability
properties online while watching for prior-data conflict.
"""

__version__ = "0.1.0"
