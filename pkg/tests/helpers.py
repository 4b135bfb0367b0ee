"""Shared test fixtures: exactly-linear plants used as analytic oracles."""

import numpy as np


class LinearModel:
    """x_{t+1} = A x + B u; duck-types a PDE model for the solver/sysid."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.n_x = self.a.shape[0]
        self.n_u = self.b.shape[1]

    def step_batch(self, states, controls):
        states = np.atleast_2d(states)
        controls = np.atleast_2d(controls)
        return states @ self.a.T + controls @ self.b.T

    def step(self, state, control):
        return self.a @ state + self.b @ control


def random_stable_linear(n_x, n_u, rng, radius=0.9):
    a = rng.standard_normal((n_x, n_x))
    a *= radius / max(np.abs(np.linalg.eigvals(a)))
    b = rng.standard_normal((n_x, n_u))
    return LinearModel(a, b)
