"""Analytic log densities used as sampler test targets."""
import numpy as np


class Gaussian:
    """Independent normal target with given means and standard deviations."""

    def __init__(self, mean, sd):
        self.mean = np.asarray(mean, dtype=float)
        self.prec = 1.0 / np.asarray(sd, dtype=float) ** 2

    @property
    def dim(self):
        return self.mean.size

    def __call__(self, x):
        d = x - self.mean
        return -0.5 * float(np.dot(d * self.prec, d)), -d * self.prec


def standard_normal(dim):
    return Gaussian(np.zeros(dim), np.ones(dim))
