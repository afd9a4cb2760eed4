"""
Clenshaw-Curtis Quadrature
Nodes and weights on [-1, 1], mapped onto [0, l] for integrating flow integrands.
"""

from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

DEFAULT_NODES = 32


def clenshaw_curtis(n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes (ascending) and weights of the ``n_nodes``-point rule on [-1, 1].

    Args:
        n_nodes: Number of nodes, at least 2

    Returns:
        Tuple of (nodes, weights)
    """
    if n_nodes < 2:
        raise ValueError(f"Clenshaw-Curtis needs at least 2 nodes, got {n_nodes}")
    N = n_nodes - 1
    theta = np.pi * np.arange(N + 1) / N
    x = np.cos(theta)
    w = np.zeros(N + 1)
    inner = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N ** 2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k ** 2 - 1)
        v -= np.cos(N * theta[inner]) / (N ** 2 - 1)
    else:
        w[0] = w[N] = 1.0 / N ** 2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k ** 2 - 1)
    w[inner] = 2.0 * v / N
    return x[::-1].copy(), w[::-1].copy()


@dataclass(frozen=True)
class QuadratureRule:
    """Clenshaw-Curtis rule with ``nodes`` points; exact for polynomials of degree < nodes."""
    nodes: int = DEFAULT_NODES
    reference_nodes: np.ndarray = field(init=False, repr=False, compare=False)
    reference_weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x, w = clenshaw_curtis(self.nodes)
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "reference_nodes", x)
        object.__setattr__(self, "reference_weights", w)

    def mapped(self, upper) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes and weights on [0, upper]; a negative ``upper`` flips the orientation.

        ``upper`` may be an array, giving one row of nodes per entry.
        """
        upper = np.asarray(upper, dtype=np.float64)[..., None]
        t = upper * (self.reference_nodes + 1.0) / 2.0
        w = upper * self.reference_weights / 2.0
        return t, w


def quadrature_integrate(f: Callable[[np.ndarray], np.ndarray], rule: QuadratureRule, upper: float) -> float:
    """Approximate the integral of ``f`` from 0 to ``upper``."""
    t, w = rule.mapped(upper)
    return float(np.sum(w * f(t)))
