"""Pure numpy versions of the fused Hamiltonian-gradient kernels.

The energy network is ``H(x) = tanh(tanh(x W1 + b1) W2 + b2) w3 + b3`` with
``x`` of shape (N, d).  ``hamgrad_forward`` returns dH/dx per row and
``hamgrad_backward`` returns the vector-Jacobian product of that map with
respect to ``x`` and every weight.
"""
from __future__ import annotations

import numpy as np


def hamgrad_forward(x, W1, b1, W2, b2, w3):
    a1 = np.tanh(x @ W1 + b1)
    a2 = np.tanh(a1 @ W2 + b2)
    d2 = (1.0 - a2 * a2) * w3[:, 0]
    c1 = d2 @ W2.T
    d1 = (1.0 - a1 * a1) * c1
    G = d1 @ W1.T
    return G, a1, a2, c1


def hamgrad_backward(V, x, W1, W2, w3, a1, a2, c1):
    s1 = 1.0 - a1 * a1
    s2 = 1.0 - a2 * a2
    w3r = w3[:, 0]
    d2 = s2 * w3r
    d1 = s1 * c1

    D1 = V @ W1
    gW1 = V.T @ d1
    C1 = D1 * s1
    A1 = -2.0 * a1 * c1 * D1
    gW2 = C1.T @ d2
    D2 = C1 @ W2
    gw3 = (D2 * s2).sum(axis=0)[:, None]
    Z2 = -2.0 * a2 * D2 * w3r * s2
    gb2 = Z2.sum(axis=0)
    gW2 += a1.T @ Z2
    A1 += Z2 @ W2.T
    Z1 = A1 * s1
    gb1 = Z1.sum(axis=0)
    gW1 += x.T @ Z1
    gx = Z1 @ W1.T
    return gx, gW1, gb1, gW2, gb2, gw3
