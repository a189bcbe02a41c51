"""Shared test utilities."""

import math
import os

import numpy as np

import pytest

from floasim.data import mnist_available

MNIST_DIR = os.environ.get("FLOASIM_DATA", "/root/data/mnist")

requires_mnist = pytest.mark.skipif(
    not mnist_available(MNIST_DIR), reason="MNIST not found; set FLOASIM_DATA to the IDX directory"
)


def synthetic_config(**sections):
    """A small, fast synthetic problem; ``sections`` override per-section fields."""
    from floasim.config import SimConfig

    base = {
        "model": {"input_dim": 8, "hidden_dim": 6, "output_dim": 3},
        "data": {"source": "synthetic", "shard_size": 100, "n_train": 600, "n_test": 200, "train_probe": 200},
        "training": {"rounds": 30, "lr": 0.1},
        "run": {"seeds": [0, 1], "name": "syn"},
    }
    for key, values in sections.items():
        base[key] = {**base.get(key, {}), **values}
    return SimConfig().replace(**base)


def four_term_oracle(grads, attackers, amps_nominal, mags, noise):
    """Honest sum + attacker payload term + attacker nominal mean term + noise, by explicit loops."""
    U, D = len(grads), len(grads[0])
    means = [math.fsum(g) / D for g in grads]
    variances = [math.fsum((v - means[i]) ** 2 for v in grads[i]) / D for i in range(U)]
    gbar = math.fsum(means) / U
    eps = math.sqrt(math.fsum(variances) / U)
    p_hat = math.sqrt(D / ((gbar**2 + eps**2) * D))  # p_max = D
    out = []
    for d in range(D):
        honest = math.fsum(amps_nominal[m] * mags[m] * grads[m][d] for m in range(U) if m not in attackers)
        attack = eps * math.fsum(p_hat * mags[n] * (-grads[n][d]) for n in attackers)
        att_mean = math.fsum(amps_nominal[n] * mags[n] for n in attackers) * gbar
        out.append(honest + attack + att_mean + eps * noise[d])
    return np.array(out)


# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []
