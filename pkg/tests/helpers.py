"""Shared fixture builders for the test modules."""

import numpy as np


def lambda_fixture(seed=0, noise=0.12):
    """Positive, offset features in the n ~ d regime: small lambda overfits,
    large lambda collapses towards class sums."""
    r = np.random.default_rng(seed)
    y = np.repeat(np.arange(7), 10)
    pattern = r.uniform(0, 1, size=(7, 40))
    return 0.3 + 0.4 * pattern[y] + noise * r.normal(size=(70, 40)), y


ACCEPTANCE_LINES = []


def verdict(number, name, ok, detail):
    """Record and print one pass/fail line for an acceptance criterion."""
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
