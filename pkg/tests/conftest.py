"""Shared fixtures and the seeded random-expression generator."""

from __future__ import annotations

import math

import numpy as np
import pytest

from kooplift import bench, dynamics
from kooplift.expr import (
    Constant,
    Cos,
    EvaluationError,
    Exp,
    Ln,
    Power,
    Product,
    Reciprocal,
    Sin,
    Sum,
    Variable,
    evaluate,
)


@pytest.fixture(scope="session")
def smib():
    return dynamics.smib_build()


@pytest.fixture(scope="session")
def default_cfg():
    return bench.ExperimentConfig(out_dir="unused")


@pytest.fixture(scope="session")
def training(default_cfg):
    return bench.prepare_training(default_cfg)


@pytest.fixture(scope="session")
def decompositions(training):
    return {
        name: bench.fit_dictionary(training, name)
        for name in training.cfg.dictionaries
    }


# ---------------------------------------------------------------------------
# Random expressions over the supported node set


def random_expr(rng: np.random.Generator, var_names, depth: int):
    """A random expression tree; leaves are variables or small constants."""
    if depth <= 0 or rng.random() < 0.3:
        if rng.random() < 0.6:
            return Variable(str(rng.choice(var_names)))
        return Constant(float(rng.uniform(-2.0, 2.0)))
    kind = rng.integers(0, 7)
    child = lambda: random_expr(rng, var_names, depth - 1)  # noqa: E731
    if kind == 0:
        return Sum(tuple(child() for _ in range(rng.integers(2, 4))))
    if kind == 1:
        return Product(tuple(child() for _ in range(rng.integers(2, 4))))
    if kind == 2:
        return Power(child(), int(rng.integers(1, 4)))
    if kind == 3:
        return Sin(child())
    if kind == 4:
        return Cos(child())
    if kind == 5:
        return Exp(child())
    if kind == 6 and rng.random() < 0.5:
        return Ln(child())
    return Reciprocal(child())


def random_cases(seed: int, count: int, var_names=("x", "y"), depth: int = 3):
    """(expr, env) pairs where the expression and its close neighborhood
    evaluate to moderate finite values; suitable for finite differencing."""
    rng = np.random.default_rng(seed)
    cases = []
    attempts = 0
    while len(cases) < count and attempts < 200 * count:
        attempts += 1
        e = random_expr(rng, var_names, depth)
        env = {v: float(rng.uniform(0.3, 1.5)) for v in var_names}
        try:
            values = [evaluate(e, env)]
            for v in var_names:
                for h in (-2e-5, 2e-5):
                    values.append(evaluate(e, {**env, v: env[v] + h}))
        except (EvaluationError, OverflowError):
            continue
        if all(math.isfinite(x) and abs(x) < 50.0 for x in values):
            cases.append((e, env))
    assert len(cases) == count, "generator failed to produce enough cases"
    return cases


def central_difference(e, env, name, h=1e-5):
    hi = evaluate(e, {**env, name: env[name] + h})
    lo = evaluate(e, {**env, name: env[name] - h})
    return (hi - lo) / (2.0 * h)
