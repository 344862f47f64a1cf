import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fjnudge.errors import EmptyTrajectory
from fjnudge.metrics import (
    MetricsReport,
    adopters_fraction,
    control_effort,
    mean_effort,
    overflow_count,
    overflow_steps,
    verify_cost_identity,
)


def test_adopters_examples():
    assert adopters_fraction(np.ones((3, 4), dtype=int)) == 100.0
    assert adopters_fraction(np.zeros((3, 4), dtype=int)) == 0.0
    assert adopters_fraction([[1, 0], [1, 1]]) == 75.0
    with pytest.raises(EmptyTrajectory):
        adopters_fraction(np.zeros((0, 3)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_adopters_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    Y = (rng.random((7, 5)) < 0.5).astype(int)
    perm = Y[rng.permutation(7)][:, rng.permutation(5)]
    assert adopters_fraction(perm) == adopters_fraction(Y)


def test_effort_examples():
    assert control_effort(np.zeros((4, 3))) == 0.0
    assert control_effort([[0.1, 0.2], [0.3, 0.0]]) == pytest.approx(0.6)
    assert mean_effort([[0.1, 0.2], [0.3, 0.0]]) == pytest.approx(0.3)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_effort_is_additive(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((4, 3)), rng.random((6, 3))
    assert control_effort(np.vstack([a, b])) == pytest.approx(control_effort(a) + control_effort(b))


def test_overflow_examples():
    assert overflow_count(np.full((3, 2), 0.5)) == 0
    x = np.full((3, 2), 0.5)
    x[1, 0] = 1.003
    assert overflow_count(x) == 1
    x[1, 1] = -0.01
    x[2, 1] = 1.5
    assert overflow_count(x) == 3
    assert overflow_steps(x) == 2


def test_cost_identity_exact_cases():
    rng = np.random.default_rng(0)
    assert verify_cost_identity(np.ones(4), 1000, rng) == (0.0, 0.0)
    assert verify_cost_identity(np.zeros(3), 1000, rng) == (3.0, 3.0)


def test_cost_identity_two_agents():
    mc, analytic = verify_cost_identity(np.array([0.3, 0.8]), 10**6, np.random.default_rng(1))
    assert analytic == pytest.approx(0.9)
    assert abs(mc - 0.9) <= 0.004


def test_cost_identity_is_seeded():
    x = np.random.default_rng(2).random(5)
    a = verify_cost_identity(x, 250_000, np.random.default_rng(3))
    b = verify_cost_identity(x, 250_000, np.random.default_rng(3))
    assert a == b


def test_report_json():
    x = np.array([[0.2, 0.5], [0.4, 1.2], [0.9, 0.95]])
    y = np.array([[1, 0], [1, 1]])
    u = np.array([[0.1, 0.0], [0.2, 0.3]])
    rep = MetricsReport.from_run(x, y, u)
    assert rep.gamma_T == 75.0
    assert rep.delta_u == pytest.approx(0.6)
    assert rep.delta_u_per_step == pytest.approx(0.3)
    assert rep.tau_ob_pairs == 1 and rep.tau_ob_steps == 1
    doc = json.loads(json.dumps(rep.to_dict()))
    assert {"gamma_T", "delta_u", "tau_ob_pairs", "tau_ob_steps", "per_step"} <= set(doc)
    assert doc["per_step"] == {"adopters": [1, 2], "u_l1": [0.1, 0.5]}
    assert MetricsReport.from_dict(doc) == rep
