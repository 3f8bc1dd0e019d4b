import json
import math

import numpy as np
import pytest

from equiseq import audit as au
from equiseq.errors import InvalidInputError
from equiseq.coefficients import CoefficientMap
from equiseq.layers import ModelSpec, OutputMlpLayer, model_from_json

from conftest import load_fixture


def linear_mix(x):
    return x @ np.tanh(x.T @ x)


def test_form1_style_map_passes_embedding_audit():
    report = au.audit_orthogonal(linear_mix, au.AuditConfig(d=(1, 6), n=(1, 5), trials=50))
    assert report.passed and report.residual_max <= 1e-12


def test_fixed_vector_map_fails_embedding_audit():
    def shifted(x):
        return x + 1.0

    report = au.audit_orthogonal(shifted, au.AuditConfig(d=3, n=3, trials=10))
    assert not report.passed


def test_column_mixing_map_fails_permutation_audit():
    def first_column_broadcast(x):
        return np.repeat(x[:, :1], x.shape[1], axis=1)

    report = au.audit_permutation(first_column_broadcast, au.AuditConfig(d=2, n=(3, 5), trials=20))
    assert not report.passed


def test_audit_is_deterministic():
    cfg = au.AuditConfig(d=(2, 5), n=(1, 6), trials=30, seed=99)
    a = au.audit_orthogonal(linear_mix, cfg).dumps()
    b = au.audit_orthogonal(linear_mix, cfg).dumps()
    assert a == b


def test_worst_seed_reproduces_worst_trial():
    def noisy(x):
        return x + 1e-3 * np.sin(np.arange(x.size)).reshape(x.shape)

    cfg = au.AuditConfig(d=(2, 5), n=(1, 6), trials=40, seed=5)
    report = au.audit_orthogonal(noisy, cfg)
    assert au.run_trial(au.ORTHOGONAL_EMBEDDING, noisy, cfg, report.worst_seed) == report.residual_max


def test_crashing_map_is_recorded_not_raised():
    def boom(x):
        raise RuntimeError("nope")

    report = au.audit_orthogonal(boom, au.AuditConfig(d=2, n=2, trials=3))
    assert not report.passed
    assert math.isinf(report.residual_max)
    assert len(report.errors) == 3 and "nope" in report.errors[0]["message"]
    assert json.loads(report.dumps())["residual_max"] is None


def test_knowledge_audit_requires_rotated():
    with pytest.raises(InvalidInputError):
        au.audit_orthogonal_with_knowledge(linear_mix, au.AuditConfig())


def test_config_validation():
    with pytest.raises(InvalidInputError):
        au.AuditConfig(n=(0, 3))
    with pytest.raises(InvalidInputError):
        au.AuditConfig(trials=0)
    with pytest.raises(InvalidInputError):
        au.AuditConfig(distribution="cauchy")


@pytest.mark.parametrize("dist", au.DISTRIBUTIONS)
def test_input_distributions(dist, rng):
    x = au.sample_input(rng, 4, 6, dist)
    assert x.shape == (4, 6)
    if dist == "one_hot":
        assert np.all(x.sum(axis=0) == 1.0)
    if dist == "unit_sphere":
        np.testing.assert_allclose(np.linalg.norm(x, axis=0), 1.0)


def test_fixture_positive_and_negative_controls():
    good = model_from_json(load_fixture("single_head.json"))
    bad = model_from_json(load_fixture("broken_bias.json"))
    cfg = au.AuditConfig(d=4, n=(1, 6), trials=20)
    assert au.run_audit(au.ORTHOGONAL_WITH_KNOWLEDGE, good, cfg).passed
    assert not au.run_audit(au.ORTHOGONAL_WITH_KNOWLEDGE, bad, cfg).passed
    assert au.run_audit(au.ELEMENTWISE_PERMUTATION, bad, cfg).passed


# --------------------------------------------------------------------------
# arithmetic


def test_arithmetic_task_rules():
    task = au.ArithmeticTask()
    assert task.decode(task(task.embed(list("2+1")))) == ["3"]
    assert task.decode(task(task.embed(list("7-3")))) == ["4"]
    with pytest.raises(InvalidInputError):
        task(task.embed(list("9+9")))


def test_arithmetic_counterexample_residual_is_one():
    report = au.arithmetic_counterexample()
    assert report.residual_max == 1.0
    assert not report.passed
    d = report.details
    assert (d["output"], d["swapped_input"], d["swapped_output"], d["equivariant_prediction"]) == ("3", "2-1", "1", "3")


def test_swap_first_two_is_orthogonal():
    q = au.swap_first_two(12)
    np.testing.assert_array_equal(q @ q.T, np.eye(12))


# --------------------------------------------------------------------------
# gradient checking


def test_numeric_gradient_of_quadratic(rng):
    a = rng.normal((3, 3))
    w = rng.normal((3, 1))
    g = au.numeric_gradient(lambda v: float((v.T @ a @ v)[0, 0]), w, 1e-5)
    np.testing.assert_allclose(g, (a + a.T) @ w, atol=1e-8)


def test_relative_error_floor():
    assert au.relative_error(np.zeros(2), np.zeros(2)) == 0.0
    assert au.relative_error(np.ones(2), 2 * np.ones(2)) == pytest.approx(0.5)


def test_grad_check_passes_on_mlp_model(rng):
    g = CoefficientMap("softmax_quadratic", a=rng.normal((2, 2)))
    model = ModelSpec(3, (OutputMlpLayer(u=rng.normal((4, 3)), v=rng.normal((3, 4)), z=rng.normal((3, 2)), g=g),))
    report = au.grad_check(model, trials=3, n=3)
    assert report.passed, report.to_json()
    assert set(report.per_parameter) == {"layers.0.u", "layers.0.v", "layers.0.z", "layers.0.g.a"}
