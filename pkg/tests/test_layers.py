import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equiseq.audit import AuditConfig, audit_orthogonal_with_knowledge, audit_permutation
from equiseq.coefficients import CoefficientMap
from equiseq.errors import SchemaError, ShapeError, TapeError
from equiseq.layers import (
    AttentionHead,
    FormHead,
    GenericFormLayer,
    ModelSpec,
    MultiheadFormLayer,
    MultiHeadLayer,
    OutputLinearLayer,
    OutputMlpLayer,
    SingleHeadLayer,
    attention_head,
    backward,
    forward,
    model_from_json,
    model_from_text,
    multi_head,
    multihead_form,
    output_linear,
    output_mlp,
    single_head,
)
from equiseq.forms import Form1Map
from equiseq.tensor import Rng, max_abs, random_permutation

from conftest import load_fixture, naive_softmax_rows


def random_head(rng, d, d1, d2=None):
    if d2 is None:
        return AttentionHead(rng.normal((d1, d)), rng.normal((d1, d)), rng.normal((d, d)))
    return AttentionHead(rng.normal((d1, d)), rng.normal((d1, d)), rng.normal((d2, d)), rng.normal((d, d2)))


def test_single_head_two_by_two_closed_form():
    # W_Q = W_K = W_V = I, X = I, unit scale: attention weights e/(e+1) and 1/(e+1)
    head = AttentionHead(np.eye(2), np.eye(2), np.eye(2))
    out = single_head(head, np.eye(2), residual=True, scale=1.0)
    a, b = math.e / (math.e + 1), 1 / (math.e + 1)
    np.testing.assert_allclose(out, np.eye(2) + np.array([[a, b], [b, a]]), atol=1e-15)


def test_single_head_matches_loop_oracle(rng):
    head = random_head(rng, 3, 2)
    x = rng.normal((3, 4))
    w = naive_softmax_rows((head.wq @ x).T @ (head.wk @ x) / math.sqrt(2))
    oracle = x.copy()
    for j in range(4):
        for i in range(4):
            oracle[:, j] += w[j, i] * (head.wv @ x[:, i])
    np.testing.assert_allclose(single_head(head, x), oracle, atol=1e-13)


def test_multi_head_is_sum_of_heads(rng):
    heads = [random_head(rng, 4, 2, 3) for _ in range(3)]
    x = rng.normal((4, 5))
    expected = x + sum(h.wout @ (h.wv @ x) @ naive_softmax_rows((h.wq @ x).T @ (h.wk @ x) / math.sqrt(2)).T for h in heads)
    np.testing.assert_allclose(multi_head(heads, x), expected, atol=1e-13)


def test_head_shape_errors(rng):
    with pytest.raises(ShapeError):
        AttentionHead(rng.normal((2, 3)), rng.normal((2, 4)), rng.normal((3, 3)))
    with pytest.raises(ShapeError):
        AttentionHead(rng.normal((2, 3)), rng.normal((2, 3)), rng.normal((2, 3)))
    head = random_head(rng, 3, 2)
    with pytest.raises(ShapeError):
        attention_head(head, rng.normal((4, 2)))


def test_output_transforms(rng):
    x, z = rng.normal((3, 4)), rng.normal((3, 2))
    g = CoefficientMap("inner_product_kernel", nonlinearity="tanh")
    w, u, v = rng.normal((3, 3)), rng.normal((5, 3)), rng.normal((3, 5))
    inner = x @ np.tanh((z.T @ x).T @ (z.T @ x))
    np.testing.assert_allclose(output_linear(w, x, z, g), w @ inner, atol=1e-13)
    np.testing.assert_allclose(output_mlp(u, v, "relu", x, z, g), v @ np.maximum(u @ inner, 0), atol=1e-13)


def test_multihead_form_sums_heads(rng):
    x = rng.normal((3, 4))
    heads = [FormHead(rng.normal((3, 3)), rng.normal((3, 2)), CoefficientMap("softmax_quadratic", a=rng.normal((2, 2)))) for _ in range(2)]
    expected = sum(output_linear(h.w, x, h.z, h.g) for h in heads)
    np.testing.assert_allclose(multihead_form(heads, x), expected, atol=1e-14)


def sample_models(rng):
    g = CoefficientMap("elementwise_quadratic", a=rng.normal((2, 2)), nonlinearity="tanh")
    d = 4
    return {
        "single": ModelSpec(d, (SingleHeadLayer(head=random_head(rng, d, 2), residual=True),)),
        "multi": ModelSpec(d, (MultiHeadLayer(heads=(random_head(rng, d, 2, 3), random_head(rng, d, 3, 2))),)),
        "stack_mlp": ModelSpec(
            d,
            (
                MultiHeadLayer(heads=(random_head(rng, d, 2, 3), random_head(rng, d, 2, 3)), residual=True),
                OutputMlpLayer(u=rng.normal((5, d)) * 0.5, v=rng.normal((d, 5)) * 0.5, z=rng.normal((d, 2)), g=g),
            ),
        ),
        "form": ModelSpec(
            d,
            (
                MultiheadFormLayer(forms=(FormHead(rng.normal((d, d)), rng.normal((d, 2)), g),)),
                GenericFormLayer(form=Form1Map(CoefficientMap("rbf_kernel", gamma=0.3)), residual=True),
                OutputLinearLayer(w=rng.normal((d, d)), z=rng.normal((d, 3)), g=CoefficientMap("softmax_quadratic", a=rng.normal((3, 3)))),
            ),
        ),
    }


@pytest.mark.parametrize("name", ["single", "multi", "stack_mlp", "form"])
def test_models_pass_both_audits(name, rng):
    model = sample_models(rng)[name]
    cfg = AuditConfig(d=4, n=(1, 6), trials=25, seed=3)
    assert audit_permutation(model, cfg).residual_max <= 1e-10
    assert audit_orthogonal_with_knowledge(model, cfg).residual_max <= 1e-9


def test_bias_breaks_knowledge_equivariance_only(rng):
    layer = SingleHeadLayer(head=random_head(rng, 3, 2), bias=np.array([[1.0], [0.0], [0.0]]))
    model = ModelSpec(3, (layer,))
    cfg = AuditConfig(d=3, n=(2, 5), trials=10)
    assert audit_permutation(model, cfg).passed
    assert not audit_orthogonal_with_knowledge(model, cfg).passed


def test_stack_forward_matches_staged_evaluation(rng):
    model = sample_models(rng)["stack_mlp"]
    x = rng.normal((4, 3))
    staged = x
    for layer in model.layers:
        staged = layer(staged)
    out, tape = forward(model, x)
    np.testing.assert_allclose(out, staged, atol=1e-14)
    np.testing.assert_allclose(model(x), staged, atol=1e-14)
    assert set(tape.params) == set(model.parameters())


def test_backward_linear_closed_form(rng):
    # f = W X g(Z^T X) with identity kernel; d/dW 0.5|f - T|^2 = (f - T)(X g)^T
    x, z, t = rng.normal((3, 4)), rng.normal((3, 2)), rng.normal((3, 4))
    g = CoefficientMap("inner_product_kernel")
    w = rng.normal((3, 3))
    model = ModelSpec(3, (OutputLinearLayer(w=w, z=z, g=g),))
    out, tape = forward(model, x)
    grads = backward(tape, out - t)
    xg = x @ ((z.T @ x).T @ (z.T @ x))
    np.testing.assert_allclose(grads["layers.0.w"], (out - t) @ xg.T, atol=1e-12)


def test_backward_twice_is_an_error(rng):
    model = sample_models(rng)["single"]
    out, tape = forward(model, rng.normal((4, 2)))
    backward(tape, np.ones_like(out))
    with pytest.raises(TapeError):
        backward(tape, np.ones_like(out))


def test_model_dimension_mismatch_names_layer(rng):
    with pytest.raises(ShapeError) as exc:
        ModelSpec(4, (OutputMlpLayer(u=rng.normal((5, 4)), v=rng.normal((3, 5)), z=rng.normal((4, 2)), g=CoefficientMap("inner_product_kernel")), SingleHeadLayer(head=random_head(rng, 4, 2))))
    assert "layer 1" in str(exc.value)


@pytest.mark.parametrize("name", ["single", "multi", "stack_mlp", "form"])
def test_model_json_round_trip(name, rng):
    model = sample_models(rng)[name]
    back = model_from_text(model.dumps())
    x = rng.normal((4, 3))
    np.testing.assert_array_equal(back(x), model(x))
    assert back.dumps() == model.dumps()


def test_fixture_models_load(fixtures_dir):
    model = model_from_json(load_fixture("single_head.json"))
    assert model.d == 4 and len(model.layers) == 1


def test_schema_is_mandatory():
    with pytest.raises(SchemaError) as exc:
        model_from_json({"d": 2, "layers": []})
    assert "schema" in str(exc.value)


def test_malformed_json_reports_line(fixtures_dir):
    with pytest.raises(SchemaError) as exc:
        model_from_text((fixtures_dir / "malformed.json").read_text())
    assert "line" in str(exc.value)


def test_bad_field_reports_path():
    obj = {"schema": "equiseq/1", "d": 2, "layers": [{"kind": "single_head", "head": {"wq": 3}}]}
    with pytest.raises(SchemaError) as exc:
        model_from_json(obj)
    assert "layers[0]" in str(exc.value)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 7), seed=st.integers(0, 2**32))
def test_multi_head_permutation_property(n, seed):
    r = Rng(seed)
    heads = [random_head(r, 3, 2, 2) for _ in range(2)]
    x = r.normal((3, n))
    p = random_permutation(n, r)
    assert max_abs(multi_head(heads, x @ p) - multi_head(heads, x) @ p) <= 1e-10
