import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equiseq.coefficients import KINDS, CoefficientMap
from equiseq.errors import IllConditionedError, InvalidInputError, ShapeError
from equiseq.forms import (
    Form1Map,
    Form2Map,
    RhoPsiAttention,
    attention_as_form2,
    attention_block_matrix,
    form_from_json,
    form_to_json,
    gram_blocks,
    psi2,
    recover_g_from_f,
    rho_psi_coefficient,
    rho_psi_matrix,
    softmax_attention_coefficients,
)
from equiseq.layers import AttentionHead, single_head
from equiseq.tensor import Rng, max_abs, random_orthogonal, random_permutation

from conftest import loop_matmul, naive_softmax_rows
from test_coefficients import make_map


def test_form1_matches_explicit_product(rng):
    x = rng.normal((4, 3))
    f = Form1Map(CoefficientMap("inner_product_kernel", nonlinearity="tanh"))
    np.testing.assert_allclose(f(x), loop_matmul(x, np.tanh(loop_matmul(x.T, x))), atol=1e-14)


def test_form1_with_callable_coefficients(rng):
    x = rng.normal((3, 4))
    f = Form1Map(lambda gram: np.eye(gram.shape[0]) * 2.0)
    np.testing.assert_allclose(f(x), 2.0 * x)


def test_form2_callable_receives_gram_blocks(rng):
    x, z = rng.normal((4, 3)), rng.normal((4, 2))
    seen = {}

    def g1(xtx, ztx, ztz):
        seen.update(xtx=xtx, ztx=ztx, ztz=ztz)
        return xtx

    def g2(xtx, ztx, ztz):
        return ztx

    out = Form2Map(z, g1, g2)(x)
    np.testing.assert_allclose(seen["ztz"], z.T @ z)
    np.testing.assert_allclose(out, x @ (x.T @ x) + z @ (z.T @ x), atol=1e-13)


def test_form2_stacked_gram_split(rng):
    # g1 sees rows [0, n) and g2 rows [n, n + k) of the stacked Gram of [X, Z]
    x, z = rng.normal((4, 3)), rng.normal((4, 2))
    g = CoefficientMap("inner_product_kernel")
    w = np.hstack([x, z])
    stacked = w.T @ w
    out = Form2Map(z, g, g)(x)
    np.testing.assert_allclose(out, x @ stacked[:3, :3] + z @ stacked[3:, :3], atol=1e-13)


def test_form2_rejects_mismatched_embedding(rng):
    f = Form2Map(rng.normal((3, 2)), CoefficientMap("inner_product_kernel"), simplified=True)
    with pytest.raises(ShapeError):
        f(rng.normal((4, 2)))


def test_form2_needs_a_term(rng):
    with pytest.raises(InvalidInputError):
        Form2Map(rng.normal((3, 2)), None, None)


FORMS = ("form1", "form2", "simplified")


def build_form(form, kind, d, k, rng):
    if form == "form1":
        return Form1Map(make_map(kind, k, rng, gram=True))
    z = rng.normal((d, k))
    if form == "form2":
        return Form2Map(z, make_map(kind, k, rng, gram=True), make_map(kind, k, rng, gram=True))
    return Form2Map(z, make_map(kind, k, rng), simplified=True)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(KINDS),
    form=st.sampled_from(FORMS),
    d=st.integers(1, 8),
    n=st.integers(1, 6),
    k=st.integers(1, 4),
    seed=st.integers(0, 2**64 - 1),
)
def test_forms_are_orthogonally_equivariant(kind, form, d, n, k, seed):
    r = Rng(seed)
    f = build_form(form, kind, d, k, r)
    x = r.normal((d, n))
    q = random_orthogonal(d, r)
    assert max_abs(f.rotated(q)(q @ x) - q @ f(x)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from(KINDS), form=st.sampled_from(FORMS), n=st.integers(1, 6), seed=st.integers(0, 2**32))
def test_forms_are_permutation_equivariant(kind, form, n, seed):
    r = Rng(seed)
    f = build_form(form, kind, 4, 3, r)
    x = r.normal((4, n))
    p = random_permutation(n, r)
    assert max_abs(f(x @ p) - f(x) @ p) <= 1e-10


def test_knowledge_free_form_with_fixed_frame_breaks_equivariance(rng):
    # rotating X but not Z is not a symmetry of the simplified form
    z = rng.normal((3, 2))
    f = Form2Map(z, CoefficientMap("elementwise_quadratic", a=rng.normal((2, 2)), nonlinearity="tanh"), simplified=True)
    x = rng.normal((3, 4))
    q = random_orthogonal(3, rng)
    assert max_abs(f(q @ x) - q @ f(x)) > 1e-3


def test_attention_block_matrix_identity(rng):
    d1, d = 3, 5
    wq, wk = rng.normal((d1, d)), rng.normal((d1, d))
    z = np.hstack([wq.T, wk.T])
    np.testing.assert_allclose(z @ attention_block_matrix(d1) @ z.T, wq.T @ wk, atol=1e-13)


def test_attention_as_form2_equals_single_head(rng):
    d, d1, n = 4, 2, 5
    wq, wk = rng.normal((d1, d)), rng.normal((d1, d))
    head = AttentionHead(wq, wk, np.eye(d))
    x = rng.normal((d, n))
    direct = single_head(head, x, residual=False)
    # loop oracle: column j is sum_i x_i * softmax_i(x_j^T Wq^T Wk x_i / sqrt(d1))
    logits = loop_matmul(loop_matmul(x.T, wq.T), loop_matmul(wk, x)) / math.sqrt(d1)
    oracle = loop_matmul(x, naive_softmax_rows(logits).T)
    np.testing.assert_allclose(attention_as_form2(wq, wk)(x), oracle, atol=1e-13)
    np.testing.assert_allclose(attention_as_form2(wq, wk)(x), direct, atol=1e-13)


# --------------------------------------------------------------------------
# rho / psi


def test_rho_psi_single_element_is_one(rng):
    att = RhoPsiAttention(rng.normal((2, 3)), rng.normal((2, 3)))
    assert rho_psi_coefficient(att, rng.normal((3, 1)), 0, 0) == 1.0


def test_rho_psi_two_elements_closed_form():
    # W_Q^T W_K = I, x_1 = e_1, x_2 = e_1 + e_2: logits l_11 = 1, l_12 = 1, l_22 = 2, l_21 = 1
    att = RhoPsiAttention(np.eye(2), np.eye(2))
    x = np.array([[1.0, 1.0], [0.0, 1.0]])
    g = rho_psi_matrix(att, x)
    e = math.e
    np.testing.assert_allclose(g, [[0.5, 0.5], [e / (e + e * e), e * e / (e + e * e)]], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 6), d1=st.integers(1, 4), n=st.integers(1, 6), seed=st.integers(0, 2**32))
def test_rho_psi_matches_softmax(d, d1, n, seed):
    r = Rng(seed)
    att = RhoPsiAttention(r.normal((d1, d)), r.normal((d1, d)), scale=0.7)
    x = r.normal((d, n))
    assert max_abs(rho_psi_matrix(att, x) - softmax_attention_coefficients(att, x)) <= 1e-12


def test_rho_psi_survives_large_logits(rng):
    att = RhoPsiAttention(rng.normal((2, 3)) * 30, rng.normal((2, 3)) * 30)
    x = rng.normal((3, 4))
    g = rho_psi_matrix(att, x)
    assert np.all(np.isfinite(g))
    assert max_abs(g - softmax_attention_coefficients(att, x)) <= 1e-12


def test_perturbed_psi2_is_detected(rng):
    att = RhoPsiAttention(rng.normal((2, 3)), rng.normal((2, 3)))
    x = rng.normal((3, 5))

    def bad(a, xk, y, z, shift=0.0):
        return psi2(a, xk, y, z, shift) * 1.01

    assert max_abs(rho_psi_matrix(att, x, bad) - softmax_attention_coefficients(att, x)) > 1e-6


def test_rho_psi_index_out_of_range(rng):
    att = RhoPsiAttention(np.eye(2), np.eye(2))
    with pytest.raises(IndexError):
        rho_psi_coefficient(att, np.eye(2), 2, 0)


# --------------------------------------------------------------------------
# recovery and serialisation


def test_recover_g_from_f_round_trip(rng):
    x = rng.normal((6, 3))
    g = rng.normal((3, 3))
    np.testing.assert_allclose(recover_g_from_f(x, x @ g), g, atol=1e-10)


def test_recover_g_from_f_rank_deficient():
    x = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(IllConditionedError):
        recover_g_from_f(x, x)


def test_gram_blocks(rng):
    x, z = rng.normal((3, 4)), rng.normal((3, 2))
    xtx, ztx, ztz = gram_blocks(x, z)
    np.testing.assert_allclose(ztx, z.T @ x)
    assert xtx.shape == (4, 4) and ztz.shape == (2, 2)


@pytest.mark.parametrize("form", FORMS)
def test_form_json_round_trip(form, rng):
    f = build_form(form, "elementwise_quadratic", 3, 2, rng)
    back = form_from_json(form_to_json(f))
    x = rng.normal((3, 4))
    np.testing.assert_array_equal(back(x), f(x))
