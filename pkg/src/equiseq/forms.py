"""Executable equivariant forms.

* :class:`Form1Map` -- ``f(X) = X g(X^T X)``, orthogonally equivariant in the
  embedding space.
* :class:`Form2Map` -- ``f(X, Z) = X g1(blocks) + Z g2(blocks)`` where the
  blocks are ``X^T X``, ``Z^T X`` and ``Z^T Z``; equivariant when ``X`` and the
  knowledge ``Z`` rotate together.  With ``simplified=True`` it reduces to
  ``X g1(Z^T X)``.
* the rho/psi (Deep-Sets style) factorisation of softmax attention
  coefficients, and recovery of ``g`` from ``f`` by a left pseudo-inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .coefficients import CoefficientMap
from .errors import InvalidInputError, SchemaError, ShapeError
from .tensor import (
    as_matrix,
    matrix_from_json,
    matrix_to_json,
    pseudo_inverse_left,
    shape_str,
    softmax_rows,
)


def _check_coefficients(g, rows: int, what: str):
    gv = ad.value(g)
    if gv.ndim != 2 or gv.shape[0] != rows:
        raise ShapeError(f"{what}: coefficient matrix must have {rows} rows, got {shape_str(gv)}")
    return g


# --------------------------------------------------------------------------
# form 1


@dataclass(frozen=True, eq=False)
class Form1Map:
    """``f(X) = X g(X^T X)``.

    ``g`` is a :class:`CoefficientMap` (evaluated in Gram mode) or any callable
    taking the ``n x n`` Gram matrix and returning ``n x m`` coefficients.
    """

    g: CoefficientMap | Callable

    def __call__(self, x):
        return apply_form1(self, x)

    def rotated(self, q) -> "Form1Map":
        return self

    def named_params(self) -> dict:
        return {f"g.{k}": v for k, v in _params_of(self.g).items()}

    def with_params(self, params: dict) -> "Form1Map":
        sub = {k[2:]: v for k, v in params.items() if k.startswith("g.")}
        return replace(self, g=self.g.with_params(sub)) if sub else self


def apply_form1(m: Form1Map, x):
    gram = ad.matmul(ad.transpose(x), x)
    g = m.g.from_gram(gram) if isinstance(m.g, CoefficientMap) else m.g(gram)
    return ad.matmul(x, _check_coefficients(g, ad.value(x).shape[1], "form1"))


# --------------------------------------------------------------------------
# form 2


@dataclass(frozen=True, eq=False)
class Form2Map:
    """Form with knowledge ``z`` (``d x k``).

    ``g1`` / ``g2`` see only the Gram blocks.  A :class:`CoefficientMap` is
    evaluated in Gram mode on the stacked ``(n+k) x (n+k)`` Gram of ``[X, Z]``;
    ``g1`` keeps its first ``n`` rows and ``g2`` the last ``k`` rows, both over
    the first ``n`` columns.  A callable is called as ``g(xtx, ztx, ztz)``.
    ``g2=None`` means the ``Z`` term is absent.

    With ``simplified=True`` only ``X g1(Z^T X)`` is computed and ``g1`` is a
    feature-mode map (or callable) of ``Y = Z^T X``.
    """

    z: object
    g1: CoefficientMap | Callable | None
    g2: CoefficientMap | Callable | None = None
    simplified: bool = False

    def __post_init__(self):
        if ad.value(self.z).ndim != 2:
            raise ShapeError(f"knowledge z must be a matrix, got shape {shape_str(ad.value(self.z))}")
        if self.simplified and self.g2 is not None:
            raise InvalidInputError("simplified form has no g2 term")
        if self.g1 is None and self.g2 is None:
            raise InvalidInputError("form2 needs at least one of g1, g2")

    @property
    def d(self) -> int:
        return ad.value(self.z).shape[0]

    @property
    def k(self) -> int:
        return ad.value(self.z).shape[1]

    def __call__(self, x):
        return apply_form2(self, x)

    def rotated(self, q) -> "Form2Map":
        """The same map with knowledge ``Q z``."""
        return replace(self, z=np.asarray(q) @ ad.value(self.z))

    def named_params(self) -> dict:
        out = {"z": self.z}
        for name in ("g1", "g2"):
            g = getattr(self, name)
            out.update({f"{name}.{k}": v for k, v in _params_of(g).items()})
        return out

    def with_params(self, params: dict) -> "Form2Map":
        changes = {}
        if "z" in params:
            changes["z"] = params["z"]
        for name in ("g1", "g2"):
            prefix = name + "."
            sub = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
            if sub:
                changes[name] = getattr(self, name).with_params(sub)
        return replace(self, **changes) if changes else self


def gram_blocks(x, z):
    """The three blocks ``(X^T X, Z^T X, Z^T Z)``."""
    zt = ad.transpose(z)
    return ad.matmul(ad.transpose(x), x), ad.matmul(zt, x), ad.matmul(zt, z)


def _stacked_gram(xtx, ztx, ztz):
    top = ad.hstack(xtx, ad.transpose(ztx))
    bottom = ad.hstack(ztx, ztz)
    return ad.transpose(ad.hstack(ad.transpose(top), ad.transpose(bottom)))


def apply_form2(m: Form2Map, x):
    xv, zv = ad.value(x), ad.value(m.z)
    if xv.ndim != 2 or xv.shape[0] != zv.shape[0]:
        raise ShapeError(f"form2: X {shape_str(xv)} and Z {shape_str(zv)} live in different embeddings")
    n, k = xv.shape[1], zv.shape[1]
    if m.simplified:
        y = ad.matmul(ad.transpose(m.z), x)
        g = m.g1(y)
        return ad.matmul(x, _check_coefficients(g, n, "form2 g1"))

    xtx, ztx, ztz = gram_blocks(x, m.z)
    stacked = None
    out = None
    for g_fn, rows, left in ((m.g1, slice(0, n), x), (m.g2, slice(n, n + k), m.z)):
        if g_fn is None:
            continue
        if isinstance(g_fn, CoefficientMap):
            if stacked is None:
                stacked = _stacked_gram(xtx, ztx, ztz)
            coeff = ad.block(g_fn.from_gram(stacked), rows, slice(0, n))
        else:
            coeff = g_fn(ad.value(xtx), ad.value(ztx), ad.value(ztz))
        expected = rows.stop - rows.start
        term = ad.matmul(left, _check_coefficients(coeff, expected, "form2"))
        if out is not None and ad.value(term).shape != ad.value(out).shape:
            raise ShapeError(
                f"form2: X and Z terms have different shapes {shape_str(ad.value(out))} and "
                f"{shape_str(ad.value(term))}"
            )
        out = term if out is None else ad.add(out, term)
    return out


def _params_of(g) -> dict:
    return g.named_params() if isinstance(g, CoefficientMap) else {}


def attention_block_matrix(d1: int) -> np.ndarray:
    """``A = [[0, I], [0, 0]]`` of size ``2 d1`` so that ``Z A Z^T = W_Q^T W_K``."""
    a = np.zeros((2 * d1, 2 * d1))
    a[:d1, d1:] = np.eye(d1)
    return a


def attention_as_form2(wq, wk, scale: float | None = None) -> Form2Map:
    """Softmax attention written as ``X g(Z^T X)`` with ``Z = [W_Q^T, W_K^T]``."""
    wq, wk = as_matrix(wq, name="wq"), as_matrix(wk, name="wk")
    if wq.shape != wk.shape:
        raise ShapeError(f"attention_as_form2: wq {shape_str(wq)} and wk {shape_str(wk)} differ")
    d1 = wq.shape[0]
    z = np.hstack([wq.T, wk.T])
    g = CoefficientMap(
        "softmax_quadratic",
        a=attention_block_matrix(d1),
        scale=1.0 / math.sqrt(d1) if scale is None else float(scale),
    )
    return Form2Map(z=z, g1=g, simplified=True)


# --------------------------------------------------------------------------
# rho / psi decomposition of the attention coefficients


@dataclass(frozen=True, eq=False)
class RhoPsiAttention:
    """Query/key weights (``d1 x d``) plus the logit scale (1 by default)."""

    wq: np.ndarray
    wk: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        wq, wk = np.asarray(self.wq, float), np.asarray(self.wk, float)
        if wq.ndim != 2 or wq.shape != wk.shape or wq.shape[0] < 1:
            raise ShapeError(f"rho/psi attention: wq {shape_str(wq)} and wk {shape_str(wk)} must match, d1 >= 1")
        object.__setattr__(self, "wq", wq)
        object.__setattr__(self, "wk", wk)

    def logit(self, a, b) -> float:
        """``scale * a^T W_Q^T W_K b``."""
        return self.scale * float((self.wq @ a) @ (self.wk @ b))


def psi2(att: RhoPsiAttention, x, y, z, shift: float = 0.0) -> float:
    # z is the partner of the pair (y, z); the attention instance ignores it
    return math.exp(att.logit(y, x) - shift)


def rho2(att: RhoPsiAttention, x, y, psi: float, shift: float = 0.0) -> float:
    # the self term exp(l(x, x)) belongs in the denominator; psi only covers k != i, j
    e = math.exp(att.logit(x, y) - shift)
    return e / (e + math.exp(att.logit(x, x) - shift) + psi)


def psi1(att: RhoPsiAttention, x, y, shift: float = 0.0, psi2_fn=psi2) -> float:
    return psi2_fn(att, x, y, y, shift)


def rho1(att: RhoPsiAttention, x, psi: float, shift: float = 0.0) -> float:
    e = math.exp(att.logit(x, x) - shift)
    return e / (e + psi)


def rho_psi_coefficient(att: RhoPsiAttention, x, i: int, j: int, psi2_fn=None) -> float:
    """Coefficient ``g_ij`` through the rho/psi factorisation (0-based ``i, j``).

    Off-diagonal: ``rho2(x_i, x_j, sum_{k != i,j} psi2(x_k; x_i, x_j))``;
    diagonal: ``rho1(x_i, sum_{k != i} psi1(x_k; x_i))``.  All exponentials of
    row ``i`` share the shift ``max_k logit(x_i, x_k)``; the ratio is unchanged.
    ``psi2_fn`` replaces psi2 (fault injection in tests).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != att.wq.shape[1]:
        raise ShapeError(f"rho_psi_coefficient: X {shape_str(x)} does not match d={att.wq.shape[1]}")
    n = x.shape[1]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"rho_psi_coefficient: index ({i}, {j}) out of range for n={n}")
    psi2_fn = psi2 if psi2_fn is None else psi2_fn
    cols = [x[:, c] for c in range(n)]
    xi = cols[i]
    shift = max(att.logit(xi, xk) for xk in cols)
    if i == j:
        total = sum(psi1(att, cols[k], xi, shift, psi2_fn) for k in range(n) if k != i)
        return rho1(att, xi, total, shift)
    xj = cols[j]
    total = sum(psi2_fn(att, cols[k], xi, xj, shift) for k in range(n) if k not in (i, j))
    return rho2(att, xi, xj, total, shift)


def rho_psi_matrix(att: RhoPsiAttention, x, psi2_fn=None) -> np.ndarray:
    n = np.shape(x)[1]
    return np.array([[rho_psi_coefficient(att, x, i, j, psi2_fn) for j in range(n)] for i in range(n)])


def softmax_attention_coefficients(att: RhoPsiAttention, x) -> np.ndarray:
    """Direct formula ``g_ij = exp(l_ij) / sum_k exp(l_ik)`` with ``l = scale * X^T W_Q^T W_K X``."""
    x = np.asarray(x, dtype=np.float64)
    logits = att.scale * ((att.wq @ x).T @ (att.wk @ x))
    return softmax_rows(logits)


def recover_g_from_f(x, f_output) -> np.ndarray:
    """``X^+ f(X)``: the coefficients reproducing ``f_output`` from the columns of ``x``."""
    x = as_matrix(x, name="x")
    f_output = as_matrix(f_output, name="f_output")
    if f_output.shape[0] != x.shape[0]:
        raise ShapeError(f"recover_g_from_f: f output {shape_str(f_output)} is not in R^{x.shape[0]}")
    return pseudo_inverse_left(x) @ f_output


# --------------------------------------------------------------------------
# JSON


def form_to_json(m) -> dict:
    if isinstance(m, Form1Map):
        if not isinstance(m.g, CoefficientMap):
            raise InvalidInputError("only forms built from coefficient maps are serialisable")
        return {"form": "form1", "simplified": False, "g1": m.g.to_json()}
    for g in (m.g1, m.g2):
        if g is not None and not isinstance(g, CoefficientMap):
            raise InvalidInputError("only forms built from coefficient maps are serialisable")
    out = {
        "form": "form2",
        "simplified": bool(m.simplified),
        "z": matrix_to_json(ad.value(m.z)),
        "g1": m.g1.to_json() if m.g1 is not None else None,
    }
    if m.g2 is not None:
        out["g2"] = m.g2.to_json()
    return out


def form_from_json(obj, path: str = ""):
    if not isinstance(obj, dict):
        raise SchemaError("expected a form object", path)
    kind = obj.get("form")
    if kind == "form1":
        if "g1" not in obj:
            raise SchemaError("form1 needs 'g1'", path)
        return Form1Map(CoefficientMap.from_json(obj["g1"], f"{path}.g1"))
    if kind != "form2":
        raise SchemaError(f"form must be 'form1' or 'form2', got {kind!r}", f"{path}.form")
    if "z" not in obj:
        raise SchemaError("form2 needs knowledge 'z'", path)
    simplified = obj.get("simplified", False)
    if not isinstance(simplified, bool):
        raise SchemaError("simplified must be a boolean", f"{path}.simplified")
    z = matrix_from_json(obj["z"], f"{path}.z")
    g1 = CoefficientMap.from_json(obj["g1"], f"{path}.g1") if obj.get("g1") is not None else None
    g2 = CoefficientMap.from_json(obj["g2"], f"{path}.g2") if obj.get("g2") is not None else None
    try:
        return Form2Map(z=z, g1=g1, g2=g2, simplified=simplified)
    except (InvalidInputError, ShapeError) as exc:
        raise SchemaError(str(exc), path) from None
