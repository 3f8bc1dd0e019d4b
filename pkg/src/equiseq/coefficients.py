"""Coefficient maps ``g`` turning ``Y = Z^T X`` into an ``n x n`` mixing matrix.

Each map has a fixed, sequence-length-independent parameter set, so the same
map applies to sequences of every length ``n``.

Two evaluation modes exist:

* **feature mode** (``cmap(y)``): ``y`` is the ``k x n`` matrix ``Z^T X``.
* **Gram mode** (``cmap.from_gram(g)``): only a Gram matrix ``G = X^T X`` is
  available (knowledge-free maps, or the stacked ``[X, Z]`` Gram of the full
  two-term form).  Without a knowledge frame the only orthogonally invariant
  weight is a multiple of the identity, so quadratic weights must be ``1 x 1``
  and matrix-product terms must alternate ``(T, A, T, A, ...)`` with scalar
  weights; such a term evaluates to a scalar times ``G^(K/2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import FiniteInformationError, InvalidInputError, SchemaError, ShapeError
from .tensor import matrix_from_json, matrix_to_json, shape_str

KINDS = (
    "softmax_quadratic",
    "elementwise_quadratic",
    "matrix_product",
    "rbf_kernel",
    "inner_product_kernel",
)
MAX_TERMS = 16
AS_IS = "A"
TRANSPOSED = "T"
N = "n"  # the free sequence-length symbol in shape inference


# --------------------------------------------------------------------------
# matrix-product terms


@dataclass(frozen=True, eq=False)
class TermSpec:
    """One summand ``W_0 * prod_j (Ytilde_j W_j)`` of a matrix-product map.

    ``pattern[j]`` is ``"A"`` (use ``Y``) or ``"T"`` (use ``Y^T``).  ``weights``
    has ``len(pattern) + 1`` entries; an entry is either a matrix or a plain
    number, the latter acting as that multiple of an identity of whatever
    size the chain needs.  ``None`` means the scalar 1.
    """

    pattern: tuple[str, ...]
    weights: tuple = ()

    def __post_init__(self):
        pattern = tuple(self.pattern)
        for p in pattern:
            if p not in (AS_IS, TRANSPOSED):
                raise InvalidInputError(f"term pattern entries must be 'A' or 'T', got {p!r}")
        weights = tuple(self.weights) if self.weights else (None,) * (len(pattern) + 1)
        if len(weights) != len(pattern) + 1:
            raise InvalidInputError(
                f"term with K={len(pattern)} factors needs {len(pattern) + 1} weights, got {len(weights)}"
            )
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "weights", weights)

    @property
    def order(self) -> int:
        return len(self.pattern)


def _is_scalar(w) -> bool:
    return w is None or isinstance(w, (int, float))


def _scalar(w) -> float:
    return 1.0 if w is None else float(w)


@dataclass(frozen=True)
class ShapeReport:
    accepted: bool
    output_shape: tuple | None
    reason: str = ""
    offender: str | None = None

    def __bool__(self):
        return self.accepted


def validate_term_shapes(term: TermSpec, k: int) -> ShapeReport:
    """Symbolic shape chase of ``term`` with the sequence length ``n`` left free.

    Accepts iff the product is well formed for every ``n`` and its shape is
    exactly ``n x n`` using only the term's own (``n``-free) weights.
    """
    K = term.order
    if K == 0:
        return ShapeReport(False, None, "constant term needs n-dependent shape: W_0 alone cannot be n x n", "K=0")
    if K == 1:
        return ShapeReport(
            False, None, "linear term needs n-dependent shape: one Y factor cannot give n x n", "K=1"
        )

    def dims(w):
        r, c = np.shape(ad.value(w))
        return int(r), int(c)

    cur = None  # None: only scalars so far, shape still free
    w0 = term.weights[0]
    if not _is_scalar(w0):
        cur = dims(w0)
    for j, p in enumerate(term.pattern, start=1):
        ydims = (int(k), N) if p == AS_IS else (N, int(k))
        if cur is not None and cur[1] != ydims[0]:
            if ydims[0] == N:
                offender = f"W_{j - 1}"
                return ShapeReport(
                    False,
                    None,
                    f"{offender} would need {N} columns to multiply factor {j} (Y^T); n-dependent shape",
                    offender,
                )
            return ShapeReport(
                False, None, f"factor {j}: {cur[0]}x{cur[1]} cannot multiply {ydims[0]}x{ydims[1]}", f"factor_{j}"
            )
        cur = (ydims[0] if cur is None else cur[0], ydims[1])
        w = term.weights[j]
        if _is_scalar(w):
            continue
        r, c = dims(w)
        if cur[1] == N:
            return ShapeReport(
                False, None, f"W_{j} ({r}x{c}) would need {N} rows; n-dependent shape", f"W_{j}"
            )
        if cur[1] != r:
            return ShapeReport(False, None, f"W_{j} is {r}x{c} but the chain has {cur[1]} columns", f"W_{j}")
        cur = (cur[0], c)
    if cur != (N, N):
        offender = "W_0" if cur[0] != N else f"W_{K}"
        return ShapeReport(
            False,
            cur,
            f"term has shape {cur[0]}x{cur[1]}; reaching n x n needs an n-dependent {offender}",
            offender,
        )
    return ShapeReport(True, (N, N))


def _eval_term(y, term: TermSpec):
    coef = 1.0
    acc = None
    w0 = term.weights[0]
    if _is_scalar(w0):
        coef *= _scalar(w0)
    else:
        acc = w0
    yt = None
    for p, w in zip(term.pattern, term.weights[1:]):
        if p == AS_IS:
            factor = y
        else:
            if yt is None:
                yt = ad.transpose(y)
            factor = yt
        acc = factor if acc is None else ad.matmul(acc, factor)
        if _is_scalar(w):
            coef *= _scalar(w)
        else:
            acc = ad.matmul(acc, w)
    return acc if coef == 1.0 else ad.scale(acc, coef)


# --------------------------------------------------------------------------
# feature-mode evaluators


def _check_quadratic(y, a):
    yv, av = ad.value(y), ad.value(a)
    if yv.ndim != 2 or av.ndim != 2 or av.shape != (yv.shape[0], yv.shape[0]):
        raise ShapeError(f"quadratic form: A must be {yv.shape[0]}x{yv.shape[0]} for Y {shape_str(yv)}, got {shape_str(av)}")


def _quadratic_logits(y, a, scale: float):
    _check_quadratic(y, a)
    q = ad.matmul(ad.transpose(y), ad.matmul(a, y))
    return q if scale == 1.0 else ad.scale(q, scale)


def eval_quadratic(y, a, nonlinearity: str = "identity", scale: float = 1.0):
    """``sigma(scale * Y^T A Y)`` elementwise."""
    return ad.activation(_quadratic_logits(y, a, scale), nonlinearity)


def eval_softmax_quadratic(y, a, scale: float | None = None):
    """Row softmax of ``scale * Y^T A Y``, returned transposed.

    The transpose makes ``X @ g`` the attention output directly: column ``j``
    of the result holds the weights query ``j`` puts on every key.
    ``scale`` defaults to ``1/sqrt(k)``.
    """
    if scale is None:
        scale = 1.0 / math.sqrt(ad.value(y).shape[0])
    return ad.transpose(ad.softmax_rows(_quadratic_logits(y, a, scale)))


def eval_matrix_product(y, terms: Sequence[TermSpec], nonlinearity: str = "identity", scale: float = 1.0):
    if not terms:
        raise FiniteInformationError("matrix-product map needs at least one term")
    if len(terms) > MAX_TERMS:
        raise FiniteInformationError(f"matrix-product map has {len(terms)} terms; the cap is {MAX_TERMS}")
    k = ad.value(y).shape[0]
    total = None
    for i, term in enumerate(terms):
        report = validate_term_shapes(term, k)
        if not report:
            raise FiniteInformationError(f"term {i}: {report.reason}", report)
        t = _eval_term(y, term)
        total = t if total is None else ad.add(total, t)
    if scale != 1.0:
        total = ad.scale(total, scale)
    return ad.activation(total, nonlinearity)


def _check_gamma(gamma):
    if not (isinstance(gamma, (int, float)) and math.isfinite(gamma) and gamma > 0):
        raise InvalidInputError(f"RBF bandwidth gamma must be a positive real, got {gamma!r}")


def eval_rbf(y, gamma: float):
    """``g_ij = exp(-gamma * |y_i - y_j|^2)`` over the columns of ``Y``."""
    _check_gamma(gamma)
    return _rbf_from_gram(ad.matmul(ad.transpose(y), y), gamma)


def _rbf_from_gram(g, gamma):
    return ad.activation(ad.scale(ad.gram_sqdist(g), -float(gamma)), "exp")


def eval_inner_product_kernel(y, nonlinearity: str = "identity", scale: float = 1.0):
    g = ad.matmul(ad.transpose(y), y)
    if scale != 1.0:
        g = ad.scale(g, scale)
    return ad.activation(g, nonlinearity)


# --------------------------------------------------------------------------
# the map object


@dataclass(frozen=True, eq=False)
class CoefficientMap:
    kind: str
    a: object = None
    terms: tuple = ()
    gamma: float | None = None
    scale: float | str | None = None
    nonlinearity: str = "identity"
    _meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown coefficient-map kind {self.kind!r}; expected one of {KINDS}")
        if self.nonlinearity not in ad.ACTIVATIONS:
            raise InvalidInputError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.kind in ("softmax_quadratic", "rbf_kernel") and self.nonlinearity != "identity":
            raise InvalidInputError(f"{self.kind} has a fixed profile; nonlinearity must be 'identity'")
        if self.kind in ("softmax_quadratic", "elementwise_quadratic"):
            a = ad.value(self.a)
            if a is None or np.ndim(a) != 2 or a.shape[0] != a.shape[1]:
                raise InvalidInputError(f"{self.kind} needs a square weight matrix A")
        if self.kind == "rbf_kernel":
            _check_gamma(self.gamma)
        if self.kind == "matrix_product":
            terms = tuple(self.terms)
            object.__setattr__(self, "terms", terms)
            if not 1 <= len(terms) <= MAX_TERMS:
                raise FiniteInformationError(f"matrix-product map needs 1..{MAX_TERMS} terms, got {len(terms)}")
            for i, t in enumerate(terms):
                if t.order < 2:
                    raise FiniteInformationError(
                        f"term {i} has K={t.order}; finite information requires K >= 2",
                        validate_term_shapes(t, 1),
                    )
        if isinstance(self.scale, str) and self.scale != "inv_sqrt_k":
            raise InvalidInputError(f"scale must be a number or 'inv_sqrt_k', got {self.scale!r}")

    # -- scale resolution

    def resolved_scale(self, k: int | None) -> float:
        """Numeric scale for a feature dimension ``k`` (``None`` in Gram mode)."""
        s = self.scale
        if s is None:
            s = "inv_sqrt_k" if self.kind == "softmax_quadratic" else 1.0
        if s == "inv_sqrt_k":
            return 1.0 / math.sqrt(k) if k else 1.0
        return float(s)

    # -- evaluation

    def __call__(self, y):
        k = ad.value(y).shape[0]
        s = self.resolved_scale(k)
        if self.kind == "softmax_quadratic":
            return eval_softmax_quadratic(y, self.a, s)
        if self.kind == "elementwise_quadratic":
            return eval_quadratic(y, self.a, self.nonlinearity, s)
        if self.kind == "matrix_product":
            return eval_matrix_product(y, self.terms, self.nonlinearity, s)
        if self.kind == "rbf_kernel":
            return eval_rbf(y, self.gamma)
        return eval_inner_product_kernel(y, self.nonlinearity, s)

    def from_gram(self, g):
        """Evaluate from a Gram matrix ``G = X^T X`` alone."""
        gv = ad.value(g)
        if gv.ndim != 2 or gv.shape[0] != gv.shape[1]:
            raise ShapeError(f"Gram matrix must be square, got {shape_str(gv)}")
        s = self.resolved_scale(None)
        if self.kind == "rbf_kernel":
            return _rbf_from_gram(g, self.gamma)
        if self.kind == "inner_product_kernel":
            return ad.activation(g if s == 1.0 else ad.scale(g, s), self.nonlinearity)
        if self.kind in ("softmax_quadratic", "elementwise_quadratic"):
            if ad.value(self.a).shape != (1, 1):
                raise FiniteInformationError(
                    f"{self.kind} in Gram mode needs a 1x1 weight (a multiple of the identity), "
                    f"got {shape_str(ad.value(self.a))}"
                )
            logits = ad.scale(ad.scale(g, self.a), s)
            if self.kind == "softmax_quadratic":
                return ad.transpose(ad.softmax_rows(logits))
            return ad.activation(logits, self.nonlinearity)
        total = None
        for i, term in enumerate(self.terms):
            t = _gram_term(g, term, i)
            total = t if total is None else ad.add(total, t)
        if s != 1.0:
            total = ad.scale(total, s)
        return ad.activation(total, self.nonlinearity)

    # -- parameters

    def named_params(self) -> dict:
        out = {}
        if self.kind in ("softmax_quadratic", "elementwise_quadratic"):
            out["a"] = self.a
        elif self.kind == "matrix_product":
            for i, t in enumerate(self.terms):
                for j, w in enumerate(t.weights):
                    if not _is_scalar(w):
                        out[f"terms.{i}.w{j}"] = w
        return out

    def with_params(self, params: dict) -> "CoefficientMap":
        if not params:
            return self
        if self.kind in ("softmax_quadratic", "elementwise_quadratic"):
            return replace(self, a=params.get("a", self.a))
        if self.kind == "matrix_product":
            terms = []
            for i, t in enumerate(self.terms):
                ws = tuple(params.get(f"terms.{i}.w{j}", w) for j, w in enumerate(t.weights))
                terms.append(TermSpec(t.pattern, ws))
            return replace(self, terms=tuple(terms))
        return self

    # -- JSON

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind, "nonlinearity": self.nonlinearity}
        if self.scale is not None:
            out["scale"] = self.scale
        params: dict = {}
        if self.kind in ("softmax_quadratic", "elementwise_quadratic"):
            params["a"] = matrix_to_json(ad.value(self.a))
        elif self.kind == "matrix_product":
            params["terms"] = [
                {
                    "pattern": list(t.pattern),
                    "weights": [w if _is_scalar(w) else matrix_to_json(ad.value(w)) for w in t.weights],
                }
                for t in self.terms
            ]
        elif self.kind == "rbf_kernel":
            params["gamma"] = self.gamma
        out["params"] = params
        return out

    @classmethod
    def from_json(cls, obj, path: str = "") -> "CoefficientMap":
        if not isinstance(obj, dict):
            raise SchemaError("expected a coefficient-map object", path)
        kind = obj.get("kind")
        if kind not in KINDS:
            raise SchemaError(f"kind must be one of {list(KINDS)}, got {kind!r}", f"{path}.kind")
        nonlinearity = obj.get("nonlinearity", "identity")
        if nonlinearity not in ad.ACTIVATIONS:
            raise SchemaError(f"nonlinearity must be one of {list(ad.ACTIVATIONS)}", f"{path}.nonlinearity")
        scale = obj.get("scale")
        if scale is not None and scale != "inv_sqrt_k" and not (
            isinstance(scale, (int, float)) and not isinstance(scale, bool)
        ):
            raise SchemaError("scale must be a number or 'inv_sqrt_k'", f"{path}.scale")
        params = obj.get("params", {})
        if not isinstance(params, dict):
            raise SchemaError("params must be an object", f"{path}.params")
        kwargs: dict = {}
        if kind in ("softmax_quadratic", "elementwise_quadratic"):
            if "a" not in params:
                raise SchemaError("missing weight matrix 'a'", f"{path}.params")
            kwargs["a"] = matrix_from_json(params["a"], f"{path}.params.a")
        elif kind == "matrix_product":
            raw = params.get("terms")
            if not isinstance(raw, list) or not raw:
                raise SchemaError("matrix_product needs a non-empty 'terms' list", f"{path}.params.terms")
            if len(raw) > MAX_TERMS:
                raise SchemaError(f"at most {MAX_TERMS} terms allowed, got {len(raw)}", f"{path}.params.terms")
            terms = []
            for i, t in enumerate(raw):
                tp = f"{path}.params.terms[{i}]"
                if not isinstance(t, dict) or not isinstance(t.get("pattern"), list):
                    raise SchemaError("term needs a 'pattern' list", tp)
                ws = []
                for j, w in enumerate(t.get("weights") or [None] * (len(t["pattern"]) + 1)):
                    if w is None or (isinstance(w, (int, float)) and not isinstance(w, bool)):
                        ws.append(w)
                    else:
                        ws.append(matrix_from_json(w, f"{tp}.weights[{j}]"))
                try:
                    terms.append(TermSpec(tuple(t["pattern"]), tuple(ws)))
                except InvalidInputError as exc:
                    raise SchemaError(str(exc), tp) from None
            kwargs["terms"] = tuple(terms)
        elif kind == "rbf_kernel":
            kwargs["gamma"] = params.get("gamma")
        try:
            return cls(kind=kind, scale=scale, nonlinearity=nonlinearity, **kwargs)
        except (InvalidInputError, FiniteInformationError) as exc:
            raise SchemaError(str(exc), path) from None


def _gram_term(g, term: TermSpec, index: int):
    K = term.order
    alternating = K % 2 == 0 and all(
        p == (TRANSPOSED if j % 2 == 0 else AS_IS) for j, p in enumerate(term.pattern)
    )
    weights_ok = all(_is_scalar(w) or np.shape(ad.value(w)) == (1, 1) for w in term.weights)
    if not (alternating and weights_ok):
        raise FiniteInformationError(
            f"term {index} is not expressible from a Gram matrix; Gram mode needs the pattern "
            "(T, A, T, A, ...) with scalar or 1x1 weights"
        )
    coef = 1.0
    acc = g
    for w in term.weights:
        if _is_scalar(w):
            coef *= _scalar(w)
        else:
            acc = ad.scale(acc, w)
    for _ in range(K // 2 - 1):
        acc = ad.matmul(acc, g)
    return acc if coef == 1.0 else ad.scale(acc, coef)
