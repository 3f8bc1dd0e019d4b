"""Attention layers, output transforms and the deep stack.

All layer maths goes through :mod:`equiseq.autodiff` ops, so a layer whose
weights have been swapped for tape nodes (``layer.with_params(nodes)``) is
differentiated by the same code that evaluates it.

Layer JSON kinds: ``single_head``, ``multi_head``, ``output_linear``,
``output_mlp``, ``multihead_form`` and ``generic_form``.  Every layer also
takes ``residual`` (adds the layer input) and an optional ``bias`` column.
The bias is a fixed offset in the embedding frame: rotations never touch it,
which is exactly what makes it a useful broken fixture for audits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import ClassVar

import numpy as np

from . import autodiff as ad
from .coefficients import CoefficientMap
from .errors import InvalidInputError, SchemaError, ShapeError
from .forms import Form1Map, Form2Map, form_from_json, form_to_json
from .tensor import matrix_from_json, matrix_to_json, shape_str

SCHEMA = "equiseq/1"


def _shape(w):
    return ad.value(w).shape


def _prefixed(prefix: str, params: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in params.items()}


def _sub(prefix: str, params: dict) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


# --------------------------------------------------------------------------
# heads and the raw layer functions


@dataclass(frozen=True, eq=False)
class AttentionHead:
    """``W_Q, W_K`` (``d1 x d``), ``W_V`` (``d2 x d``), optional ``W_out`` (``d x d2``)."""

    wq: object
    wk: object
    wv: object
    wout: object = None

    def __post_init__(self):
        q, k, v = _shape(self.wq), _shape(self.wk), _shape(self.wv)
        if len(q) != 2 or q != k:
            raise ShapeError(f"attention head: wq {shape_str(ad.value(self.wq))} and wk {shape_str(ad.value(self.wk))} must match")
        if len(v) != 2 or v[1] != q[1]:
            raise ShapeError(f"attention head: wv {shape_str(ad.value(self.wv))} must have {q[1]} columns")
        if self.wout is not None:
            o = _shape(self.wout)
            if len(o) != 2 or o != (q[1], v[0]):
                raise ShapeError(
                    f"attention head: wout must be {q[1]}x{v[0]}, got {shape_str(ad.value(self.wout))}"
                )
        elif v[0] != q[1]:
            raise ShapeError(f"attention head without wout needs a square wv ({q[1]}x{q[1]}), got {v[0]}x{v[1]}")

    @property
    def d(self) -> int:
        return _shape(self.wq)[1]

    @property
    def d1(self) -> int:
        return _shape(self.wq)[0]

    @property
    def d2(self) -> int:
        return _shape(self.wv)[0]

    def named_params(self) -> dict:
        out = {"wq": self.wq, "wk": self.wk, "wv": self.wv}
        if self.wout is not None:
            out["wout"] = self.wout
        return out

    def with_params(self, params: dict) -> "AttentionHead":
        return replace(self, **{k: params[k] for k in ("wq", "wk", "wv", "wout") if k in params})

    def rotated(self, q) -> "AttentionHead":
        qt = q.T
        wq, wk, wv = (ad.value(w) for w in (self.wq, self.wk, self.wv))
        if self.wout is None:
            return AttentionHead(wq @ qt, wk @ qt, q @ wv @ qt)
        return AttentionHead(wq @ qt, wk @ qt, wv @ qt, q @ ad.value(self.wout))

    def to_json(self) -> dict:
        out = {k: matrix_to_json(ad.value(v)) for k, v in self.named_params().items()}
        return out

    @classmethod
    def from_json(cls, obj, path: str) -> "AttentionHead":
        if not isinstance(obj, dict):
            raise SchemaError("expected an attention head object", path)
        mats = {}
        for key in ("wq", "wk", "wv"):
            if key not in obj:
                raise SchemaError(f"missing '{key}'", path)
            mats[key] = matrix_from_json(obj[key], f"{path}.{key}")
        if obj.get("wout") is not None:
            mats["wout"] = matrix_from_json(obj["wout"], f"{path}.wout")
        try:
            return cls(**mats)
        except ShapeError as exc:
            raise SchemaError(str(exc), path) from None


def attention_head(head: AttentionHead, x, scale: float | None = None):
    """``W_V X S_r(scale X^T W_Q^T W_K X)^T`` (then ``W_out`` if the head has one)."""
    xv = ad.value(x)
    if xv.ndim != 2 or xv.shape[0] != head.d:
        raise ShapeError(f"attention head expects {head.d} rows, got X {shape_str(xv)}")
    if scale is None:
        scale = 1.0 / math.sqrt(head.d1)
    logits = ad.scale(ad.matmul(ad.transpose(ad.matmul(head.wq, x)), ad.matmul(head.wk, x)), scale)
    weights = ad.transpose(ad.softmax_rows(logits))
    out = ad.matmul(ad.matmul(head.wv, x), weights)
    if head.wout is not None:
        out = ad.matmul(head.wout, out)
    return out


def single_head(head: AttentionHead, x, residual: bool = True, scale: float | None = None):
    """Single-head self-attention ``X + W_V X S_r(X^T W_Q^T W_K X / sqrt(d1))^T``."""
    out = attention_head(head, x, scale)
    if residual:
        if _shape(out) != ad.value(x).shape:
            raise ShapeError("single_head: residual needs d2 == d")
        out = ad.add(x, out)
    return out


def multi_head(heads, x, residual: bool = True, scale: float | None = None):
    """``X + sum_i W_out_i head_i(X)``."""
    heads = list(heads)
    if not heads:
        raise ShapeError("multi_head: need at least one head")
    d = heads[0].d
    for i, h in enumerate(heads):
        if h.d != d:
            raise ShapeError(f"multi_head: head {i} has d={h.d}, head 0 has d={d}")
    total = None
    for h in heads:
        t = attention_head(h, x, scale)
        total = t if total is None else ad.add(total, t)
    if residual:
        total = ad.add(x, total)
    return total


def _simplified(x, z, g):
    return Form2Map(z=z, g1=g, simplified=True)(x)


def output_linear(w, x, z, g):
    """``W X g(Z^T X)``."""
    return ad.matmul(w, _simplified(x, z, g))


def output_mlp(u, v, activation: str, x, z, g):
    """``V sigma(U X g(Z^T X))`` with ``sigma`` applied entrywise."""
    return ad.matmul(v, ad.activation(ad.matmul(u, _simplified(x, z, g)), activation))


@dataclass(frozen=True, eq=False)
class FormHead:
    """One ``(W_i, Z_i, g_i)`` summand of a multihead form."""

    w: object
    z: object
    g: CoefficientMap

    def named_params(self) -> dict:
        return {"w": self.w, "z": self.z, **_prefixed("g", self.g.named_params())}

    def with_params(self, params: dict) -> "FormHead":
        return FormHead(params.get("w", self.w), params.get("z", self.z), self.g.with_params(_sub("g", params)))

    def rotated(self, q) -> "FormHead":
        return FormHead(q @ ad.value(self.w) @ q.T, q @ ad.value(self.z), self.g)


def multihead_form(forms, x):
    """``sum_i W_i X g_i(Z_i^T X)``."""
    forms = list(forms)
    if not forms:
        raise ShapeError("multihead_form: need at least one head")
    total = None
    for i, f in enumerate(forms):
        t = output_linear(f.w, x, f.z, f.g)
        if total is not None and _shape(t) != _shape(total):
            raise ShapeError(f"multihead_form: head {i} output {shape_str(ad.value(t))} differs from head 0")
        total = t if total is None else ad.add(total, t)
    return total


# --------------------------------------------------------------------------
# layers


@dataclass(frozen=True, eq=False)
class Layer:
    residual: bool = field(default=False, kw_only=True)
    bias: object = field(default=None, kw_only=True)

    kind: ClassVar[str] = ""

    # subclasses provide: in_dim, out_dim, _core, _core_params, _with_core, _rotated_core, _core_json

    def __call__(self, x):
        out = self._core(x)
        if self.residual:
            if _shape(out) != ad.value(x).shape:
                raise ShapeError(f"{self.kind}: residual needs output shape {shape_str(ad.value(x))}, got {shape_str(ad.value(out))}")
            out = ad.add(x, out)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out

    def check(self):
        if self.bias is not None and _shape(self.bias) != (self.out_dim, 1):
            raise ShapeError(f"{self.kind}: bias must be {self.out_dim}x1, got {shape_str(ad.value(self.bias))}")
        if self.residual and self.in_dim is not None and self.in_dim != self.out_dim:
            raise ShapeError(f"{self.kind}: residual needs in_dim == out_dim ({self.in_dim} vs {self.out_dim})")

    def named_params(self) -> dict:
        out = dict(self._core_params())
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def with_params(self, params: dict) -> "Layer":
        layer = self._with_core(params)
        if "bias" in params:
            layer = replace(layer, bias=params["bias"])
        return layer

    def rotated(self, q) -> "Layer":
        """Jointly transform every embedding-space weight by the orthogonal ``q``."""
        if self.in_dim is not None and self.in_dim != self.out_dim:
            raise ShapeError(f"{self.kind}: rotation needs a layer that stays in the embedding space")
        return self._rotated_core(np.asarray(q))

    def to_json(self) -> dict:
        out = {"kind": self.kind, "residual": self.residual, **self._core_json()}
        if self.bias is not None:
            out["bias"] = matrix_to_json(ad.value(self.bias))
        return out


@dataclass(frozen=True, eq=False)
class SingleHeadLayer(Layer):
    head: AttentionHead = None
    scale: float | None = None
    kind: ClassVar[str] = "single_head"

    def __post_init__(self):
        if self.head.wout is None and self.head.d2 != self.head.d:
            raise ShapeError("single_head: wv must be d x d")
        self.check()

    @property
    def in_dim(self):
        return self.head.d

    @property
    def out_dim(self):
        return self.head.d if self.head.wout is not None else self.head.d2

    def _core(self, x):
        return attention_head(self.head, x, self.scale)

    def _core_params(self):
        return _prefixed("head", self.head.named_params())

    def _with_core(self, params):
        return replace(self, head=self.head.with_params(_sub("head", params)))

    def _rotated_core(self, q):
        return replace(self, head=self.head.rotated(q))

    def _core_json(self):
        return {"scale": self.scale, "head": self.head.to_json()}


@dataclass(frozen=True, eq=False)
class MultiHeadLayer(Layer):
    heads: tuple = ()
    scale: float | None = None
    kind: ClassVar[str] = "multi_head"

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        if not self.heads:
            raise ShapeError("multi_head: need at least one head")
        for i, h in enumerate(self.heads):
            if h.wout is None:
                raise ShapeError(f"multi_head: head {i} needs an output matrix wout")
            if h.d != self.heads[0].d:
                raise ShapeError(f"multi_head: head {i} has d={h.d}, head 0 has d={self.heads[0].d}")
        self.check()

    @property
    def in_dim(self):
        return self.heads[0].d

    @property
    def out_dim(self):
        return self.heads[0].d

    def _core(self, x):
        return multi_head(self.heads, x, residual=False, scale=self.scale)

    def _core_params(self):
        out = {}
        for i, h in enumerate(self.heads):
            out.update(_prefixed(f"heads.{i}", h.named_params()))
        return out

    def _with_core(self, params):
        return replace(self, heads=tuple(h.with_params(_sub(f"heads.{i}", params)) for i, h in enumerate(self.heads)))

    def _rotated_core(self, q):
        return replace(self, heads=tuple(h.rotated(q) for h in self.heads))

    def _core_json(self):
        return {"scale": self.scale, "heads": [h.to_json() for h in self.heads]}


def _check_form_dims(w, z, what):
    ws, zs = _shape(w), _shape(z)
    if len(ws) != 2 or len(zs) != 2 or ws[1] != zs[0]:
        raise ShapeError(f"{what}: w {shape_str(ad.value(w))} must act on the embedding of z {shape_str(ad.value(z))}")


@dataclass(frozen=True, eq=False)
class OutputLinearLayer(Layer):
    w: object = None
    z: object = None
    g: CoefficientMap = None
    kind: ClassVar[str] = "output_linear"

    def __post_init__(self):
        _check_form_dims(self.w, self.z, self.kind)
        self.check()

    @property
    def in_dim(self):
        return _shape(self.z)[0]

    @property
    def out_dim(self):
        return _shape(self.w)[0]

    def _core(self, x):
        return output_linear(self.w, x, self.z, self.g)

    def _core_params(self):
        return {"w": self.w, "z": self.z, **_prefixed("g", self.g.named_params())}

    def _with_core(self, params):
        return replace(
            self, w=params.get("w", self.w), z=params.get("z", self.z), g=self.g.with_params(_sub("g", params))
        )

    def _rotated_core(self, q):
        return replace(self, w=q @ ad.value(self.w) @ q.T, z=q @ ad.value(self.z))

    def _core_json(self):
        return {"w": matrix_to_json(ad.value(self.w)), "z": matrix_to_json(ad.value(self.z)), "g": self.g.to_json()}


@dataclass(frozen=True, eq=False)
class OutputMlpLayer(Layer):
    u: object = None
    v: object = None
    z: object = None
    g: CoefficientMap = None
    activation: str = "tanh"
    kind: ClassVar[str] = "output_mlp"

    def __post_init__(self):
        _check_form_dims(self.u, self.z, self.kind)
        us, vs = _shape(self.u), _shape(self.v)
        if len(vs) != 2 or vs[1] != us[0]:
            raise ShapeError(f"output_mlp: v {shape_str(ad.value(self.v))} must have {us[0]} columns")
        if self.activation not in ad.ACTIVATIONS:
            raise InvalidInputError(f"output_mlp: unknown activation {self.activation!r}")
        self.check()

    @property
    def in_dim(self):
        return _shape(self.z)[0]

    @property
    def out_dim(self):
        return _shape(self.v)[0]

    def _core(self, x):
        return output_mlp(self.u, self.v, self.activation, x, self.z, self.g)

    def _core_params(self):
        return {"u": self.u, "v": self.v, "z": self.z, **_prefixed("g", self.g.named_params())}

    def _with_core(self, params):
        return replace(
            self,
            u=params.get("u", self.u),
            v=params.get("v", self.v),
            z=params.get("z", self.z),
            g=self.g.with_params(_sub("g", params)),
        )

    def _rotated_core(self, q):
        return replace(self, u=ad.value(self.u) @ q.T, v=q @ ad.value(self.v), z=q @ ad.value(self.z))

    def _core_json(self):
        return {
            "u": matrix_to_json(ad.value(self.u)),
            "v": matrix_to_json(ad.value(self.v)),
            "z": matrix_to_json(ad.value(self.z)),
            "g": self.g.to_json(),
            "activation": self.activation,
        }


@dataclass(frozen=True, eq=False)
class MultiheadFormLayer(Layer):
    forms: tuple = ()
    kind: ClassVar[str] = "multihead_form"

    def __post_init__(self):
        object.__setattr__(self, "forms", tuple(self.forms))
        if not self.forms:
            raise ShapeError("multihead_form: need at least one head")
        for i, f in enumerate(self.forms):
            _check_form_dims(f.w, f.z, f"{self.kind} head {i}")
            if _shape(f.w) != _shape(self.forms[0].w) or _shape(f.z)[0] != _shape(self.forms[0].z)[0]:
                raise ShapeError(f"multihead_form: head {i} shapes differ from head 0")
        self.check()

    @property
    def in_dim(self):
        return _shape(self.forms[0].z)[0]

    @property
    def out_dim(self):
        return _shape(self.forms[0].w)[0]

    def _core(self, x):
        return multihead_form(self.forms, x)

    def _core_params(self):
        out = {}
        for i, f in enumerate(self.forms):
            out.update(_prefixed(f"forms.{i}", f.named_params()))
        return out

    def _with_core(self, params):
        return replace(self, forms=tuple(f.with_params(_sub(f"forms.{i}", params)) for i, f in enumerate(self.forms)))

    def _rotated_core(self, q):
        return replace(self, forms=tuple(f.rotated(q) for f in self.forms))

    def _core_json(self):
        return {
            "forms": [
                {"w": matrix_to_json(ad.value(f.w)), "z": matrix_to_json(ad.value(f.z)), "g": f.g.to_json()}
                for f in self.forms
            ]
        }


@dataclass(frozen=True, eq=False)
class GenericFormLayer(Layer):
    form: Form1Map | Form2Map = None
    kind: ClassVar[str] = "generic_form"

    def __post_init__(self):
        if not isinstance(self.form, (Form1Map, Form2Map)):
            raise InvalidInputError("generic_form needs a Form1Map or Form2Map")
        if self.bias is not None and self.in_dim is None:
            raise ShapeError("generic_form: a bias needs a known embedding dimension (use form2)")
        self.check()

    @property
    def in_dim(self):
        return self.form.d if isinstance(self.form, Form2Map) else None

    @property
    def out_dim(self):
        return self.in_dim

    def _core(self, x):
        return self.form(x)

    def _core_params(self):
        return _prefixed("form", self.form.named_params())

    def _with_core(self, params):
        return replace(self, form=self.form.with_params(_sub("form", params)))

    def _rotated_core(self, q):
        return replace(self, form=self.form.rotated(q))

    def _core_json(self):
        return {"form": form_to_json(self.form)}


LAYER_KINDS = {
    cls.kind: cls
    for cls in (SingleHeadLayer, MultiHeadLayer, OutputLinearLayer, OutputMlpLayer, MultiheadFormLayer, GenericFormLayer)
}


# --------------------------------------------------------------------------
# the model


@dataclass(frozen=True, eq=False)
class ModelSpec:
    d: int
    layers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not isinstance(self.d, int) or self.d < 1:
            raise ShapeError(f"model: d must be a positive integer, got {self.d!r}")
        dim = self.d
        for l, layer in enumerate(self.layers):
            if layer.in_dim is not None and layer.in_dim != dim:
                raise ShapeError(f"layer {l} ({layer.kind}) expects dimension {layer.in_dim}, receives {dim}")
            dim = layer.out_dim if layer.out_dim is not None else dim

    @property
    def out_dim(self) -> int:
        dim = self.d
        for layer in self.layers:
            dim = layer.out_dim if layer.out_dim is not None else dim
        return dim

    def __call__(self, x):
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != self.d:
            raise ShapeError(f"model expects {self.d} rows, got input {shape_str(h)}")
        for layer in self.layers:
            h = layer(h)
        return h

    def named_params(self) -> dict:
        out = {}
        for l, layer in enumerate(self.layers):
            out.update(_prefixed(f"layers.{l}", layer.named_params()))
        return out

    def parameters(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(ad.value(v)) for k, v in self.named_params().items()}

    def with_params(self, params: dict) -> "ModelSpec":
        return ModelSpec(self.d, tuple(layer.with_params(_sub(f"layers.{l}", params)) for l, layer in enumerate(self.layers)))

    def rotated(self, q) -> "ModelSpec":
        return ModelSpec(self.d, tuple(layer.rotated(q) for layer in self.layers))

    def to_json(self) -> dict:
        return {"schema": SCHEMA, "d": self.d, "layers": [layer.to_json() for layer in self.layers]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def forward(model: ModelSpec, x):
    """Run the stack on ``x`` and return ``(h_L, tape)``.

    Every weight is registered on the tape as ``layers.<l>.<name>``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != model.d:
        raise ShapeError(f"forward: model expects {model.d} rows, got input {shape_str(x)}")
    tape = ad.Tape()
    h = x
    for l, layer in enumerate(model.layers):
        nodes = {name: tape.param(f"layers.{l}.{name}", ad.value(w)) for name, w in layer.named_params().items()}
        try:
            h = layer.with_params(nodes)(h)
        except ShapeError as exc:
            raise ShapeError(f"layer {l} ({layer.kind}): {exc}") from None
    if not isinstance(h, ad.Node):
        h = tape._record("input", h, (), None)
    tape.output = h
    return np.array(h.value), tape


def backward(tape: ad.Tape, loss_grad) -> dict[str, np.ndarray]:
    """Gradients of the scalar loss for every registered weight."""
    return tape.gradients(loss_grad)


# --------------------------------------------------------------------------
# JSON parsing


def _mat(obj, key, path):
    if key not in obj:
        raise SchemaError(f"missing '{key}'", path)
    return matrix_from_json(obj[key], f"{path}.{key}")


def _scale(obj, path):
    s = obj.get("scale")
    if s is not None and (isinstance(s, bool) or not isinstance(s, (int, float))):
        raise SchemaError("scale must be a number or null", f"{path}.scale")
    return None if s is None else float(s)


def layer_from_json(obj, path: str) -> Layer:
    if not isinstance(obj, dict):
        raise SchemaError("expected a layer object", path)
    kind = obj.get("kind")
    if kind not in LAYER_KINDS:
        raise SchemaError(f"kind must be one of {sorted(LAYER_KINDS)}, got {kind!r}", f"{path}.kind")
    residual = obj.get("residual", False)
    if not isinstance(residual, bool):
        raise SchemaError("residual must be a boolean", f"{path}.residual")
    common = {"residual": residual}
    if obj.get("bias") is not None:
        common["bias"] = matrix_from_json(obj["bias"], f"{path}.bias")
    try:
        if kind == "single_head":
            return SingleHeadLayer(head=AttentionHead.from_json(obj.get("head"), f"{path}.head"), scale=_scale(obj, path), **common)
        if kind == "multi_head":
            heads = obj.get("heads")
            if not isinstance(heads, list) or not heads:
                raise SchemaError("multi_head needs a non-empty 'heads' list", path)
            return MultiHeadLayer(
                heads=tuple(AttentionHead.from_json(h, f"{path}.heads[{i}]") for i, h in enumerate(heads)),
                scale=_scale(obj, path),
                **common,
            )
        if kind == "output_linear":
            return OutputLinearLayer(
                w=_mat(obj, "w", path), z=_mat(obj, "z", path), g=CoefficientMap.from_json(obj.get("g"), f"{path}.g"), **common
            )
        if kind == "output_mlp":
            act = obj.get("activation", "tanh")
            if act not in ad.ACTIVATIONS:
                raise SchemaError(f"activation must be one of {list(ad.ACTIVATIONS)}", f"{path}.activation")
            return OutputMlpLayer(
                u=_mat(obj, "u", path),
                v=_mat(obj, "v", path),
                z=_mat(obj, "z", path),
                g=CoefficientMap.from_json(obj.get("g"), f"{path}.g"),
                activation=act,
                **common,
            )
        if kind == "multihead_form":
            forms = obj.get("forms")
            if not isinstance(forms, list) or not forms:
                raise SchemaError("multihead_form needs a non-empty 'forms' list", path)
            heads = []
            for i, f in enumerate(forms):
                fp = f"{path}.forms[{i}]"
                if not isinstance(f, dict):
                    raise SchemaError("expected a form head object", fp)
                heads.append(FormHead(_mat(f, "w", fp), _mat(f, "z", fp), CoefficientMap.from_json(f.get("g"), f"{fp}.g")))
            return MultiheadFormLayer(forms=tuple(heads), **common)
        return GenericFormLayer(form=form_from_json(obj.get("form"), f"{path}.form"), **common)
    except (ShapeError, InvalidInputError) as exc:
        raise SchemaError(str(exc), path) from None


def model_from_json(obj) -> ModelSpec:
    if not isinstance(obj, dict):
        raise SchemaError("expected a model object")
    if obj.get("schema") != SCHEMA:
        raise SchemaError(f"schema must be {SCHEMA!r}, got {obj.get('schema')!r}", "schema")
    d = obj.get("d")
    if isinstance(d, bool) or not isinstance(d, int) or d < 1:
        raise SchemaError("d must be a positive integer", "d")
    raw = obj.get("layers")
    if not isinstance(raw, list):
        raise SchemaError("layers must be a list", "layers")
    layers = tuple(layer_from_json(layer, f"layers[{i}]") for i, layer in enumerate(raw))
    try:
        return ModelSpec(d, layers)
    except ShapeError as exc:
        raise SchemaError(str(exc), "layers") from None


def model_from_text(text: str) -> ModelSpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    return model_from_json(obj)
