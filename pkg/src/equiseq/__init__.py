"""Equivariant sequence-to-sequence maps, attention layers and symmetry audits."""

from .audit import (
    AuditConfig,
    AuditReport,
    arithmetic_counterexample,
    audit_orthogonal,
    audit_orthogonal_with_knowledge,
    audit_permutation,
    grad_check,
    run_audit,
)
from .coefficients import CoefficientMap, TermSpec, validate_term_shapes
from .errors import (
    DegenerateInputError,
    EquiseqError,
    FiniteInformationError,
    IllConditionedError,
    InvalidInputError,
    SchemaError,
    ShapeError,
    TapeError,
)
from .forms import Form1Map, Form2Map, apply_form1, apply_form2, attention_as_form2
from .layers import (
    AttentionHead,
    ModelSpec,
    backward,
    forward,
    model_from_json,
    multi_head,
    multihead_form,
    single_head,
)
from .tensor import Rng, random_orthogonal, random_permutation

__version__ = "0.1.0"

__all__ = [
    "AttentionHead",
    "AuditConfig",
    "AuditReport",
    "CoefficientMap",
    "DegenerateInputError",
    "EquiseqError",
    "FiniteInformationError",
    "Form1Map",
    "Form2Map",
    "IllConditionedError",
    "InvalidInputError",
    "ModelSpec",
    "Rng",
    "SchemaError",
    "ShapeError",
    "TapeError",
    "TermSpec",
    "apply_form1",
    "apply_form2",
    "arithmetic_counterexample",
    "attention_as_form2",
    "audit_orthogonal",
    "audit_orthogonal_with_knowledge",
    "audit_permutation",
    "backward",
    "forward",
    "grad_check",
    "model_from_json",
    "multi_head",
    "multihead_form",
    "random_orthogonal",
    "random_permutation",
    "run_audit",
    "single_head",
    "validate_term_shapes",
]
