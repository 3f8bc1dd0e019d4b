"""Numerical auditors for the three symmetries, plus gradient checking.

Every trial draws its own child seed from the audit seed (see
:func:`equiseq.tensor.child_seed`), so a report's ``worst_seed`` reproduces the
worst trial on its own via :func:`run_trial`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor
from .errors import InvalidInputError
from .layers import ModelSpec, backward, forward
from .tensor import Rng, child_seed, max_abs

ORTHOGONAL_EMBEDDING = "orthogonal_embedding"
ORTHOGONAL_WITH_KNOWLEDGE = "orthogonal_with_knowledge"
ELEMENTWISE_PERMUTATION = "elementwise_permutation"
SYMMETRIES = (ORTHOGONAL_EMBEDDING, ORTHOGONAL_WITH_KNOWLEDGE, ELEMENTWISE_PERMUTATION)
DISTRIBUTIONS = ("gaussian", "one_hot", "unit_sphere")


def _interval(value, name):
    if isinstance(value, int):
        value = (value, value)
    lo, hi = (int(v) for v in value)
    if not 1 <= lo <= hi:
        raise InvalidInputError(f"{name} range must satisfy 1 <= lo <= hi, got {value}")
    return lo, hi


@dataclass(frozen=True)
class AuditConfig:
    d: tuple = (2, 8)
    n: tuple = (1, 8)
    k: tuple = (2, 4)
    trials: int = 100
    tol: float = 1e-9
    seed: int = 0
    distribution: str = "gaussian"

    def __post_init__(self):
        for name in ("d", "n", "k"):
            object.__setattr__(self, name, _interval(getattr(self, name), name))
        if int(self.trials) < 1:
            raise InvalidInputError(f"trials must be >= 1, got {self.trials}")
        if not self.tol > 0:
            raise InvalidInputError(f"tol must be > 0, got {self.tol}")
        if self.distribution not in DISTRIBUTIONS:
            raise InvalidInputError(f"distribution must be one of {DISTRIBUTIONS}")


@dataclass
class AuditReport:
    symmetry: str
    residual_max: float
    residual_mean: float
    trials: int
    worst_seed: int
    tolerance: float
    errors: list = field(default_factory=list)
    details: dict | None = None

    @property
    def passed(self) -> bool:
        return self.residual_max <= self.tolerance

    def to_json(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else None

        out = {
            "symmetry": self.symmetry,
            "residual_max": num(self.residual_max),
            "residual_mean": num(self.residual_mean),
            "trials": self.trials,
            "worst_seed": self.worst_seed,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }
        if self.errors:
            out["errors"] = self.errors
        if self.details is not None:
            out["details"] = self.details
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def sample_input(rng: Rng, d: int, n: int, distribution: str = "gaussian") -> np.ndarray:
    if distribution == "gaussian":
        return rng.normal((d, n))
    if distribution == "unit_sphere":
        x = rng.normal((d, n))
        norms = np.linalg.norm(x, axis=0)
        norms[norms == 0.0] = 1.0
        return x / norms
    if distribution == "one_hot":
        x = np.zeros((d, n))
        for j in range(n):
            x[rng.integer(0, d - 1), j] = 1.0
        return x
    raise InvalidInputError(f"unknown input distribution {distribution!r}")


def _trial_residual(symmetry: str, f, cfg: AuditConfig, seed: int) -> float:
    rng = Rng(seed)
    d = rng.integer(*cfg.d)
    n = rng.integer(*cfg.n)
    x = sample_input(rng, d, n, cfg.distribution)
    if symmetry == ELEMENTWISE_PERMUTATION:
        p = tensor.random_permutation(n, rng)
        fx = np.asarray(f(x))
        fxp = np.asarray(f(x @ p))
        if fx.shape[1] != n or fxp.shape != fx.shape:
            raise InvalidInputError(f"output length {fx.shape[1]} differs from input length {n}")
        return max_abs(fxp - fx @ p)
    q = tensor.random_orthogonal(d, rng)
    fx = np.asarray(f(x))
    if symmetry == ORTHOGONAL_EMBEDDING:
        fqx = np.asarray(f(q @ x))
    else:
        fqx = np.asarray(f.rotated(q)(q @ x))
    if fqx.shape != fx.shape:
        raise InvalidInputError(f"output shapes differ: {fqx.shape} vs {fx.shape}")
    return max_abs(fqx - q @ fx)


def run_trial(symmetry: str, f, cfg: AuditConfig, seed: int) -> float:
    """Residual of the single trial drawn from ``seed``."""
    if symmetry not in SYMMETRIES:
        raise InvalidInputError(f"unknown symmetry {symmetry!r}")
    return _trial_residual(symmetry, f, cfg, seed)


def _audit(symmetry: str, f, cfg: AuditConfig) -> AuditReport:
    residuals = []
    errors = []
    worst, worst_seed = -1.0, child_seed(cfg.seed, 0)
    for t in range(cfg.trials):
        seed = child_seed(cfg.seed, t)
        try:
            r = _trial_residual(symmetry, f, cfg, seed)
            if not math.isfinite(r):
                raise FloatingPointError("non-finite residual")
        except Exception as exc:  # a crashing map is a failed trial, not a crashed audit
            errors.append({"seed": seed, "message": f"{type(exc).__name__}: {exc}"})
            r = math.inf
        residuals.append(r)
        if r > worst:
            worst, worst_seed = r, seed
    return AuditReport(
        symmetry=symmetry,
        residual_max=max(residuals),
        residual_mean=math.fsum(residuals) / len(residuals),
        trials=cfg.trials,
        worst_seed=worst_seed,
        tolerance=cfg.tol,
        errors=errors,
    )


def audit_orthogonal(f: Callable, cfg: AuditConfig) -> AuditReport:
    """Residuals ``|f(QX) - Q f(X)|_max`` over random ``X`` and orthogonal ``Q``."""
    return _audit(ORTHOGONAL_EMBEDDING, f, cfg)


def audit_orthogonal_with_knowledge(f, cfg: AuditConfig) -> AuditReport:
    """Residuals ``|f(QX, QZ) - Q f(X, Z)|_max``.

    ``f`` must be callable on ``X`` and provide ``f.rotated(Q)``, the same map
    with its knowledge (or weights) transformed by ``Q``.
    """
    if not hasattr(f, "rotated"):
        raise InvalidInputError("audit_orthogonal_with_knowledge needs a map with a rotated(q) method")
    return _audit(ORTHOGONAL_WITH_KNOWLEDGE, f, cfg)


def audit_permutation(f: Callable, cfg: AuditConfig) -> AuditReport:
    """Residuals ``|f(XP) - f(X) P|_max`` over random permutation matrices ``P``."""
    return _audit(ELEMENTWISE_PERMUTATION, f, cfg)


def run_audit(symmetry: str, f, cfg: AuditConfig) -> AuditReport:
    if symmetry not in SYMMETRIES:
        raise InvalidInputError(f"unknown symmetry {symmetry!r}")
    if symmetry == ORTHOGONAL_WITH_KNOWLEDGE:
        return audit_orthogonal_with_knowledge(f, cfg)
    return _audit(symmetry, f, cfg)


# --------------------------------------------------------------------------
# the arithmetic counterexample

VOCABULARY = ("+", "-") + tuple(str(i) for i in range(10))


class ArithmeticTask:
    """Single-digit ``a+b`` / ``a-b`` evaluated in a fixed one-hot embedding.

    Token ``VOCABULARY[i]`` embeds as the basis vector ``e_{i+1}`` of R^12.
    Only expressions with a single-digit non-negative result are defined.
    """

    vocabulary = VOCABULARY
    dim = len(VOCABULARY)

    def __init__(self):
        self.rules: dict[tuple[str, str, str], str] = {}
        for a in range(10):
            for b in range(10):
                if a + b <= 9:
                    self.rules[(str(a), "+", str(b))] = str(a + b)
                if a - b >= 0:
                    self.rules[(str(a), "-", str(b))] = str(a - b)

    def embed(self, tokens) -> np.ndarray:
        x = np.zeros((self.dim, len(tokens)))
        for j, t in enumerate(tokens):
            if t not in self.vocabulary:
                raise InvalidInputError(f"token {t!r} not in the vocabulary")
            x[self.vocabulary.index(t), j] = 1.0
        return x

    def decode(self, x) -> list[str]:
        x = np.asarray(x)
        tokens = []
        for j in range(x.shape[1]):
            col = x[:, j]
            i = int(np.argmax(col))
            if col[i] != 1.0 or np.count_nonzero(col) != 1:
                raise InvalidInputError(f"column {j} is not a one-hot embedding")
            tokens.append(self.vocabulary[i])
        return tokens

    def __call__(self, x) -> np.ndarray:
        expr = tuple(self.decode(x))
        if expr not in self.rules:
            raise InvalidInputError(f"expression {''.join(expr)!r} is outside the rule table")
        return self.embed([self.rules[expr]])


def swap_first_two(d: int = 12) -> np.ndarray:
    """The orthogonal map exchanging the first two coordinates."""
    q = np.eye(d)
    q[[0, 1]] = q[[1, 0]]
    return q


def arithmetic_counterexample(tol: float = 1e-2) -> AuditReport:
    """Evaluate ``f("2+1")`` and ``f(Q12 "2+1") = f("2-1")`` against ``Q12 f("2+1")``."""
    task = ArithmeticTask()
    x = task.embed(["2", "+", "1"])
    q = swap_first_two(task.dim)
    fx = task(x)
    fqx = task(q @ x)
    residual = max_abs(fqx - q @ fx)
    details = {
        "input": "".join(task.decode(x)),
        "output": "".join(task.decode(fx)),
        "swapped_input": "".join(task.decode(q @ x)),
        "swapped_output": "".join(task.decode(fqx)),
        "equivariant_prediction": "".join(task.decode(q @ fx)),
    }
    return AuditReport(
        symmetry=ORTHOGONAL_EMBEDDING,
        residual_max=residual,
        residual_mean=residual,
        trials=1,
        worst_seed=0,
        tolerance=tol,
        details=details,
    )


# --------------------------------------------------------------------------
# gradient checking


def half_squared_error(out, target) -> tuple[float, np.ndarray]:
    """``0.5 |out - target|^2`` and its gradient with respect to ``out``."""
    r = np.asarray(out) - np.asarray(target)
    return 0.5 * float(np.sum(r * r)), r


LOSSES = {"half_squared_error": half_squared_error}


def relative_error(a, b, floor: float = 1e-8) -> float:
    """``|a - b| / max(|a|, |b|, floor)`` in the Frobenius norm."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def numeric_gradient(loss_of: Callable[[np.ndarray], float], w: np.ndarray, step: float) -> np.ndarray:
    """Central differences of ``loss_of`` around ``w``, entry by entry."""
    w = np.array(w, dtype=np.float64)
    grad = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        orig = w[idx]
        w[idx] = orig + step
        plus = loss_of(w)
        w[idx] = orig - step
        minus = loss_of(w)
        w[idx] = orig
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter: dict
    trials: int
    tolerance: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_relative_error < self.tolerance

    def to_json(self) -> dict:
        return {
            "max_relative_error": self.max_relative_error,
            "per_parameter": self.per_parameter,
            "trials": self.trials,
            "tolerance": self.tolerance,
            "failures": self.failures,
            "pass": self.passed,
        }


def grad_check(
    model: ModelSpec,
    loss: str = "half_squared_error",
    target=None,
    trials: int = 10,
    step: float = 1e-5,
    tol: float = 1e-6,
    seed: int = 0,
    n: int = 4,
) -> GradCheckReport:
    """Compare tape gradients with central finite differences.

    Each trial draws a Gaussian input (and a Gaussian target unless
    ``target`` is given) from its own child seed.
    """
    loss_fn = LOSSES[loss]
    if target is not None:
        n = np.shape(target)[1]
    params = model.parameters()
    per_param: dict[str, float] = {name: 0.0 for name in params}
    failures = []
    for t in range(trials):
        rng = Rng(child_seed(seed, t))
        x = rng.normal((model.d, n))
        tgt = rng.normal((model.out_dim, n)) if target is None else np.asarray(target, dtype=np.float64)
        out, tape = forward(model, x)
        _, dout = loss_fn(out, tgt)
        analytic = backward(tape, dout)
        for name, w in params.items():
            a = analytic[name]
            if not np.all(np.isfinite(a)):
                failures.append({"parameter": name, "trial": t, "message": "non-finite analytic gradient"})
                continue

            def loss_of(wp, name=name):
                return loss_fn(model.with_params({**params, name: wp})(x), tgt)[0]

            num = numeric_gradient(loss_of, w, step)
            err = relative_error(a, num)
            per_param[name] = max(per_param[name], err)
    worst = max(per_param.values(), default=0.0)
    return GradCheckReport(worst, per_param, trials, tol, failures)
