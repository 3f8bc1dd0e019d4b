"""Toy sequence tasks and a full-batch gradient-descent trainer.

Inputs are Gaussian content vectors with two extra rows holding a sinusoidal
encoding of the column index, ``(sin(2 pi j / n), cos(2 pi j / n))``.  The
target keeps the positional rows and either copies or reverses the content
columns.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .audit import AuditConfig, audit_orthogonal_with_knowledge, audit_permutation, half_squared_error
from .errors import InvalidInputError, SchemaError
from .layers import (
    AttentionHead,
    ModelSpec,
    MultiHeadLayer,
    SingleHeadLayer,
    backward,
    forward,
    model_from_json,
    model_from_text,
)
from .tensor import Rng, child_seed

TASKS = ("copy", "reverse")
POS_DIM = 2
DATASET_SIZE = 64


def positional_rows(n: int) -> np.ndarray:
    j = np.arange(n)
    return np.vstack([np.sin(2.0 * np.pi * j / n), np.cos(2.0 * np.pi * j / n)])


def make_dataset(task: str, d: int, n: int, seed: int, size: int = DATASET_SIZE):
    """``size`` (input, target) pairs; inputs are ``(d + 2) x n``."""
    if task not in TASKS:
        raise InvalidInputError(f"task must be one of {TASKS}, got {task!r}")
    rng = Rng(seed)
    pos = positional_rows(n)
    data = []
    for _ in range(size):
        content = rng.normal((d, n))
        x = np.vstack([content, pos])
        moved = content if task == "copy" else content[:, ::-1]
        data.append((x, np.vstack([moved, pos])))
    return data


# --------------------------------------------------------------------------
# model construction from an architecture template


def init_model(d: int, layers: list, seed: int) -> ModelSpec:
    """Gaussian initialisation (std ``1/sqrt(d)``) of a list of layer templates.

    Supported templates::

        {"kind": "single_head", "d1": 4, "residual": true}
        {"kind": "multi_head", "heads": 2, "d1": 4, "d2": 4, "residual": false}
    """
    rng = Rng(seed)
    std = 1.0 / math.sqrt(d)
    built = []
    for i, t in enumerate(layers):
        path = f"architecture[{i}]"
        if not isinstance(t, dict):
            raise SchemaError("expected a layer template", path)
        kind = t.get("kind")
        d1 = int(t.get("d1", d))
        residual = bool(t.get("residual", False))
        if kind == "single_head":
            head = AttentionHead(rng.normal((d1, d), std), rng.normal((d1, d), std), rng.normal((d, d), std))
            built.append(SingleHeadLayer(head=head, residual=residual))
        elif kind == "multi_head":
            d2 = int(t.get("d2", d))
            heads = tuple(
                AttentionHead(
                    rng.normal((d1, d), std), rng.normal((d1, d), std), rng.normal((d2, d), std), rng.normal((d, d2), std)
                )
                for _ in range(int(t.get("heads", 2)))
            )
            built.append(MultiHeadLayer(heads=heads, residual=residual))
        else:
            raise SchemaError(f"template kind must be 'single_head' or 'multi_head', got {kind!r}", f"{path}.kind")
    return ModelSpec(d, tuple(built))


# --------------------------------------------------------------------------
# config and run record


@dataclass
class TrainConfig:
    task: str
    d: int
    n: int
    steps: int
    lr: float
    seed: int
    model: ModelSpec
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidInputError(f"task must be one of {TASKS}")
        if self.steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {self.steps}")
        if not self.lr > 0:
            raise InvalidInputError(f"lr must be > 0, got {self.lr}")
        if self.d < 1 or self.n < 1:
            raise InvalidInputError("d and n must be positive")
        if self.model.d != self.d + POS_DIM or self.model.out_dim != self.model.d:
            raise InvalidInputError(
                f"model must map dimension {self.d + POS_DIM} (content {self.d} + {POS_DIM} positional) "
                f"to itself; got {self.model.d} -> {self.model.out_dim}"
            )


def _require_int(obj, key, path=""):
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"'{key}' must be an integer", f"{path}{key}")
    return v


def config_from_json(obj, base_dir=None, seed_override: int | None = None) -> TrainConfig:
    """Parse a training config.

    The model is given either as ``"model"`` (a ModelSpec object, or a path to
    a ModelSpec JSON file relative to ``base_dir``) or as ``"architecture"``
    (a list of layer templates initialised from the seed).
    """
    from pathlib import Path

    if not isinstance(obj, dict):
        raise SchemaError("expected a training config object")
    if obj.get("schema") != "equiseq/1":
        raise SchemaError("schema must be 'equiseq/1'", "schema")
    task = obj.get("task")
    if task not in TASKS:
        raise SchemaError(f"task must be one of {list(TASKS)}", "task")
    d, n, steps = _require_int(obj, "d"), _require_int(obj, "n"), _require_int(obj, "steps")
    seed = _require_int(obj, "seed") if seed_override is None else seed_override
    if steps < 1:
        raise SchemaError("steps must be >= 1", "steps")
    if d < 1 or n < 1:
        raise SchemaError("d and n must be positive", "d")
    lr = obj.get("lr")
    if isinstance(lr, bool) or not isinstance(lr, (int, float)) or not lr > 0:
        raise SchemaError("lr must be a positive number", "lr")
    if "model" in obj:
        m = obj["model"]
        if isinstance(m, str):
            path = Path(base_dir or ".") / m
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise SchemaError(f"cannot read model file {m!r}: {exc.strerror}", "model") from None
            model = model_from_text(text)
        else:
            model = model_from_json(m)
    elif "architecture" in obj:
        if not isinstance(obj["architecture"], list):
            raise SchemaError("architecture must be a list of layer templates", "architecture")
        model = init_model(d + POS_DIM, obj["architecture"], child_seed(seed, 1))
    else:
        raise SchemaError("config needs 'model' or 'architecture'")
    try:
        return TrainConfig(task, d, n, steps, float(lr), seed, model, source=dict(obj, seed=seed))
    except InvalidInputError as exc:
        raise SchemaError(str(exc), "model") from None


@dataclass
class RunRecord:
    config: dict
    losses: list
    initial_loss: float
    final_loss: float
    converged: bool
    diverged_at: int | None
    audits: list
    model: dict | None
    wall_clock: float | None = None

    def to_json(self) -> dict:
        out = {
            "schema": "equiseq/1",
            "config": self.config,
            "losses": self.losses,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "converged": self.converged,
            "diverged_at": self.diverged_at,
            "audits": self.audits,
            "model": self.model,
        }
        if self.wall_clock is not None:
            out["wall_clock"] = self.wall_clock
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def dataset_loss(model: ModelSpec, data) -> float:
    return sum(half_squared_error(model(x), t)[0] for x, t in data) / len(data)


def loss_and_grad(model: ModelSpec, data):
    """Mean half-squared error over ``data`` and its gradient for every weight."""
    total = 0.0
    grads = None
    for x, t in data:
        out, tape = forward(model, x)
        loss, dout = half_squared_error(out, t)
        g = backward(tape, dout)
        total += loss
        grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
    m = len(data)
    return total / m, {k: v / m for k, v in (grads or {}).items()}


def train(cfg: TrainConfig, record_time: bool = False, audit_trials: int = 20) -> RunRecord:
    """Full-batch gradient descent; ``losses[i]`` is the loss before update ``i``."""
    start = time.perf_counter()
    data = make_dataset(cfg.task, cfg.d, cfg.n, child_seed(cfg.seed, 0))
    model = cfg.model
    params = model.parameters()
    losses = []
    diverged_at = None
    for step in range(cfg.steps):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grad(model, data)
        except InvalidInputError:  # non-finite logits reached a softmax
            loss, grads = math.nan, {}
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            diverged_at = step
            break
        losses.append(loss)
        params = {k: params[k] - cfg.lr * grads[k] for k in params}
        model = model.with_params(params)
    final = dataset_loss(model, data) if diverged_at is None else math.nan
    initial = losses[0] if losses else math.nan
    converged = diverged_at is None and math.isfinite(final) and final <= 0.1 * initial
    audits = []
    if diverged_at is None:
        acfg = AuditConfig(d=model.d, n=(1, cfg.n), trials=audit_trials, tol=1e-9, seed=child_seed(cfg.seed, 2))
        audits = [
            audit_orthogonal_with_knowledge(model, acfg).to_json(),
            audit_permutation(model, acfg).to_json(),
        ]
    return RunRecord(
        config=cfg.source,
        losses=losses,
        initial_loss=initial if math.isfinite(initial) else None,
        final_loss=final if math.isfinite(final) else None,
        converged=converged,
        diverged_at=diverged_at,
        audits=audits,
        model=model.to_json() if diverged_at is None else None,
        wall_clock=(time.perf_counter() - start) if record_time else None,
    )
