import numpy as np
import pytest

from equiseq.audit import relative_error
from equiseq.errors import SchemaError
from equiseq.train import (
    DATASET_SIZE,
    config_from_json,
    dataset_loss,
    loss_and_grad,
    make_dataset,
    positional_rows,
    train,
)

from conftest import FIXTURES, load_fixture


def small_reverse(steps=5, lr=0.05, seed=1):
    obj = load_fixture("reverse_train.json")
    obj.update(steps=steps, lr=lr, seed=seed)
    return obj


def test_positional_rows():
    pos = positional_rows(4)
    np.testing.assert_allclose(pos, [[0, 1, 0, -1], [1, 0, -1, 0]], atol=1e-15)


def test_reverse_dataset_targets():
    data = make_dataset("reverse", 3, 5, seed=2)
    assert len(data) == DATASET_SIZE
    x, t = data[0]
    assert x.shape == t.shape == (5, 5)
    np.testing.assert_array_equal(t[:3], x[:3, ::-1])
    np.testing.assert_array_equal(t[3:], x[3:])


def test_copy_dataset_targets():
    x, t = make_dataset("copy", 2, 3, seed=0)[0]
    np.testing.assert_array_equal(x, t)


def test_config_rejects_zero_steps():
    obj = small_reverse()
    obj["steps"] = 0
    with pytest.raises(SchemaError) as exc:
        config_from_json(obj)
    assert "steps" in str(exc.value)


@pytest.mark.parametrize(
    "field,value", [("lr", 0), ("lr", -1.0), ("task", "sort"), ("schema", None), ("d", "2")]
)
def test_config_field_validation(field, value):
    obj = small_reverse()
    obj[field] = value
    with pytest.raises(SchemaError):
        config_from_json(obj)


def test_config_model_dimension_must_include_positions():
    obj = load_fixture("copy_train.json")
    obj["d"] = 4
    with pytest.raises(SchemaError):
        config_from_json(obj)


def test_model_path_is_relative_to_config(tmp_path):
    (tmp_path / "m.json").write_text((FIXTURES / "single_head.json").read_text())
    cfg = config_from_json({"schema": "equiseq/1", "task": "copy", "d": 2, "n": 3, "steps": 1, "lr": 0.1, "seed": 0, "model": "m.json"}, base_dir=tmp_path)
    assert cfg.model.d == 4


def test_seed_override():
    cfg = config_from_json(small_reverse(seed=1), seed_override=9)
    assert cfg.seed == 9 and cfg.source["seed"] == 9


def test_dataset_gradient_matches_finite_differences():
    cfg = config_from_json(small_reverse())
    data = make_dataset("reverse", 2, 4, seed=0, size=3)
    model = cfg.model
    _, grads = loss_and_grad(model, data)
    params = model.parameters()
    name = "layers.1.heads.0.wk"
    w = params[name]
    num = np.zeros_like(w)
    h = 1e-5
    for idx in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += h
        wm[idx] -= h
        lp = dataset_loss(model.with_params({**params, name: wp}), data)
        lm = dataset_loss(model.with_params({**params, name: wm}), data)
        num[idx] = (lp - lm) / (2 * h)
    assert relative_error(grads[name], num) < 1e-6


def test_short_run_is_deterministic_and_records_every_step():
    a = train(config_from_json(small_reverse(steps=8)), audit_trials=3)
    b = train(config_from_json(small_reverse(steps=8)), audit_trials=3)
    assert len(a.losses) == 8
    assert a.dumps() == b.dumps()
    assert a.losses[-1] < a.losses[0]
    assert "wall_clock" not in a.to_json()


def test_copy_with_identity_path_starts_at_zero():
    rec = train(config_from_json(load_fixture("copy_train.json")), audit_trials=3)
    assert rec.initial_loss == 0.0 and rec.converged


def test_divergence_is_reported():
    rec = train(config_from_json(small_reverse(steps=40, lr=1e6)), audit_trials=2)
    assert rec.diverged_at is not None and not rec.converged
    assert len(rec.losses) == rec.diverged_at
    assert rec.to_json()["final_loss"] is None


def test_record_time_adds_wall_clock():
    rec = train(config_from_json(small_reverse(steps=1)), record_time=True, audit_trials=1)
    assert rec.to_json()["wall_clock"] >= 0
