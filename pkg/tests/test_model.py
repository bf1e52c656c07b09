import math

import numpy as np
import pytest

from shapeerase import diffcore as dc
from shapeerase.model import (VIEWS, EmaState, ModelConfig, classify, ema_update, encode, init_params,
                              load_checkpoint, save_checkpoint)

CFG = ModelConfig(input_dim=5, hidden=7, n=6, m=2, n_classes=4)


@pytest.fixture
def model(rng):
    return init_params(CFG, rng)


def test_views_start_identical(model, rng):
    params, buffers = model
    x = rng.standard_normal((6, 5))
    z1, _ = encode(params, buffers, x, "1", CFG, training=True)
    z2, _ = encode(params, buffers, x, "2", CFG, training=True)
    np.testing.assert_array_equal(z1.value, z2.value)
    assert z1.shape == (6, CFG.n)


def test_constant_batch_normalizes_to_zero(model):
    params, buffers = model
    z, _ = encode(params, buffers, np.ones((4, 5)), "1", CFG, training=True)
    np.testing.assert_array_equal(z.value, np.zeros((4, CFG.n)))


def test_unknown_view_and_width(model):
    params, buffers = model
    with pytest.raises(ValueError, match="unknown view"):
        encode(params, buffers, np.ones((2, 5)), "3", CFG, training=False)
    with pytest.raises(dc.ShapeError):
        encode(params, buffers, np.ones((2, 4)), "1", CFG, training=False)


@pytest.mark.parametrize("view", VIEWS)
def test_training_pass_touches_only_its_view(model, rng, view):
    params, buffers = model
    _, updates = encode(params, buffers, rng.standard_normal((5, 5)), view, CFG, training=True)
    assert updates and all(k.split(".")[1] == view for k in updates)
    after = {**buffers, **updates}
    for k, v in buffers.items():
        if k.split(".")[1] != view:
            assert after[k].tobytes() == v.tobytes()
        else:
            assert not np.array_equal(after[k], v)


def test_eval_pass_writes_nothing(model, rng):
    params, buffers = model
    before = {k: v.copy() for k, v in buffers.items()}
    _, updates = encode(params, buffers, rng.standard_normal((3, 5)), "s", CFG, training=False)
    assert updates == {}
    assert all(before[k].tobytes() == buffers[k].tobytes() for k in buffers)


def test_running_statistics_update(model, rng):
    params, buffers = model
    x = rng.standard_normal((8, 5))
    _, up = encode(params, buffers, x, "1", CFG, training=True)
    h = x @ params["trunk.W1"]
    np.testing.assert_allclose(up["bn.1.1.mean"], 0.1 * h.mean(0), atol=1e-14)
    np.testing.assert_allclose(up["bn.1.1.var"], 0.9 + 0.1 * h.var(0, ddof=1), atol=1e-14)


def test_classify(model, rng):
    params, _ = model
    z = rng.standard_normal((3, CFG.n))
    zero = {"head.g.W": np.zeros((CFG.n, 4)), "head.g.b": np.zeros(4)}
    np.testing.assert_array_equal(classify(z, zero).value, np.zeros((3, 4)))
    eye = {"head.gs.W": np.eye(4), "head.gs.b": np.zeros(4)}
    zs = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(classify(zs, eye, "gs").value, zs)
    np.testing.assert_allclose(classify(z, params).value, z @ params["head.g.W"] + params["head.g.b"], rtol=1e-15)
    with pytest.raises(dc.ShapeError, match="width 6"):
        classify(zs, params)


def test_ema_degenerate_decays(model):
    params, buffers = model
    student = {k: v + 1.0 for k, v in params.items()}
    teacher = EmaState.from_student(params, buffers, decay=0.0)
    out = ema_update(teacher, student, buffers)
    assert all(np.array_equal(out.params[k], student[k]) for k in params)
    teacher = EmaState.from_student(params, buffers, decay=1.0)
    out = ema_update(teacher, student, buffers)
    assert all(np.array_equal(out.params[k], params[k]) for k in params)
    scalar = ema_update(EmaState({"w": np.array(1.0)}, {}, 0.9), {"w": np.array(0.0)}, {})
    assert scalar.params["w"] == pytest.approx(0.9, abs=1e-16)


def test_ema_errors(model):
    params, buffers = model
    teacher = EmaState.from_student(params, buffers)
    with pytest.raises(dc.ShapeError):
        ema_update(teacher, {**params, "proj.P": np.zeros((2, 2))}, buffers)
    with pytest.raises(KeyError):
        ema_update(teacher, {k: v for k, v in params.items() if k != "proj.P"}, buffers)


@pytest.mark.parametrize("decay", [0.5, 0.9, 0.99])
def test_ema_converges_within_bound(model, decay):
    params, buffers = model
    student = {k: v + 0.5 for k, v in params.items()}
    teacher = EmaState.from_student(params, buffers, decay)
    gap0 = max(np.max(np.abs(student[k] - params[k])) for k in params)
    steps = math.ceil(math.log(1e-6 / gap0) / math.log(decay))
    for _ in range(steps):
        teacher = ema_update(teacher, student, buffers)
    assert max(np.max(np.abs(teacher.params[k] - student[k])) for k in params) < 1e-6


def test_checkpoint_round_trip(model, tmp_path):
    params, buffers = model
    path = save_checkpoint(tmp_path / "c.json", CFG, params, buffers, {"note": "x"})
    cfg, p2, b2, header = load_checkpoint(path)
    assert cfg == CFG and header == {"note": "x"}
    assert all(p2[k].tobytes() == params[k].tobytes() for k in params)
    assert all(b2[k].tobytes() == buffers[k].tobytes() for k in buffers)
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "bad.json")


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(n=4, m=4)
    with pytest.raises(ValueError):
        ModelConfig(n_classes=1)
