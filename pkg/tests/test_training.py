import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from runoffbench import data as D
from runoffbench import models as M
from runoffbench import tensor as T
from runoffbench import training as TR
from runoffbench.errors import CheckpointError, LossError, ParameterError, TrainingError
from runoffbench.tensor import RngStream, Tensor

SPLIT = D.SplitSpec("2000-01-01", "2000-12-31", "2001-01-01", "2001-06-30")


@pytest.fixture(scope="module")
def records():
    return D.synth_linear_reservoir(4, 547, k=[0.08, 0.12, 0.16, 0.2], et_rate=0.02, rng=RngStream(42))


def tiny_spec(variant, seq_len=8, **kw):
    base = dict(hidden_dim=8, d_model=8, n_heads=2, n_layers=1, d_ff=16, dropout_rate=0.0, seq_len=seq_len)
    return M.ModelSpec(variant, input_dim=5, **{**base, **kw})


def tiny_config(**kw):
    return TR.TrainConfig(**{**dict(batch_size=4, n_iterations=5, seq_len=8, seed=3, eval_every=2), **kw})


# ---------------------------------------------------------------- loss


def test_loss_zero_for_perfect_prediction():
    y = RngStream(0).normal(0, 1, (3, 4, 1))
    loss = TR.basin_weighted_mse(Tensor(y), y, np.ones_like(y), np.array([0.5, 1.0, 2.0]))
    assert loss.item() == 0.0


def test_loss_unit_denominator():
    loss = TR.basin_weighted_mse(Tensor([[[2.5]]]), np.array([[[1.0]]]), np.ones((1, 1, 1)), np.array([0.9]))
    assert loss.item() == pytest.approx(1.5 ** 2, abs=1e-15)


def test_loss_against_double_loop():
    rng = RngStream(1)
    yhat = rng.normal(0, 1, (6, 9, 1))
    y = rng.normal(0, 1, (6, 9, 1))
    mask = (rng.random((6, 9, 1)) < 0.7).astype(float)
    std = rng.uniform(0.1, 2.0, 6)
    total, count = 0.0, 0
    for b in range(6):
        for t in range(9):
            if mask[b, t, 0]:
                total += (yhat[b, t, 0] - y[b, t, 0]) ** 2 / (std[b] + 0.1) ** 2
                count += 1
    got = TR.basin_weighted_mse(Tensor(yhat), y, mask, std).item()
    assert abs(got - total / count) < 1e-12


def test_loss_errors():
    with pytest.raises(LossError):
        TR.basin_weighted_mse(Tensor(np.zeros((2, 3, 1))), np.zeros((2, 3, 1)), np.zeros((2, 3, 1)), np.ones(2))
    with pytest.raises(ParameterError):
        TR.basin_weighted_mse(Tensor(np.zeros((2, 3, 1))), np.zeros((2, 2, 1)), np.ones((2, 2, 1)), np.ones(2))
    with pytest.raises(ParameterError):
        TR.basin_weighted_mse(Tensor(np.zeros((2, 1, 1))), np.zeros((2, 1, 1)), np.ones((2, 1, 1)), -np.ones(2))


def test_loss_gradient():
    rng = RngStream(2)
    y = rng.normal(0, 1, (2, 3, 1))
    mask = np.array([[[1.0], [0.0], [1.0]], [[1.0], [1.0], [0.0]]])
    rep = T.grad_check(lambda p: TR.basin_weighted_mse(p, y, mask, np.array([0.3, 1.2])),
                       [Tensor(rng.normal(0, 1, (2, 3, 1)), requires_grad=True)])
    assert rep.passed, rep.line()


# ---------------------------------------------------------------- Adam and clipping


def test_adam_first_step_is_signed_lr():
    g = np.array([3.0, -0.01, 1e-3, -50.0])
    p = Tensor(np.zeros(4), requires_grad=True)
    p.grad = g.copy()
    TR.adam_step({"p": p}, TR.AdamState(), lr=0.01)
    delta = p.data
    assert np.array_equal(np.sign(delta), -np.sign(g))
    assert np.all(np.abs(delta) <= 0.01) and np.all(np.abs(delta) >= 0.01 * (1 - 1e-4))


def test_adam_zero_gradient():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    state = TR.AdamState()
    for _ in range(2):
        p.grad = np.zeros(2)
        TR.adam_step({"p": p}, state, lr=0.1)
    assert p.data.tolist() == [1.0, 2.0] and state.t == 2


def test_adam_three_steps_on_square():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    theta, m, v, ref = 1.0, 0.0, 0.0, []
    for t in range(1, 4):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        ref.append(theta)

    p = Tensor(np.array([1.0]), requires_grad=True)
    state = TR.AdamState()
    got = []
    for _ in range(3):
        T.reset_tape()
        p.zero_grad()
        T.backward(T.sum(p * p))
        TR.adam_step({"p": p}, state, lr)
        got.append(p.data[0])
    assert np.max(np.abs(np.array(got) - np.array(ref))) < 1e-12
    assert state.m["p"].shape == (1,) and state.t == 3


def test_adam_names_nan_parameter():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.zeros(2)
    b.grad = np.array([0.0, np.nan])
    with pytest.raises(TrainingError, match="beta") as info:
        TR.adam_step({"alpha": a, "beta": b}, TR.AdamState(), 0.1)
    assert info.value.parameter == "beta"
    assert a.data.tolist() == [0.0, 0.0]


def test_clip_345():
    g = [np.array([3.0]), np.array([4.0])]
    assert TR.clip_gradients(g, 1.0) == 5.0
    np.testing.assert_allclose(np.concatenate(g), [0.6, 0.8], rtol=0, atol=1e-15)


def test_clip_below_limit_is_untouched():
    g = [np.array([0.1, -0.2]), np.array([[0.3]])]
    before = [x.copy() for x in g]
    TR.clip_gradients(g, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(g, before))
    with pytest.raises(ParameterError):
        TR.clip_gradients(g, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(1e-3, 10.0))
def test_clip_bounds_global_norm(seed, max_norm):
    rng = RngStream(seed)
    g = [rng.normal(0, 3, (4, 3)), rng.normal(0, 3, (5,))]
    TR.clip_gradients(g, max_norm)
    assert TR.global_norm(g) <= max_norm + 1e-12


# ---------------------------------------------------------------- config


def test_config_validation():
    for bad in (dict(learning_rate=0), dict(clip_norm=-1), dict(n_iterations=-1), dict(head_mode="x"),
                dict(loss="mae"), dict(batch_size=0)):
        with pytest.raises(ParameterError):
            TR.TrainConfig(**bad)
    with pytest.raises(ParameterError):
        TR.TrainConfig(head_mode="seq2seq").resolved_head(tiny_spec("transformer_vanilla"))
    assert TR.TrainConfig().resolved_head(tiny_spec("transformer_vanilla")) == "seq2one"
    assert TR.TrainConfig().resolved_head(tiny_spec("lstm")) == "seq2seq"


# ---------------------------------------------------------------- training loop


def weights_equal(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k].data, b[k].data) for k in a)


@pytest.mark.parametrize("variant", M.VARIANTS)
def test_training_is_deterministic(records, variant):
    a = TR.train(tiny_spec(variant), records, SPLIT, tiny_config())
    b = TR.train(tiny_spec(variant), records, SPLIT, tiny_config())
    assert weights_equal(a.checkpoint.weights, b.checkpoint.weights)
    assert np.array_equal(a.losses, b.losses)
    assert [i for i, _ in a.trace] == [2, 4, 5]


def test_zero_iterations_returns_initialization(records):
    spec = tiny_spec("lstm")
    res = TR.train(spec, records, SPLIT, tiny_config(n_iterations=0))
    init_rng, _, _ = RngStream(3).split(3)
    assert weights_equal(res.checkpoint.weights, M.init_weights(spec, init_rng))
    assert res.trace == [] and res.losses.size == 0


def test_trace_csv(records):
    res = TR.train(tiny_spec("lstm"), records, SPLIT, tiny_config(n_iterations=4))
    lines = res.trace_csv().splitlines()
    assert lines[0] == "iteration,loss" and len(lines) == 3
    assert float(lines[1].split(",")[1]) == pytest.approx(res.losses[:2].mean(), abs=0)


def test_divergence_reports_iteration(records):
    with pytest.raises(TrainingError) as info:
        TR.train(tiny_spec("lstm"), records, SPLIT, tiny_config(learning_rate=1e300, clip_norm=1e300))
    assert info.value.iteration is not None and info.value.iteration >= 1


def test_mismatched_seq_len(records):
    with pytest.raises(ParameterError):
        TR.train(tiny_spec("lstm", seq_len=9), records, SPLIT, tiny_config())


@pytest.mark.parametrize("variant", M.VARIANTS)
def test_every_parameter_receives_gradient(records, variant):
    spec = tiny_spec(variant, n_layers=2)
    stats = D.compute_norm_stats(records, SPLIT)
    head = TR.TrainConfig().resolved_head(spec)
    batch = D.make_batch(records, stats, SPLIT, 8, 4, RngStream(5), head=head)
    model = M.SequenceModel.initialize(spec, RngStream(6))
    T.reset_tape()
    yhat = model(batch.x)
    if head == "seq2one":
        yhat = yhat.reshape(batch.y.shape)
    T.backward(TR.basin_weighted_mse(yhat, batch.y, batch.mask, batch.basin_std))
    dead = [n for n, p in model.weights.items() if not np.any(p.grad != 0)]
    assert dead == []


def test_lstm_smoothed_loss_halves():
    recs = D.synth_linear_reservoir(4, 730, k=[0.08, 0.12, 0.16, 0.2], et_rate=0.02, rng=RngStream(7))
    split = D.SplitSpec("2000-01-01", "2001-06-30", "2001-07-01", "2001-12-30")
    spec = M.ModelSpec("lstm", input_dim=5, hidden_dim=16, dropout_rate=0.0, seq_len=30)
    cfg = TR.TrainConfig(learning_rate=1e-2, batch_size=16, n_iterations=300, seq_len=30, seed=1, eval_every=50)
    res = TR.train(spec, recs, split, cfg)
    first, last = res.trace[0][1], res.trace[-1][1]
    assert last < 0.5 * first, res.trace


# ---------------------------------------------------------------- ensembles


def test_ensemble_members_differ_by_seed(records):
    members = TR.train_ensemble(tiny_spec("lstm"), records, SPLIT, tiny_config(), [1, 2])
    assert all(m.ok for m in members)
    assert not weights_equal(members[0].checkpoint.weights, members[1].checkpoint.weights)


def test_single_member_ensemble_equals_train(records):
    (member,) = TR.train_ensemble(tiny_spec("lstm"), records, SPLIT, tiny_config(), [1])
    single = TR.train(tiny_spec("lstm"), records, SPLIT, tiny_config(seed=1))
    assert weights_equal(member.checkpoint.weights, single.checkpoint.weights)


@pytest.mark.parametrize("variant", ["lstm", "transformer_modified"])
def test_serial_and_concurrent_members_match(records, variant):
    spec = tiny_spec(variant)
    serial = TR.train_ensemble(spec, records, SPLIT, tiny_config(), [4, 5, 6], workers=1)
    threaded = TR.train_ensemble(spec, records, SPLIT, tiny_config(), [4, 5, 6], workers=3)
    for a, b in zip(serial, threaded):
        assert a.seed == b.seed
        assert weights_equal(a.checkpoint.weights, b.checkpoint.weights)


def test_failing_member_does_not_stop_siblings(records):
    cfg = tiny_config(learning_rate=1e300, clip_norm=1e300)
    members = TR.train_ensemble(tiny_spec("lstm"), records, SPLIT, cfg, [1, 2])
    assert [m.ok for m in members] == [False, False]
    assert all(isinstance(m.error, TrainingError) for m in members)
    with pytest.raises(ParameterError):
        TR.train_ensemble(tiny_spec("lstm"), records, SPLIT, tiny_config(), [1, 1])


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path, records):
    ckpt = TR.train(tiny_spec("transformer_modified"), records, SPLIT, tiny_config()).checkpoint
    path = tmp_path / "m.rbw"
    TR.save_checkpoint(ckpt, path)
    back = TR.load_checkpoint(path)
    assert weights_equal(ckpt.weights, back.weights)
    assert back.spec == ckpt.spec and back.config == ckpt.config and back.split == ckpt.split
    assert back.stats.to_dict() == ckpt.stats.to_dict()
    assert (back.seed, back.iteration) == (3, 5)
    for rec in records:
        d0, q0 = ckpt.simulate(rec, SPLIT)
        d1, q1 = back.simulate(rec, SPLIT)
        assert np.array_equal(d0, d1) and np.array_equal(q0, q1)


def test_truncated_checkpoint_rejected(tmp_path, records):
    ckpt = TR.train(tiny_spec("lstm"), records, SPLIT, tiny_config(n_iterations=1)).checkpoint
    blob = TR.checkpoint_bytes(ckpt)
    for cut in (3, len(blob) // 2, len(blob) - 1):
        (tmp_path / "t.rbw").write_bytes(blob[:cut])
        with pytest.raises(CheckpointError):
            TR.load_checkpoint(tmp_path / "t.rbw")
    with pytest.raises(CheckpointError):
        TR.load_checkpoint(tmp_path / "missing.rbw")


def test_bare_weights_are_not_a_checkpoint(tmp_path):
    spec = tiny_spec("lstm")
    M.save_weights(tmp_path / "w.rbw", spec, M.init_weights(spec, RngStream(0)))
    with pytest.raises(CheckpointError):
        TR.load_checkpoint(tmp_path / "w.rbw")


def test_simulate_covers_test_days_with_full_lookback(records):
    ckpt = TR.train(tiny_spec("lstm"), records, SPLIT, tiny_config(n_iterations=1)).checkpoint
    dates, q = ckpt.simulate(records[0], SPLIT)
    assert str(dates[0]) == "2001-01-01" and str(dates[-1]) == "2001-06-30"
    assert q.shape == dates.shape and np.all(np.isfinite(q))
