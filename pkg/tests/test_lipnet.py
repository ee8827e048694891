import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lipbench.datasets import LabeledDataset
from lipbench.lipnet import (DenseLayer, LossSpec, Network, TrainConfig, TrainingDiverged, aol_effective_weight,
                             backward, cpl_forward, cra, evaluate, forward, load_checkpoint, loss_value,
                             make_mlp, maxmin, one_cycle_lr, random_ball_attack, save_checkpoint, train)
from lipbench.lipnet.layers import maxmin_backward
from lipbench.numerics import RandomSource, power_iteration, sym_eig

EPS = 36 / 255


def random_net(rng, kinds=("aol",), widths=(6, 6, 6, 4), activation="maxmin"):
    layers = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        kind = kinds[i % len(kinds)]
        if kind == "cpl" and a != b:
            kind = "aol"
        W = rng.normal(size=(b, a))
        act = None if i == len(widths) - 2 or kind == "cpl" else activation
        layers.append(DenseLayer(kind, W, 0.3 * rng.normal(size=b), act))
    return Network(layers)


def lipschitz_ratio(f, dim, rng, pairs=2000, scale=1.0):
    X = scale * rng.normal(size=(pairs, dim))
    Y = X + rng.normal(size=(pairs, dim)) * rng.random((pairs, 1)) * scale
    num = np.linalg.norm(f(X) - f(Y), axis=1)
    den = np.linalg.norm(X - Y, axis=1)
    return float(np.max(num / den))


def fd_max_rel_error(net, X, y, spec, h=1e-6):
    net.freeze_cpl_sigma()
    _, grads = backward(net, X, y, spec)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            lp, _ = backward(net, X, y, spec)
            p[i] = old - h
            lm, _ = backward(net, X, y, spec)
            p[i] = old
            num[i] = (lp - lm) / (2 * h)
        worst = max(worst, float(np.max(np.abs(num - g)) / max(np.max(np.abs(num)), 1e-8)))
    net.freeze_cpl_sigma(False)
    return worst


# --- layers -----------------------------------------------------------------

def test_aol_examples():
    assert np.array_equal(aol_effective_weight(np.eye(2)), np.eye(2))
    assert aol_effective_weight(np.array([[2.0]]))[0, 0] == 1.0
    W = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert np.array_equal(aol_effective_weight(W), W)  # zero column keeps d = 0


def test_aol_spectral_norm_random():
    rng = RandomSource(1)
    for _ in range(100):
        Weff = aol_effective_weight(rng.normal(size=(16, 16)))
        s, _ = power_iteration(Weff, iters=500)
        assert s <= 1 + 1e-9
        assert math.sqrt(max(sym_eig(Weff.T @ Weff)[0][0], 0.0)) <= 1 + 1e-9


def test_cpl_examples():
    x = np.array([0.3, -1.2])
    assert np.array_equal(cpl_forward(x, np.zeros((2, 2)), np.zeros(2)), x)
    assert cpl_forward(np.array([1.0]), np.eye(1), np.zeros(1))[0] == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        cpl_forward(x, np.ones((3, 2)), np.zeros(3))


def test_cpl_power_state_updates_in_training():
    W = np.diag([3.0, 1.0])
    v = np.array([1.0, 1.0]) / math.sqrt(2)
    cpl_forward(np.ones(2), W, np.zeros(2), v, training=True)
    assert abs(v[0]) > abs(v[1])


def test_cpl_layers_are_1_lipschitz():
    rng = RandomSource(2)
    for _ in range(100):
        W, b = rng.normal(size=(8, 8)), rng.normal(size=8)
        ratio = lipschitz_ratio(lambda X: cpl_forward(X, W, b), 8, rng, pairs=100)
        assert ratio <= 1 + 1e-6


def test_maxmin():
    assert list(maxmin(np.array([1.0, 3.0]))) == [3.0, 1.0]
    assert list(maxmin(np.array([3.0, 1.0]))) == [3.0, 1.0]
    with pytest.raises(ValueError):
        maxmin(np.ones(3))
    with pytest.raises(ValueError):
        DenseLayer("aol", np.eye(3), activation="maxmin")


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), half=st.integers(1, 8))
def test_maxmin_norm_preserving_and_lipschitz(seed, half):
    rng = RandomSource(seed)
    v, w = rng.normal(size=2 * half), rng.normal(size=2 * half)
    assert abs(np.linalg.norm(maxmin(v)) - np.linalg.norm(v)) <= 1e-12
    assert np.linalg.norm(maxmin(v) - maxmin(w)) <= np.linalg.norm(v - w) + 1e-12


def test_maxmin_gradient_matches_fd():
    rng = RandomSource(3)
    v = rng.normal(size=10)
    g = rng.normal(size=10)
    analytic = maxmin_backward(v, g)
    h = 1e-6
    num = np.array([(g @ maxmin(v + h * e) - g @ maxmin(v - h * e)) / (2 * h) for e in np.eye(10)])
    assert np.allclose(num, analytic, atol=1e-8)


# --- network ----------------------------------------------------------------

def test_forward_identity_layer_pads():
    net = Network([DenseLayer("aol", np.eye(4))], input_dim=3, input_pad_to=4)
    x = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(forward(net, x), [0.5, -1.0, 2.0, 0.0])
    assert np.array_equal(forward(net, x), forward(net, x))
    with pytest.raises(ValueError):
        forward(net, np.ones(4))


def test_network_chain_check():
    with pytest.raises(ValueError):
        Network([DenseLayer("aol", np.eye(3)), DenseLayer("aol", np.eye(4))])


@pytest.mark.parametrize("kind", ["aol", "cpl"])
def test_random_network_lipschitz(kind):
    rng = RandomSource(4)
    for t in range(3):
        net = random_net(rng.split(t), kinds=(kind,), widths=(6, 6, 6, 6, 4))
        assert net.is_lipschitz()
        assert lipschitz_ratio(net.forward, 6, rng.split(f"p{t}")) <= 1 + 1e-6


def test_make_mlp_shapes():
    net = make_mlp(5, 3, width=8, depth=4, kind="cpl", rng=RandomSource(0))
    assert net.input_pad_to == 8 and net.output_dim == 3
    assert [l.kind for l in net.layers] == ["cpl", "cpl", "cpl", "aol"]
    std = make_mlp(5, 3, width=8, depth=3, kind="standard", init="uniform", rng=RandomSource(0))
    assert not std.is_lipschitz()
    assert [l.activation for l in std.layers] == ["relu", "relu", None]
    aol = make_mlp(8, 2, width=8, depth=2, rng=RandomSource(0))
    assert np.array_equal(aol.layers[0].W, np.eye(8))


# --- losses -----------------------------------------------------------------

def test_loss_examples():
    for T in (0.1, 1.0, 7.0):
        assert loss_value(LossSpec("temperature-ce", temperature=T), [0.0, 0.0], 0) == pytest.approx(math.log(2))
        assert loss_value(LossSpec("offset-ce", offset=0.7, temperature=T), [0.7, 0.0], 0) == pytest.approx(math.log(2))
    v = loss_value(LossSpec("selfnorm-ce", tradeoff=0.0), [1.0, -1.0], 0)
    assert v == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert v == pytest.approx(0.3133, abs=1e-4)


def test_selfnorm_zero_std_floor_is_finite():
    v = loss_value(LossSpec("selfnorm-ce", tradeoff=0.0), [0.5, 0.5, 0.5], 1)
    assert math.isfinite(v) and v >= 0


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        LossSpec("temperature-ce", temperature=0.0)
    with pytest.raises(ValueError):
        LossSpec("selfnorm-ce", tradeoff=-1.0)
    with pytest.raises(ValueError):
        LossSpec("hinge")


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), kind=st.sampled_from(["temperature-ce", "offset-ce", "selfnorm-ce"]))
def test_losses_nonnegative_finite(seed, kind):
    rng = RandomSource(seed)
    s = rng.normal(size=5) * 10
    assert 0 <= loss_value(LossSpec(kind), s, int(rng.integers(0, 5))) < np.inf


# --- gradients --------------------------------------------------------------

def test_zero_weight_symmetric_batch_gives_zero_bias_grad():
    net = Network([DenseLayer("standard", np.zeros((2, 2)))])
    X = np.array([[1.0, 2.0], [1.0, 2.0]])
    _, grads = backward(net, X, np.array([0, 1]), LossSpec("temperature-ce", temperature=1.0))
    assert np.allclose(grads[1], 0.0, atol=1e-15)


@pytest.mark.parametrize("kinds", [("aol",), ("cpl",), ("aol", "cpl"), ("standard",)])
@pytest.mark.parametrize("spec", [LossSpec("temperature-ce", temperature=0.5), LossSpec("offset-ce"),
                                  LossSpec("selfnorm-ce", tradeoff=0.1)], ids=lambda s: s.kind)
def test_backward_matches_finite_differences(kinds, spec):
    rng = RandomSource(hash((kinds, spec.kind)) % 1000)
    net = random_net(rng, kinds=kinds, widths=(4, 4, 4, 3))
    X = rng.normal(size=(5, 4))
    y = rng.integers(0, 3, 5)
    assert fd_max_rel_error(net, X, y, spec) <= 1e-4


# --- training and certification ---------------------------------------------

def test_one_cycle_endpoints():
    assert one_cycle_lr(0, 100, 1.0) == pytest.approx(1 / 25)
    assert one_cycle_lr(10, 100, 1.0) == pytest.approx(1.0)
    assert one_cycle_lr(99, 100, 1.0) == pytest.approx(1e-4)
    lrs = [one_cycle_lr(s, 100, 1.0) for s in range(100)]
    assert np.all(np.diff(lrs[:11]) > 0) and np.all(np.diff(lrs[10:]) < 0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def toy_data(seed=3, n=400):
    r = RandomSource(seed)
    X = r.uniform(-1, 1, size=(n, 2))
    y = (X[:, 0] > 0).astype(int)
    X[:, 0] += np.where(y == 1, 0.5, -0.5)
    return LabeledDataset(X, y, (), 2)


def test_toy_training_reaches_full_cra():
    ds = toy_data()
    net = make_mlp(2, 2, width=16, depth=4, rng=RandomSource(0))
    net, hist = train(net, ds, TrainConfig(peak_lr=0.1, epochs=60, batch_size=32, seed=1))
    assert hist[-1]["train_cra"] == 1.0
    assert {"loss", "batch_acc", "batch_cra", "lr"} <= set(hist[0])


def test_training_is_deterministic():
    ds = toy_data(n=100)
    outs = []
    for _ in range(2):
        net = make_mlp(2, 2, width=8, depth=3, kind="cpl", rng=RandomSource(0))
        train(net, ds, TrainConfig(peak_lr=0.1, epochs=3, batch_size=16, seed=5, noise_sigma=0.1))
        outs.append(np.concatenate([p.ravel() for p in net.params()]))
    assert np.array_equal(outs[0], outs[1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    ds = toy_data(n=64)
    net = make_mlp(2, 2, width=8, depth=3, kind="standard", init="uniform", rng=RandomSource(0))
    with pytest.raises(TrainingDiverged):
        train(net, ds, TrainConfig(peak_lr=1e200, epochs=3, batch_size=16))


def test_cra_examples():
    assert cra(np.array([[1.0, 0.5]]), [0], EPS) == 1.0
    assert cra(np.array([[0.6, 0.5]]), [0], EPS) == 0.0
    assert cra(np.array([[0.5, 0.5]]), [0], 0.0) == 0.0
    assert math.sqrt(2) * EPS == pytest.approx(0.19965, abs=1e-5)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_cra_monotone_and_bounded(seed):
    rng = RandomSource(seed)
    S = rng.normal(size=(50, 4))
    y = rng.integers(0, 4, 50)
    acc = float(np.mean(S.argmax(1) == y))
    vals = [cra(S, y, e) for e in np.linspace(0, 1, 11)]
    assert vals[0] <= acc
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_random_ball_attack_examples():
    ds = toy_data()
    net = make_mlp(2, 2, width=16, depth=4, rng=RandomSource(0))
    train(net, ds, TrainConfig(peak_lr=0.1, epochs=20, batch_size=32, seed=1))
    x, y = ds.features[0], ds.labels[0]
    clean = float(np.diff(net.forward(x[None])[0][[1 - y, y]])[0])
    assert random_ball_attack(net, x, y, 0.0) == pytest.approx(clean)
    margins = [np.mean([random_ball_attack(net, ds.features[i], ds.labels[i], e, tries=50)
                        for i in range(20)]) for e in (0.05, 0.2, 0.5)]
    assert margins[0] >= margins[1] >= margins[2]


def test_checkpoint_round_trip(tmp_path):
    net = make_mlp(5, 3, width=8, depth=4, kind="cpl", rng=RandomSource(1))
    train(net, LabeledDataset(RandomSource(2).normal(size=(32, 5)), RandomSource(3).integers(0, 3, 32), (), 3),
          TrainConfig(peak_lr=0.05, epochs=2, batch_size=8))
    save_checkpoint(net, tmp_path / "m.lnet")
    back = load_checkpoint(tmp_path / "m.lnet")
    X = RandomSource(4).normal(size=(10, 5))
    assert np.array_equal(back.forward(X), net.forward(X))
    assert (tmp_path / "m.lnet").read_bytes()[:5] == b"LNET1"


def test_evaluate_keys():
    ds = toy_data(n=50)
    net = make_mlp(2, 2, width=8, depth=2, rng=RandomSource(0))
    ev = evaluate(net, ds)
    assert 0 <= ev["cra"] <= ev["acc"] <= 1
