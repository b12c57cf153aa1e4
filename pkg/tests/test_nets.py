"""Model forward/gradient math against finite differences, plus zoo shape
and training behavior.

The full-model oracle is central differences through the composed network:
input gradients on every zoo member, parameter gradients on the small ones.
Training checks are behavioral (accuracy rises on separable data) rather
than numeric.
"""

import numpy as np
import pytest

from semlab import data, kernel, nets
from semlab.rng import stream


REL_TOL = 1e-5
ABS_FLOOR = 1e-7


def _agree(analytic, numeric):
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(numeric), np.abs(analytic))
    assert np.all(diff <= ABS_FLOOR + REL_TOL * scale), (
        f"max abs diff {diff.max():.3e}"
    )


def _ce_at(model, x, y):
    logits = nets.predict_logits(model, x)
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[y])


def test_input_grad_matches_finite_diff_all_archs():
    rng = stream(201, "test", "ingrad")
    for arch in nets.default_zoo(4, extended=True):
        model = nets.build_model(arch, seed=3)
        x = rng.uniform(0.1, 0.9, size=arch.input_shape)
        g = nets.input_grad(model, x, 2)
        num = kernel.finite_diff_grad(lambda v: _ce_at(model, v, 2), x)
        _agree(g, num)


def test_param_grads_match_finite_diff():
    rng = stream(202, "test", "pgrad")
    for arch_id in ("linear", "mlp_small", "cnn_small"):
        arch = next(a for a in nets.default_zoo(3) if a.arch_id == arch_id)
        model = nets.build_model(arch, seed=5)
        x = rng.uniform(0.1, 0.9, size=arch.input_shape)
        _, grads = nets.loss_and_param_grads(model, x, 1)
        for idx, p in enumerate(model.params):
            def f(v, idx=idx):
                ps = list(model.params)
                ps[idx] = v
                return _ce_at(nets.Model(model.arch, tuple(ps)), x, 1)

            _agree(grads[idx], kernel.finite_diff_grad(f, p))


def test_batched_input_grads_match_single():
    rng = stream(203, "test", "batch")
    arch = nets.default_zoo(5)[3]
    model = nets.build_model(arch, seed=1)
    xs = rng.uniform(0, 1, size=(6,) + arch.input_shape)
    ys = rng.integers(0, 5, size=6)
    batched = nets.input_grads_batch(model, xs, ys)
    for i in range(6):
        single = nets.input_grad(model, xs[i], int(ys[i]))
        assert np.allclose(batched[i], single, atol=1e-12)


def test_ce_grads_and_probs_consistency():
    rng = stream(204, "test", "cegp")
    arch = nets.default_zoo(4)[1]
    model = nets.build_model(arch, seed=9)
    xs = rng.uniform(0, 1, size=(5,) + arch.input_shape)
    grads, probs = nets.ce_grads_and_probs(model, xs, 2)
    ref_grads = nets.input_grads_batch(model, xs, 2)
    assert np.allclose(grads, ref_grads, atol=1e-12)
    logits = nets.predict_logits_batch(model, xs)
    z = logits - logits.max(axis=1, keepdims=True)
    ref_probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    assert np.allclose(probs, ref_probs[:, 2], atol=1e-12)


def test_grad_modes_share_formula():
    arch = nets.default_zoo(3)[0]
    model = nets.build_model(arch, seed=2)
    x = np.full(arch.input_shape, 0.5)
    a = nets.input_grad(model, x, 1, mode="untargeted-loss")
    b = nets.input_grad(model, x, 1, mode="targeted-loss")
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        nets.input_grad(model, x, 1, mode="ascent")


def test_build_model_deterministic_per_seed():
    arch = nets.default_zoo(4)[2]
    m1 = nets.build_model(arch, seed=11)
    m2 = nets.build_model(arch, seed=11)
    m3 = nets.build_model(arch, seed=12)
    for a, b in zip(m1.params, m2.params):
        assert np.array_equal(a, b)
    assert any(not np.array_equal(a, b) for a, b in zip(m1.params, m3.params))


def test_model_rejects_wrong_param_shapes():
    arch = nets.default_zoo(3)[0]
    good = nets.build_model(arch, seed=0)
    bad = [p.T if p.ndim == 2 else p for p in good.params]
    with pytest.raises(kernel.ShapeError):
        nets.Model(arch, tuple(bad))


def test_linear_model_is_affine_map():
    rng = stream(205, "test", "affine")
    w = rng.normal(size=(3, 8))
    b = rng.normal(size=3)
    model = nets.linear_model(w, b, (8,))
    x = rng.normal(size=8)
    assert np.allclose(nets.predict_logits(model, x), w @ x + b, atol=1e-12)
    img = rng.uniform(0, 1, size=(2, 2, 2))
    model3 = nets.linear_model(w, b, (2, 2, 2))
    assert np.allclose(
        nets.predict_logits(model3, img), w @ img.ravel() + b, atol=1e-12
    )


def test_training_improves_separable_data():
    ds = data.gen_dataset(4, 30, jitter_sigma=0.15, seed=6)
    arch = nets.default_zoo(4)[0]
    model = nets.build_model(arch, seed=4)
    trained = nets.train(model, ds, 0.0, epochs=8, lr=0.05,
                         rng=stream(206, "test", "train"))
    tx, ty = ds.test()
    acc = nets.accuracy(trained, tx, ty)
    assert acc >= 0.9
    assert trained.train_meta["clean_accuracy"] == acc
    assert trained.train_meta["noise_sigma"] == 0.0
    assert trained.train_meta["epochs"] == 8


def test_training_with_noise_keeps_learning():
    ds = data.gen_dataset(3, 30, jitter_sigma=0.1, seed=7)
    arch = nets.default_zoo(3)[1]
    model = nets.build_model(arch, seed=8)
    trained = nets.train(model, ds, 0.25, epochs=10, lr=0.05,
                         rng=stream(207, "test", "ntrain"))
    assert trained.train_meta["clean_accuracy"] >= 0.8
    assert trained.train_meta["noise_sigma"] == 0.25


def test_zero_epochs_keeps_params():
    ds = data.gen_dataset(3, 10, seed=8)
    arch = nets.default_zoo(3)[0]
    model = nets.build_model(arch, seed=1)
    out = nets.train(model, ds, 0.0, epochs=0, lr=0.1,
                     rng=stream(208, "test"))
    for a, b in zip(model.params, out.params):
        assert np.array_equal(a, b)


def test_train_rejects_bad_arguments():
    ds = data.gen_dataset(3, 10, seed=8)
    arch = nets.default_zoo(3)[0]
    model = nets.build_model(arch, seed=1)
    with pytest.raises(ValueError):
        nets.train(model, ds, -0.1, epochs=1, lr=0.1, rng=stream(0, "x"))
    with pytest.raises(ValueError):
        nets.train(model, ds, 0.0, epochs=1, lr=0.0, rng=stream(0, "x"))


def test_training_diverged_error():
    ds = data.gen_dataset(3, 10, seed=8)
    arch = nets.default_zoo(3)[0]
    model = nets.build_model(arch, seed=1)
    poisoned = [p.copy() for p in model.params]
    poisoned[0][0, 0] = np.inf
    bad = nets.Model(arch, tuple(poisoned))
    with np.errstate(invalid="ignore"), pytest.raises(nets.TrainingDivergedError):
        nets.train(bad, ds, 0.0, epochs=1, lr=0.1, rng=stream(209, "test"))


def test_default_zoo_shapes_and_heterogeneity():
    zoo = nets.default_zoo(10)
    assert len(zoo) == 7
    assert len(nets.default_zoo(10, extended=True)) == 8
    nets.check_heterogeneous(zoo)
    small = nets.default_zoo(4)
    depths = {a.arch_id: a.depth for a in small}
    assert depths["linear"] == 1
    assert depths["mlp_deep"] == 3
    assert depths["cnn_deep"] == 3
    widths = {a.arch_id: a.width for a in small}
    assert widths["mlp_wide"] == 128
    assert widths["cnn_wide"] == 8
    for arch in zoo:
        model = nets.build_model(arch, seed=0)
        logits = nets.predict_logits(model, np.zeros(arch.input_shape))
        assert logits.shape == (10,)


def test_check_heterogeneous_rejections():
    zoo = nets.default_zoo(4)
    with pytest.raises(ValueError):
        nets.check_heterogeneous(zoo[:5])
    with pytest.raises(ValueError):
        nets.check_heterogeneous(zoo[:1] * 7)
    flat = int(np.prod(zoo[0].input_shape))
    clones = [
        nets.ArchitectureSpec(
            f"lin{i}", (kernel.flatten(), kernel.dense(flat, 4)),
            zoo[0].input_shape, 4,
        )
        for i in range(6)
    ]
    with pytest.raises(ValueError):
        nets.check_heterogeneous(clones)


def test_arch_rejects_bad_chains():
    k = kernel
    with pytest.raises(kernel.ShapeError):
        nets.ArchitectureSpec("bad", (k.dense(4, 3),), (5,), 3)
    with pytest.raises(kernel.ShapeError):
        nets.ArchitectureSpec("short", (k.flatten(), k.dense(8, 5)), (1, 2, 4), 3)
    with pytest.raises(ValueError):
        nets.ArchitectureSpec(
            "head", (k.dense(4, 3), k.softmax_xent()), (4,), 3
        )


def test_label_validation():
    arch = nets.default_zoo(3)[0]
    model = nets.build_model(arch, seed=0)
    x = np.zeros(arch.input_shape)
    with pytest.raises(ValueError):
        nets.input_grad(model, x, 3)
    with pytest.raises(ValueError):
        nets.input_grad(model, x, -1)
