"""Tiny heterogeneous classifier zoo: architectures, init, training, grads.

Architectures are layer chains from the kernel vocabulary ending in logits;
the softmax cross-entropy head is applied by the loss/gradient operations,
not stored in the chain. Training is plain SGD (optional momentum) with
fresh Gaussian input noise per example per step, which is what makes a
model "trained at sigma" for smoothing purposes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kernel
from .rng import stream


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class ArchitectureSpec:
    arch_id: str
    layers: tuple[kernel.LayerDescriptor, ...]
    input_shape: tuple[int, ...]
    class_count: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if self.class_count < 2:
            raise ValueError("need at least 2 classes")
        if not self.layers:
            raise ValueError("architecture needs at least one layer")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if layer.kind == "softmax_xent":
                raise ValueError(
                    "softmax head is applied by the loss, not the layer chain"
                )
            try:
                shape = kernel.output_shape(layer, shape)
            except kernel.ShapeError as exc:
                raise kernel.ShapeError(f"layer {i} ({layer.kind}): {exc}") from exc
        if shape != (self.class_count,):
            raise kernel.ShapeError(
                f"chain ends at {shape}, expected ({self.class_count},)"
            )

    @property
    def depth(self) -> int:
        """Number of parameterized layers."""
        return sum(1 for l in self.layers if kernel.param_shapes(l))

    @property
    def width(self) -> int:
        """Largest hidden width (dense out_dim or conv out_channels)."""
        widths = [1]
        for l in self.layers:
            if l.kind == "dense":
                widths.append(l.out_dim)
            elif l.kind == "conv2d":
                widths.append(l.out_channels)
        return max(widths)

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        for layer in self.layers:
            shapes.extend(kernel.param_shapes(layer))
        return shapes


@dataclass(frozen=True)
class Model:
    arch: ArchitectureSpec
    params: tuple[np.ndarray, ...]
    train_meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        got = [p.shape for p in self.params]
        want = self.arch.param_shapes()
        if got != want:
            raise kernel.ShapeError(f"params expect shapes {want}, got {got}")
        acc = self.train_meta.get("clean_accuracy")
        if acc is not None and not 0.0 <= acc <= 1.0:
            raise ValueError(f"clean_accuracy out of [0,1]: {acc}")

    def layer_params(self) -> list[list[np.ndarray]]:
        """Params regrouped per layer, empty list for parameter-free layers."""
        out, i = [], 0
        for layer in self.arch.layers:
            n = len(kernel.param_shapes(layer))
            out.append(list(self.params[i : i + n]))
            i += n
        return out


def build_model(arch: ArchitectureSpec, seed: int) -> Model:
    """He-scaled random init, deterministic per (arch, seed)."""
    params = []
    for i, layer in enumerate(arch.layers):
        shapes = kernel.param_shapes(layer)
        if not shapes:
            continue
        rng = stream(seed, "init", arch.arch_id, i)
        w_shape, b_shape = shapes
        fan_in = int(np.prod(w_shape[1:]))
        params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w_shape))
        params.append(np.zeros(b_shape))
    return Model(arch, tuple(params), {"seed": seed})


def linear_model(weights, bias, input_shape, arch_id="linear-manual",
                 meta=None) -> Model:
    """A flatten+dense model with explicit parameters (test/oracle helper)."""
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    arch = ArchitectureSpec(
        arch_id,
        (kernel.flatten(), kernel.dense(w.shape[1], w.shape[0]))
        if len(input_shape) == 3
        else (kernel.dense(w.shape[1], w.shape[0]),),
        tuple(input_shape),
        w.shape[0],
    )
    return Model(arch, (w, b), dict(meta or {}))


# ---------------------------------------------------------------------------
# forward / loss / grads

def _forward_batch(model: Model, xs: np.ndarray, keep_caches: bool):
    h, caches = xs, []
    for layer, params in zip(model.arch.layers, model.layer_params()):
        h, cache = kernel.forward_batch(layer, params, h)
        if keep_caches:
            caches.append(cache)
    return h, caches


def predict_logits_batch(model: Model, xs: np.ndarray) -> np.ndarray:
    xs = kernel.as_tensor(xs)
    if xs.shape[1:] != model.arch.input_shape:
        raise kernel.ShapeError(
            f"expected batch of {model.arch.input_shape}, got {xs.shape}"
        )
    logits, _ = _forward_batch(model, xs, keep_caches=False)
    return logits


def predict_logits(model: Model, x: np.ndarray) -> np.ndarray:
    x = kernel.as_tensor(x)
    if x.shape != model.arch.input_shape:
        raise kernel.ShapeError(
            f"expected input shape {model.arch.input_shape}, got {x.shape}"
        )
    return predict_logits_batch(model, x[None])[0]


def _check_labels(model: Model, ys) -> np.ndarray:
    ys = np.atleast_1d(np.asarray(ys, dtype=np.int64))
    if ys.min() < 0 or ys.max() >= model.arch.class_count:
        raise ValueError(
            f"labels must be in [0,{model.arch.class_count}), got {ys}"
        )
    return ys


_HEAD = kernel.softmax_xent()


def _loss_and_grads_batch(model: Model, xs: np.ndarray, ys: np.ndarray,
                          need_param_grads: bool):
    """Mean cross-entropy over the batch, with requested gradients."""
    logits, caches = _forward_batch(model, xs, keep_caches=True)
    probs, head_cache = kernel.forward_batch(_HEAD, [], logits)
    n = xs.shape[0]
    picked = probs[np.arange(n), ys]
    loss = float(np.mean(-np.log(np.maximum(picked, 1e-300))))
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), ys] = 1.0 / n
    upstream, _ = kernel.backward_batch(_HEAD, [], head_cache, onehot)
    param_grads: list[np.ndarray] = []
    for layer, params, cache in zip(
        reversed(model.arch.layers), reversed(model.layer_params()),
        reversed(caches),
    ):
        upstream, grads = kernel.backward_batch(
            layer, params, cache, upstream,
            need_param_grads=need_param_grads,
        )
        if need_param_grads:
            param_grads = grads + param_grads
    return loss, param_grads, upstream


def loss_and_param_grads(model: Model, x: np.ndarray, y: int):
    """Cross-entropy loss and exact parameter gradients for one sample."""
    x = kernel.as_tensor(x)
    ys = _check_labels(model, y)
    loss, grads, _ = _loss_and_grads_batch(
        model, x[None], ys, need_param_grads=True
    )
    return loss, grads


GRAD_MODES = ("untargeted-loss", "targeted-loss")


def input_grads_batch(model: Model, xs: np.ndarray, ys) -> np.ndarray:
    """Per-sample d(cross-entropy)/d(input) for a batch; ys may be scalar."""
    xs = kernel.as_tensor(xs)
    ys = _check_labels(model, ys)
    if ys.size == 1:
        ys = np.full(xs.shape[0], ys[0], dtype=np.int64)
    _, _, dx = _loss_and_grads_batch(
        model, xs, ys, need_param_grads=False
    )
    # _loss_and_grads_batch computes mean loss; undo the 1/n scaling so
    # each row is the gradient of that sample's own loss
    return dx * xs.shape[0]


def ce_grads_and_probs(model: Model, xs: np.ndarray,
                       label: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row cross-entropy input gradients at `label` plus the per-row
    softmax probability of `label`; one forward/backward pass for both."""
    xs = kernel.as_tensor(xs)
    ys = _check_labels(model, label)
    logits, caches = _forward_batch(model, xs, keep_caches=True)
    probs, head_cache = kernel.forward_batch(_HEAD, [], logits)
    onehot = np.zeros_like(probs)
    onehot[:, ys[0]] = 1.0
    upstream, _ = kernel.backward_batch(_HEAD, [], head_cache, onehot)
    for layer, params, cache in zip(
        reversed(model.arch.layers), reversed(model.layer_params()),
        reversed(caches),
    ):
        upstream, _ = kernel.backward_batch(
            layer, params, cache, upstream, need_param_grads=False
        )
    return upstream, probs[:, ys[0]].copy()


def input_grad(model: Model, x: np.ndarray, label: int,
               mode: str = "untargeted-loss") -> np.ndarray:
    """Gradient of the cross-entropy at `label` w.r.t. the input.

    Both modes share the formula; `mode` names whether `label` is the true
    class (untargeted) or the attack target (targeted), and the attack layer
    decides ascent vs descent.
    """
    if mode not in GRAD_MODES:
        raise ValueError(f"mode must be one of {GRAD_MODES}, got {mode!r}")
    x = kernel.as_tensor(x)
    return input_grads_batch(model, x[None], label)[0]


def accuracy(model: Model, images: np.ndarray, labels: np.ndarray) -> float:
    if len(images) == 0:
        raise ValueError("empty evaluation set")
    logits = predict_logits_batch(model, images)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train(model: Model, dataset, noise_sigma: float, epochs: int, lr: float,
          rng: np.random.Generator, batch_size: int = 32,
          momentum: float = 0.9) -> Model:
    """SGD with per-example fresh Gaussian input noise of scale noise_sigma.

    Returns a new Model; clean_accuracy is measured on the test split with
    no noise. epochs=0 leaves parameters untouched.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    xs, ys = dataset.train()
    if len(xs) == 0:
        raise ValueError("empty training split")
    params = [p.copy() for p in model.params]
    velocity = [np.zeros_like(p) for p in params]
    for epoch in range(epochs):
        order = rng.permutation(len(xs))
        for start in range(0, len(xs), batch_size):
            idx = order[start : start + batch_size]
            batch = xs[idx]
            if noise_sigma > 0:
                batch = batch + kernel.gaussian_sample(
                    batch.shape, noise_sigma, rng
                )
            current = Model(model.arch, tuple(params), model.train_meta)
            loss, grads, _ = _loss_and_grads_batch(
                current, batch, ys[idx],
                need_param_grads=True,
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            for p, v, g in zip(params, velocity, grads):
                v *= momentum
                v -= lr * g
                p += v
    trained = Model(model.arch, tuple(params))
    test_x, test_y = dataset.test()
    meta = {
        "noise_sigma": float(noise_sigma),
        "epochs": int(epochs),
        "lr": float(lr),
        "seed": model.train_meta.get("seed"),
        "clean_accuracy": accuracy(trained, test_x, test_y),
    }
    return Model(model.arch, trained.params, meta)


# ---------------------------------------------------------------------------
# the default zoo

def _conv_flat_dim(layers, input_shape) -> int:
    shape = input_shape
    for layer in layers:
        shape = kernel.output_shape(layer, shape)
    return int(np.prod(shape))


def default_zoo(class_count: int, input_shape=(1, 8, 8),
                extended: bool = False) -> list[ArchitectureSpec]:
    """Seven architectures spanning multiple depths and widths; extended=True
    appends an eighth for large-quantity ensemble settings."""
    c = class_count
    flat = int(np.prod(input_shape))
    k = kernel

    def conv_stack(*convs, pool=2):
        layers = []
        for (ic, oc, ks) in convs:
            layers += [k.conv2d(ic, oc, ks), k.relu()]
        layers.append(k.avgpool(pool))
        hidden = _conv_flat_dim(layers, input_shape)
        return tuple(layers + [k.flatten(), k.dense(hidden, c)])

    archs = [
        ArchitectureSpec(
            "linear", (k.flatten(), k.dense(flat, c)), input_shape, c
        ),
        ArchitectureSpec(
            "mlp_small",
            (k.flatten(), k.dense(flat, 32), k.relu(), k.dense(32, c)),
            input_shape, c,
        ),
        ArchitectureSpec(
            "mlp_wide",
            (k.flatten(), k.dense(flat, 128), k.relu(), k.dense(128, c)),
            input_shape, c,
        ),
        ArchitectureSpec(
            "mlp_deep",
            (k.flatten(), k.dense(flat, 48), k.relu(), k.dense(48, 24),
             k.relu(), k.dense(24, c)),
            input_shape, c,
        ),
        ArchitectureSpec(
            "cnn_small", conv_stack((input_shape[0], 4, 3)), input_shape, c
        ),
        ArchitectureSpec(
            "cnn_wide", conv_stack((input_shape[0], 8, 3)), input_shape, c
        ),
        ArchitectureSpec(
            "cnn_deep",
            conv_stack((input_shape[0], 4, 3), (4, 6, 3)), input_shape, c,
        ),
    ]
    if extended:
        archs.append(
            ArchitectureSpec(
                "mlp_bottleneck",
                (k.flatten(), k.dense(flat, 16), k.relu(), k.dense(16, c)),
                input_shape, c,
            )
        )
    return archs


def check_heterogeneous(archs) -> None:
    """A heterogeneous zoo needs >=6 architectures over >=2 depths/widths."""
    ids = {a.arch_id for a in archs}
    if len(ids) != len(archs):
        raise ValueError("duplicate arch_ids in zoo")
    if len(archs) < 6:
        raise ValueError(f"heterogeneous zoo needs >=6 architectures, got {len(archs)}")
    if len({a.depth for a in archs}) < 2 or len({a.width for a in archs}) < 2:
        raise ValueError("heterogeneous zoo must span >=2 depths and >=2 widths")
