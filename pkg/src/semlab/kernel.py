"""Dense-tensor math for a fixed layer vocabulary with exact backprop.

Tensors are plain float64 numpy arrays (row-major). The public
``layer_apply`` / ``layer_backprop`` functions operate on single samples;
the ``*_batch`` variants take a leading batch axis and are what the rest
of the package uses in hot loops. All arithmetic is double precision.

Layer kinds:
  dense            y = W @ x + b                      params [W(out,in), b(out)]
  conv2d           stride-1 valid cross-correlation   params [W(oc,ic,k,k), b(oc)]
  relu             elementwise max(0, x)              no params
  avgpool          non-overlapping p*p mean pooling   no params
  flatten          (C,H,W) -> (C*H*W,)                no params
  softmax_xent     softmax head; apply returns the probability vector,
                   backprop treats ``upstream`` as the (possibly scaled)
                   target vector of a cross-entropy loss and returns
                   sum(upstream) * probs - upstream, which for a one-hot
                   target is the familiar probs - onehot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAYER_KINDS = ("dense", "conv2d", "relu", "avgpool", "flatten", "softmax_xent")


class ShapeError(ValueError):
    """Input/parameter shape does not match what a layer expects."""


class NonFiniteError(ArithmeticError):
    """An operation produced or consumed a NaN/Inf value."""


@dataclass(frozen=True)
class LayerDescriptor:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    pool: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (self.in_dim < 1 or self.out_dim < 1):
            raise ValueError("dense layer needs positive in_dim/out_dim")
        if self.kind == "conv2d" and (
            self.in_channels < 1 or self.out_channels < 1 or self.kernel_size < 1
        ):
            raise ValueError("conv2d layer needs positive channels and kernel_size")
        if self.kind == "avgpool" and self.pool < 1:
            raise ValueError("avgpool layer needs positive pool size")


def dense(in_dim: int, out_dim: int) -> LayerDescriptor:
    return LayerDescriptor("dense", in_dim=in_dim, out_dim=out_dim)


def conv2d(in_channels: int, out_channels: int, kernel_size: int) -> LayerDescriptor:
    return LayerDescriptor(
        "conv2d",
        in_channels=in_channels,
        out_channels=out_channels,
        kernel_size=kernel_size,
    )


def relu() -> LayerDescriptor:
    return LayerDescriptor("relu")


def avgpool(pool: int) -> LayerDescriptor:
    return LayerDescriptor("avgpool", pool=pool)


def flatten() -> LayerDescriptor:
    return LayerDescriptor("flatten")


def softmax_xent() -> LayerDescriptor:
    return LayerDescriptor("softmax_xent")


def as_tensor(values, shape=None) -> np.ndarray:
    """Coerce to a float64 array, optionally reshaping flat values."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} contains NaN/Inf")
    return arr


# ---------------------------------------------------------------------------
# sampling

def gaussian_sample(shape, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. N(0, sigma^2) tensor; sigma=0 returns exact zeros."""
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0.0:
        return np.zeros(shape, dtype=np.float64)
    return rng.normal(0.0, sigma, size=shape)


# ---------------------------------------------------------------------------
# shape chain

def output_shape(layer: LayerDescriptor, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Feature shape a layer produces for a given input feature shape."""
    kind = layer.kind
    if kind == "dense":
        if in_shape != (layer.in_dim,):
            raise ShapeError(f"dense expects ({layer.in_dim},), got {in_shape}")
        return (layer.out_dim,)
    if kind == "conv2d":
        if len(in_shape) != 3 or in_shape[0] != layer.in_channels:
            raise ShapeError(
                f"conv2d expects ({layer.in_channels},H,W), got {in_shape}"
            )
        c, h, w = in_shape
        k = layer.kernel_size
        if h < k or w < k:
            raise ShapeError(f"conv2d kernel {k} too large for input {in_shape}")
        return (layer.out_channels, h - k + 1, w - k + 1)
    if kind == "relu":
        return in_shape
    if kind == "avgpool":
        if len(in_shape) != 3:
            raise ShapeError(f"avgpool expects (C,H,W), got {in_shape}")
        c, h, w = in_shape
        p = layer.pool
        if h % p or w % p:
            raise ShapeError(f"avgpool window {p} does not divide input {in_shape}")
        return (c, h // p, w // p)
    if kind == "flatten":
        if len(in_shape) != 3:
            raise ShapeError(f"flatten expects (C,H,W), got {in_shape}")
        return (int(np.prod(in_shape)),)
    if kind == "softmax_xent":
        if len(in_shape) != 1:
            raise ShapeError(f"softmax_xent expects a logit vector, got {in_shape}")
        return in_shape
    raise ValueError(kind)


def param_shapes(layer: LayerDescriptor) -> list[tuple[int, ...]]:
    if layer.kind == "dense":
        return [(layer.out_dim, layer.in_dim), (layer.out_dim,)]
    if layer.kind == "conv2d":
        k = layer.kernel_size
        return [(layer.out_channels, layer.in_channels, k, k), (layer.out_channels,)]
    return []


def _check_params(layer: LayerDescriptor, params) -> None:
    expect = param_shapes(layer)
    got = [np.shape(p) for p in params]
    if got != expect:
        raise ShapeError(f"{layer.kind} params expect shapes {expect}, got {got}")


# ---------------------------------------------------------------------------
# batched forward/backward (leading batch axis)

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B,C,H,W) -> (B, H', W', C*k*k) patches for stride-1 valid conv."""
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    # win: (B, C, H', W', k, k) -> (B, H', W', C, k, k)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def forward_batch(layer: LayerDescriptor, params, x: np.ndarray):
    """Forward a batch through one layer; returns (output, cache)."""
    kind = layer.kind
    if kind == "dense":
        w, b = params
        if x.shape[-1] != layer.in_dim:
            raise ShapeError(f"dense expects (*,{layer.in_dim}), got {x.shape}")
        return x @ w.T + b, x
    if kind == "conv2d":
        w, b = params
        if x.ndim != 4 or x.shape[1] != layer.in_channels:
            raise ShapeError(
                f"conv2d expects (B,{layer.in_channels},H,W), got {x.shape}"
            )
        k = layer.kernel_size
        bsz, _, h, wd = x.shape
        if h < k or wd < k:
            raise ShapeError(f"conv2d kernel {k} too large for input {x.shape}")
        cols = _im2col(x, k)  # (B,H',W',C*k*k after reshape)
        hp, wp = cols.shape[1], cols.shape[2]
        flat = cols.reshape(bsz * hp * wp, -1)
        out = flat @ w.reshape(layer.out_channels, -1).T
        out = out.reshape(bsz, hp, wp, layer.out_channels).transpose(0, 3, 1, 2)
        return out + b[None, :, None, None], (x, flat, (hp, wp))
    if kind == "relu":
        return np.maximum(x, 0.0), x > 0
    if kind == "avgpool":
        p = layer.pool
        if x.ndim != 4 or x.shape[2] % p or x.shape[3] % p:
            raise ShapeError(f"avgpool window {p} does not divide input {x.shape}")
        bsz, c, h, wd = x.shape
        out = x.reshape(bsz, c, h // p, p, wd // p, p).mean(axis=(3, 5))
        return out, x.shape
    if kind == "flatten":
        if x.ndim != 4:
            raise ShapeError(f"flatten expects (B,C,H,W), got {x.shape}")
        return x.reshape(x.shape[0], -1), x.shape
    if kind == "softmax_xent":
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=-1, keepdims=True)
        return probs, probs
    raise ValueError(kind)


def backward_batch(layer: LayerDescriptor, params, cache, upstream: np.ndarray,
                   need_param_grads: bool = True):
    """Backprop a batch through one layer.

    Returns (input_grad, param_grads). Parameter gradients are summed over
    the batch; input gradients stay per-sample. ``need_param_grads=False``
    skips the parameter-gradient work (attack hot path).
    """
    kind = layer.kind
    if kind == "dense":
        w, b = params
        x = cache
        if upstream.shape != x.shape[:-1] + (layer.out_dim,):
            raise ShapeError(
                f"dense upstream expects (*,{layer.out_dim}), got {upstream.shape}"
            )
        dx = upstream @ w
        if not need_param_grads:
            return dx, []
        dw = upstream.reshape(-1, layer.out_dim).T @ x.reshape(-1, layer.in_dim)
        db = upstream.reshape(-1, layer.out_dim).sum(axis=0)
        return dx, [dw, db]
    if kind == "conv2d":
        w, b = params
        x, flat, (hp, wp) = cache
        oc, ic, k, _ = w.shape
        bsz = x.shape[0]
        if upstream.shape != (bsz, oc, hp, wp):
            raise ShapeError(
                f"conv2d upstream expects {(bsz, oc, hp, wp)}, got {upstream.shape}"
            )
        up_flat = upstream.transpose(0, 2, 3, 1).reshape(-1, oc)
        grads = []
        if need_param_grads:
            dw = (up_flat.T @ flat).reshape(oc, ic, k, k)
            db = up_flat.sum(axis=0)
            grads = [dw, db]
        # input grad: full correlation of upstream with the flipped kernel
        pad = k - 1
        up_pad = np.pad(upstream, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols_up = _im2col(up_pad, k).reshape(bsz * x.shape[2] * x.shape[3], -1)
        w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(ic, -1)
        dx = cols_up @ w_flip.T
        dx = dx.reshape(bsz, x.shape[2], x.shape[3], ic).transpose(0, 3, 1, 2)
        return dx, grads
    if kind == "relu":
        mask = cache
        if upstream.shape != mask.shape:
            raise ShapeError(f"relu upstream {upstream.shape} != input {mask.shape}")
        return upstream * mask, []
    if kind == "avgpool":
        in_shape = cache
        p = layer.pool
        bsz, c, h, wd = in_shape
        if upstream.shape != (bsz, c, h // p, wd // p):
            raise ShapeError(
                f"avgpool upstream expects {(bsz, c, h // p, wd // p)},"
                f" got {upstream.shape}"
            )
        dx = np.repeat(np.repeat(upstream, p, axis=2), p, axis=3) / (p * p)
        return dx, []
    if kind == "flatten":
        in_shape = cache
        if upstream.shape != (in_shape[0], int(np.prod(in_shape[1:]))):
            raise ShapeError(
                f"flatten upstream {upstream.shape} does not match input {in_shape}"
            )
        return upstream.reshape(in_shape), []
    if kind == "softmax_xent":
        probs = cache
        if upstream.shape != probs.shape:
            raise ShapeError(
                f"softmax_xent upstream {upstream.shape} != probs {probs.shape}"
            )
        scale = upstream.sum(axis=-1, keepdims=True)
        return probs * scale - upstream, []
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# single-sample surface

def layer_apply(layer: LayerDescriptor, params, x: np.ndarray):
    """Forward one sample; returns (output, cache). Output checked finite."""
    _check_params(layer, params)
    x = as_tensor(x)
    out, cache = forward_batch(layer, params, x[None, ...])
    out = out[0]
    check_finite(out, f"{layer.kind} output")
    return out, cache


def layer_backprop(layer: LayerDescriptor, params, cache, upstream: np.ndarray):
    """Exact gradients of one sample's layer application.

    ``cache`` must come from the matching ``layer_apply``. For the
    softmax_xent head, ``upstream`` is the cross-entropy target vector.
    """
    _check_params(layer, params)
    upstream = as_tensor(upstream)
    dx, grads = backward_batch(layer, params, cache, upstream[None, ...])
    dx = dx[0]
    check_finite(dx, f"{layer.kind} input gradient")
    for g in grads:
        check_finite(g, f"{layer.kind} parameter gradient")
    return dx, grads


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, coordinate by
    coordinate: (f(x + h e_i) - f(x - h e_i)) / (2 h)."""
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = as_tensor(x)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = float(f(x))
        xf[i] = orig - h
        fm = float(f(x))
        xf[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"objective returned non-finite value at coord {i}")
        flat[i] = (fp - fm) / (2.0 * h)
    return grad
