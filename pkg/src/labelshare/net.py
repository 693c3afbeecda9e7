"""Small encoder-decoder segmentation network, hand-differentiated.

Architecture (depth d, base width w): d encoder levels of two 3x3 conv+ReLU
blocks with channel widths w, 2w, 4w, ..., joined by 2x2 max-pooling;
a mirrored decoder with nearest-neighbour 2x upsampling and skip
concatenation; a 1x1 head producing C channels followed by a per-pixel
softmax. Everything runs in float64 numpy; forward caches enough state for
an exact analytic backward pass.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidConfig, ShapeError


@dataclass
class ModelConfig:
    out_channels: int  # C = number of labels + 1 background channel
    in_channels: int = 1
    depth: int = 3
    base_width: int = 16
    seed: int = 0

    def validate(self):
        if self.out_channels < 2:
            raise InvalidConfig(f"out_channels must be >= 2, got {self.out_channels}")
        if self.depth < 1:
            raise InvalidConfig(f"depth must be >= 1, got {self.depth}")
        if self.in_channels < 1 or self.base_width < 1:
            raise InvalidConfig("in_channels and base_width must be >= 1")

    def to_json(self):
        return {
            "out_channels": self.out_channels,
            "in_channels": self.in_channels,
            "depth": self.depth,
            "base_width": self.base_width,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


def param_shapes(config):
    """Ordered {name: shape} of every weight tensor. 3x3 convs are
    (out, in, 3, 3); the 1x1 head is (C, width)."""
    config.validate()
    shapes = {}
    widths = [config.base_width * 2**i for i in range(config.depth)]
    prev = config.in_channels
    for i, w in enumerate(widths):
        shapes[f"enc{i}_a.W"] = (w, prev, 3, 3)
        shapes[f"enc{i}_a.b"] = (w,)
        shapes[f"enc{i}_b.W"] = (w, w, 3, 3)
        shapes[f"enc{i}_b.b"] = (w,)
        prev = w
    for i in range(config.depth - 2, -1, -1):
        w = widths[i]
        shapes[f"dec{i}_a.W"] = (w, widths[i] + prev, 3, 3)
        shapes[f"dec{i}_a.b"] = (w,)
        shapes[f"dec{i}_b.W"] = (w, w, 3, 3)
        shapes[f"dec{i}_b.b"] = (w,)
        prev = w
    shapes["head.W"] = (config.out_channels, prev)
    shapes["head.b"] = (config.out_channels,)
    return shapes


def parameter_count(config):
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init_params(config):
    """Fan-in-scaled uniform initialization, deterministic in config.seed."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def flatten_params(params):
    return np.concatenate([params[k].ravel() for k in params])


def unflatten_params(flat, shapes):
    params = {}
    pos = 0
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        params[name] = flat[pos : pos + n].reshape(shape).copy()
        pos += n
    if pos != flat.size:
        raise ShapeError(f"flat vector has {flat.size} entries, expected {pos}")
    return params


# --- primitives -------------------------------------------------------------
#
# Internals run channels-last (B, H, W, C): the im2col gather then copies
# with unit stride over channels, which is what makes pure-numpy training
# fast enough. Parameters stay in the documented (out, in, 3, 3) layout.


def _im2col(x):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B,H,W,C,3,3)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        b * h * w, 9 * c
    )


def _kernel_matrix(W):
    # (out, in, 3, 3) -> (3*3*in, out), matching _im2col's (u, v, c) order
    return np.ascontiguousarray(W.transpose(2, 3, 1, 0)).reshape(-1, W.shape[0])


def _conv3x3(x, W, b):
    bs, h, w, _ = x.shape
    cols = _im2col(x)
    y = cols @ _kernel_matrix(W) + b
    return y.reshape(bs, h, w, -1), cols


def _conv3x3_backward(dy, cols, x_shape, W):
    bs, h, w, cin = x_shape
    cout = W.shape[0]
    dym = dy.reshape(-1, cout)
    dW = (cols.T @ dym).reshape(3, 3, cin, cout).transpose(3, 2, 0, 1)
    db = dym.sum(axis=0)
    # dx is the correlation of dy with the flipped, in/out-transposed kernel
    Wt = W[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx, _ = _conv3x3(dy, Wt, np.zeros(cin, dtype=dy.dtype))
    return dx, dW, db


def _maxpool2(x):
    b, h, w, c = x.shape
    xw = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    xw = np.ascontiguousarray(xw).reshape(b, h // 2, w // 2, 4, c)
    idx = xw.argmax(axis=3)
    out = np.take_along_axis(xw, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, idx


def _maxpool2_backward(dy, idx, x_shape):
    b, h, w, c = x_shape
    dxw = np.zeros((b, h // 2, w // 2, 4, c), dtype=dy.dtype)
    np.put_along_axis(dxw, idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
    dx = dxw.reshape(b, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(dx).reshape(b, h, w, c)


def _upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _upsample2_backward(dy):
    b, h2, w2, c = dy.shape
    return dy.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))


def softmax_channels(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs, dprobs, axis=-1):
    dot = (dprobs * probs).sum(axis=axis, keepdims=True)
    return probs * (dprobs - dot)


# --- the model --------------------------------------------------------------


class Model:
    def __init__(self, config, params=None):
        config.validate()
        self.config = config
        self.shapes = param_shapes(config)
        self.params = params if params is not None else init_params(config)
        self._cache = None

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected (B,{self.config.in_channels},H,W), got {x.shape}")
        div = 2 ** (self.config.depth - 1)
        if x.shape[2] % div or x.shape[3] % div:
            raise ShapeError(
                f"H and W must be divisible by {div} for depth {self.config.depth}, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )

    def _block(self, x, name, cache):
        """conv3x3 + ReLU twice."""
        for part in ("a", "b"):
            W, b = self.params[f"{name}_{part}.W"], self.params[f"{name}_{part}.b"]
            y, cols = _conv3x3(x, W, b)
            a = np.maximum(y, 0.0)
            cache.append((f"{name}_{part}", x.shape, cols, y > 0))
            x = a
        return x

    def _block_backward(self, dx, cache, grads):
        for name, x_shape, cols, act_mask in reversed(cache):
            dy = dx * act_mask
            dx, dW, db = _conv3x3_backward(dy, cols, x_shape, self.params[f"{name}.W"])
            grads[f"{name}.W"] = dW
            grads[f"{name}.b"] = db
        return dx

    def forward(self, x):
        """Per-pixel class probabilities (B, C, H, W); caches for backward."""
        self._check_input(x)
        dtype = self.params["head.b"].dtype
        x = np.ascontiguousarray(np.transpose(x, (0, 2, 3, 1)).astype(dtype))
        d = self.config.depth
        cache = {"blocks": {}, "pool": {}}
        skips = {}
        for i in range(d):
            blk = []
            x = self._block(x, f"enc{i}", blk)
            cache["blocks"][f"enc{i}"] = blk
            if i < d - 1:
                skips[i] = x
                x, idx = _maxpool2(x)
                cache["pool"][i] = (idx, skips[i].shape)
        for i in range(d - 2, -1, -1):
            up = _upsample2(x)
            x = np.concatenate([skips[i], up], axis=3)
            cache[f"cat{i}_split"] = skips[i].shape[3]
            blk = []
            x = self._block(x, f"dec{i}", blk)
            cache["blocks"][f"dec{i}"] = blk
        bs, h, w, cw = x.shape
        flat = x.reshape(-1, cw)
        logits = flat @ self.params["head.W"].T + self.params["head.b"]
        logits = logits.reshape(bs, h, w, -1)
        probs_cl = softmax_channels(logits)
        cache["head_in"] = flat
        cache["probs_cl"] = probs_cl
        self._cache = cache
        return np.ascontiguousarray(np.transpose(probs_cl, (0, 3, 1, 2)))

    def backward(self, dprobs):
        """Gradients of the scalar loss w.r.t. every parameter, given
        d(loss)/d(probs) for the most recent forward call."""
        cache = self._cache
        if cache is None:
            raise ShapeError("backward called before forward")
        d = self.config.depth
        grads = {}
        dtype = self.params["head.b"].dtype
        dprobs_cl = np.ascontiguousarray(np.transpose(dprobs, (0, 2, 3, 1)).astype(dtype))
        dlogits = softmax_backward(cache["probs_cl"], dprobs_cl)
        c = dlogits.shape[3]
        dlm = dlogits.reshape(-1, c)
        grads["head.W"] = dlm.T @ cache["head_in"]
        grads["head.b"] = dlm.sum(axis=0)
        dx = (dlm @ self.params["head.W"]).reshape(
            dlogits.shape[0], dlogits.shape[1], dlogits.shape[2], -1
        )
        # unwind decoder stages (executed d-2 .. 0, so reversed here);
        # each skip's gradient is held until the encoder pass below
        dskips = {}
        for i in range(d - 1):
            dx = self._block_backward(dx, cache["blocks"][f"dec{i}"], grads)
            nskip = cache[f"cat{i}_split"]
            dskips[i] = dx[..., :nskip]
            dx = _upsample2_backward(np.ascontiguousarray(dx[..., nskip:]))
        # encoder chain: bottleneck back to the input, merging skip gradients
        for i in range(d - 1, -1, -1):
            if i < d - 1:
                idx, pre_pool_shape = cache["pool"][i]
                dx = _maxpool2_backward(dx, idx, pre_pool_shape) + dskips[i]
            dx = self._block_backward(dx, cache["blocks"][f"enc{i}"], grads)
        return {name: grads[name] for name in self.shapes}
