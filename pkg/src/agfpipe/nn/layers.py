"""Network layers with hand-derived backward passes.

Conv tensors are NCHW; dense activations are (batch, features). Every layer
caches what its backward pass needs during a training forward; inference
forwards cache nothing and never mutate parameters (batchnorm running
statistics are only updated in train mode).
"""

import numpy as np

from ..errors import InvalidInputError


class Layer:
    """Common plumbing: named parameters, named gradients, named state buffers."""

    def __init__(self, name=""):
        self.name = name
        self.params = {}
        self.grads = {}
        self.state = {}

    def init(self, rng, dtype):
        pass

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def spec(self):
        raise NotImplementedError


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    """Stride-1 convolution with zero 'same' padding (odd kernels only)."""

    def __init__(self, cin, cout, kh, kw, name=""):
        super().__init__(name)
        if kh % 2 == 0 or kw % 2 == 0:
            raise InvalidInputError("conv kernels must be odd for 'same' padding")
        self.cin, self.cout, self.kh, self.kw = cin, cout, kh, kw

    def init(self, rng, dtype):
        self.params = {
            "W": _he_uniform(rng, (self.cout, self.cin, self.kh, self.kw),
                             self.cin * self.kh * self.kw, dtype),
            "b": np.zeros(self.cout, dtype=dtype),
        }

    def _im2col(self, x):
        b, c, h, w = x.shape
        ph, pw = self.kh // 2, self.kw // 2
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        cols = np.empty((b, c, self.kh, self.kw, h, w), dtype=x.dtype)
        for u in range(self.kh):
            for v in range(self.kw):
                cols[:, :, u, v] = xp[:, :, u:u + h, v:v + w]
        return cols.reshape(b, c * self.kh * self.kw, h * w)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise InvalidInputError(
                f"{self.name}: expected (B, {self.cin}, H, W), got {x.shape}")
        b, _, h, w = x.shape
        cols = self._im2col(x)
        w_mat = self.params["W"].reshape(self.cout, -1)
        out = (w_mat @ cols).reshape(b, self.cout, h, w)
        out += self.params["b"][None, :, None, None]
        if train:
            self._cache = (cols, x.shape)
        return out

    def backward(self, dout):
        cols, x_shape = self._cache
        b, c, h, w = x_shape
        dmat = dout.reshape(b, self.cout, h * w)
        w_mat = self.params["W"].reshape(self.cout, -1)

        dw = np.einsum("bij,bkj->ik", dmat, cols)
        self.grads = {
            "W": dw.reshape(self.params["W"].shape),
            "b": dout.sum(axis=(0, 2, 3)),
        }
        dcols = (w_mat.T @ dmat).reshape(b, c, self.kh, self.kw, h, w)
        ph, pw = self.kh // 2, self.kw // 2
        dxp = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=dout.dtype)
        for u in range(self.kh):
            for v in range(self.kw):
                dxp[:, :, u:u + h, v:v + w] += dcols[:, :, u, v]
        return dxp[:, :, ph:ph + h, pw:pw + w]

    def spec(self):
        return {"kind": "conv2d", "name": self.name, "cin": self.cin,
                "cout": self.cout, "kh": self.kh, "kw": self.kw}


class MaxPool2D(Layer):
    """Non-overlapping max pooling; odd remainders are dropped (floor division)."""

    def __init__(self, ph, pw, name=""):
        super().__init__(name)
        self.ph, self.pw = ph, pw

    def forward(self, x, train=False, rng=None):
        b, c, h, w = x.shape
        ho, wo = h // self.ph, w // self.pw
        if ho < 1 or wo < 1:
            raise InvalidInputError(f"{self.name}: input {x.shape} too small to pool")
        xc = x[:, :, :ho * self.ph, :wo * self.pw]
        windows = (xc.reshape(b, c, ho, self.ph, wo, self.pw)
                     .transpose(0, 1, 2, 4, 3, 5)
                     .reshape(b, c, ho, wo, self.ph * self.pw))
        idx = np.argmax(windows, axis=-1)  # first max wins ties
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (idx, x.shape)
        return out

    def backward(self, dout):
        idx, x_shape = self._cache
        b, c, h, w = x_shape
        ho, wo = h // self.ph, w // self.pw
        dwin = np.zeros((b, c, ho, wo, self.ph * self.pw), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        dx[:, :, :ho * self.ph, :wo * self.pw] = (
            dwin.reshape(b, c, ho, wo, self.ph, self.pw)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(b, c, ho * self.ph, wo * self.pw))
        return dx

    def spec(self):
        return {"kind": "maxpool2d", "name": self.name, "ph": self.ph, "pw": self.pw}


class BatchNorm(Layer):
    """Batch normalization over (B,) or (B, H, W) per channel.

    Train mode normalizes with biased batch statistics and updates running
    averages (momentum 0.9); infer mode uses the running statistics.
    """

    MOMENTUM = 0.9
    EPS = 1e-5

    def __init__(self, n, name=""):
        super().__init__(name)
        self.n = n

    def init(self, rng, dtype):
        self.params = {"gamma": np.ones(self.n, dtype=dtype),
                       "beta": np.zeros(self.n, dtype=dtype)}
        self.state = {"running_mean": np.zeros(self.n, dtype=dtype),
                      "running_var": np.ones(self.n, dtype=dtype)}

    def _axes_and_shape(self, x):
        if x.ndim == 4:
            return (0, 2, 3), (1, self.n, 1, 1)
        if x.ndim == 2:
            return (0,), (1, self.n)
        raise InvalidInputError(f"{self.name}: unsupported input rank {x.ndim}")

    def forward(self, x, train=False, rng=None):
        axes, bshape = self._axes_and_shape(x)
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.EPS)
            xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
            m = self.MOMENTUM
            self.state["running_mean"][:] = m * self.state["running_mean"] + (1 - m) * mean
            self.state["running_var"][:] = m * self.state["running_var"] + (1 - m) * var
            self._cache = (xhat, inv_std, axes, bshape)
            return gamma * xhat + beta
        mean = self.state["running_mean"].reshape(bshape)
        var = self.state["running_var"].reshape(bshape)
        return gamma * (x - mean) / np.sqrt(var + self.EPS) + beta

    def backward(self, dout):
        xhat, inv_std, axes, bshape = self._cache
        m = np.prod([dout.shape[a] for a in axes])
        self.grads = {"gamma": (dout * xhat).sum(axis=axes),
                      "beta": dout.sum(axis=axes)}
        gamma = self.params["gamma"].reshape(bshape)
        dxhat = dout * gamma
        dx = (dxhat
              - dxhat.mean(axis=axes).reshape(bshape)
              - xhat * (dxhat * xhat).mean(axis=axes).reshape(bshape))
        return dx * inv_std.reshape(bshape)

    def spec(self):
        return {"kind": "batchnorm", "name": self.name, "n": self.n}


class Dropout(Layer):
    """Inverted dropout: train scales the kept units by 1/(1-p), infer is identity.

    A frozen_mask (set externally) replaces fresh sampling, which makes the
    layer differentiable-in-place for gradient checking.
    """

    def __init__(self, p, name=""):
        super().__init__(name)
        self.p = p
        self.frozen_mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.p <= 0.0:
            return x
        if self.frozen_mask is not None:
            mask = self.frozen_mask
        else:
            if rng is None:
                raise InvalidInputError(f"{self.name}: train-mode dropout needs an rng")
            mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        self._cache = mask
        return x * mask

    def backward(self, dout):
        if self.p <= 0.0:
            return dout
        return dout * self._cache

    def spec(self):
        return {"kind": "dropout", "name": self.name, "p": self.p}


class ELU(Layer):
    """Exponential linear unit with alpha = 1."""

    def forward(self, x, train=False, rng=None):
        out = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
        if train:
            self._cache = (x > 0, out)
        return out

    def backward(self, dout):
        positive, out = self._cache
        return dout * np.where(positive, 1.0, out + 1.0)

    def spec(self):
        return {"kind": "elu", "name": self.name}


class Dense(Layer):
    def __init__(self, nin, nout, name=""):
        super().__init__(name)
        self.nin, self.nout = nin, nout

    def init(self, rng, dtype):
        self.params = {"W": _he_uniform(rng, (self.nin, self.nout), self.nin, dtype),
                       "b": np.zeros(self.nout, dtype=dtype)}

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.nin:
            raise InvalidInputError(
                f"{self.name}: expected (B, {self.nin}), got {x.shape}")
        if train:
            self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._cache
        self.grads = {"W": x.T @ dout, "b": dout.sum(axis=0)}
        return dout @ self.params["W"].T

    def spec(self):
        return {"kind": "dense", "name": self.name, "nin": self.nin, "nout": self.nout}


class GlobalAvgPool(Layer):
    """(B, C, H, W) -> (B, C) by spatial mean."""

    def forward(self, x, train=False, rng=None):
        if train:
            self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        b, c, h, w = self._cache
        return np.broadcast_to(dout[:, :, None, None], (b, c, h, w)) / (h * w)

    def spec(self):
        return {"kind": "global_avg_pool", "name": self.name}


class Softmax(Layer):
    """Row softmax as an explicit layer (exact Jacobian backward)."""

    def forward(self, x, train=False, rng=None):
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)
        if train:
            self._cache = out
        return out

    def backward(self, dout):
        s = self._cache
        return s * (dout - (dout * s).sum(axis=1, keepdims=True))

    def spec(self):
        return {"kind": "softmax", "name": self.name}


_KINDS = {
    "conv2d": lambda d: Conv2D(d["cin"], d["cout"], d["kh"], d["kw"], name=d["name"]),
    "maxpool2d": lambda d: MaxPool2D(d["ph"], d["pw"], name=d["name"]),
    "batchnorm": lambda d: BatchNorm(d["n"], name=d["name"]),
    "dropout": lambda d: Dropout(d["p"], name=d["name"]),
    "elu": lambda d: ELU(name=d["name"]),
    "dense": lambda d: Dense(d["nin"], d["nout"], name=d["name"]),
    "global_avg_pool": lambda d: GlobalAvgPool(name=d["name"]),
    "softmax": lambda d: Softmax(name=d["name"]),
}


def layer_from_spec(d: dict) -> Layer:
    try:
        return _KINDS[d["kind"]](d)
    except KeyError as e:
        raise InvalidInputError(f"unknown layer spec {d!r}") from e
