"""Differentiable layers with hand-written forward/backward passes.

Sequential chains of these layers are enough for every architecture in this
lab (client/server blocks, substitute, discriminator, decoder).  Each layer
keeps its parameters in ``params`` and writes gradients into ``grads`` on
``backward``; nothing touches parameter values until an optimizer step.

Conventions:
  * activations are [N, C, H, W] for spatial layers, [N, D] after a linear
  * conv weight is [C_out, C_in, kH, kW]; transposed-conv weight is
    [C_in, C_out, kH, kW]
  * maxpool ties break toward the first maximum in row-major window order
"""

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """An activation or loss became NaN/Inf."""


def ensure_finite(x, what="activation"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what} encountered")
    return x


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


# ---------------------------------------------------------------------------
# im2col / col2im helpers

def im2col(x, kh, kw, stride, pad):
    """[N,C,H,W] -> [N, C*kh*kw, L] patches, L = H_out*W_out."""
    n, c, h, w = x.shape
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(f"conv output dims not positive for input {x.shape}")
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # [N,C,H_out,W_out,kh,kw]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, h_out * w_out)
    return np.ascontiguousarray(cols), (h_out, w_out)


def col2im(cols, x_shape, kh, kw, stride, pad, h_out, w_out):
    """Scatter-add inverse of im2col. cols: [N, C*kh*kw, L] -> [N,C,H,W]."""
    n, c, h, w = x_shape
    cols = cols.reshape(n, c, kh, kw, h_out, w_out)
    x_pad = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for u in range(kh):
        for v in range(kw):
            x_pad[:, :, u:u + stride * h_out:stride, v:v + stride * w_out:stride] += cols[:, :, u, v]
    if pad > 0:
        return x_pad[:, :, pad:-pad, pad:-pad]
    return x_pad


# ---------------------------------------------------------------------------
# Layer base

class Layer:
    def __init__(self):
        self.params = []
        self.grads = []

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def out_shape(self, in_shape):
        """Per-sample output shape given per-sample input shape (no batch dim)."""
        raise NotImplementedError

    def param_names(self):
        return []


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, pad=None, bias=True,
                 rng=None, dtype=np.float32):
        super().__init__()
        if kernel < 1 or stride < 1:
            raise ShapeError("kernel and stride must be >= 1")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride = kernel, stride
        self.pad = (kernel // 2) if pad is None else pad
        fan_in = in_ch * kernel * kernel
        bound = np.sqrt(6.0 / fan_in)
        self.w = rng.uniform(-bound, bound, (out_ch, in_ch, kernel, kernel), dtype=dtype)
        # a bias feeding straight into batchnorm cancels exactly; allow dropping it
        self.b = np.zeros(out_ch, dtype=dtype) if bias else None
        self.params = [self.w] if self.b is None else [self.w, self.b]
        self.grads = [np.zeros_like(p) for p in self.params]
        self._cache = None

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"conv expected [N,{self.in_ch},H,W], got {x.shape}")
        cols, (h_out, w_out) = im2col(x, self.kernel, self.kernel, self.stride, self.pad)
        out = np.matmul(self.w.reshape(self.out_ch, -1), cols)
        out = out.reshape(x.shape[0], self.out_ch, h_out, w_out)
        if self.b is not None:
            out = out + self.b[None, :, None, None]
        if train:
            self._cache = (cols, x.shape, h_out, w_out)
        return out

    def backward(self, dout):
        cols, x_shape, h_out, w_out = self._cache
        n = x_shape[0]
        dflat = dout.reshape(n, self.out_ch, -1)
        dw = np.matmul(dflat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(self.w.shape)
        dcols = np.matmul(self.w.reshape(self.out_ch, -1).T, dflat)
        dx = col2im(dcols, x_shape, self.kernel, self.kernel, self.stride, self.pad, h_out, w_out)
        self.grads[0][...] = dw
        if self.b is not None:
            self.grads[1][...] = dflat.sum(axis=(0, 2))
        return dx

    def out_shape(self, in_shape):
        c, h, w = in_shape
        h_out = (h + 2 * self.pad - self.kernel) // self.stride + 1
        w_out = (w + 2 * self.pad - self.kernel) // self.stride + 1
        if h_out <= 0 or w_out <= 0:
            raise ShapeError(f"conv output dims not positive for input {in_shape}")
        return (self.out_ch, h_out, w_out)

    def param_names(self):
        return ["weight"] if self.b is None else ["weight", "bias"]


class ConvTranspose2d(Layer):
    """Stride-s upsampling convolution; forward is the adjoint of Conv2d."""

    def __init__(self, in_ch, out_ch, kernel=4, stride=2, pad=None, rng=None, dtype=np.float32):
        super().__init__()
        if kernel < 1 or stride < 1:
            raise ShapeError("kernel and stride must be >= 1")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride = kernel, stride
        # default padding keeps H_out == stride * H for kernel = 2*stride
        self.pad = ((kernel - stride + 1) // 2) if pad is None else pad
        fan_in = in_ch * kernel * kernel
        bound = np.sqrt(6.0 / fan_in)
        self.w = rng.uniform(-bound, bound, (in_ch, out_ch, kernel, kernel), dtype=dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._cache = None

    def _out_hw(self, h, w):
        h_out = (h - 1) * self.stride - 2 * self.pad + self.kernel
        w_out = (w - 1) * self.stride - 2 * self.pad + self.kernel
        if h_out <= 0 or w_out <= 0:
            raise ShapeError("transposed-conv output dims not positive")
        return h_out, w_out

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"convT expected [N,{self.in_ch},H,W], got {x.shape}")
        n, _, h, w = x.shape
        h_out, w_out = self._out_hw(h, w)
        xflat = x.reshape(n, self.in_ch, h * w)
        cols = np.matmul(self.w.reshape(self.in_ch, -1).T, xflat)
        out = col2im(cols, (n, self.out_ch, h_out, w_out), self.kernel, self.kernel,
                     self.stride, self.pad, h, w)
        out = out + self.b[None, :, None, None]
        if train:
            self._cache = (x, h_out, w_out)
        return out

    def backward(self, dout):
        x, h_out, w_out = self._cache
        n, _, h, w = x.shape
        dcols, _ = im2col(dout, self.kernel, self.kernel, self.stride, self.pad)
        xflat = x.reshape(n, self.in_ch, h * w)
        dw = np.matmul(xflat, dcols.transpose(0, 2, 1)).sum(axis=0).reshape(self.w.shape)
        db = dout.sum(axis=(0, 2, 3))
        dx = np.matmul(self.w.reshape(self.in_ch, -1), dcols).reshape(x.shape)
        self.grads[0][...] = dw
        self.grads[1][...] = db
        return dx

    def out_shape(self, in_shape):
        c, h, w = in_shape
        h_out, w_out = self._out_hw(h, w)
        return (self.out_ch, h_out, w_out)

    def param_names(self):
        return ["weight", "bias"]


class Linear(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32,
                 init_scale=1.0):
        super().__init__()
        # init_scale shrinks the init range; 0 gives an exactly-zero start
        # (used by critic heads so initial scores carry no side preference)
        bound = np.sqrt(6.0 / in_features) * init_scale
        self.in_features, self.out_features = in_features, out_features
        self.w = rng.uniform(-bound, bound, (out_features, in_features), dtype=dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._cache = None

    def forward(self, x, train):
        x2 = x.reshape(x.shape[0], -1)
        if x2.shape[1] != self.in_features:
            raise ShapeError(f"linear expected {self.in_features} features, got {x2.shape[1]}")
        out = x2 @ self.w.T + self.b
        if train:
            self._cache = (x2, x.shape)
        return out

    def backward(self, dout):
        x2, x_shape = self._cache
        self.grads[0][...] = dout.T @ x2
        self.grads[1][...] = dout.sum(axis=0)
        return (dout @ self.w).reshape(x_shape)

    def out_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.in_features:
            raise ShapeError(f"linear expected {self.in_features} features, got shape {in_shape}")
        return (self.out_features,)

    def param_names(self):
        return ["weight", "bias"]


class ReLU(Layer):
    def forward(self, x, train):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._mask

    def out_shape(self, in_shape):
        return in_shape


class Tanh(Layer):
    def forward(self, x, train):
        y = np.tanh(x)
        if train:
            self._y = y
        return y

    def backward(self, dout):
        return dout * (1.0 - self._y * self._y)

    def out_shape(self, in_shape):
        return in_shape


class MaxPool2d(Layer):
    def __init__(self, window=2):
        super().__init__()
        if window < 1:
            raise ShapeError("pool window must be >= 1")
        self.window = window

    def forward(self, x, train):
        n, c, h, w = x.shape
        k = self.window
        if h % k or w % k:
            raise ShapeError(f"pool window {k} must divide spatial dims {h}x{w}")
        patches = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5)
        flat = patches.reshape(n, c, h // k, w // k, k * k)
        idx = flat.argmax(axis=-1)  # first max in row-major window order
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (idx, x.shape)
        return out

    def backward(self, dout):
        idx, x_shape = self._cache
        n, c, h, w = x_shape
        k = self.window
        dflat = np.zeros((n, c, h // k, w // k, k * k), dtype=dout.dtype)
        np.put_along_axis(dflat, idx[..., None], dout[..., None], axis=-1)
        dx = dflat.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        return dx.reshape(x_shape)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        k = self.window
        if h % k or w % k:
            raise ShapeError(f"pool window {k} must divide spatial dims {h}x{w}")
        return (c, h // k, w // k)


class BatchNorm2d(Layer):
    def __init__(self, channels, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.params = [self.gamma, self.beta]
        self.grads = [np.zeros_like(self.gamma), np.zeros_like(self.beta)]
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, train):
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expected {self.channels} channels, got {x.shape[1]}")
        if train:
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean += BN_MOMENTUM * (mu - self.running_mean)
            self.running_var += BN_MOMENTUM * (var - self.running_var)
        else:
            mu, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
        out = self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]
        self._cache = (xhat, inv_std, x.shape, train)
        return out

    def backward(self, dout):
        xhat, inv_std, x_shape, train = self._cache
        g = self.gamma[None, :, None, None]
        self.grads[0][...] = (dout * xhat).sum(axis=(0, 2, 3))
        self.grads[1][...] = dout.sum(axis=(0, 2, 3))
        if not train:
            return dout * g * inv_std[None, :, None, None]
        n, c, h, w = x_shape
        m = n * h * w
        dxhat = dout * g
        # batch-statistics chain rule, per channel
        sum_dxhat = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        dx = (inv_std[None, :, None, None] / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx

    def out_shape(self, in_shape):
        return in_shape

    def param_names(self):
        return ["gamma", "beta"]


class ResBlock(Layer):
    """Two 3x3 conv+batchnorm stages with an identity skip.

    out = relu(bn2(conv2(relu(bn1(conv1(x))))) + x); requires in_ch == channels.
    """

    def __init__(self, channels, rng=None, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, 3, 1, bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(channels, channels, 3, 1, bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)
        self._inner = [self.conv1, self.bn1, self.relu1, self.conv2, self.bn2]
        self.params = [p for l in self._inner for p in l.params]
        self.grads = [g for l in self._inner for g in l.grads]

    def forward(self, x, train):
        if x.shape[1] != self.channels:
            raise ShapeError(f"resblock expected {self.channels} channels, got {x.shape[1]}")
        h = x
        for l in self._inner:
            h = l.forward(h, train)
        y = h + x
        if train:
            self._mask = y > 0
        return np.maximum(y, 0)

    def backward(self, dout):
        dy = dout * self._mask
        dh = dy
        for l in reversed(self._inner):
            dh = l.backward(dh)
        return dh + dy

    def out_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeError(f"resblock expected {self.channels} channels, got {in_shape[0]}")
        return in_shape

    def param_names(self):
        names = []
        for tag, l in (("conv1", self.conv1), ("bn1", self.bn1),
                       ("conv2", self.conv2), ("bn2", self.bn2)):
            names += [f"{tag}.{n}" for n in l.param_names()]
        return names
