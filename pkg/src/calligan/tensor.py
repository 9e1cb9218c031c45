"""Reverse-mode automatic differentiation over numpy arrays.

Only the operations the glyph-transfer model actually needs are provided:
strided 2-d convolution and its transpose, batch normalization, a handful of
elementwise activations, channel concatenation, an affine (fully connected)
layer, basic arithmetic, reductions, and slicing.  No general broadcasting,
no GPU, no dynamic graph optimization.

The tape is implicit: every Tensor produced by an operation remembers its
parent tensors, a backward closure, and a monotonically increasing execution
stamp.  ``backward()`` replays the closures in exact reverse execution order,
so a tensor feeding several consumers has its gradient fully accumulated
before its own closure runs.  One graph is built per training step and
garbage-collected afterwards.

Any NaN/Inf appearing in a forward result or a backward contribution raises
``NumericsError`` naming the offending operation; silent propagation of bad
values is never allowed.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ConfigError, NumericsError, UsageError

__all__ = [
    "Tensor",
    "conv2d",
    "conv_transpose2d",
    "batchnorm",
    "relu",
    "leaky_relu",
    "sigmoid",
    "concat_channels",
    "fully_connected",
    "finite_diff_check",
]

_exec_stamp = itertools.count()

# gradient flow of the backward pass currently running (a stack, in case a
# closure ever triggers a nested pass); closures route gradients here so each
# pass is computed fresh instead of re-reading grads left by earlier passes
_active_flow: list[dict[int, np.ndarray]] = []


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced by op '{op}'")
    return arr


class Tensor:
    """N-dimensional array participating in the gradient tape.

    ``grad`` has the same shape as ``data`` and is allocated lazily; repeated
    ``backward()`` calls accumulate into it until ``zero_grad()``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"
        self._seq = next(_exec_stamp)

    # -- construction of graph nodes -------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], op: str,
                 backward_fn: Callable[[np.ndarray], None] | None) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._op = op
        out._seq = next(_exec_stamp)
        if out.requires_grad:
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out._parents = ()
            out._backward_fn = None
        return out

    # -- basic introspection ----------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op!r})"

    # -- gradient bookkeeping ----------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Same values, severed from the tape."""
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g: np.ndarray, op: str) -> None:
        if not self.requires_grad:
            return
        _check_finite(g, op + " (backward)")
        if g.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != tensor shape {self.data.shape} in op '{op}'")
        if _active_flow:
            flow = _active_flow[-1]
            held = flow.get(id(self))
            if held is None:
                flow[id(self)] = g.copy()
            else:
                held += g
        else:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad tensor reachable from here.

        The output must hold exactly one element.  Closures run in exact
        reverse execution order, so each node's incoming gradient is complete
        across all its consumers before its own closure fires.  Gradients add
        into ``grad``; a second call on the same graph adds the same amounts
        again.
        """
        if self.data.size != 1:
            raise UsageError(f"backward requires a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            return
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        flow: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        _active_flow.append(flow)
        try:
            for t in nodes:
                g = flow.pop(id(t), None)
                if g is None:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
                if t._backward_fn is not None:
                    t._backward_fn(g)
        finally:
            _active_flow.pop()

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.shape != self.shape and other.size != 1 and self.size != 1:
                raise DimensionError(f"shape mismatch: {self.shape} vs {other.shape}")
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other
        out = Tensor._from_op(a.data + b.data, (a, b), "add", None)
        if out.requires_grad:
            def bw(g):
                a._accumulate(_reduce_to(g, a.shape), "add")
                b._accumulate(_reduce_to(g, b.shape), "add")
            out._backward_fn = bw
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self
        out = Tensor._from_op(-a.data, (a,), "neg", None)
        if out.requires_grad:
            out._backward_fn = lambda g: a._accumulate(-g, "neg")
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other
        out = Tensor._from_op(a.data * b.data, (a, b), "mul", None)
        if out.requires_grad:
            def bw(g):
                a._accumulate(_reduce_to(g * b.data, a.shape), "mul")
                b._accumulate(_reduce_to(g * a.data, b.shape), "mul")
            out._backward_fn = bw
        return out

    __rmul__ = __mul__

    # -- reductions and elementwise ops --------------------------------------

    def sum(self) -> "Tensor":
        a = self
        out = Tensor._from_op(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), "sum", None)
        if out.requires_grad:
            out._backward_fn = lambda g: a._accumulate(np.full_like(a.data, g), "sum")
        return out

    def mean(self) -> "Tensor":
        a = self
        n = a.data.size
        out = Tensor._from_op(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), "mean", None)
        if out.requires_grad:
            out._backward_fn = lambda g: a._accumulate(np.full_like(a.data, g / n), "mean")
        return out

    def abs(self) -> "Tensor":
        a = self
        out = Tensor._from_op(np.abs(a.data), (a,), "abs", None)
        if out.requires_grad:
            sign = np.sign(a.data)
            out._backward_fn = lambda g: a._accumulate(g * sign, "abs")
        return out

    def log(self) -> "Tensor":
        a = self
        with np.errstate(invalid="ignore", divide="ignore"):
            out = Tensor._from_op(np.log(a.data), (a,), "log", None)
        if out.requires_grad:
            out._backward_fn = lambda g: a._accumulate(g / a.data, "log")
        return out

    def sqrt(self) -> "Tensor":
        a = self
        with np.errstate(invalid="ignore"):
            root = np.sqrt(a.data)
        out = Tensor._from_op(root, (a,), "sqrt", None)
        if out.requires_grad:
            out._backward_fn = lambda g: a._accumulate(g * (0.5 / root), "sqrt")
        return out

    def clamp(self, lo: float, hi: float) -> "Tensor":
        a = self
        out = Tensor._from_op(np.clip(a.data, lo, hi), (a,), "clamp", None)
        if out.requires_grad:
            mask = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
            out._backward_fn = lambda g: a._accumulate(g * mask, "clamp")
        return out

    def reshape(self, *shape: int) -> "Tensor":
        a = self
        out = Tensor._from_op(a.data.reshape(shape), (a,), "reshape", None)
        if out.requires_grad:
            out._backward_fn = lambda g: a._accumulate(g.reshape(a.data.shape), "reshape")
        return out

    def __getitem__(self, key) -> "Tensor":
        a = self
        out = Tensor._from_op(np.ascontiguousarray(a.data[key]), (a,), "slice", None)
        if out.requires_grad:
            def bw(g):
                full = np.zeros_like(a.data)
                full[key] += g
                a._accumulate(full, "slice")
            out._backward_fn = bw
        return out


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # scalar operands broadcast against arrays; fold the gradient back down
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


# -- activations -------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = Tensor._from_op(np.where(pos, x.data, slope * x.data), (x,), "leaky_relu", None)
    if out.requires_grad:
        factor = np.where(pos, np.asarray(1.0, x.data.dtype), np.asarray(slope, x.data.dtype))
        out._backward_fn = lambda g: x._accumulate(g * factor, "leaky_relu")
    return out


def sigmoid(x: Tensor) -> Tensor:
    # numerically stable in both tails
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor._from_op(y, (x,), "sigmoid", None)
    if out.requires_grad:
        out._backward_fn = lambda g: x._accumulate(g * y * (1.0 - y), "sigmoid")
    return out


# -- convolution --------------------------------------------------------------


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """View of shape [N, C, kh, kw, Ho, Wo] over the zero-padded input."""
    n, c, h, w = x.shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    s = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, ho, wo),
        (s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
        writeable=False)


def _conv_forward(x: np.ndarray, k: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    co, ci, kh, kw = k.shape
    cols = _im2col(x, kh, kw, stride, pad)
    ho, wo = cols.shape[4], cols.shape[5]
    mat = cols.reshape(n, c * kh * kw, ho * wo)
    y = np.matmul(k.reshape(co, ci * kh * kw), mat)
    return y.reshape(n, co, ho, wo)


def _conv_grad_kernel(x: np.ndarray, gy: np.ndarray, k_shape, stride: int, pad: int) -> np.ndarray:
    n = x.shape[0]
    co, ci, kh, kw = k_shape
    cols = _im2col(x, kh, kw, stride, pad)
    ho, wo = cols.shape[4], cols.shape[5]
    mat = cols.reshape(n, ci * kh * kw, ho * wo)
    g = gy.reshape(n, co, ho * wo)
    gk = np.matmul(g, mat.transpose(0, 2, 1)).sum(axis=0)
    return gk.reshape(co, ci, kh, kw)


def _conv_grad_input(gy: np.ndarray, k: np.ndarray, x_shape, stride: int, pad: int) -> np.ndarray:
    """Adjoint of _conv_forward; also the forward map of the transposed conv."""
    n, c, h, w = x_shape
    co, ci, kh, kw = k.shape
    ho, wo = gy.shape[2], gy.shape[3]
    g = gy.reshape(n, co, ho * wo)
    gcols = np.matmul(k.reshape(co, ci * kh * kw).T, g)
    gcols = gcols.reshape(n, ci, kh, kw, ho, wo)
    gx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=gy.dtype)
    for a in range(kh):
        for b in range(kw):
            gx[:, :, a:a + stride * ho:stride, b:b + stride * wo:stride] += gcols[:, :, a, b]
    if pad:
        gx = gx[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(gx)


def _validate_conv_args(stride: int, padding: int) -> None:
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigError(f"padding must be >= 0, got {padding}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided 2-d convolution with zero padding.

    x: [N, Cin, H, W], kernel: [Cout, Cin, kH, kW], bias: [Cout].
    Output spatial size is floor((H + 2*padding - kH)/stride) + 1.
    """
    _validate_conv_args(stride, padding)
    n, cin, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    if ci != cin:
        raise DimensionError(f"conv2d channel mismatch: input has {cin}, kernel expects {ci}")
    if bias.shape != (co,):
        raise DimensionError(f"conv2d bias shape {bias.shape} != ({co},)")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    y = _conv_forward(x.data, kernel.data, stride, padding)
    y += bias.data.reshape(1, co, 1, 1)
    out = Tensor._from_op(y, (x, kernel, bias), "conv2d", None)
    if out.requires_grad:
        def bw(g):
            x._accumulate(_conv_grad_input(g, kernel.data, x.shape, stride, padding), "conv2d")
            kernel._accumulate(_conv_grad_kernel(x.data, g, kernel.shape, stride, padding), "conv2d")
            bias._accumulate(g.sum(axis=(0, 2, 3)), "conv2d")
        out._backward_fn = bw
    return out


def conv_transpose2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution: the exact adjoint of conv2d with the same kernel.

    x: [N, Cin, H, W], kernel: [Cin, Cout, kH, kW], bias: [Cout].
    Output spatial size is (H-1)*stride - 2*padding + kH + output_padding.
    ``output_padding`` (0 <= it < stride) disambiguates which conv2d input
    size this op is the adjoint of; 0 matches the plain formula.
    """
    _validate_conv_args(stride, padding)
    if not 0 <= output_padding < max(stride, 1):
        raise ConfigError(f"output_padding must be in [0, stride), got {output_padding}")
    n, cin, h, w = x.shape
    ci, co, kh, kw = kernel.shape
    if ci != cin:
        raise DimensionError(
            f"conv_transpose2d channel mismatch: input has {cin}, kernel expects {ci}")
    if bias.shape != (co,):
        raise DimensionError(f"conv_transpose2d bias shape {bias.shape} != ({co},)")
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (w - 1) * stride - 2 * padding + kw + output_padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv_transpose2d output size {ho}x{wo} is empty")
    # kernel [Cin, Cout, kh, kw] doubles as a conv2d kernel whose "output"
    # channels are our input channels, so forward == conv2d's input gradient
    y = _conv_grad_input(x.data, kernel.data, (n, co, ho, wo), stride, padding)
    y += bias.data.reshape(1, co, 1, 1)
    out = Tensor._from_op(y, (x, kernel, bias), "conv_transpose2d", None)
    if out.requires_grad:
        def bw(g):
            x._accumulate(_conv_forward(g, kernel.data, stride, padding), "conv_transpose2d")
            kernel._accumulate(
                _conv_grad_kernel(g, x.data, (cin, co, kh, kw), stride, padding),
                "conv_transpose2d")
            bias._accumulate(g.sum(axis=(0, 2, 3)), "conv_transpose2d")
        out._backward_fn = bw
    return out


# -- batch normalization -------------------------------------------------------


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, epsilon: float = 1e-5,
              training: bool = True, running_mean: np.ndarray | None = None,
              running_var: np.ndarray | None = None, momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalization over the (N, H, W) axes.

    Training mode normalizes with batch statistics (population variance) and,
    when running buffers are supplied, folds them in with
    ``running = (1 - momentum) * running + momentum * batch``.
    Inference mode normalizes with the running buffers instead.
    """
    if epsilon <= 0:
        raise ConfigError(f"batchnorm epsilon must be > 0, got {epsilon}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"batchnorm gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}")
    gview = gamma.data.reshape(1, c, 1, 1)
    if training:
        m = n * h * w
        if m < 1:
            raise DimensionError("batchnorm training mode needs at least one value per channel")
        mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + epsilon)
        x_hat = (x.data - mean) * inv_std
        if running_mean is not None and running_var is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * var.reshape(c)
    else:
        if running_mean is None or running_var is None:
            raise UsageError("batchnorm inference mode requires running statistics")
        inv_std = (1.0 / np.sqrt(running_var + epsilon)).reshape(1, c, 1, 1).astype(x.data.dtype)
        x_hat = (x.data - running_mean.reshape(1, c, 1, 1)) * inv_std
    y = gview * x_hat + beta.data.reshape(1, c, 1, 1)
    out = Tensor._from_op(y, (x, gamma, beta), "batchnorm", None)
    if out.requires_grad:
        def bw(g):
            gamma._accumulate((g * x_hat).sum(axis=(0, 2, 3)), "batchnorm")
            beta._accumulate(g.sum(axis=(0, 2, 3)), "batchnorm")
            if training:
                gm = g.mean(axis=(0, 2, 3), keepdims=True)
                gxm = (g * x_hat).mean(axis=(0, 2, 3), keepdims=True)
                gx = gview * inv_std * (g - gm - x_hat * gxm)
            else:
                gx = gview * inv_std * g
            x._accumulate(gx.astype(x.data.dtype, copy=False), "batchnorm")
        out._backward_fn = bw
    return out


# -- structure ops ---------------------------------------------------------------


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; backward splits the gradient."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise DimensionError("concat_channels expects rank-4 tensors")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"concat_channels spatial/batch mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = Tensor._from_op(np.concatenate([a.data, b.data], axis=1), (a, b), "concat", None)
    if out.requires_grad:
        def bw(g):
            a._accumulate(np.ascontiguousarray(g[:, :ca]), "concat")
            b._accumulate(np.ascontiguousarray(g[:, ca:]), "concat")
        out._backward_fn = bw
    return out


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map [N, F] @ [F, K] + [K]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError("fully_connected expects rank-2 input and weight")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"fully_connected feature mismatch: input has {x.shape[1]}, weight expects {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"fully_connected bias shape {bias.shape} != ({weight.shape[1]},)")
    y = x.data @ weight.data + bias.data
    out = Tensor._from_op(y, (x, weight, bias), "fully_connected", None)
    if out.requires_grad:
        def bw(g):
            x._accumulate(g @ weight.data.T, "fully_connected")
            weight._accumulate(x.data.T @ g, "fully_connected")
            bias._accumulate(g.sum(axis=0), "fully_connected")
        out._backward_fn = bw
    return out


# -- verification -----------------------------------------------------------------


def finite_diff_check(f: Callable[..., Tensor], point: Tensor | Sequence[Tensor],
                      step: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` must be a deterministic scalar-valued function of the point
    tensor(s).  The error for each coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8); the max over all
    coordinates of all points is returned.  Use 64-bit tensors: central
    differences are unreliable at 32-bit.
    """
    if step <= 0:
        raise ConfigError(f"finite-difference step must be > 0, got {step}")
    points = (point,) if isinstance(point, Tensor) else tuple(point)
    for p in points:
        p.zero_grad()
    out = f(*points)
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in points]
    worst = 0.0
    for p, ga in zip(points, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(f(*points).data)
            flat[i] = orig - step
            f_minus = float(f(*points).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(float(gflat[i]) - numeric) / max(abs(float(gflat[i])), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
