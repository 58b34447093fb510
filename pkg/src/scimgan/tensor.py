"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every loss and layer in this project is built from the primitives defined
here.  Usage pattern::

    with Tape() as tape:
        y = matmul(x, w)
        loss = mean(y)
    backward(tape, loss)      # populates .grad on requires_grad leaves

Ops executed while a tape is active append one entry each; ``backward`` walks
the entries in reverse, visiting each exactly once.  Ops executed with no
active tape are plain (inference-mode) evaluations.

Conventions fixed here:
  * all forward/backward math is float64; non-finite values raise at the op
    boundary that produced them;
  * kinked ops (relu, leaky_relu, abs_sum, clamp_min, clip) take the
    zero-gradient branch exactly at the kink, and report how close their
    inputs came to it so finite-difference checks can skip those points;
  * broadcasting is supported for add/sub/mul only (bias adds, scalar
    weights); everything else requires exact shapes.
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf (fail-fast policy)."""


class TapeError(RuntimeError):
    """Backward invoked with no usable recorded forward."""


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite value produced by '{op}'")


class Tensor:
    """n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64, order="C")
        _check_finite(self.values, "tensor")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut from the tape; never receives gradient."""
        out = Tensor.__new__(Tensor)
        out.values = self.values
        out.grad = None
        out.requires_grad = False
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar (elementwise / matmul)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class TapeEntry:
    """One recorded primitive application.

    ``backward_fn(grad_out) -> tuple`` returns one gradient array (or None)
    per input.  ``kink_gap`` is the smallest |argument - kink| seen by a
    kinked op, or None for smooth ops.
    """

    __slots__ = ("op", "inputs", "output", "backward_fn", "kink_gap")

    def __init__(self, op, inputs, output, backward_fn, kink_gap=None):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.kink_gap = kink_gap


_ACTIVE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications, replayable backward once.

    Tapes nest (inner-most active tape records); a tape is single-owner and
    must not be shared across threads while recording.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self

    def record(self, op, inputs, output, backward_fn, kink_gap=None):
        self.entries.append(TapeEntry(op, inputs, output, backward_fn, kink_gap))
        self.produced.add(id(output))

    def wants_grad(self, t: "Tensor") -> bool:
        """True if gradient must flow into t: a grad leaf or a tape product."""
        return t.requires_grad or id(t) in self.produced

    def min_kink_gap(self) -> float:
        """Closest approach of any kinked op's argument to its kink."""
        gaps = [e.kink_gap for e in self.entries if e.kink_gap is not None]
        return min(gaps) if gaps else float("inf")


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Propagate d(loss)/d(x) to every tensor recorded on ``tape``.

    ``loss`` must be a scalar produced on the tape.  Each requires_grad leaf
    gets ``.grad`` assigned (fresh each call; repeated calls over the same
    forward are bit-identical).  Gradients of a tensor used several times
    accumulate additively.  Returns the full id->gradient map.
    """
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.entries:
        raise TapeError("backward on a tape with no recorded forward")
    if id(loss) not in tape.produced:
        raise TapeError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for entry in reversed(tape.entries):
        g_out = grads.get(id(entry.output))
        if g_out is None:
            continue
        gs = entry.backward_fn(g_out)
        for inp, g in zip(entry.inputs, gs):
            if g is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

    seen: set[int] = set()
    for entry in tape.entries:
        for inp in entry.inputs:
            if inp.requires_grad and id(inp) not in seen:
                seen.add(id(inp))
                g = grads.get(id(inp))
                if g is not None:
                    inp.grad = np.array(g, dtype=np.float64, copy=True)
    return grads


def _record(op, inputs, out_values, backward_fn, kink_gap=None) -> Tensor:
    out_values = np.asarray(out_values, dtype=np.float64, order="C")
    _check_finite(out_values, op)
    out = Tensor.__new__(Tensor)
    out.values = out_values
    out.grad = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None:
        tape.record(op, tuple(inputs), out, backward_fn, kink_gap)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# elementwise arithmetic
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values + b.values

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), out, bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values - b.values

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), out, bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values * b.values
    av, bv = a.values, b.values

    def bwd(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _record("mul", (a, b), out, bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.values @ b.values
    av, bv = a.values, b.values

    def bwd(g):
        return g @ bv.T, av.T @ g

    return _record("matmul", (a, b), out, bwd)


# --------------------------------------------------------------------------
# reductions and distances
# --------------------------------------------------------------------------


def tensor_sum(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.values.sum())
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).astype(np.float64),)

    return _record("sum", (x,), out, bwd)


# spec op name; shadows builtins.sum inside this module only
sum = tensor_sum  # noqa: A001


def mean(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.values.mean())
    shape, n = x.shape, x.size

    def bwd(g):
        return (np.broadcast_to(g / n, shape).astype(np.float64),)

    return _record("mean", (x,), out, bwd)


def abs_sum(x) -> Tensor:
    """Sum of absolute values (L1).  Kink at 0 takes zero subgradient."""
    x = as_tensor(x)
    out = np.asarray(np.abs(x.values).sum())
    sign = np.sign(x.values)
    gap = float(np.min(np.abs(x.values))) if x.size else float("inf")

    def bwd(g):
        return (g * sign,)

    return _record("abs_sum", (x,), out, bwd, kink_gap=gap)


def squared_l2_distance(a, b) -> Tensor:
    """Sum of squared differences over the last axis.

    For vectors this is the scalar squared Euclidean distance; for (batch,
    dim) operands it yields one distance per row.
    """
    a, b = as_tensor(a), as_tensor(b)
    d = a.values - b.values
    if d.ndim == 0:
        out = np.asarray(d * d)
    else:
        out = np.asarray((d * d).sum(axis=-1))

    def bwd(g):
        ge = g if d.ndim == 0 else np.expand_dims(g, -1)
        return _unbroadcast(2.0 * d * ge, a.shape), _unbroadcast(-2.0 * d * ge, b.shape)

    return _record("squared_l2_distance", (a, b), out, bwd)


# --------------------------------------------------------------------------
# nonlinearities
# --------------------------------------------------------------------------


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.values))
    s = out

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _record("sigmoid", (x,), out, bwd)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.values)
    t = out

    def bwd(g):
        return (g * (1.0 - t * t),)

    return _record("tanh", (x,), out, bwd)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.values > 0.0
    out = np.where(mask, x.values, 0.0)
    gap = float(np.min(np.abs(x.values))) if x.size else float("inf")

    def bwd(g):
        return (g * mask,)

    return _record("relu", (x,), out, bwd, kink_gap=gap)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    mask = x.values > 0.0
    out = np.where(mask, x.values, slope * x.values)
    gap = float(np.min(np.abs(x.values))) if x.size else float("inf")

    def bwd(g):
        return (g * np.where(mask, 1.0, slope),)

    return _record("leaky_relu", (x,), out, bwd, kink_gap=gap)


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.values)
    _check_finite(out, "log")  # log of <= 0 fails here
    xv = x.values

    def bwd(g):
        return (g / xv,)

    return _record("log", (x,), out, bwd)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.values)
    e = out

    def bwd(g):
        return (g * e,)

    return _record("exp", (x,), out, bwd)


def log_softmax(x) -> Tensor:
    """Log-softmax over the last axis."""
    x = as_tensor(x)
    m = x.values.max(axis=-1, keepdims=True)
    shifted = x.values - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bwd(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", (x,), out, bwd)


def clamp_min(x, threshold: float) -> Tensor:
    """Elementwise max(x, threshold).

    At x == threshold the clamp branch wins: the gradient there is exactly 0.
    """
    x = as_tensor(x)
    mask = x.values > threshold
    out = np.where(mask, x.values, threshold)
    gap = float(np.min(np.abs(x.values - threshold))) if x.size else float("inf")

    def bwd(g):
        return (g * mask,)

    return _record("clamp_min", (x,), out, bwd, kink_gap=gap)


def clip(x, low: float, high: float) -> Tensor:
    """Clamp into [low, high]; zero gradient outside the open interval."""
    x = as_tensor(x)
    inside = (x.values > low) & (x.values < high)
    out = np.clip(x.values, low, high)
    if x.size:
        gap = float(min(np.min(np.abs(x.values - low)), np.min(np.abs(x.values - high))))
    else:
        gap = float("inf")

    def bwd(g):
        return (g * inside,)

    return _record("clip", (x,), out, bwd, kink_gap=gap)


# --------------------------------------------------------------------------
# shape ops
# --------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    out = x.values.reshape(shape)
    orig = x.shape

    def bwd(g):
        return (g.reshape(orig),)

    return _record("reshape", (x,), out, bwd)


def narrow(x, start: int, length: int) -> Tensor:
    """Contiguous slice along axis 0."""
    x = as_tensor(x)
    if start < 0 or start + length > x.shape[0]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for {x.shape}")
    out = x.values[start : start + length]
    full_shape = x.shape

    def bwd(g):
        gx = np.zeros(full_shape, dtype=np.float64)
        gx[start : start + length] = g
        return (gx,)

    return _record("narrow", (x,), out, bwd)


# --------------------------------------------------------------------------
# convolutions
# --------------------------------------------------------------------------


def _conv_out_hw(h, w, k, stride, padding):
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv output would be empty for input {h}x{w}, k={k}, s={stride}, p={padding}")
    return ho, wo


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """(B,C,H,W) -> (B, C*k*k, Ho*Wo) patch matrix."""
    b, c, h, w = x.shape
    ho, wo = _conv_out_hw(h, w, k, stride, padding)
    if padding:
        xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
        xp[:, :, padding : padding + h, padding : padding + w] = x
        x = xp
    sb, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, k, k, ho, wo),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return windows.reshape(b, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, x_shape, k: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back to (B,C,H,W)."""
    b, c, h, w = x_shape
    ho, wo = _conv_out_hw(h, w, k, stride, padding)
    win = cols.reshape(b, c, k, k, ho, wo)
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += win[:, :, i, j]
    if padding:
        return xp[:, :, padding : padding + h, padding : padding + w]
    return xp


def _conv2d_fwd(x, w, stride, padding):
    b = x.shape[0]
    co, ci, k, _ = w.shape
    ho, wo = _conv_out_hw(x.shape[2], x.shape[3], k, stride, padding)
    cols = _im2col(x, k, stride, padding)
    out = np.matmul(w.reshape(co, ci * k * k)[None, :, :], cols)
    return out.reshape(b, co, ho, wo), cols


def _conv2d_bwd_w(g_out, cols, w_shape):
    co, ci, k, _ = w_shape
    g2 = g_out.reshape(g_out.shape[0], co, -1)
    gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
    return gw.reshape(w_shape)


def _conv2d_bwd_x(g_out, w, x_shape, stride, padding):
    co, ci, k, _ = w.shape
    g2 = g_out.reshape(g_out.shape[0], co, -1)
    gcols = np.matmul(w.reshape(co, ci * k * k).T[None, :, :], g2)
    return _col2im(gcols, x_shape, k, stride, padding)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution: x (B,Ci,H,W), weight (Co,Ci,k,k), bias (Co,) or None."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.values.ndim != 4:
        raise ShapeError(f"conv2d input must be rank-4, got {x.shape}")
    if weight.values.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d weight must be (Co,Ci,k,k), got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d channels mismatch: input {x.shape} vs weight {weight.shape}")
    out, cols = _conv2d_fwd(x.values, weight.values, stride, padding)
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv2d bias must be ({weight.shape[0]},), got {bias.shape}")
        out = out + bias.values[None, :, None, None]
    x_shape, w_shape = x.shape, weight.shape
    wv = weight.values
    tape = active_tape()
    need_dx = tape.wants_grad(x) if tape is not None else True
    need_dw = tape.wants_grad(weight) if tape is not None else True

    def bwd(g):
        gx = _conv2d_bwd_x(g, wv, x_shape, stride, padding) if need_dx else None
        gw = _conv2d_bwd_w(g, cols, w_shape) if need_dw else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _record("conv2d", inputs, out, bwd)


def transposed_conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-D convolution (the adjoint map of conv2d).

    x (B,Ci,H,W), weight (Ci,Co,k,k), bias (Co,) or None; output spatial size
    is (H-1)*stride - 2*padding + k.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.values.ndim != 4:
        raise ShapeError(f"transposed_conv2d input must be rank-4, got {x.shape}")
    if weight.values.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"transposed_conv2d weight must be (Ci,Co,k,k), got {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"transposed_conv2d channels mismatch: input {x.shape} vs weight {weight.shape}")
    b, ci, h, w = x.shape
    _, co, k, _ = weight.shape
    ho = (h - 1) * stride - 2 * padding + k
    wo = (w - 1) * stride - 2 * padding + k
    if ho < 1 or wo < 1:
        raise ShapeError("transposed_conv2d output would be empty")
    # Viewing the weight as a conv from Co to Ci channels, the forward here is
    # that conv's input-gradient and vice versa.
    out_shape = (b, co, ho, wo)
    out = _conv2d_bwd_x(x.values, weight.values, out_shape, stride, padding)
    if bias is not None:
        if bias.shape != (co,):
            raise ShapeError(f"transposed_conv2d bias must be ({co},), got {bias.shape}")
        out = out + bias.values[None, :, None, None]
    wv, xv = weight.values, x.values
    w_shape = weight.shape
    tape = active_tape()
    need_dx = tape.wants_grad(x) if tape is not None else True
    need_dw = tape.wants_grad(weight) if tape is not None else True

    def bwd(g):
        gx, gw = None, None
        if need_dx or need_dw:
            conv_of_g, g_cols = _conv2d_fwd(g, wv, stride, padding)
            if need_dx:
                gx = conv_of_g
            if need_dw:
                gw = _conv2d_bwd_w(xv, g_cols, w_shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _record("transposed_conv2d", inputs, out, bwd)


def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) plane over its spatial extent."""
    x = as_tensor(x)
    if x.values.ndim != 4:
        raise ShapeError(f"instance_norm input must be rank-4, got {x.shape}")
    mu = x.values.mean(axis=(2, 3), keepdims=True)
    var = x.values.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv
    n = x.shape[2] * x.shape[3]

    def bwd(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _record("instance_norm", (x,), xhat, bwd)
