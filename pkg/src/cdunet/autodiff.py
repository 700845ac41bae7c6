"""Dense tensors with reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded in execution order
together with their backward rule; :meth:`Tape.backward` replays them in reverse.
Each tape belongs to the thread that opened it, so independent tapes may run in
parallel threads.
"""

import threading
from collections import namedtuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .signal_core import frame_signal, overlap_add

Node = namedtuple("Node", ["name", "output", "inputs", "backward"])

_local = threading.local()


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Records operations for one forward pass and runs the matching backward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, name, output, inputs, backward):
        """Append one differentiable operation."""
        self.nodes.append(Node(name, output, inputs, backward))

    def backward(self, loss, grad=None):
        """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded tensor that requires it."""
        loss.grad = np.ones_like(loss.values) if grad is None else np.asarray(grad, dtype=loss.dtype)
        for node in reversed(self.nodes):
            if node.output.grad is None:
                continue
            grads = node.backward(node.output.grad)
            for tensor, g in zip(node.inputs, grads):
                if g is None or not tensor.requires_grad:
                    continue
                tensor.grad = g if tensor.grad is None else tensor.grad + g


class Tensor:
    """Row-major dense array with an optional gradient."""

    __array_ufunc__ = None

    def __init__(self, values, requires_grad=False, name=None):
        values = np.asarray(values)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        self.values = values
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        """Shape of the values."""
        return self.values.shape

    @property
    def ndim(self):
        """Number of dimensions."""
        return self.values.ndim

    @property
    def dtype(self):
        """Element type of the values."""
        return self.values.dtype

    @property
    def size(self):
        """Number of elements."""
        return self.values.size

    def numpy(self):
        """The underlying array, not a copy."""
        return self.values

    def item(self):
        """Value of a single-element tensor."""
        return float(self.values)

    def zero_grad(self):
        """Forget the accumulated gradient."""
        self.grad = None

    def astype(self, dtype):
        """Detached copy in another precision."""
        return Tensor(self.values.astype(dtype), requires_grad=self.requires_grad, name=self.name)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return crop(self, index)


def as_tensor(x, like=None):
    """Wrap constants; scalars take the dtype of ``like``."""
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(name, values, inputs, backward):
    out = Tensor(values, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if out.requires_grad and tape is not None:
        tape.record(name, out, inputs, backward)
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` over the axes that broadcasting expanded to reach it."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    normalized = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise DimensionError(f"axis {a} out of range for a {ndim}-D tensor")
        normalized.append(a % ndim)
    return tuple(sorted(set(normalized)))


# --------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------


def add(a, b):
    """Elementwise ``a + b`` with broadcasting."""
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    return _make("add", a.values + b.values, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    """Elementwise ``a - b`` with broadcasting."""
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    return _make("sub", a.values - b.values, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    """Elementwise ``a * b`` with broadcasting."""
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)

    def backward(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _make("mul", a.values * b.values, (a, b), backward)


def div(a, b):
    """Elementwise ``a / b`` with broadcasting."""
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    out = a.values / b.values

    def backward(g):
        return _unbroadcast(g / b.values, a.shape), _unbroadcast(-g * out / b.values, b.shape)

    return _make("div", out, (a, b), backward)


def neg(x):
    """Elementwise negation."""
    return _make("neg", -x.values, (x,), lambda g: (-g,))


def matmul(a, b):
    """Matrix product with numpy's batching rules."""

    def backward(g):
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(a.values, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", a.values @ b.values, (a, b), backward)


# --------------------------------------------------
# Nonlinearities
# --------------------------------------------------


def _sigmoid(v):
    return np.exp(-np.logaddexp(0.0, -v)).astype(v.dtype)


def sigmoid(x):
    """Logistic function."""
    out = _sigmoid(x.values)
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x):
    """``max(x, 0)``; NaN inputs give 0 with zero gradient."""
    mask = x.values > 0
    return _make("relu", np.where(mask, x.values, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,))


def tanh(x):
    """Hyperbolic tangent."""
    out = np.tanh(x.values)
    return _make("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x):
    """Elementwise exponential."""
    out = np.exp(x.values)
    return _make("exp", out, (x,), lambda g: (g * out,))


def log(x):
    """Natural logarithm."""
    return _make("log", np.log(x.values), (x,), lambda g: (g / x.values,))


def sqrt(x):
    """Square root; the gradient at exactly zero is taken as zero."""
    out = np.sqrt(x.values)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0).astype(x.dtype),)

    return _make("sqrt", out, (x,), backward)


def absolute(x):
    """Absolute value; the gradient at 0 is 0."""
    return _make("abs", np.abs(x.values), (x,), lambda g: (g * np.sign(x.values),))


def square(x):
    """Elementwise square."""
    return _make("square", x.values * x.values, (x,), lambda g: (2.0 * g * x.values,))


# --------------------------------------------------
# Reductions
# --------------------------------------------------


def sum(x, axis=None, keepdims=False):  # noqa: A001
    """Sum over ``axis`` (all axes when ``None``)."""
    axes = _axes(axis, x.ndim)
    out = np.sum(x.values, axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    """Mean over ``axis`` (all axes when ``None``)."""
    axes = _axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    out = np.mean(x.values, axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make("mean", out, (x,), backward)


def max(x, axis=None, keepdims=False):  # noqa: A001
    """Maximum over ``axis``; the gradient goes to the first maximal element."""
    axes = _axes(axis, x.ndim)
    kept = [d for d in range(x.ndim) if d not in axes]
    perm = kept + list(axes)
    moved = np.transpose(x.values, perm)
    flat = moved.reshape(tuple(x.shape[d] for d in kept) + (-1,))
    index = np.argmax(flat, axis=-1)[..., None]
    out = np.take_along_axis(flat, index, axis=-1)[..., 0]
    if keepdims:
        out = np.expand_dims(out, axes)

    def backward(g):
        if keepdims:
            g = np.squeeze(g, axis=axes)
        g_flat = np.zeros_like(flat)
        np.put_along_axis(g_flat, index, g[..., None], axis=-1)
        return (np.transpose(g_flat.reshape(moved.shape), np.argsort(perm)),)

    return _make("max", out, (x,), backward)


# --------------------------------------------------
# Shape manipulation
# --------------------------------------------------


def reshape(x, shape):
    """Reshape without copying."""
    return _make("reshape", x.values.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    """Permute axes."""
    inverse = np.argsort(axes)
    return _make("transpose", np.transpose(x.values, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors, axis):
    """Join tensors along ``axis``."""
    tensors = tuple(tensors)
    axis = _axes(axis, tensors[0].ndim)[0]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", np.concatenate([t.values for t in tensors], axis=axis), tensors, backward)


def split(x, sizes, axis):
    """Split ``x`` along ``axis`` into pieces of the given sizes."""
    axis = _axes(axis, x.ndim)[0]
    if int(np.sum(sizes)) != x.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not add up to {x.shape[axis]}")
    pieces = []
    start = 0
    for size in sizes:
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, start + size)
        pieces.append(crop(x, tuple(index)))
        start += size
    return pieces


def pad(x, pad_width):
    """Zero-pad; ``pad_width`` follows :func:`numpy.pad`."""
    pad_width = tuple(tuple(p) for p in pad_width)
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))
    return _make("pad", np.pad(x.values, pad_width), (x,), lambda g: (g[index],))


def crop(x, index):
    """Basic slicing (``x[index]``) with a scatter-back gradient."""

    def backward(g):
        full = np.zeros_like(x.values)
        full[index] = g
        return (full,)

    return _make("crop", x.values[index], (x,), backward)


# --------------------------------------------------
# Layers
# --------------------------------------------------


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` of shape ``[out, in]``."""
    out = matmul(x, transpose(weight, (1, 0)))
    return out if bias is None else add(out, bias)


def layer_norm(x, gamma, beta, axis=1, eps=1e-5):
    """Normalize over ``axis`` at every other position, then scale and shift per channel."""
    axis = _axes(axis, x.ndim)[0]
    shape = [1] * x.ndim
    shape[axis] = x.shape[axis]
    n = x.shape[axis]
    mu = x.values.mean(axis=axis, keepdims=True)
    centered = x.values - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=axis, keepdims=True) + eps)
    xhat = centered * inv
    g_vals = gamma.values.reshape(shape)
    out = xhat * g_vals + beta.values.reshape(shape)
    reduce_axes = tuple(d for d in range(x.ndim) if d != axis)

    def backward(g):
        dxhat = g * g_vals
        dx = inv / n * (
            n * dxhat - dxhat.sum(axis=axis, keepdims=True) - xhat * (dxhat * xhat).sum(axis=axis, keepdims=True)
        )
        dgamma = (g * xhat).sum(axis=reduce_axes).reshape(gamma.shape)
        dbeta = g.sum(axis=reduce_axes).reshape(beta.shape)
        return dx, dgamma, dbeta

    return _make("layer_norm", out, (x, gamma, beta), backward)


PAD_MODES = ("causal_time", "lookahead_time")


def _conv_pads(kernel_f, kernel_t, pad_mode):
    if pad_mode not in PAD_MODES:
        raise DimensionError(f"Unknown pad_mode {pad_mode!r}; expected one of {PAD_MODES}")
    lo = (kernel_f - 1) // 2
    freq = (lo, kernel_f - 1 - lo)
    time = (kernel_t - 1, 0) if pad_mode == "causal_time" else (0, kernel_t - 1)
    return freq, time


def _im2col(xp, kernel_f, kernel_t, stride_f, stride_t):
    """``[B, C, F, T]`` padded input to ``[B, Fo, To, C, kf, kt]`` patches."""
    windows = sliding_window_view(xp, (kernel_f, kernel_t), axis=(2, 3))[:, :, ::stride_f, ::stride_t]
    return windows.transpose(0, 2, 3, 1, 4, 5)


def _col2im(cols, padded_shape, stride_f, stride_t):
    """Adjoint of :func:`_im2col`: scatter-add ``[B, Fo, To, C, kf, kt]`` into the padded input."""
    out = np.zeros(padded_shape, dtype=cols.dtype)
    _, n_f, n_t, _, kernel_f, kernel_t = cols.shape
    for i in range(kernel_f):
        for j in range(kernel_t):
            out[:, :, i : i + stride_f * (n_f - 1) + 1 : stride_f, j : j + stride_t * (n_t - 1) + 1 : stride_t] += cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return out


def _check_conv(x, kernel, in_axis):
    if x.ndim != 4:
        raise DimensionError(f"Convolution input must be [B, C, F, T], got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[in_axis] != x.shape[1]:
        raise DimensionError(f"Kernel shape {kernel.shape} does not match {x.shape[1]} input channels")


def conv2d(x, kernel, bias=None, stride_f=1, stride_t=1, pad_mode="causal_time"):
    """2-D convolution over (frequency, time).

    Frequency is zero-padded symmetrically. With ``pad_mode="causal_time"`` time is
    padded on the left by ``kernel_t - 1`` so output frame ``t`` reads input frames
    ``<= t``; ``"lookahead_time"`` pads on the right instead.

    Args:
        x: ``[B, C_in, F, T]``.
        kernel: ``[C_out, C_in, kernel_f, kernel_t]``.
        bias: ``[C_out]`` or ``None``.
    """
    _check_conv(x, kernel, in_axis=1)
    _, _, kernel_f, kernel_t = kernel.shape
    freq, time = _conv_pads(kernel_f, kernel_t, pad_mode)
    xp = np.pad(x.values, ((0, 0), (0, 0), freq, time))
    cols = _im2col(xp, kernel_f, kernel_t, stride_f, stride_t)
    out = np.tensordot(cols, kernel.values, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.values[None, :, None, None]
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        g_t = g.transpose(0, 2, 3, 1)
        d_kernel = np.tensordot(g_t, cols, axes=([0, 1, 2], [0, 1, 2]))
        d_cols = np.tensordot(g_t, kernel.values, axes=([3], [0]))
        d_xp = _col2im(d_cols, xp.shape, stride_f, stride_t)
        d_x = d_xp[:, :, freq[0] : freq[0] + x.shape[2], time[0] : time[0] + x.shape[3]]
        grads = (d_x, d_kernel)
        return grads if bias is None else grads + (g.sum(axis=(0, 2, 3)),)

    return _make("conv2d", out, inputs, backward)


def conv_transpose2d(y, kernel, bias=None, stride_f=1, stride_t=1, output_size=None):
    """Transposed 2-D convolution, cropped on the right of time so it stays causal.

    This is the exact adjoint of ``conv2d(..., pad_mode="lookahead_time")`` with the
    same kernel, and of the causal ``conv2d`` when ``kernel_t == 1``.

    Args:
        y: ``[B, C_in, F, T]``.
        kernel: ``[C_in, C_out, kernel_f, kernel_t]``.
        bias: ``[C_out]`` or ``None``.
        output_size: ``(F_out, T_out)``; defaults to the smallest size that a
            matching ``conv2d`` maps back onto ``(F, T)``.
    """
    _check_conv(y, kernel, in_axis=0)
    _, c_out, kernel_f, kernel_t = kernel.shape
    freq, time = _conv_pads(kernel_f, kernel_t, "lookahead_time")
    batch, _, n_f, n_t = y.shape
    if output_size is None:
        output_size = ((n_f - 1) * stride_f - _pair_sum(freq) + kernel_f, (n_t - 1) * stride_t + 1)
    out_f, out_t = output_size
    padded_shape = (batch, c_out, out_f + _pair_sum(freq), out_t + _pair_sum(time))
    if (padded_shape[2] - kernel_f) // stride_f + 1 != n_f or (padded_shape[3] - kernel_t) // stride_t + 1 != n_t:
        raise DimensionError(f"output_size {output_size} is not compatible with input {y.shape[2:]}")

    cols = np.tensordot(y.values.transpose(0, 2, 3, 1), kernel.values, axes=([3], [0]))
    zp = _col2im(cols, padded_shape, stride_f, stride_t)
    out = zp[:, :, freq[0] : freq[0] + out_f, :out_t]
    if bias is not None:
        out = out + bias.values[None, :, None, None]
    inputs = (y, kernel) if bias is None else (y, kernel, bias)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), freq, time))
        g_cols = _im2col(gp, kernel_f, kernel_t, stride_f, stride_t)
        d_y = np.tensordot(g_cols, kernel.values, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        d_kernel = np.tensordot(y.values.transpose(0, 2, 3, 1), g_cols, axes=([0, 1, 2], [0, 1, 2]))
        grads = (d_y, d_kernel)
        return grads if bias is None else grads + (g.sum(axis=(0, 2, 3)),)

    return _make("conv_transpose2d", out, inputs, backward)


def _pair_sum(pair):
    return pair[0] + pair[1]


def lstm(x, w_ih, w_hh, bias, reverse=False, carry=None):
    """Single-layer LSTM, gate order i, f, g, o.

    Args:
        x: ``[seq, batch, in]``.
        w_ih: ``[4H, in]``; w_hh: ``[4H, H]``; bias: ``[4H]``.
        reverse: Run from the last step to the first (outputs stay aligned with inputs).
        carry: Optional dict; its ``h`` and ``c`` replace the zero initial state and
            are overwritten with the final state. No gradient flows into them.

    Returns:
        ``[seq, batch, H]`` hidden states; step ``t`` depends only on steps already visited.
    """
    if x.ndim != 3:
        raise DimensionError(f"LSTM input must be [seq, batch, in], got shape {x.shape}")
    if w_ih.shape[1] != x.shape[2]:
        raise DimensionError(f"LSTM weight {w_ih.shape} does not match input size {x.shape[2]}")
    seq, batch, _ = x.shape
    hidden = w_hh.shape[1]
    order = range(seq - 1, -1, -1) if reverse else range(seq)
    dtype = x.dtype

    projected = x.values @ w_ih.values.T + bias.values
    gates = np.zeros((seq, batch, 4 * hidden), dtype=dtype)
    cells = np.zeros((seq, batch, hidden), dtype=dtype)
    out = np.zeros((seq, batch, hidden), dtype=dtype)
    prev_h = {}
    prev_c = {}
    h = np.zeros((batch, hidden), dtype=dtype)
    c = np.zeros((batch, hidden), dtype=dtype)
    if carry is not None and "h" in carry:
        if carry["h"].shape != h.shape:
            raise DimensionError(f"Carried LSTM state {carry['h'].shape} does not match {h.shape}")
        h, c = carry["h"].astype(dtype), carry["c"].astype(dtype)
    for t in order:
        prev_h[t], prev_c[t] = h, c
        z = projected[t] + h @ w_hh.values.T
        i = _sigmoid(z[:, :hidden])
        f = _sigmoid(z[:, hidden : 2 * hidden])
        g = np.tanh(z[:, 2 * hidden : 3 * hidden])
        o = _sigmoid(z[:, 3 * hidden :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t] = np.concatenate([i, f, g, o], axis=1)
        cells[t] = c
        out[t] = h
    if carry is not None:
        carry["h"], carry["c"] = h, c

    def backward(grad_out):
        d_projected = np.zeros_like(projected)
        d_w_hh = np.zeros_like(w_hh.values)
        dh_next = np.zeros((batch, hidden), dtype=dtype)
        dc_next = np.zeros((batch, hidden), dtype=dtype)
        for t in reversed(list(order)):
            i, f, g, o = np.split(gates[t], 4, axis=1)
            tanh_c = np.tanh(cells[t])
            dh = grad_out[t] + dh_next
            dc = dh * o * (1.0 - tanh_c * tanh_c) + dc_next
            dz = np.concatenate(
                [dc * g * i * (1.0 - i), dc * prev_c[t] * f * (1.0 - f), dc * i * (1.0 - g * g), dh * tanh_c * o * (1.0 - o)],
                axis=1,
            )
            d_projected[t] = dz
            d_w_hh += dz.T @ prev_h[t]
            dh_next = dz @ w_hh.values
            dc_next = dc * f
        d_x = d_projected @ w_ih.values
        d_w_ih = np.tensordot(d_projected, x.values, axes=([0, 1], [0, 1]))
        return d_x, d_w_ih, d_w_hh, d_projected.sum(axis=(0, 1))

    return _make("lstm", out, (x, w_ih, w_hh, bias), backward)


# --------------------------------------------------
# Spectral operations on signals
# --------------------------------------------------

MAGNITUDE_FLOOR = 1e-12


def _frames(values, window_size, hop_size):
    length = values.shape[-1]
    if length < window_size:
        raise DimensionError(f"Signal of {length} samples is shorter than the {window_size}-sample window")
    n_frames = 1 + -(-(length - window_size) // hop_size)
    padded = (n_frames - 1) * hop_size + window_size
    values = np.pad(values, [(0, 0)] * (values.ndim - 1) + [(0, padded - length)])
    return frame_signal(values, window_size, hop_size), padded


def stft_magnitude(x, window, hop_size):
    """``|STFT|`` of ``x`` (``[..., samples]``) as ``[..., bins, frames]``.

    Framing matches :func:`cdunet.signal_core.stft`; the magnitude carries a tiny floor
    inside the square root so its gradient exists at zero.
    """
    window = np.asarray(window, dtype=x.dtype)
    window_size = window.size
    frames, _ = _frames(x.values, window_size, hop_size)
    spectrum = np.fft.rfft(frames * window, axis=-1)
    magnitude = np.sqrt(spectrum.real**2 + spectrum.imag**2 + MAGNITUDE_FLOOR).astype(x.dtype)
    length = x.shape[-1]

    def backward(g):
        weighted = np.swapaxes(g, -1, -2) * spectrum / magnitude
        weighted[..., 1 : window_size // 2] *= 0.5
        d_frames = window_size * np.fft.irfft(weighted, n=window_size, axis=-1) * window
        return (overlap_add(d_frames, hop_size)[..., :length].astype(x.dtype),)

    return _make("stft_magnitude", np.swapaxes(magnitude, -1, -2), (x,), backward)


def istft(real, imag, hop_size, length, cola_level=1.0):
    """Overlap-add inverse STFT of ``real + j*imag`` (``[..., bins, frames]``) to ``[..., length]``."""
    if real.shape != imag.shape:
        raise DimensionError(f"Real part {real.shape} and imaginary part {imag.shape} differ")
    window_size = 2 * (real.shape[-2] - 1)
    spectrum = np.swapaxes(real.values + 1j * imag.values, -1, -2)
    frames = np.fft.irfft(spectrum, n=window_size, axis=-1)
    signal = overlap_add(frames, hop_size)
    if signal.shape[-1] < length:
        raise DimensionError(f"{real.shape[-1]} frames cannot cover {length} samples")
    out = (signal[..., :length] / cola_level).astype(real.dtype)
    padded = signal.shape[-1]

    def backward(g):
        g = np.pad(g, [(0, 0)] * (g.ndim - 1) + [(0, padded - length)]) / cola_level
        spectrum_g = np.fft.rfft(frame_signal(g, window_size, hop_size), axis=-1) / window_size
        spectrum_g[..., 1 : window_size // 2] *= 2.0
        spectrum_g = np.swapaxes(spectrum_g, -1, -2)
        return spectrum_g.real.astype(real.dtype), spectrum_g.imag.astype(imag.dtype)

    return _make("istft", out, (real, imag), backward)
