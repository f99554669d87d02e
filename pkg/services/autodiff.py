"""
Dense tensors with a reverse-mode tape.

Ops are methods of a Tape. Each op computes its output eagerly and, when any
input requires a gradient, records a node holding the inputs and a closure
mapping the output gradient to input gradients. Nodes are appended in
creation order, so walking them backwards is a valid reverse topological
order. Inputs are never mutated.

A leading batch dimension is handled inside each op; gradient reduction over
the batch is a numpy sum in a fixed order, so results are reproducible.
"""
import logging

import numpy as np

from services.errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)


class Tensor:
    """Row-major array plus a flag saying whether gradients flow into it"""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} grad={self.requires_grad}>"


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Records differentiable ops for one forward pass; single-threaded"""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def _record(self, inputs, out_data, backward):
        requires_grad = any(t.requires_grad for t in inputs)
        out = Tensor(out_data, requires_grad=requires_grad)
        if requires_grad:
            self.nodes.append(_Node(inputs, out, backward))
        return out

    def constant(self, data):
        return Tensor(data, requires_grad=False)

    # elementwise

    def _broadcast_shape(self, op, a, b):
        try:
            return np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(op, a.shape, b.shape) from None

    def add(self, a, b):
        self._broadcast_shape("add", a, b)
        return self._record(
            (a, b), a.data + b.data,
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    def sub(self, a, b):
        self._broadcast_shape("sub", a, b)
        return self._record(
            (a, b), a.data - b.data,
            lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        )

    def mul(self, a, b):
        """Elementwise product"""
        self._broadcast_shape("mul", a, b)
        return self._record(
            (a, b), a.data * b.data,
            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        )

    elementwise_mul = mul

    def scale(self, a, factor):
        return self._record((a,), a.data * factor, lambda g: (g * factor,))

    def sigmoid(self, a):
        s = _sigmoid(a.data)
        return self._record((a,), s, lambda g: (g * s * (1.0 - s),))

    def tanh(self, a):
        t = np.tanh(a.data)
        return self._record((a,), t, lambda g: (g * (1.0 - t * t),))

    def relu(self, a):
        mask = a.data > 0
        return self._record((a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))

    # linear algebra

    def matmul(self, x, w):
        """x[..., n] @ w[m, n]^T -> [..., m]"""
        if w.data.ndim != 2 or x.shape[-1] != w.shape[1]:
            raise ShapeError("matmul", x.shape, w.shape)

        def backward(g):
            gx = g @ w.data
            gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1])
            return gx, gw

        return self._record((x, w), x.data @ w.data.T, backward)

    def dense(self, x, w, b=None):
        """W x + b on the last axis"""
        out = self.matmul(x, w)
        if b is None:
            return out
        if b.shape != (w.shape[0],):
            raise ShapeError("dense bias", w.shape, b.shape)
        return self.add(out, b)

    # structure

    def concat(self, tensors, axis=-1):
        tensors = tuple(tensors)
        ref = tensors[0].shape
        for t in tensors[1:]:
            if len(t.shape) != len(ref) or any(
                    i != axis % len(ref) and s != r for i, (s, r) in enumerate(zip(t.shape, ref))):
                raise ShapeError("concat", ref, t.shape)
        sizes = [t.shape[axis] for t in tensors]
        bounds = np.cumsum([0] + sizes)

        def backward(g):
            return tuple(
                np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
            )

        return self._record(tensors, np.concatenate([t.data for t in tensors], axis=axis), backward)

    def slice_last(self, a, start, stop):
        if not 0 <= start < stop <= a.shape[-1]:
            raise ShapeError("slice", a.shape, (start, stop))

        def backward(g):
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            return (full,)

        return self._record((a,), a.data[..., start:stop], backward)

    def take(self, a, index, axis):
        """Select one position along an axis, dropping that axis"""
        if not -a.shape[axis] <= index < a.shape[axis]:
            raise ShapeError("take", a.shape, (index,))

        def backward(g):
            full = np.zeros_like(a.data)
            np.moveaxis(full, axis, 0)[index] = g
            return (full,)

        return self._record((a,), np.take(a.data, index, axis=axis), backward)

    def sum(self, a):
        return self._record((a,), np.sum(a.data), lambda g: (np.full_like(a.data, g),))

    def mean(self, a):
        n = a.size
        return self._record((a,), np.mean(a.data), lambda g: (np.full_like(a.data, g / n),))

    # convolution

    def conv1d(self, x, kernels, b=None):
        """
        Same-padded, stride-1 cross-correlation:
        y[o, i] = sum_c sum_j x[c, i + j - k//2] * kernels[o, c, j] + b[o]

        Args:
            x (Tensor): [c_in, L] or [batch, c_in, L]
            kernels (Tensor): [c_out, c_in, k], k odd
            b (Tensor): [c_out] or None

        Returns:
            Tensor: [c_out, L] or [batch, c_out, L]
        """
        if kernels.data.ndim != 3 or x.data.ndim not in (2, 3) or x.shape[-2] != kernels.shape[1]:
            raise ShapeError("conv1d", x.shape, kernels.shape)
        k = kernels.shape[2]
        if k % 2 == 0:
            raise ShapeError("conv1d (same padding needs an odd kernel)", x.shape, kernels.shape)
        if b is not None and b.shape != (kernels.shape[0],):
            raise ShapeError("conv1d bias", kernels.shape, b.shape)

        unbatched = x.data.ndim == 2
        xb = x.data[None] if unbatched else x.data
        batch, c_in, length = xb.shape
        c_out = kernels.shape[0]
        pad = k // 2
        xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad)))
        # cols[b, i, c * k + j] = xp[b, c, i + j]
        cols = np.stack([xp[:, :, j:j + length] for j in range(k)], axis=-1)
        cols = cols.transpose(0, 2, 1, 3).reshape(batch, length, c_in * k)
        kmat = kernels.data.reshape(c_out, c_in * k)
        out = (cols @ kmat.T).transpose(0, 2, 1)
        if b is not None:
            out = out + b.data[None, :, None]
        if unbatched:
            out = out[0]

        def backward(g):
            gb_ = g[None] if unbatched else g
            gt = gb_.transpose(0, 2, 1)
            gk = np.einsum("blo,blf->of", gt, cols).reshape(kernels.shape)
            gcols = (gt @ kmat).reshape(batch, length, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, j:j + length] += gcols[..., j]
            gx = gxp[:, :, pad:pad + length]
            if unbatched:
                gx = gx[0]
            grads = (gx, gk)
            if b is not None:
                grads = grads + (gb_.sum(axis=(0, 2)),)
            return grads

        inputs = (x, kernels) if b is None else (x, kernels, b)
        return self._record(inputs, out, backward)


class Gradients:
    """Gradient lookup by tensor; tensors off the loss path get zeros"""

    def __init__(self, grads):
        self._grads = grads

    def __getitem__(self, tensor):
        grad = self._grads.get(id(tensor))
        if grad is None:
            return np.zeros_like(tensor.data)
        return grad

    def for_params(self, params):
        return {name: self[t] for name, t in params.items()}


def backward(tape, loss):
    """
    Reverse-mode gradients of a scalar loss.

    Args:
        tape (Tape): tape the loss was computed on
        loss (Tensor): scalar output

    Returns:
        Gradients: d loss / d tensor for every tensor on the tape
    """
    if loss.size != 1:
        raise ValidationError(f"loss must be scalar, got shape {loss.shape}", path="loss")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward(g)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
    return Gradients(grads)
