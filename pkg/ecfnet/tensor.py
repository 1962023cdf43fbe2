"""
Dense NCHW tensors and a reverse-mode autodiff tape.

Every value flowing through the network is a rank-4 ``Tensor``. Operations are
``Function`` subclasses working on the underlying numpy arrays; while a ``Tape``
is active (``with Tape() as tape:``) every operation with at least one input
that requires grad is appended to it, and ``tape.backward(loss)`` walks the
nodes in strict reverse append order.
"""

from __future__ import annotations

import contextlib
import logging
import math
import threading
from typing import NamedTuple

import numpy as np

from ecfnet.exceptions import ShapeError
from ecfnet.exceptions import TapeError

__all__ = [
    "AXES",
    "Function",
    "Parameter",
    "Tape",
    "Tensor",
    "backward",
    "channel_slice",
    "concat",
    "current_tape",
    "default_dtype",
    "get_default_dtype",
    "mean_all",
    "pad_to",
    "reshape",
    "sigmoid",
    "sqrt",
    "square",
    "sum_all",
    "tensor_abs",
]

logger = logging.getLogger(__name__)

AXES = ("batch", "channel", "height", "width")

_local = threading.local()


def get_default_dtype():
    return getattr(_local, "dtype", np.float32)


@contextlib.contextmanager
def default_dtype(dtype):
    """
    Switch the dtype used for tensors built from python data and for new parameters.

    ``np.float64`` is the precision used by gradient and oracle checks.
    """
    previous = get_default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = previous


def current_tape():
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


class Tensor:
    """
    Rank-4 (n, c, h, w) array with an optional gradient slot and tape handle.

    Arrays passed as ``np.ndarray`` keep their floating dtype; anything else is
    converted to the current default dtype.
    """

    def __init__(self, data, requires_grad=False, dtype=None):  # noqa: FBT002
        if dtype is not None:
            array = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
            array = data
        else:
            array = np.asarray(data, dtype=get_default_dtype())
        if array.ndim != 4:  # noqa: PLR2004
            raise ShapeError(f"expected a rank-4 (n, c, h, w) tensor, got shape {array.shape}")
        self.data = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = None
        self.tape = None

    @classmethod
    def zeros(cls, shape, dtype=None):
        return cls(np.zeros(shape, dtype=dtype or get_default_dtype()))

    @classmethod
    def full(cls, shape, value, dtype=None):
        return cls(np.full(shape, value, dtype=dtype or get_default_dtype()))

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def channels(self):
        return self.data.shape[1]

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return Add.apply(self, other)
        return Shift.apply(self, amount=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return Sub.apply(self, other)
        return Shift.apply(self, amount=-float(other))

    def __rsub__(self, other):
        return Shift.apply(Scale.apply(self, factor=-1.0), amount=float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return Mul.apply(self, other)
        return Scale.apply(self, factor=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by python scalars")
        return Scale.apply(self, factor=1.0 / float(other))

    def __neg__(self):
        return Scale.apply(self, factor=-1.0)


class Parameter(Tensor):
    """
    Trainable leaf tensor.

    ``init`` selects how ``reset`` fills it: ``"fan_in"`` draws from
    U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), ``"zeros"`` and ``"ones"`` are constant.
    """

    def __init__(self, shape, init="zeros", fan_in=None, dtype=None):
        super().__init__(np.zeros(shape, dtype=dtype or get_default_dtype()), requires_grad=True)
        if init == "fan_in" and not fan_in:
            raise ValueError("fan_in initialization needs a positive fan_in")
        self.init = init
        self.fan_in = fan_in

    def reset(self, rng):
        if self.init == "fan_in":
            bound = math.sqrt(6.0 / self.fan_in)
            self.data = rng.uniform(-bound, bound, size=self.shape).astype(self.dtype)
        elif self.init == "ones":
            self.data = np.ones(self.shape, dtype=self.dtype)
        else:
            self.data = np.zeros(self.shape, dtype=self.dtype)
        self.grad = None

    def assign(self, array):
        array = np.asarray(array, dtype=self.dtype)
        if array.shape != self.shape:
            raise ShapeError(f"cannot assign shape {array.shape} to parameter of shape {self.shape}")
        self.data = np.ascontiguousarray(array)

    def __repr__(self):
        return f"Parameter(shape={self.shape}, init={self.init!r})"


class Node(NamedTuple):
    function: Function
    inputs: tuple
    output: Tensor


class Tape:
    """
    Append-only record of the operations of one forward pass.

    A tape is single-threaded; concurrent forward passes use one tape each.
    """

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc_info):
        _local.tapes.pop()

    def __len__(self):
        return len(self.nodes)

    def record(self, function, inputs, output):
        if self.consumed:
            raise TapeError("cannot record on a consumed tape, call reset() first")
        output.node_id = len(self.nodes)
        output.tape = self
        self.nodes.append(Node(function, inputs, output))

    def reset(self):
        self.nodes = []
        self.consumed = False

    def owns(self, tensor):
        return tensor.tape is self and tensor.node_id is not None

    def backward(self, loss, accumulate=True):  # noqa: FBT002
        """
        Propagate d(loss)/d(.) to every leaf that requires grad.

        Returns ``{leaf: gradient array}``; with ``accumulate`` the gradients are
        also added to ``leaf.grad``.
        """
        if self.consumed:
            raise TapeError("backward already ran on this tape, call reset() first")
        if loss.shape != (1, 1, 1, 1):
            raise TapeError(f"loss must be a scalar (1, 1, 1, 1) tensor, got shape {loss.shape}")
        if not self.owns(loss):
            raise TapeError("loss was not recorded on this tape")
        self.consumed = True

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node.output), None)
            if grad is None:
                continue
            input_grads = node.function.backward(grad)
            for tensor, input_grad in zip(node.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if self.owns(tensor):
                    grads[key] = grads[key] + input_grad if key in grads else input_grad
                elif key in leaves:
                    leaves[key] = (tensor, leaves[key][1] + input_grad)
                else:
                    leaves[key] = (tensor, input_grad)

        result = {}
        for tensor, grad in leaves.values():
            result[tensor] = grad
            if accumulate:
                tensor.grad = grad if tensor.grad is None else tensor.grad + grad
        logger.debug("backward over %d nodes reached %d leaves", len(self.nodes), len(result))
        return result


def backward(tape, loss):
    return tape.backward(loss)


class Function:
    """
    Base class of differentiable operations.

    ``forward`` receives the input arrays and returns the output array, saving
    whatever ``backward`` needs on ``self``. ``backward`` receives d(loss)/d(output)
    and returns one gradient (or ``None``) per input.
    """

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors, **kwargs):
        function = cls()
        out = function.forward(*(tensor.data for tensor in tensors), **kwargs)
        tape = current_tape()
        if tape is not None and any(tensor.requires_grad for tensor in tensors):
            output = Tensor(out, requires_grad=True)
            tape.record(function, tensors, output)
            return output
        return Tensor(out)


def check_broadcast(a, b):
    for axis, (x, y) in enumerate(zip(a, b)):
        if x not in (y, 1) and y != 1:
            raise ShapeError(f"shapes {a} and {b} disagree along the {AXES[axis]} axis", axis=AXES[axis])


def unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    axes = tuple(axis for axis, size in enumerate(shape) if size == 1 and grad.shape[axis] != 1)
    return grad.sum(axis=axes, keepdims=True)


class Add(Function):
    def forward(self, a, b):
        check_broadcast(a.shape, b.shape)
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        check_broadcast(a.shape, b.shape)
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        check_broadcast(a.shape, b.shape)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Scale(Function):
    def forward(self, x, factor):
        self.factor = factor
        return x * x.dtype.type(factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.factor),)


class Shift(Function):
    def forward(self, x, amount):
        return x + x.dtype.type(amount)

    def backward(self, grad):
        return (grad,)


class Square(Function):
    def forward(self, x):
        self.x = x
        return x * x

    def backward(self, grad):
        return (2 * self.x * grad,)


class Sqrt(Function):
    def forward(self, x):
        self.y = np.sqrt(x)
        return self.y

    def backward(self, grad):
        return (grad * 0.5 / self.y,)


class Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Sigmoid(Function):
    def forward(self, x):
        self.y = 1 / (1 + np.exp(-x))
        return self.y

    def backward(self, grad):
        return (grad * self.y * (1 - self.y),)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Concat(Function):
    def forward(self, *arrays):
        reference = arrays[0].shape
        for array in arrays[1:]:
            for axis in (0, 2, 3):
                if array.shape[axis] != reference[axis]:
                    raise ShapeError(
                        f"cannot concatenate {reference} with {array.shape} along channels, {AXES[axis]} differs",
                        axis=AXES[axis],
                    )
        self.bounds = np.cumsum([array.shape[1] for array in arrays])[:-1]
        return np.concatenate(arrays, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=1))


class ChannelSlice(Function):
    def forward(self, x, start, stop):
        self.shape, self.start, self.stop = x.shape, start, stop
        return x[:, start:stop]

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[:, self.start : self.stop] = grad
        return (full,)


class SumAll(Function):
    def forward(self, x):
        self.shape = x.shape
        return x.sum(dtype=x.dtype).reshape(1, 1, 1, 1)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


class MeanAll(Function):
    def forward(self, x):
        self.shape = x.shape
        return x.mean(dtype=x.dtype).reshape(1, 1, 1, 1)

    def backward(self, grad):
        return (np.broadcast_to(grad / np.prod(self.shape), self.shape).astype(grad.dtype),)


class PadTo(Function):
    """Zero padding at the bottom and right edges up to (height, width)"""

    def forward(self, x, height, width):
        n, c, h, w = x.shape
        if height < h or width < w:
            raise ShapeError(f"cannot pad {x.shape} down to {(height, width)}")
        self.h, self.w = h, w
        out = np.zeros((n, c, height, width), dtype=x.dtype)
        out[:, :, :h, :w] = x
        return out

    def backward(self, grad):
        return (np.ascontiguousarray(grad[:, :, : self.h, : self.w]),)


def square(x):
    return Square.apply(x)


def sqrt(x):
    return Sqrt.apply(x)


def tensor_abs(x):
    return Abs.apply(x)


def sigmoid(x):
    return Sigmoid.apply(x)


def reshape(x, shape):
    shape = tuple(shape)
    if len(shape) != 4 or math.prod(shape) != math.prod(x.shape):  # noqa: PLR2004
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    return Reshape.apply(x, shape=shape)


def concat(tensors):
    return Concat.apply(*tensors)


def channel_slice(x, start, stop):
    if not 0 <= start < stop <= x.channels:
        raise ShapeError(f"channel range [{start}, {stop}) is outside {x.channels} channels", axis="channel")
    return ChannelSlice.apply(x, start=start, stop=stop)


def sum_all(x):
    return SumAll.apply(x)


def mean_all(x):
    return MeanAll.apply(x)


def pad_to(x, height, width):
    return PadTo.apply(x, height=height, width=width)
