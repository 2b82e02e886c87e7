"""Reverse-mode autodiff over numpy arrays, dense networks and Adam."""
# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.

import itertools
import logging
import math
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DatasetLoadError, GradientError, ParameterError, ShapeError

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
CHECKPOINT_MAGIC = b"LBLM"
CHECKPOINT_VERSION = 1

_node_ids = itertools.count()


class Tensor:
    """Array on the tape.

    Attributes:
        data: float64 array.
        grad: Accumulated gradient (same shape as data) or None.
        requires_grad: Whether backward should reach this tensor.
        ctx: The Function that produced this tensor, None for leaves.
        id: Creation order, makes traversal order reproducible.
    """

    # numpy operands defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, ctx=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.ctx = ctx
        self.id = next(_node_ids)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor: shape={self.data.shape} requires_grad={self.requires_grad}"

    def __neg__(self):
        return Neg.apply(self)

    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __pow__(self, exponent: float):
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __rmatmul__(self, other):
        return MatMul.apply(other, self)

    def sum(self, axis=None):
        return Sum.apply(self, axis=axis)

    def mean(self):
        return Mean.apply(self)

    def leaky_relu(self, slope: float = LEAKY_SLOPE):
        return LeakyReLU.apply(self, slope=slope)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise GradientError(f"Backward needs a scalar root, got shape {self.data.shape}")
        if not self.requires_grad:
            raise GradientError("Root does not depend on any parameter")
        grads = {self.id: np.ones_like(self.data)}
        for node in reversed(_toposort(self)):
            g = grads.pop(node.id)
            if node.ctx is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.ctx.parents, node.ctx.backward(g)):
                if not parent.requires_grad:
                    continue
                grads[parent.id] = grads[parent.id] + pg if parent.id in grads else pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> List[Tensor]:
    order, visited = [], set()

    def visit(node):
        visited.add(node.id)
        if node.ctx is not None:
            for parent in node.ctx.parents:
                if parent.requires_grad and parent.id not in visited:
                    visit(parent)
        order.append(node)

    visit(root)
    return order


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *args, **kwargs) -> Tensor:
        parents = [as_tensor(a) for a in args]
        ctx = cls(*parents)
        out = ctx.forward(*[p.data for p in parents], **kwargs)
        requires_grad = any(p.requires_grad for p in parents)
        return Tensor(out, requires_grad=requires_grad, ctx=ctx if requires_grad else None)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Add(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x + y

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x - y

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return (
            _unbroadcast(grad * self.y, self.x.shape),
            _unbroadcast(grad * self.x, self.y.shape),
        )


class Pow(Function):
    def forward(self, x, exponent):
        self.x, self.exponent = x, exponent
        return x**exponent

    def backward(self, grad):
        return (grad * self.exponent * self.x ** (self.exponent - 1.0),)


class MatMul(Function):
    def forward(self, x, w):
        if x.shape[-1] != w.shape[0]:
            raise ShapeError(f"Cannot multiply {x.shape} by {w.shape}")
        self.x, self.w = x, w
        return x @ w

    def backward(self, grad):
        return grad @ self.w.T, self.x.T @ grad


class LeakyReLU(Function):
    def forward(self, x, slope):
        self.scale = np.where(x > 0, 1.0, slope)
        return x * self.scale

    def backward(self, grad):
        return (grad * self.scale,)


class Sum(Function):
    def forward(self, x, axis):
        self.shape, self.axis = x.shape, axis
        return x.sum(axis=axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    def forward(self, x):
        self.shape = x.shape
        return x.mean()

    def backward(self, grad):
        return (np.full(self.shape, grad / math.prod(self.shape)),)


class MlpSpec(NamedTuple):
    """Layer widths (input, hidden..., output); leaky ReLU on all but the last layer."""

    widths: Tuple[int, ...]
    slope: float = LEAKY_SLOPE

    def validate(self):
        if len(self.widths) < 2:
            raise ParameterError(f"An MLP needs at least two widths: {self.widths}")
        if any(int(w) != w or w < 1 for w in self.widths):
            raise ParameterError(f"Widths must be positive integers: {self.widths}")


def kaiming_init(spec: MlpSpec, rng: np.random.Generator) -> List[np.ndarray]:
    """He initialization adjusted for the leaky slope; biases start at zero."""
    spec.validate()
    params = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        std = math.sqrt(2.0 / (fan_in * (1.0 + spec.slope**2)))
        params.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


class Mlp:
    """Dense network: x -> W x + b with leaky ReLU between layers."""

    def __init__(self, spec: MlpSpec, params: Sequence[np.ndarray]):
        spec.validate()
        self.spec = MlpSpec(tuple(int(w) for w in spec.widths), spec.slope)
        shapes = []
        for fan_in, fan_out in zip(self.spec.widths[:-1], self.spec.widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        if [np.shape(p) for p in params] != shapes:
            raise ShapeError(f"Parameters do not fit widths {self.spec.widths}")
        self.params = [Tensor(np.array(p, dtype=np.float64), requires_grad=True) for p in params]

    @classmethod
    def create(cls, widths: Sequence[int], rng: np.random.Generator) -> "Mlp":
        spec = MlpSpec(tuple(widths))
        return cls(spec, kaiming_init(spec, rng))

    @property
    def input_width(self) -> int:
        return self.spec.widths[0]

    @property
    def output_width(self) -> int:
        return self.spec.widths[-1]

    def parameters(self) -> List[Tensor]:
        return self.params

    def forward(self, batch) -> Tensor:
        x = as_tensor(batch)
        if x.shape[-1] != self.input_width:
            raise ShapeError(f"Input width {x.shape[-1]}, network expects {self.input_width}")
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            x = x @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                x = x.leaky_relu(self.spec.slope)
        return x

    def __call__(self, batch) -> Tensor:
        return self.forward(batch)

    def predict(self, batch) -> np.ndarray:
        """Forward pass on plain arrays without recording a tape."""
        x = np.asarray(batch, dtype=np.float64)
        if x.shape[-1] != self.input_width:
            raise ShapeError(f"Input width {x.shape[-1]}, network expects {self.input_width}")
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            x = x @ self.params[2 * i].data + self.params[2 * i + 1].data
            if i < n_layers - 1:
                x = np.where(x > 0, x, self.spec.slope * x)
        return x

    def freeze(self):
        for p in self.params:
            p.requires_grad = False
            p.grad = None

    def unfreeze(self):
        for p in self.params:
            p.requires_grad = True

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def grads(self) -> List[np.ndarray]:
        """Current gradients, zeros where backward did not reach a parameter."""
        return [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]

    def arrays(self) -> List[np.ndarray]:
        return [p.data for p in self.params]


class AdamState(NamedTuple):
    step: int
    m: Tuple[np.ndarray, ...]
    v: Tuple[np.ndarray, ...]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: Sequence[np.ndarray], lr: float = 1e-4, **kwargs) -> "AdamState":
        return cls(
            0,
            tuple(np.zeros_like(p) for p in params),
            tuple(np.zeros_like(p) for p in params),
            lr,
            **kwargs,
        )


def adam_step(
    state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]
) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    if not len(params) == len(grads) == len(state.m):
        raise ShapeError("Parameter, gradient and moment lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise ShapeError(f"Gradient shape {np.shape(g)} for parameter {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise GradientError(
                f"Non-finite gradient at optimizer step {state.step + 1} "
                f"(parameter shape {np.shape(p)})"
            )
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, state._replace(step=t, m=tuple(new_m), v=tuple(new_v))


class Adam:
    """Adam bound to the parameters of one network."""

    def __init__(self, net: Mlp, lr: float = 1e-4, state: Optional[AdamState] = None):
        self.net = net
        self.state = state or AdamState.zeros(net.arrays(), lr)

    def step(self):
        new_params, self.state = adam_step(self.state, self.net.arrays(), self.net.grads())
        for p, new in zip(self.net.params, new_params):
            p.data = new

    def zero_grad(self):
        self.net.zero_grad()


def finite_difference_gradient(
    f: Callable[[], float], array: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central differences of f() with respect to the entries of `array`, modified in place."""
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        saved = array[idx]
        array[idx] = saved + step
        up = f()
        array[idx] = saved - step
        down = f()
        array[idx] = saved
        grad[idx] = (up - down) / (2.0 * step)
    return grad


class Autoencoder:
    """Encoder phi, decoder psi and one Adam optimizer per network."""

    def __init__(self, encoder: Mlp, decoder: Mlp, lr: float = 1e-4):
        if encoder.output_width != decoder.input_width:
            raise ShapeError("Encoder output width must equal decoder input width")
        if decoder.output_width != encoder.input_width:
            raise ShapeError("Decoder output width must equal encoder input width")
        self.encoder = encoder
        self.decoder = decoder
        self.encoder_opt = Adam(encoder, lr)
        self.decoder_opt = Adam(decoder, lr)

    @classmethod
    def create(
        cls,
        n: int,
        latent_dim: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = (256, 64),
        lr: float = 1e-4,
    ) -> "Autoencoder":
        encoder = Mlp.create([n, *hidden, latent_dim], rng)
        decoder = Mlp.create([latent_dim, *reversed(hidden), n], rng)
        return cls(encoder, decoder, lr)

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_width

    def encode(self, images) -> np.ndarray:
        return self.encoder.predict(images)

    def decode(self, codes) -> np.ndarray:
        return self.decoder.predict(codes)

    def reconstruct(self, images) -> np.ndarray:
        return self.decoder.predict(self.encoder.predict(images))

    def copy(self) -> "Autoencoder":
        twin = Autoencoder(
            Mlp(self.encoder.spec, self.encoder.arrays()),
            Mlp(self.decoder.spec, self.decoder.arrays()),
        )
        twin.encoder_opt.state = self.encoder_opt.state
        twin.decoder_opt.state = self.decoder_opt.state
        return twin


def _u32(values) -> bytes:
    return np.asarray(values, dtype="<u4").tobytes()


def _f64(values) -> bytes:
    return np.asarray(values, dtype="<f8").tobytes()


def save_checkpoint(path: str, model: Autoencoder) -> None:
    chunks = [CHECKPOINT_MAGIC, _u32([CHECKPOINT_VERSION, 2])]
    for net, opt in ((model.encoder, model.encoder_opt), (model.decoder, model.decoder_opt)):
        chunks.append(_u32([len(net.spec.widths), *net.spec.widths]))
        chunks += [_f64(p.ravel()) for p in net.arrays()]
        chunks.append(np.asarray([opt.state.step], dtype="<u8").tobytes())
        chunks += [_f64(m.ravel()) for m in opt.state.m]
        chunks += [_f64(v.ravel()) for v in opt.state.v]
    s = model.encoder_opt.state
    chunks.append(_f64([s.lr, s.beta1, s.beta2, s.eps]))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    log.info(f"Saved checkpoint {path}")


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.raw):
            raise DatasetLoadError(f"{self.path} is truncated")
        out = np.frombuffer(self.raw, dtype=dtype, count=count, offset=self.pos)
        self.pos += size
        return out.astype(np.float64 if dtype == "<f8" else np.int64)


def load_checkpoint(path: str) -> Autoencoder:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DatasetLoadError(f"Cannot read {path}: {e}") from e
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DatasetLoadError(f"{path} is not an LBLM checkpoint")
    r = _Reader(raw, path)
    r.pos = 4
    version, count = r.take("<u4", 2)
    if version != CHECKPOINT_VERSION or count != 2:
        raise DatasetLoadError(f"Unsupported checkpoint layout in {path}")
    nets, steps, moments = [], [], []
    for _ in range(2):
        n_widths = int(r.take("<u4", 1)[0])
        spec = MlpSpec(tuple(int(w) for w in r.take("<u4", n_widths)))
        shapes = []
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        params = [r.take("<f8", math.prod(s)).reshape(s) for s in shapes]
        steps.append(int(r.take("<u8", 1)[0]))
        m = tuple(r.take("<f8", math.prod(s)).reshape(s) for s in shapes)
        v = tuple(r.take("<f8", math.prod(s)).reshape(s) for s in shapes)
        nets.append(Mlp(spec, params))
        moments.append((m, v))
    lr, beta1, beta2, eps = r.take("<f8", 4)
    if r.pos != len(raw):
        raise DatasetLoadError(f"Trailing bytes in {path}")
    model = Autoencoder(*nets, lr=lr)
    for opt, step, (m, v) in zip((model.encoder_opt, model.decoder_opt), steps, moments):
        opt.state = AdamState(step, m, v, lr, beta1, beta2, eps)
    return model
