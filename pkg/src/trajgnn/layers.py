"""Parameterized layers and the optimizer.

All parameters are leaf Tensors initialized uniformly in +-1/sqrt(fan_in)
from a caller-supplied generator, so a fixed seed reproduces a model
bit for bit. Gradients accumulate across backward passes; the optimizer
owns zeroing them.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

LEAKY_SLOPE = 0.1  # the single negative slope used across the model


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(
        rng.uniform(-bound, bound, size=shape).astype(dtype),
        requires_grad=True,
    )


class Linear:
    """Affine map x -> x W^T + b with W of shape [out, in]."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype=np.float64):
        if in_features < 1 or out_features < 1:
            raise ContractError("Linear sizes must be >= 1")
        self.in_features = in_features
        self.out_features = out_features
        self.weight = _uniform_init(rng, (out_features, in_features), in_features, dtype)
        self.bias = _uniform_init(rng, (out_features,), in_features, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"Linear({self.in_features}->{self.out_features}) got input {x.shape}"
            )
        return T.matmul(x, self.weight.T) + self.bias

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


class GRUCell:
    """Gated recurrent unit.

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    n = tanh(W_n x + U_n (r*h) + b_n)
    h' = (1-z)*h + z*n

    Gate weights are stored fused in order (z, r, n): w_ih is [3H, in],
    w_hh is [3H, H], bias is [3H].
    """

    kind = "GRU"

    def __init__(self, input_size: int, hidden_size: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        self.w_ih = _uniform_init(rng, (3 * h, input_size), input_size, dtype)
        self.w_hh = _uniform_init(rng, (3 * h, h), h, dtype)
        self.bias = _uniform_init(rng, (3 * h,), h, dtype)

    def zero_state(self, batch: int, dtype=np.float64) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden_size), dtype=dtype))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[1] != self.input_size or h.shape[1] != self.hidden_size:
            raise ShapeError(
                f"GRUCell({self.input_size},{self.hidden_size}) "
                f"got x {x.shape}, h {h.shape}"
            )
        H = self.hidden_size
        gi = T.matmul(x, self.w_ih.T) + self.bias
        gh = T.matmul(h, self.w_hh[: 2 * H].T)
        z = T.sigmoid(gi[:, :H] + gh[:, :H])
        r = T.sigmoid(gi[:, H : 2 * H] + gh[:, H : 2 * H])
        n = T.tanh(gi[:, 2 * H :] + T.matmul(r * h, self.w_hh[2 * H :].T))
        return (1.0 - z) * h + z * n

    def parameters(self):
        return {"w_ih": self.w_ih, "w_hh": self.w_hh, "bias": self.bias}


class LSTMCell:
    """Long short-term memory cell with gates (i, f, g, o).

    c' = f*c + i*g, h' = o*tanh(c'); weights fused like GRUCell but with
    four gate blocks.
    """

    kind = "LSTM"

    def __init__(self, input_size: int, hidden_size: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        self.w_ih = _uniform_init(rng, (4 * h, input_size), input_size, dtype)
        self.w_hh = _uniform_init(rng, (4 * h, h), h, dtype)
        self.bias = _uniform_init(rng, (4 * h,), h, dtype)

    def zero_state(self, batch: int, dtype=np.float64):
        z = np.zeros((batch, self.hidden_size), dtype=dtype)
        return Tensor(z), Tensor(z.copy())

    def step(self, x: Tensor, h: Tensor, c: Tensor):
        if x.shape[1] != self.input_size or h.shape[1] != self.hidden_size:
            raise ShapeError(
                f"LSTMCell({self.input_size},{self.hidden_size}) "
                f"got x {x.shape}, h {h.shape}"
            )
        H = self.hidden_size
        gates = T.matmul(x, self.w_ih.T) + T.matmul(h, self.w_hh.T) + self.bias
        i = T.sigmoid(gates[:, :H])
        f = T.sigmoid(gates[:, H : 2 * H])
        g = T.tanh(gates[:, 2 * H : 3 * H])
        o = T.sigmoid(gates[:, 3 * H :])
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        return h_new, c_new

    def parameters(self):
        return {"w_ih": self.w_ih, "w_hh": self.w_hh, "bias": self.bias}


def make_cell(kind: str, input_size: int, hidden_size: int,
              rng: np.random.Generator, dtype=np.float64):
    if kind == "GRU":
        return GRUCell(input_size, hidden_size, rng, dtype)
    if kind == "LSTM":
        return LSTMCell(input_size, hidden_size, rng, dtype)
    raise ContractError(f"unknown recurrent cell kind {kind!r}")


def run_rnn(cells, seq: Tensor) -> Tensor:
    """Run a (possibly stacked) RNN over seq [T, b, in] from zero state.

    Returns the final hidden states stacked as [layers, b, hidden].
    """
    if seq.ndim != 3 or seq.shape[0] < 1:
        raise ContractError(f"run_rnn needs a non-empty [T,b,in] sequence, got {seq.shape}")
    steps = [seq[t] for t in range(seq.shape[0])]
    finals = []
    for cell in cells:
        batch = steps[0].shape[0]
        dtype = steps[0].dtype
        if cell.kind == "LSTM":
            h, c = cell.zero_state(batch, dtype)
            outs = []
            for x in steps:
                h, c = cell.step(x, h, c)
                outs.append(h)
        else:
            h = cell.zero_state(batch, dtype)
            outs = []
            for x in steps:
                h = cell.step(x, h)
                outs.append(h)
        finals.append(h)
        steps = outs
    return T.stack(finals, axis=0)


class BatchNorm2d:
    """Per-channel batch normalization over [b, C, H, W].

    Training mode normalizes by batch statistics (biased variance) and
    updates the running buffers in place; inference mode is a pure
    function of the running statistics.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float64):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.scale = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(
                f"BatchNorm2d({self.channels}) got input {x.shape}"
            )
        if training:
            b, _, h, w = x.shape
            if b * h * w < 2:
                raise ContractError("batch statistics need at least 2 values per channel")
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data.reshape(-1)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(-1)
            xhat = centered / T.sqrt(var + self.eps)
        else:
            mu = self.running_mean.reshape(1, -1, 1, 1)
            sd = np.sqrt(self.running_var + self.eps).reshape(1, -1, 1, 1)
            xhat = (x - Tensor(mu.astype(x.dtype))) * Tensor(
                (1.0 / sd).astype(x.dtype)
            )
        scale = self.scale.reshape(1, self.channels, 1, 1)
        shift = self.shift.reshape(1, self.channels, 1, 1)
        return xhat * scale + shift

    def parameters(self):
        return {"scale": self.scale, "shift": self.shift}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    Uses the step-size form lr*sqrt(1-b2^t)/(1-b1^t) applied to
    m/(sqrt(v)+eps), updating parameter data in place.
    """

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.step_count += 1
        t = self.step_count
        alpha = lr * np.sqrt(1.0 - self.beta2**t) / (1.0 - self.beta1**t)
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (alpha * m / (np.sqrt(v) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def lr_at_epoch(epoch: int, base_lr: float = 1e-3,
                milestones: tuple[int, ...] = (1, 2, 4, 6)) -> float:
    """Learning rate for a 1-based epoch: halved at the end of each milestone."""
    if epoch < 1:
        raise ContractError(f"epoch must be >= 1, got {epoch}")
    halvings = sum(1 for m in milestones if m < epoch)
    return base_lr * 0.5**halvings
