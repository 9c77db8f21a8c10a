"""Parameters, dense layers, activations, losses and dropout (float64 numpy)."""

import numpy as np

PROB_CLAMP = 1e-7


class Param:
    """A trainable array and its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, value, name=""):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


def glorot_uniform(rng, fan_out, fan_in):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_xent(logits, targets):
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``.

    ``logits`` is ``(K,)`` with an integer target or ``(B, K)`` with ``B``
    targets.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    targets = np.atleast_1d(np.asarray(targets))
    n, k = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {targets.shape}")
    if targets.dtype.kind not in "iu" or np.any(targets < 0) or np.any(targets >= k):
        raise ValueError(f"target index out of range for {k} classes")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), targets].mean()
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    grad /= n
    return float(loss), (grad[0] if single else grad)


def binary_xent(p, label):
    """Mean binary cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7].

    Returns the loss and the gradient w.r.t. ``p`` (zero where clamping was
    active).
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("binary labels must be 0 or 1")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    losses = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    n = max(losses.size, 1)
    grad = (-y / pc + (1.0 - y) / (1.0 - pc)) / n
    grad = np.where(pc == p, grad, 0.0)
    return float(losses.mean()), grad


class Dense:
    """Affine map ``y = x W^T + b`` over the last axis of ``x``."""

    def __init__(self, input_dim, output_dim, rng=None, name="dense"):
        rng = np.random.default_rng() if rng is None else rng
        self.W = Param(glorot_uniform(rng, output_dim, input_dim), f"{name}.W")
        self.b = Param(np.zeros(output_dim), f"{name}.b")
        self._x = None

    @property
    def input_dim(self):
        return self.W.shape[1]

    @property
    def output_dim(self):
        return self.W.shape[0]

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"{self.W.name}: input dim {x.shape[-1]} != {self.input_dim}")
        self._x = x
        return x @ self.W.value.T + self.b.value

    def backward(self, dy):
        if self._x is None:
            raise RuntimeError(f"{self.W.name}: backward called before forward")
        x2 = self._x.reshape(-1, self.input_dim)
        dy2 = dy.reshape(-1, self.output_dim)
        self.W.grad += dy2.T @ x2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.W.value


def dense(W, b, x):
    return np.asarray(x) @ np.asarray(W).T + np.asarray(b)


class Dropout:
    """Inverted dropout; the sampled mask is kept for the backward pass."""

    def __init__(self, rate):
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = float(rate)
        self.mask = None

    def forward(self, x, rng=None, training=False, mask=None):
        if not training or self.rate == 0.0:
            self.mask = None
            return x
        if mask is None:
            if rng is None:
                raise ValueError("training-mode dropout needs a random generator")
            mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self.mask = mask
        return x * mask

    def backward(self, dy):
        return dy if self.mask is None else dy * self.mask


def dropout(x, rate, rng, training):
    return Dropout(rate).forward(np.asarray(x, dtype=np.float64), rng, training)
