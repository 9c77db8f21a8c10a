"""Gated recurrent unit layer with backpropagation through time.

Per step, with ``h`` the previous state::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    c  = tanh(W_c x + U_c (r * h) + b_c)
    h' = (1 - z) * h + z * c

The reset gate multiplies the previous state inside the candidate's
recurrent term.  Gate blocks are stacked in the order z, r, c.
"""

import numpy as np

from .core import Param, glorot_uniform, sigmoid


class GRULayer:
    """One GRU direction over padded batches ``(B, T, D)``.

    Sequences shorter than ``T`` are handled with a per-step mask: padded
    steps carry the state forward unchanged and receive no gradient.  With
    ``reverse=True`` each sequence is reversed within its own length, run
    forward, and the outputs are mapped back to the original time order.
    """

    def __init__(self, input_dim, hidden_dim, rng=None, name="gru"):
        rng = np.random.default_rng() if rng is None else rng
        h = hidden_dim
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.W = Param(np.vstack([glorot_uniform(rng, h, input_dim) for _ in range(3)]), f"{name}.W")
        self.U = Param(np.vstack([glorot_uniform(rng, h, h) for _ in range(3)]), f"{name}.U")
        self.b = Param(np.zeros(3 * h), f"{name}.b")
        self._cache = None

    def params(self):
        return [self.W, self.U, self.b]

    def gate(self, name):
        """(input weights, recurrent weights, bias) of gate ``z``, ``r`` or ``c``."""
        i = "zrc".index(name)
        s = slice(i * self.hidden_dim, (i + 1) * self.hidden_dim)
        return self.W.value[s], self.U.value[s], self.b.value[s]

    @staticmethod
    def _order(lengths, T):
        t = np.arange(T)[None, :]
        rev = lengths[:, None] - 1 - t
        return np.where(rev >= 0, rev, t)

    def forward(self, x, lengths=None, reverse=False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError(f"expected (batch, time, dim) input, got shape {x.shape}")
        B, T, D = x.shape
        if T == 0:
            raise ValueError("GRU input must have at least one time step")
        if D != self.input_dim:
            raise ValueError(f"input dim {D} != layer input dim {self.input_dim}")
        lengths = np.full(B, T) if lengths is None else np.asarray(lengths, dtype=np.int64)
        if np.any(lengths < 1) or np.any(lengths > T):
            raise ValueError("sequence lengths must lie in [1, T]")
        H = self.hidden_dim
        rows = np.arange(B)[:, None]
        order = self._order(lengths, T) if reverse else None
        xs = x[rows, order] if reverse else x
        mask = np.arange(T)[None, :] < lengths[:, None]

        W, U, b = self.W.value, self.U.value, self.b.value
        U_zr, U_c = U[: 2 * H], U[2 * H :]
        xw = xs @ W.T + b
        h = np.zeros((B, H))
        hs = np.empty((B, T, H))
        h_prev = np.empty((B, T, H))
        zs = np.empty((B, T, H))
        rs = np.empty((B, T, H))
        cs = np.empty((B, T, H))
        for t in range(T):
            a = xw[:, t]
            hu = h @ U_zr.T
            z = sigmoid(a[:, :H] + hu[:, :H])
            r = sigmoid(a[:, H : 2 * H] + hu[:, H:])
            c = np.tanh(a[:, 2 * H :] + (r * h) @ U_c.T)
            h_new = (1.0 - z) * h + z * c
            h_prev[:, t], zs[:, t], rs[:, t], cs[:, t] = h, z, r, c
            h = np.where(mask[:, t, None], h_new, h)
            hs[:, t] = h
        self._cache = (xs, mask, order, h_prev, zs, rs, cs)
        return hs[rows, order] if reverse else hs

    def backward(self, dout):
        """Accumulate parameter gradients; return the gradient w.r.t. the input."""
        if self._cache is None:
            raise RuntimeError("GRU backward called without a cached forward pass")
        xs, mask, order, h_prev, zs, rs, cs = self._cache
        B, T, _ = xs.shape
        H = self.hidden_dim
        rows = np.arange(B)[:, None]
        dout = np.asarray(dout, dtype=np.float64)
        if dout.shape != (B, T, H):
            raise ValueError(f"upstream gradient shape {dout.shape} != {(B, T, H)}")
        if order is not None:
            dout = dout[rows, order]
        U = self.U.value
        U_zr, U_c = U[: 2 * H], U[2 * H :]
        da = np.zeros((B, T, 3 * H))
        dU_zr = np.zeros_like(U_zr)
        dU_c = np.zeros_like(U_c)
        dh_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dout[:, t] + dh_next
            m = mask[:, t, None]
            dh_new = np.where(m, dh, 0.0)
            dh_prev = np.where(m, 0.0, dh)
            hp, z, r, c = h_prev[:, t], zs[:, t], rs[:, t], cs[:, t]
            dz = dh_new * (c - hp)
            dc = dh_new * z
            dh_prev = dh_prev + dh_new * (1.0 - z)
            dac = dc * (1.0 - c * c)
            drh = dac @ U_c
            dU_c += dac.T @ (r * hp)
            dr = drh * hp
            dh_prev += drh * r
            dazr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
            dU_zr += dazr.T @ hp
            dh_prev += dazr @ U_zr
            da[:, t, : 2 * H] = dazr
            da[:, t, 2 * H :] = dac
            dh_next = dh_prev
        D = xs.shape[2]
        self.W.grad += da.reshape(-1, 3 * H).T @ xs.reshape(-1, D)
        self.U.grad[: 2 * H] += dU_zr
        self.U.grad[2 * H :] += dU_c
        self.b.grad += da.sum(axis=(0, 1))
        dxs = da @ self.W.value
        return dxs[rows, order] if order is not None else dxs


def gru_forward(layer, seq, direction="forward"):
    """Run one direction over a single ``(T, input_dim)`` sequence."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError(f"sequence must be (T >= 1, dim), got shape {seq.shape}")
    return layer.forward(seq[None], reverse=direction == "backward")[0]


def gru_backward(layer, upstream):
    """Backpropagate ``(T, hidden_dim)`` upstream gradients of the last :func:`gru_forward`."""
    return layer.backward(np.asarray(upstream, dtype=np.float64)[None])[0]
