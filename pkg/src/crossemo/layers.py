"""Recurrent and dense layers with hand-derived backward passes.

Layers operate on batched sequences shaped ``[B, T, dim]`` in float64.
``forward`` returns ``(output, cache)``; ``backward`` consumes that cache,
returns the gradient w.r.t. the layer input, and accumulates parameter
gradients on the layer (``zero_grads`` resets them).  Explicit caches make it
safe to run several forward passes through shared layers before propagating
any of them backward.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as sigmoid

from .errors import ShapeError
from .numkit import SeededRng


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class GruLayer:
    """Single gated recurrent layer (update/reset gates, tanh candidate).

    Recurrence, with ``z`` the update gate, ``r`` the reset gate and ``c``
    the candidate state:

        z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
        r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
        c_t = tanh(x_t W_c + (r_t * h_{t-1}) U_c + b_c)
        h_t = z_t * h_{t-1} + (1 - z_t) * c_t

    Weights are drawn uniformly in +-sqrt(6/(fan_in+fan_out)) in the fixed
    order W_z, U_z, W_r, U_r, W_c, U_c; biases start at zero.  The draw order
    is part of the determinism contract.
    """

    PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_c", "U_c", "b_c")

    def __init__(self, input_dim: int, hidden_dim: int, rng: SeededRng):
        if input_dim < 1 or hidden_dim < 1:
            raise ShapeError("layer dimensions must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        lw = glorot_limit(input_dim, hidden_dim)
        lu = glorot_limit(hidden_dim, hidden_dim)
        self.W_z = rng.uniform(-lw, lw, (input_dim, hidden_dim))
        self.U_z = rng.uniform(-lu, lu, (hidden_dim, hidden_dim))
        self.b_z = np.zeros(hidden_dim)
        self.W_r = rng.uniform(-lw, lw, (input_dim, hidden_dim))
        self.U_r = rng.uniform(-lu, lu, (hidden_dim, hidden_dim))
        self.b_r = np.zeros(hidden_dim)
        self.W_c = rng.uniform(-lw, lw, (input_dim, hidden_dim))
        self.U_c = rng.uniform(-lu, lu, (hidden_dim, hidden_dim))
        self.b_c = np.zeros(hidden_dim)
        self.zero_grads()

    def params(self):
        return [(name, getattr(self, name)) for name in self.PARAM_NAMES]

    def grads(self):
        return [(name, getattr(self, "g_" + name)) for name in self.PARAM_NAMES]

    def zero_grads(self) -> None:
        for name in self.PARAM_NAMES:
            setattr(self, "g_" + name, np.zeros_like(getattr(self, name)))

    def forward(self, x: np.ndarray, h0: np.ndarray | None = None):
        """Run the recurrence over a batch of sequences.

        Args:
            x: input sequences ``[B, T, input_dim]``.
            h0: optional initial state ``[B, hidden_dim]`` (defaults to zeros).

        Returns:
            ``(h, cache)`` with ``h`` of shape ``[B, T, hidden_dim]``.
        """
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ShapeError(f"expected [B, T, {self.input_dim}] input, got {x.shape}")
        B, T, _ = x.shape
        if h0 is None:
            h_prev = np.zeros((B, self.hidden_dim))
        else:
            if h0.shape != (B, self.hidden_dim):
                raise ShapeError(f"h0 must be [B, {self.hidden_dim}], got {h0.shape}")
            h_prev = h0.astype(np.float64, copy=True)

        h = self.hidden_dim
        # input projections for all gates and timesteps in one matmul
        w_in = np.concatenate([self.W_z, self.W_r, self.W_c], axis=1)
        b_in = np.concatenate([self.b_z, self.b_r, self.b_c])
        proj = (x.reshape(B * T, -1) @ w_in + b_in).reshape(B, T, 3 * h)

        H = np.empty((B, T, h))
        Z = np.empty_like(H)
        R = np.empty_like(H)
        C = np.empty_like(H)
        Hprev = np.empty_like(H)
        for t in range(T):
            p = proj[:, t, :]
            z = sigmoid(p[:, :h] + h_prev @ self.U_z)
            r = sigmoid(p[:, h : 2 * h] + h_prev @ self.U_r)
            c = np.tanh(p[:, 2 * h :] + (r * h_prev) @ self.U_c)
            Hprev[:, t, :] = h_prev
            h_prev = z * h_prev + (1.0 - z) * c
            H[:, t, :] = h_prev
            Z[:, t, :] = z
            R[:, t, :] = r
            C[:, t, :] = c
        cache = (x, Z, R, C, Hprev)
        return H, cache

    def backward(self, grad_h: np.ndarray, cache) -> np.ndarray:
        """Backpropagate through time; returns gradient w.r.t. the input."""
        x, Z, R, C, Hprev = cache
        B, T, _ = x.shape
        h = self.hidden_dim
        if grad_h.shape != (B, T, h):
            raise ShapeError(f"grad shape {grad_h.shape} does not match output")
        # per-timestep pre-activation gradients, projected in bulk afterwards
        dA = np.empty((B, T, 3 * h))
        carry = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            dh = grad_h[:, t, :] + carry
            z = Z[:, t, :]
            r = R[:, t, :]
            c = C[:, t, :]
            h_prev = Hprev[:, t, :]

            dz = dh * (h_prev - c)
            dc = dh * (1.0 - z)
            dac = dc * (1.0 - c * c)
            daz = dz * z * (1.0 - z)
            ds = dac @ self.U_c.T
            dar = ds * h_prev * r * (1.0 - r)

            self.g_U_z += h_prev.T @ daz
            self.g_U_r += h_prev.T @ dar
            self.g_U_c += (r * h_prev).T @ dac
            dA[:, t, :h] = daz
            dA[:, t, h : 2 * h] = dar
            dA[:, t, 2 * h :] = dac

            carry = dh * z + daz @ self.U_z.T + dar @ self.U_r.T + ds * r

        flat_x = x.reshape(B * T, -1)
        flat_dA = dA.reshape(B * T, 3 * h)
        dW = flat_x.T @ flat_dA
        self.g_W_z += dW[:, :h]
        self.g_W_r += dW[:, h : 2 * h]
        self.g_W_c += dW[:, 2 * h :]
        db = flat_dA.sum(axis=0)
        self.g_b_z += db[:h]
        self.g_b_r += db[h : 2 * h]
        self.g_b_c += db[2 * h :]
        w_in = np.concatenate([self.W_z, self.W_r, self.W_c], axis=1)
        return (flat_dA @ w_in.T).reshape(x.shape)


class DenseLayer:
    """Frame-wise affine map ``y = x W + b`` applied to ``[B, T, in]``."""

    PARAM_NAMES = ("W", "b")

    def __init__(self, input_dim: int, output_dim: int, rng: SeededRng):
        if input_dim < 1 or output_dim < 1:
            raise ShapeError("layer dimensions must be positive")
        self.input_dim = input_dim
        self.output_dim = output_dim
        lim = glorot_limit(input_dim, output_dim)
        self.W = rng.uniform(-lim, lim, (input_dim, output_dim))
        self.b = np.zeros(output_dim)
        self.zero_grads()

    def params(self):
        return [("W", self.W), ("b", self.b)]

    def grads(self):
        return [("W", self.g_W), ("b", self.g_b)]

    def zero_grads(self) -> None:
        self.g_W = np.zeros_like(self.W)
        self.g_b = np.zeros_like(self.b)

    def forward(self, x: np.ndarray):
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ShapeError(f"expected [B, T, {self.input_dim}] input, got {x.shape}")
        return x @ self.W + self.b, (x,)

    def backward(self, grad_y: np.ndarray, cache) -> np.ndarray:
        (x,) = cache
        flat_x = x.reshape(-1, self.input_dim)
        flat_g = grad_y.reshape(-1, self.output_dim)
        self.g_W += flat_x.T @ flat_g
        self.g_b += flat_g.sum(axis=0)
        return grad_y @ self.W.T


def gru_forward(layer: GruLayer, sequence: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
    """Hidden-state sequence for a single ``[T, input_dim]`` sequence."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2:
        raise ShapeError(f"sequence must be 2-D, got shape {seq.shape}")
    h0b = None if h0 is None else np.asarray(h0, dtype=np.float64).reshape(1, -1)
    out, _ = layer.forward(seq[np.newaxis, :, :], h0b)
    return out[0]
