"""Feedforward tanh networks psi_theta(t, x1, x2) with exact derivative
queries, a parameter-gradient engine, and a deterministic Adam optimizer.

Input derivatives come from nested dual numbers (forward-over-forward), so a
query of total order d costs 2^d forward passes worth of arithmetic and is
exact to machine precision.  Running the same forward pass on tape Tensors
makes any loss assembled from derivative queries reverse-differentiable with
respect to every weight and bias.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import CapabilityError, GradientPoisonedError

CHECKPOINT_MAGIC = b"SQGN"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Weights/biases of a fully connected tanh network (input 3, output 1)."""

    layer_sizes: list
    weights: list           # list of (n_out, n_in) float64 arrays
    biases: list            # list of (n_out,) float64 arrays
    seed: int = 42
    max_derivative_order: int = 4

    def copy(self) -> "MlpParams":
        return MlpParams(layer_sizes=list(self.layer_sizes),
                         weights=[w.copy() for w in self.weights],
                         biases=[b.copy() for b in self.biases],
                         seed=self.seed,
                         max_derivative_order=self.max_derivative_order)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def assert_finite(self):
        if not all(np.all(np.isfinite(a)) for a in self.weights + self.biases):
            raise GradientPoisonedError("network parameters contain NaN/Inf")


def init_params(layer_sizes=(3, 64, 64, 64, 1), seed: int = 42,
                max_derivative_order: int = 4) -> MlpParams:
    """Xavier-uniform initialization from a seeded generator."""
    sizes = list(layer_sizes)
    if sizes[0] != 3 or sizes[-1] != 1:
        raise ValueError("network must map (t, x1, x2) to a scalar")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(layer_sizes=sizes, weights=weights, biases=biases,
                     seed=seed, max_derivative_order=max_derivative_order)


def _forward(weights, biases, t, x1, x2):
    """Network forward pass; coordinates are (B, 1) columns, possibly dual."""
    w0 = weights[0]
    z = (t @ w0[:, 0:1].T) + (x1 @ w0[:, 1:2].T) + (x2 @ w0[:, 2:3].T)
    z = z + biases[0].reshape(1, -1)
    h = ad.tanh(z)
    for w, b in zip(weights[1:-1], biases[1:-1]):
        h = ad.tanh(h @ w.T + b.reshape(1, -1))
    return h @ weights[-1].T + biases[-1].reshape(1, -1)


def _as_columns(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != 3:
        raise ValueError("points must be rows of (t, x1, x2)")
    return pts[:, 0:1], pts[:, 1:2], pts[:, 2:3]


def net_eval(params: MlpParams, points, alpha=(0, 0, 0)) -> np.ndarray:
    """Exact partial derivative D^alpha psi_theta at points (t, x1, x2).

    alpha orders are (order_t, order_x1, order_x2); their total must not
    exceed the configured maximum.
    """
    alpha = tuple(int(a) for a in alpha)
    if sum(alpha) > params.max_derivative_order:
        raise CapabilityError(
            f"derivative order {alpha} exceeds configured maximum "
            f"{params.max_derivative_order}")
    t, x1, x2 = _as_columns(points)
    coords = ad.lift([t, x1, x2], alpha)
    out = _forward(params.weights, params.biases, *coords)
    val = ad.extract(out, sum(alpha), like=t)
    val = np.asarray(val, dtype=float).reshape(-1)
    return val if np.ndim(points) > 1 else float(val[0])


def net_eval_tensor(params_t: dict, points, alpha=(0, 0, 0)):
    """Tape-mode derivative query; returns a (B, 1) Tensor.

    params_t holds 'weights'/'biases' lists of Tensor leaves so the result
    participates in reverse-mode parameter gradients.
    """
    t, x1, x2 = _as_columns(points)
    coords = ad.lift([ad.Tensor(t), ad.Tensor(x1), ad.Tensor(x2)], alpha)
    out = _forward(params_t["weights"], params_t["biases"], *coords)
    depth = sum(alpha)
    for _ in range(depth):
        out = out.t if isinstance(out, ad.Dual) else ad.Tensor(np.zeros_like(t))
    if isinstance(out, ad.Dual):
        out = ad.primal(out)
    if not isinstance(out, ad.Tensor):
        out = ad.Tensor(np.zeros_like(t))
    return out


def tensor_leaves(params: MlpParams) -> dict:
    """Wrap current parameter arrays as gradient-tracking Tensor leaves."""
    return {"weights": [ad.Tensor(w, requires_grad=True) for w in params.weights],
            "biases": [ad.Tensor(b, requires_grad=True) for b in params.biases]}


def collect_gradients(leaves: dict) -> list:
    """Gradients of the last backward pass in canonical (weights, biases) order."""
    grads = []
    for t in leaves["weights"] + leaves["biases"]:
        grads.append(t.grad if t.grad is not None else np.zeros_like(t.data))
    return grads


def param_gradient(params: MlpParams, loss_fn) -> tuple[float, list]:
    """Value and gradient of loss_fn(leaves), reverse accumulated over the
    whole expression including any derivative queries inside."""
    leaves = tensor_leaves(params)
    loss = loss_fn(leaves)
    loss.backward()
    return loss.item(), collect_gradients(leaves)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step_count: int = 0


def adam_step(params: MlpParams, grads: list, state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> MlpParams:
    """One Adam update; refuses to move on non-finite gradients."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise GradientPoisonedError("gradient contains NaN/Inf; step refused")
    arrays = params.weights + params.biases
    if not state.m:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    state.step_count += 1
    t = state.step_count
    out = params.copy()
    targets = out.weights + out.biases
    for i, (a, g) in enumerate(zip(targets, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / (1.0 - beta1**t)
        v_hat = state.v[i] / (1.0 - beta2**t)
        a -= lr * m_hat / (np.sqrt(v_hat) + eps)
    out.assert_finite()
    return out


# ---------------------------------------------------------------------------
# checkpoints: magic, version, layer count, sizes, then row-major LE floats


def save_checkpoint(params: MlpParams, path):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params.layer_sizes)))
        fh.write(struct.pack(f"<{len(params.layer_sizes)}I", *params.layer_sizes))
        fh.write(struct.pack("<Iq", params.max_derivative_order, params.seed))
        for w, b in zip(params.weights, params.biases):
            fh.write(w.astype("<f8").tobytes(order="C"))
            fh.write(b.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> MlpParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a network checkpoint (magic {magic!r})")
        version, n_layers = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sizes = list(struct.unpack(f"<{n_layers}I", fh.read(4 * n_layers)))
        max_order, seed = struct.unpack("<Iq", fh.read(12))
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(fh.read(8 * n_in * n_out), dtype="<f8")
            weights.append(w.reshape(n_out, n_in).copy())
            biases.append(np.frombuffer(fh.read(8 * n_out), dtype="<f8").copy())
    return MlpParams(layer_sizes=sizes, weights=weights, biases=biases,
                     seed=seed, max_derivative_order=max_order)
