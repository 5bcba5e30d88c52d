"""Dense-array numerics: RNG, basic ops, RMSProp, dropout and gradient checking.

Everything downstream (decoder, evaluator, features) is built on plain numpy
arrays. Float64 is the default so that training runs are reproducible
bit-for-bit and finite-difference checks are meaningful; float32 can be
requested at parameter-creation time for bulk training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

# Build-time precision switch. Tests and gradient checks assume float64.
DEFAULT_DTYPE = np.float64

Params = dict[str, np.ndarray]


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64). Same seed gives the same stream
    on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def affine(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """W @ x + b for a single vector x."""
    x = np.asarray(x)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise DimensionError(
            f"affine expects vector/matrix/vector, got {x.shape}, {W.shape}, {b.shape}"
        )
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise DimensionError(f"affine shape mismatch: W {W.shape} vs x {x.shape}, b {b.shape}")
    return W @ x + b


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax (max subtraction); output sums to 1 along `axis`."""
    v = np.asarray(v)
    if v.size == 0:
        raise DimensionError("softmax of empty input")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v)
    if v.size == 0:
        raise DimensionError("log_softmax of empty input")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x, dtype=x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class OptState:
    """RMSProp state: one non-negative accumulator per parameter."""

    learning_rate: float = 1e-3
    decay: float = 0.9
    epsilon: float = 1e-8
    acc: Params = field(default_factory=dict)

    def __post_init__(self):
        # lr == 0 is allowed as an explicit no-op (ablation switch)
        if self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 < self.decay < 1.0:
            raise ParameterError(f"decay must be in (0,1), got {self.decay}")
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")


def rmsprop_step(param: np.ndarray, grad: np.ndarray, state: OptState, name: str = "param") -> np.ndarray:
    """One in-place RMSProp update; returns the updated parameter.

    acc <- decay*acc + (1-decay)*grad^2,  param <- param - lr*grad/sqrt(acc+eps)
    """
    if param.shape != grad.shape:
        raise DimensionError(f"rmsprop grad shape {grad.shape} != param shape {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for {name}")
    acc = state.acc.get(name)
    if acc is None:
        acc = np.zeros_like(param)
    acc = state.decay * acc + (1.0 - state.decay) * grad * grad
    state.acc[name] = acc
    param -= state.learning_rate * grad / np.sqrt(acc + state.epsilon)
    return param


def rmsprop_update(params: Params, grads: Params, state: OptState) -> None:
    """Apply rmsprop_step to every entry of a parameter dict (fixed key order)."""
    for name in sorted(params):
        rmsprop_step(params[name], grads[name], state, name=name)


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability `rate`, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0,1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=DEFAULT_DTYPE)
    keep = rng.random(shape) >= rate
    return keep.astype(DEFAULT_DTYPE) / (1.0 - rate)


def grad_check(
    loss_fn,
    params: Params,
    rng: np.random.Generator,
    h: float = 1e-5,
    samples_per_param: int = 5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    `loss_fn(params) -> (loss, grads)` must be deterministic across calls
    (fix any internal randomness). A sampled subset of coordinates per
    parameter is perturbed by +-h. Relative error uses the numeric estimate
    as reference with a small floor so that near-zero gradients do not
    produce spurious blow-ups.
    """
    if h <= 0:
        raise ParameterError(f"step h must be > 0, got {h}")
    _, grads = loss_fn(params)
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        n_coords = min(samples_per_param, p.size)
        idx = rng.choice(p.size, size=n_coords, replace=False)
        flat = p.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lo_plus, _ = loss_fn(params)
            flat[i] = orig - h
            lo_minus, _ = loss_fn(params)
            flat[i] = orig
            if not (np.isfinite(lo_plus) and np.isfinite(lo_minus)):
                raise NumericError(f"non-finite loss while probing {name}[{i}]")
            numeric = (lo_plus - lo_minus) / (2.0 * h)
            analytic = g.reshape(-1)[i]
            err = abs(analytic - numeric) / max(abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst
