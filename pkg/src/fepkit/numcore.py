"""Dense numeric core: parameters, activations, softmax loss, optimizers,
and finite-difference gradient checking.

All values are float64 numpy arrays (2-D, row-major). Backward passes
throughout the package are hand-derived; `grad_check` is the independent
oracle that validates them by central differences.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Canonical self-normalizing constants (the activation is defined by them).
SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


class DimensionError(ValueError):
    """Operand shapes do not line up."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class ConfigurationError(ValueError):
    """A model or experiment was configured inconsistently."""


class InputError(ValueError):
    """Caller-supplied data violates an operation's preconditions."""


class UsageError(RuntimeError):
    """An operation was called in an invalid order (e.g. backward without cache)."""


class ParamTensor:
    """A learnable array plus its gradient accumulator (same shape)."""

    def __init__(self, value, name: str):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.value.shape})"


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None,
           name: str = "w") -> ParamTensor:
    """Uniform init in +-sqrt(6/(fan_in+fan_out)); shape defaults to (fan_in, fan_out)."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return ParamTensor(rng.uniform(-limit, limit, size=shape), name)


def zeros_param(shape, name: str) -> ParamTensor:
    return ParamTensor(np.zeros(shape), name)


# ----------------------------------------------------------------------
# affine
# ----------------------------------------------------------------------

def affine_forward(x: np.ndarray, w: ParamTensor, b: ParamTensor) -> np.ndarray:
    """x @ w + b for a batch of row vectors: (B, I) x (I, O) -> (B, O)."""
    if x.ndim != 2 or x.shape[1] != w.value.shape[0]:
        raise DimensionError(
            f"affine: input shape {x.shape} incompatible with weight {w.value.shape}")
    return x @ w.value + b.value


def affine_backward(dout: np.ndarray, x: np.ndarray, w: ParamTensor,
                    b: ParamTensor) -> np.ndarray:
    """Accumulate parameter gradients, return dLoss/dx."""
    w.grad += x.T @ dout
    b.grad += dout.sum(axis=0, keepdims=True)
    return dout @ w.value.T


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic with inputs clamped to +-40, where the true value already
    rounds to 0 or 1 at double precision; branch-free and never overflows."""
    z = np.clip(x, -40.0, 40.0)
    return 1.0 / (1.0 + np.exp(-z))


def selu(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=np.float64, copy=True)
    neg = x <= 0
    out[~neg] *= SELU_LAMBDA
    out[neg] = SELU_LAMBDA * SELU_ALPHA * np.expm1(x[neg])
    return out


def selu_grad(x: np.ndarray) -> np.ndarray:
    """dSELU/dx as a function of the pre-activation."""
    out = np.full_like(x, SELU_LAMBDA)
    neg = x <= 0
    out[neg] = SELU_LAMBDA * SELU_ALPHA * np.exp(x[neg])
    return out


_ACTIVATIONS = {
    "selu": selu,
    "sigmoid": sigmoid,
    "tanh": np.tanh,
}


def activation_apply(kind: str, x: np.ndarray) -> np.ndarray:
    """Elementwise activation by name: 'selu', 'sigmoid' or 'tanh'."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None
    return fn(np.asarray(x, dtype=np.float64))


# ----------------------------------------------------------------------
# softmax + cross entropy
# ----------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax with max subtraction for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log likelihood over rows, plus dLoss/dlogits.

    dlogits = (softmax - onehot) / B, so it feeds straight into backward passes.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} != ({n},)")
    if n < 1:
        raise InputError("softmax_cross_entropy needs at least one row")
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    denom = e.sum(axis=1)
    logp = z[np.arange(n), labels] - np.log(denom)
    loss = -float(logp.mean())
    d = e / denom[:, None]
    d[np.arange(n), labels] -= 1.0
    d /= n
    return loss, d


# ----------------------------------------------------------------------
# optimizers
# ----------------------------------------------------------------------

def sgd_step(params: Sequence[ParamTensor], lr: float):
    """value <- value - lr * grad for every parameter, then grads are zeroed."""
    for p in params:
        p.value -= lr * p.grad
        p.zero_grad()


class OptimizerState:
    """Optimizer bookkeeping bound to a fixed parameter list.

    kind 'sgd' keeps only the learning rate; kind 'adam' keeps first/second
    moment accumulators (zero-initialized) and a step counter t that advances
    by exactly one per step.
    """

    def __init__(self, kind: str, params: Sequence[ParamTensor], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer kind {kind!r}")
        self.kind = kind
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        if kind == "adam":
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]


def adam_step(params: Sequence[ParamTensor], state: OptimizerState):
    """Bias-corrected Adam update; grads are zeroed afterwards."""
    if state.kind != "adam":
        raise ConfigurationError("adam_step called with non-adam state")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad ** 2
        p.value -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()


def optimizer_step(params: Sequence[ParamTensor], state: OptimizerState):
    if state.kind == "sgd":
        state.t += 1
        sgd_step(params, state.learning_rate)
    else:
        adam_step(params, state)


def global_grad_norm(params: Sequence[ParamTensor]) -> float:
    total = 0.0
    for p in params:
        total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


def clip_grads(params: Sequence[ParamTensor], max_norm: float):
    """Scale all grads so their global L2 norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale


# ----------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------

def grad_check(loss_fn: Callable[[], float], params: Sequence[ParamTensor],
               h: float = 1e-5) -> float:
    """Validate analytic gradients against central finite differences.

    loss_fn must run forward + backward, *accumulating* into param grads,
    and return the scalar loss. It must be deterministic: the only thing
    allowed to vary between calls is the parameter values this function
    perturbs. Returns the max over scalar parameters of

        |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    """
    for p in params:
        p.zero_grad()
    loss = float(loss_fn())
    if not np.isfinite(loss):
        raise NumericError(f"loss is non-finite: {loss}")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn())
            flat[i] = orig - h
            lm = float(loss_fn())
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError("finite differencing hit a non-finite loss")
            numeric = (lp - lm) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    # leave grads in the analytic state for callers that inspect them
    for p, g in zip(params, analytic):
        p.grad[...] = g
    return worst
