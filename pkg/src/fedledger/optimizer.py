"""Adam optimisation and the local training loop.

Training hooks let the continual-learning and federation strategies
intercept an iteration at fixed points: batch augmentation (replay),
output-space loss terms (distillation), parameter-space penalties
(weight anchoring, proximal terms) and raw-gradient transforms (control
variate correction).  Hooks never share random streams with the batch
sampler, so enabling one cannot shift another's draws.
"""

from dataclasses import dataclass, replace

import numpy as np

from fedledger.errors import ConfigError, ShapeError
from fedledger.network import (
    backprop_deltas,
    forward_cached,
    grad_from_deltas,
    output_gradient,
    reconstruction_loss,
)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(n_params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    return AdamState(
        m=np.zeros(n_params),
        v=np.zeros(n_params),
        step_count=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params, grad, state):
    """One Adam update with bias correction; returns new params and state."""
    g = grad.values if hasattr(grad, "values") else np.asarray(grad)
    if g.shape != params.values.shape:
        raise ShapeError("gradient length does not match parameter length")
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_values = params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params.with_values(new_values), replace(state, m=m, v=v, step_count=t)


class TrainingHook:
    """No-op base; strategies override the stages they need."""

    def augment_batch(self, batch):
        return batch

    def output_terms(self, batch, output):
        """Optional (extra_loss, extra_dldy) on the batch-mean objective."""
        return None

    def param_terms(self, params):
        """Optional (extra_loss, extra_grad_values) penalty."""
        return None

    def adjust_grad(self, grad_values):
        return grad_values


@dataclass(frozen=True)
class EarlyStopRule:
    patience: int = 5
    min_delta: float = 1e-5
    eval_every: int = 50


def train_iterations(
    params,
    state,
    spec,
    layout,
    rows,
    theta_mix,
    n_iters,
    batch_size,
    rng,
    hooks=(),
    early_stop=None,
):
    """Run minibatch Adam for a fixed iteration budget.

    Batches are sampled without replacement within an epoch and the order is
    reshuffled at every epoch boundary.  With ``early_stop`` set, training
    may halt once the windowed mean loss stops improving; by default the
    full budget is always spent.

    Returns (params, state, last_loss_breakdown).
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ConfigError("training data must be a non-empty row matrix")
    if batch_size <= 0:
        raise ConfigError("batch size must be positive")
    n = rows.shape[0]
    order = rng.permutation(n)
    pos = 0
    last_loss = None
    window_sum = 0.0
    window_n = 0
    best = np.inf
    stale = 0
    for it in range(n_iters):
        if pos >= n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos : pos + batch_size]
        pos += batch_size
        batch = rows[idx]
        for hook in hooks:
            batch = hook.augment_batch(batch)

        activations, preacts = forward_cached(params, spec, batch)
        out = activations[-1]
        loss = reconstruction_loss(layout, batch, out, theta_mix)
        total = loss.total
        dldy = output_gradient(layout, batch, out, theta_mix)
        for hook in hooks:
            term = hook.output_terms(batch, out)
            if term is not None:
                total += term[0]
                dldy = dldy + term[1]
        grad = grad_from_deltas(
            params, activations, backprop_deltas(params, spec, activations, preacts, dldy)
        )
        grad_values = grad.values
        for hook in hooks:
            term = hook.param_terms(params)
            if term is not None:
                total += term[0]
                grad_values = grad_values + term[1]
        for hook in hooks:
            grad_values = hook.adjust_grad(grad_values)
        params, state = adam_step(params, params.with_values(grad_values), state)
        last_loss = loss

        if early_stop is not None:
            window_sum += total
            window_n += 1
            if window_n == early_stop.eval_every:
                mean = window_sum / window_n
                window_sum = 0.0
                window_n = 0
                if mean < best - early_stop.min_delta:
                    best = mean
                    stale = 0
                else:
                    stale += 1
                    if stale >= early_stop.patience:
                        break
    return params, state, last_loss
