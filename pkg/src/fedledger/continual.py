"""Continual-learning strategies applied at each client across experiences.

Five strategies are supported: ``scratch`` (re-initialize every experience),
``sequential`` (plain fine-tuning), ``replay`` (department-stratified
rehearsal buffer), ``lwf`` (distillation against the frozen
previous-experience model) and ``ewc`` (Fisher-weighted parameter
anchoring).  Each strategy reduces exactly to sequential fine-tuning when
its knob is at the degenerate value (empty buffer, alpha 0, lambda 0),
including at the bit level: the hooks below return early in those cases so
no extra floating-point work is done.
"""

import numpy as np

from fedledger.encoding import LABEL_NONE
from fedledger.errors import ConfigError, ShapeError
from fedledger.network import (
    backprop_deltas,
    forward,
    forward_cached,
    init_model,
    output_gradient,
)
from fedledger.optimizer import TrainingHook
from fedledger.rng import NS_SCRATCH, subseed

CL_STRATEGIES = ("scratch", "sequential", "replay", "lwf", "ewc")

BUFFER_CAPACITY_DEFAULT = 1_000
EWC_LAMBDA_DEFAULT = 500.0
LWF_ALPHA_DEFAULT = 1.2
FISHER_SAMPLES_DEFAULT = 1_000


def central_entry_params(strategy, params, spec, base_seed, experience):
    """Model the server carries into an experience.

    Scratch discards the trained model and re-initializes from a seed
    derived from the experience index; every other strategy continues from
    the incoming parameters unchanged.
    """
    if strategy not in CL_STRATEGIES:
        raise ConfigError(f"unknown cl strategy {strategy!r}")
    if strategy == "scratch":
        return init_model(spec, subseed(base_seed, NS_SCRATCH, experience))
    return params


class ReplayBuffer:
    """Bounded, department-stratified store of past encoded rows.

    After every update the per-department counts differ by at most one
    across all departments observed so far: each of the D seen departments
    gets a quota of floor(capacity / D), with the remainder going one each
    to the departments in first-seen order.
    """

    def __init__(self, capacity=BUFFER_CAPACITY_DEFAULT):
        if capacity < 0:
            raise ConfigError("buffer capacity must be >= 0")
        self.capacity = capacity
        self._dept_order = []
        self._stored = {}

    def __len__(self):
        return sum(r.shape[0] for r in self._stored.values())

    @property
    def departments(self):
        return tuple(self._dept_order)

    def counts(self):
        return {d: self._stored[d].shape[0] for d in self._dept_order}

    def _quotas(self):
        n_depts = len(self._dept_order)
        base, extra = divmod(self.capacity, n_depts)
        return {
            d: base + (1 if i < extra else 0)
            for i, d in enumerate(self._dept_order)
        }

    def update(self, rows, departments, rng):
        """Fold one experience's rows in and rebalance quotas.

        New departments fill their quota by uniform sampling from the
        incoming rows; departments already present are down-sampled to the
        (now smaller) quota and are not refreshed with new rows.
        """
        if self.capacity == 0:
            return
        rows = np.asarray(rows, dtype=np.float64)
        departments = np.asarray(departments, dtype=object)
        if rows.shape[0] != departments.shape[0]:
            raise ShapeError("one department tag required per row")
        incoming = {}
        for d in departments:
            if d not in incoming and d not in self._stored:
                incoming[d] = rows[departments == d]
        for d in incoming:
            self._dept_order.append(d)
        quotas = self._quotas()
        for d in self._dept_order:
            pool = incoming.get(d, self._stored.get(d))
            q = quotas[d]
            if pool.shape[0] > q:
                keep = rng.choice(pool.shape[0], size=q, replace=False)
                pool = pool[np.sort(keep)]
            self._stored[d] = pool

    def sample(self, k, rng):
        """Draw k rows uniformly without replacement across departments."""
        stacked = np.vstack([self._stored[d] for d in self._dept_order])
        idx = rng.choice(stacked.shape[0], size=k, replace=False)
        return stacked[np.sort(idx)]


class ReplayHook(TrainingHook):
    """Mixes min(batch size, buffer size) buffered rows into each batch."""

    def __init__(self, buffer, rng):
        self.buffer = buffer
        self.rng = rng

    def augment_batch(self, batch):
        size = len(self.buffer)
        if size == 0:
            return batch
        k = min(batch.shape[0], size)
        return np.vstack([batch, self.buffer.sample(k, self.rng)])


def lwf_distill_loss(new_output, old_output, alpha):
    """Distillation penalty: alpha times the MSE between reconstructions."""
    new_output = np.asarray(new_output, dtype=np.float64)
    old_output = np.asarray(old_output, dtype=np.float64)
    if new_output.shape != old_output.shape:
        raise ShapeError("distillation outputs must have equal shapes")
    diff = new_output - old_output
    return alpha * float(np.mean(diff * diff))


class LwfHook(TrainingHook):
    """Distills the current model toward a frozen previous-experience one."""

    def __init__(self, old_params, spec, alpha):
        self.old_params = old_params
        self.spec = spec
        self.alpha = alpha

    def output_terms(self, batch, output):
        if self.alpha == 0.0 or self.old_params is None:
            return None
        old_out = forward(self.old_params, self.spec, batch)
        diff = output - old_out
        loss = self.alpha * float(np.mean(diff * diff))
        dldy = (2.0 * self.alpha / diff.size) * diff
        return loss, dldy


def ewc_penalty(values, anchor_values, fisher, lam):
    """Quadratic anchor penalty (lam/2) * sum F_j (theta_j - anchor_j)^2."""
    values = np.asarray(values, dtype=np.float64)
    anchor_values = np.asarray(anchor_values, dtype=np.float64)
    fisher = np.asarray(fisher, dtype=np.float64)
    if values.shape != anchor_values.shape or values.shape != fisher.shape:
        raise ShapeError("penalty terms must share the parameter length")
    diff = values - anchor_values
    return 0.5 * lam * float(np.sum(fisher * diff * diff))


class EwcHook(TrainingHook):
    def __init__(self, anchor, fisher, lam):
        self.anchor = anchor
        self.fisher = fisher
        self.lam = lam

    def param_terms(self, params):
        if self.lam == 0.0 or self.anchor is None:
            return None
        diff = params.values - self.anchor.values
        loss = 0.5 * self.lam * float(np.sum(self.fisher * diff * diff))
        return loss, self.lam * self.fisher * diff


def estimate_fisher(params, spec, layout, rows, theta_mix, n_samples, rng):
    """Diagonal Fisher proxy: mean squared per-row loss gradient.

    Per-row gradients factor through the layer deltas, so the whole batch
    is processed in one vectorized pass: for weights the squared-gradient
    sum is (a^2)^T (delta^2), for biases the column sum of delta^2.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] == 0:
        raise ConfigError("Fisher estimation needs at least one row")
    if rows.shape[0] > n_samples:
        idx = rng.choice(rows.shape[0], size=n_samples, replace=False)
        rows = rows[np.sort(idx)]
    n = rows.shape[0]
    activations, preacts = forward_cached(params, spec, rows)
    # output_gradient targets the batch-mean loss; scaling by n recovers
    # each row's own-loss gradient, and rows stay independent through the
    # backward pass
    dldy = output_gradient(layout, rows, activations[-1], theta_mix) * n
    deltas = backprop_deltas(params, spec, activations, preacts, dldy)
    pieces = []
    for act, delta in zip(activations[:-1], deltas):
        f_w = (act * act).T @ (delta * delta) / n
        f_b = np.sum(delta * delta, axis=0) / n
        pieces.append(np.concatenate([f_w.ravel(), f_b]))
    return np.concatenate(pieces)


class ClientCl:
    """Per-client continual-learning state and hook factory.

    The end-of-experience bookkeeping (buffer refresh, Fisher estimation,
    model freezing) always runs against the post-aggregation central model,
    so every client anchors to the same parameters.
    """

    def __init__(
        self,
        strategy,
        spec,
        layout,
        theta_mix,
        buffer_capacity=BUFFER_CAPACITY_DEFAULT,
        ewc_lambda=EWC_LAMBDA_DEFAULT,
        lwf_alpha=LWF_ALPHA_DEFAULT,
        fisher_samples=FISHER_SAMPLES_DEFAULT,
        exclude_anomalies_from_replay=False,
    ):
        if strategy not in CL_STRATEGIES:
            raise ConfigError(f"unknown cl strategy {strategy!r}")
        self.strategy = strategy
        self.spec = spec
        self.layout = layout
        self.theta_mix = theta_mix
        self.ewc_lambda = ewc_lambda
        self.lwf_alpha = lwf_alpha
        self.fisher_samples = fisher_samples
        self.exclude_anomalies = exclude_anomalies_from_replay
        self.buffer = ReplayBuffer(buffer_capacity) if strategy == "replay" else None
        self.ewc_anchor = None
        self.ewc_fisher = None
        self.lwf_frozen = None

    def hooks(self, replay_rng):
        if self.strategy == "replay":
            return (ReplayHook(self.buffer, replay_rng),)
        if self.strategy == "lwf":
            return (LwfHook(self.lwf_frozen, self.spec, self.lwf_alpha),)
        if self.strategy == "ewc":
            return (EwcHook(self.ewc_anchor, self.ewc_fisher, self.ewc_lambda),)
        return ()

    def end_experience(self, central_params, batch, fisher_rng, buffer_rng):
        if self.strategy == "replay":
            rows, departments = batch.rows, batch.departments
            if self.exclude_anomalies:
                clean = batch.labels == LABEL_NONE
                rows, departments = rows[clean], departments[clean]
            self.buffer.update(rows, departments, buffer_rng)
        elif self.strategy == "lwf":
            self.lwf_frozen = central_params.copy()
        elif self.strategy == "ewc":
            if self.ewc_lambda != 0.0:
                self.ewc_fisher = estimate_fisher(
                    central_params,
                    self.spec,
                    self.layout,
                    batch.rows,
                    self.theta_mix,
                    self.fisher_samples,
                    fisher_rng,
                )
                self.ewc_anchor = central_params.copy()
