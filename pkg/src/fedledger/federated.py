"""Server aggregation rules and client-side federation hooks.

FedAvg weights clients by their sample counts.  FedProx keeps FedAvg
aggregation and adds a proximal penalty during local training.  FedYogi
applies an adaptive, sign-based second-moment server step to the averaged
client delta.  Scaffold corrects each local gradient with control variates
and moves the server model by the mean client displacement.  The
single-client baseline is FedAvg restricted to one participant.

Aggregation accumulates weighted layers in ascending client-id order with
the weight sum computed over exact integers, so equal-count FedAvg and the
pinned Scaffold path produce bit-identical results.
"""

from dataclasses import dataclass

import numpy as np

from fedledger.errors import ConfigError, ProtocolError, ShapeError
from fedledger.optimizer import TrainingHook

FL_STRATEGIES = ("fedavg", "fedprox", "fedyogi", "scaffold", "single")

FEDPROX_MU_DEFAULT = 1.2


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    params: object
    n_samples: int
    delta_c: np.ndarray | None = None

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ProtocolError("client update must carry a positive sample count")


def _check_updates(updates):
    if not updates:
        raise ProtocolError("aggregation requires at least one client update")
    shapes = updates[0].params.shapes
    length = len(updates[0].params.values)
    for u in updates:
        if u.params.shapes != shapes or len(u.params.values) != length:
            raise ProtocolError("client updates disagree on parameter shapes")
    return sorted(updates, key=lambda u: u.client_id)


def fedavg_aggregate(updates):
    """Sample-count-weighted mean of client parameters."""
    updates = _check_updates(updates)
    total = float(sum(int(u.n_samples) for u in updates))
    acc = np.zeros_like(updates[0].params.values)
    for u in updates:
        acc += (u.n_samples / total) * u.params.values
    return updates[0].params.with_values(acc)


def fedprox_penalty(local_values, global_values, mu):
    """Proximal term (mu/2) * ||theta_local - theta_global||^2."""
    local_values = np.asarray(local_values, dtype=np.float64)
    global_values = np.asarray(global_values, dtype=np.float64)
    if local_values.shape != global_values.shape:
        raise ShapeError("proximal term requires equal parameter lengths")
    diff = local_values - global_values
    return 0.5 * mu * float(np.dot(diff, diff))


class FedProxHook(TrainingHook):
    """Adds the proximal gradient mu * (theta - theta_broadcast)."""

    def __init__(self, broadcast_params, mu):
        self.broadcast = broadcast_params
        self.mu = mu

    def param_terms(self, params):
        if self.mu == 0.0:
            return None
        diff = params.values - self.broadcast.values
        return 0.5 * self.mu * float(np.dot(diff, diff)), self.mu * diff


@dataclass(frozen=True)
class YogiServerState:
    m: np.ndarray
    v: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3
    server_lr: float = 1e-2


def init_yogi(n_params, beta1=0.9, beta2=0.99, tau=1e-3, server_lr=1e-2):
    return YogiServerState(
        m=np.zeros(n_params),
        v=np.zeros(n_params),
        beta1=beta1,
        beta2=beta2,
        tau=tau,
        server_lr=server_lr,
    )


def fedyogi_server_update(state, prev_params, updates):
    """Adaptive server step on the weighted client delta.

    The second moment moves toward delta^2 only as fast as the sign of the
    gap allows, which keeps v from collapsing on sparse large deltas.
    """
    delta = fedavg_aggregate(updates).values - prev_params.values
    m = state.beta1 * state.m + (1.0 - state.beta1) * delta
    d2 = delta * delta
    v = state.v - (1.0 - state.beta2) * d2 * np.sign(state.v - d2)
    new_values = prev_params.values + state.server_lr * m / (np.sqrt(v) + state.tau)
    next_state = YogiServerState(
        m=m, v=v, beta1=state.beta1, beta2=state.beta2,
        tau=state.tau, server_lr=state.server_lr,
    )
    return prev_params.with_values(new_values), next_state


class ScaffoldState:
    """Server control variate plus one variate per client.

    After every full-participation round the server variate equals the mean
    of the client variates; ``mean_gap`` exposes the drift for asserting
    that invariant.
    """

    def __init__(self, n_params, client_ids, server_lr=1.0, pin_zero=False):
        self.c = np.zeros(n_params)
        self.c_clients = {cid: np.zeros(n_params) for cid in client_ids}
        self.server_lr = server_lr
        self.pin_zero = pin_zero

    def reset(self):
        self.c[:] = 0.0
        for v in self.c_clients.values():
            v[:] = 0.0

    def mean_gap(self):
        mean = np.mean(np.stack(list(self.c_clients.values())), axis=0)
        return float(np.max(np.abs(self.c - mean)))


class ScaffoldHook(TrainingHook):
    """Corrects each raw gradient by (c - c_client) before Adam sees it."""

    def __init__(self, c, c_client):
        self.correction = c - c_client
        self.active = bool(np.any(self.correction))

    def adjust_grad(self, grad_values):
        if not self.active:
            return grad_values
        return grad_values + self.correction


def scaffold_control_update(c_client, c, x_values, y_values, n_steps, local_lr):
    """Option II variate refresh: c+ = c_client - c + (x - y) / (K * lr)."""
    if n_steps < 1:
        raise ConfigError("scaffold requires at least one local step")
    return c_client - c + (x_values - y_values) / (n_steps * local_lr)


def scaffold_server_update(state, prev_params, updates, n_clients):
    """Move the server model by the mean client displacement.

    With server_lr exactly 1.0 the new model is the plain unweighted mean
    of the client models, accumulated in the same order as FedAvg so the
    pinned-variate baseline matches it bit for bit.
    """
    updates = _check_updates(updates)
    if len(updates) != n_clients:
        raise ProtocolError(
            f"scaffold assumes full participation: got {len(updates)} of {n_clients} clients"
        )
    share = 1.0 / n_clients
    acc = np.zeros_like(prev_params.values)
    for u in updates:
        acc += share * u.params.values
    if state.server_lr == 1.0:
        new_values = acc
    else:
        new_values = prev_params.values + state.server_lr * (acc - prev_params.values)
    if not state.pin_zero:
        for u in updates:
            if u.delta_c is None:
                raise ProtocolError("scaffold update is missing its control-variate delta")
            state.c = state.c + share * u.delta_c
    return prev_params.with_values(new_values)
