"""The federated continual-learning protocol driver.

For every seed and architecture: build the per-client experience streams,
inject anomalies into the audit client's batches, then walk T experiences
of R synchronous rounds each.  A round broadcasts the central model, trains
every active client for eta iterations (continual-learning and federation
hooks attached) and aggregates the updates under the chosen federation
strategy.  After each experience the central model is scored on the audit
client's labeled data and the continual-learning end-of-experience
bookkeeping runs per client.

Client trainings within a round may run on a thread pool (capped by the
FEDLEDGER_THREADS environment variable); results are aggregated in client
id order, so the worker count never affects the trajectory.
"""

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from fedledger.anomalies import build_pool, inject_global, inject_local
from fedledger.config import RunConfig
from fedledger.continual import ClientCl, central_entry_params
from fedledger.encoding import build_schema, concat_batches, make_batch
from fedledger.errors import ConfigError, DataError
from fedledger.federated import (
    ClientUpdate,
    FedProxHook,
    ScaffoldHook,
    ScaffoldState,
    fedavg_aggregate,
    fedyogi_server_update,
    init_yogi,
    scaffold_control_update,
    scaffold_server_update,
)
from fedledger.metrics import MetricsRecord, ap_per_class, score_rows
from fedledger.network import init_model, make_architecture
from fedledger.optimizer import EarlyStopRule, init_adam, train_iterations
from fedledger.rng import (
    NS_BUFFER,
    NS_FISHER,
    NS_INIT,
    NS_INJECT,
    NS_REPLAY,
    NS_TRAIN,
    subseed,
    substream,
)
from fedledger.streams import (
    AUDIT_CLIENT,
    build_experience_streams,
    generate_schedule,
    schedule_from_matrix,
)
from fedledger.tabular import DEFAULT_DEPARTMENTS, load_city_csv, synthesize_dataset

THREADS_ENV = "FEDLEDGER_THREADS"


@dataclass(frozen=True)
class RoundTranscript:
    seed: int
    arch: str
    experience: int
    round: int
    client_losses: dict
    checksum: str


def model_checksum(params):
    return hashlib.sha256(params.values.tobytes()).hexdigest()[:16]


def worker_count(n_clients):
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return n_clients
    try:
        requested = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    return max(1, min(requested, n_clients))


def build_table(config, seed):
    ds = config.dataset
    if ds.kind == "synthetic":
        s = ds.synthetic
        table, _ = synthesize_dataset(
            s.n_departments,
            s.rows_per_dept,
            s.n_categorical,
            s.n_numerical,
            seed=seed,
            alphabet_size=s.alphabet_size,
        )
        return table
    return load_city_csv(ds.path, ds.kind)


def select_departments(config, table):
    """The L activities scheduled for the run, in a stable order."""
    if config.dataset.departments is not None:
        wanted = list(config.dataset.departments)
    elif config.dataset.kind == "synthetic":
        wanted = table.departments()
    else:
        wanted = list(DEFAULT_DEPARTMENTS[config.dataset.kind])
    present = set(table.departments())
    missing = [d for d in wanted if d not in present]
    if missing:
        raise DataError(f"departments not found in the data: {missing}")
    if len(wanted) < config.L:
        raise ConfigError(
            f"need L={config.L} departments but only {len(wanted)} are available"
        )
    return wanted[: config.L]


@dataclass
class SeedData:
    """Everything one seed's protocol runs on, shared across architectures."""

    schema: object
    batches: dict  # (client, experience) -> EncodedBatch or None
    departments: list


def prepare_seed_data(config, seed, table=None):
    if table is None:
        table = build_table(config, seed)
    departments = select_departments(config, table)
    pool = build_pool(
        table.attributes, table.department_attr, config.anomalies.pool_size
    )
    schema = build_schema(table, pool)
    if config.activity_matrix is not None:
        schedule = schedule_from_matrix(
            config.scenario, config.activity_matrix, departments, config.activity_p
        )
        if schedule.n_experiences != config.T_eff:
            raise ConfigError(
                "activity matrix covers "
                f"{schedule.n_experiences} experiences, run needs {config.T_eff}"
            )
    else:
        schedule = generate_schedule(
            config.scenario, config.M, config.T_eff, departments, config.activity_p, seed
        )
    streams = build_experience_streams(
        table.rows_by_department(), schedule, config.rho_eff, seed
    )
    dept_index = {d: i for i, d in enumerate(schedule.departments)}
    batches = {}
    for stream in streams:
        for t in range(1, config.T_eff + 1):
            sampled = stream.experiences[t - 1]
            if not sampled:
                batches[(stream.client_id, t)] = None
                continue
            if stream.client_id == AUDIT_CLIENT:
                # anomalies go into every activity separately, so the
                # frequency constraints are counted per department
                parts = []
                for dept, ids in sampled.items():
                    part = make_batch(schema, table, ids)
                    d_idx = dept_index[dept]
                    inject_global(
                        part,
                        schema,
                        pool,
                        config.anomalies.k_global,
                        substream(seed, NS_INJECT, t, 1, d_idx),
                    )
                    inject_local(
                        part,
                        schema,
                        config.anomalies.k_local,
                        substream(seed, NS_INJECT, t, 2, d_idx),
                        f_min=config.anomalies.f_min,
                        max_resample=config.anomalies.max_resample,
                    )
                    parts.append(part)
                batch = concat_batches(parts)
            else:
                ids = np.concatenate([sampled[d] for d in sampled])
                batch = make_batch(schema, table, ids)
            batches[(stream.client_id, t)] = batch
    return SeedData(schema=schema, batches=batches, departments=departments)


def _make_clients(config, spec, layout):
    return {
        omega: ClientCl(
            config.cl,
            spec,
            layout,
            config.theta_mix,
            buffer_capacity=config.buffer_size,
            ewc_lambda=config.ewc_lambda,
            lwf_alpha=config.lwf_alpha,
            fisher_samples=config.n_fisher,
            exclude_anomalies_from_replay=config.anomalies.exclude_from_replay,
        )
        for omega in range(1, config.M + 1)
    }


def _evaluate(config, central, spec, layout, batch, seed, t, arch):
    scores = score_rows(central, spec, layout, batch.rows, config.theta_mix)
    include = config.ap_include_other_class
    records = [
        MetricsRecord(
            seed=seed,
            experience=t,
            fl=config.fl,
            cl=config.cl,
            arch=arch,
            dept="all",
            ap_global=ap_per_class(scores, batch.labels, "global", include),
            ap_local=ap_per_class(scores, batch.labels, "local", include),
            mean_rec_error=float(np.mean(scores)),
        )
    ]
    for dept in sorted(set(batch.departments)):
        mask = batch.departments == dept
        records.append(
            MetricsRecord(
                seed=seed,
                experience=t,
                fl=config.fl,
                cl=config.cl,
                arch=arch,
                dept=dept,
                ap_global=None,
                ap_local=None,
                mean_rec_error=float(np.mean(scores[mask])),
            )
        )
    return records


def run_protocol(config, seed, arch, data):
    """All T experiences for one seed and architecture."""
    layout = data.schema.layout
    spec = make_architecture(arch, layout.width)
    central = init_model(spec, subseed(seed, NS_INIT))
    n_params = len(central.values)
    clients = _make_clients(config, spec, layout)
    client_ids = sorted(clients)
    scaffold_state = None
    yogi_state = None
    if config.fl == "scaffold":
        scaffold_state = ScaffoldState(
            n_params,
            client_ids,
            server_lr=config.scaffold.server_lr,
            pin_zero=config.scaffold.pin_zero,
        )
    elif config.fl == "fedyogi":
        y = config.fedyogi
        yogi_state = init_yogi(n_params, y.beta1, y.beta2, y.tau, y.server_lr)
    early_stop = (
        EarlyStopRule(**config.early_stop.model_dump())
        if config.early_stop is not None
        else None
    )
    records, transcripts = [], []
    eval_batches = []

    for t in range(1, config.T_eff + 1):
        central = central_entry_params(config.cl, central, spec, seed, t)
        if scaffold_state is not None and config.scaffold.reset_each_experience:
            scaffold_state.reset()
        active = [w for w in client_ids if data.batches[(w, t)] is not None]
        adam = {w: init_adam(n_params, lr=config.lr) for w in active}

        for r in range(1, config.R_eff + 1):
            broadcast = central

            def train_one(omega):
                batch = data.batches[(omega, t)]
                hooks = list(clients[omega].hooks(substream(seed, NS_REPLAY, omega, t, r)))
                if config.fl == "fedprox":
                    hooks.append(FedProxHook(broadcast, config.fedprox_mu))
                elif config.fl == "scaffold":
                    hooks.append(
                        ScaffoldHook(scaffold_state.c, scaffold_state.c_clients[omega])
                    )
                params, state, loss = train_iterations(
                    broadcast,
                    adam[omega],
                    spec,
                    layout,
                    batch.rows,
                    config.theta_mix,
                    config.eta_eff,
                    config.gamma,
                    substream(seed, NS_TRAIN, omega, t, r),
                    hooks=tuple(hooks),
                    early_stop=early_stop,
                )
                c_plus = None
                if config.fl == "scaffold" and not config.scaffold.pin_zero:
                    steps = state.step_count - adam[omega].step_count
                    c_plus = scaffold_control_update(
                        scaffold_state.c_clients[omega],
                        scaffold_state.c,
                        broadcast.values,
                        params.values,
                        steps,
                        config.lr,
                    )
                return omega, params, state, loss, c_plus

            workers = worker_count(len(active))
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(train_one, active))
            else:
                results = [train_one(w) for w in active]

            updates = []
            losses = {}
            c_plus_map = {}
            for omega, params, state, loss, c_plus in sorted(results):
                adam[omega] = state
                losses[omega] = loss.total
                n_rows = data.batches[(omega, t)].rows.shape[0]
                delta_c = None
                if c_plus is not None:
                    delta_c = c_plus - scaffold_state.c_clients[omega]
                    c_plus_map[omega] = c_plus
                updates.append(ClientUpdate(omega, params, n_rows, delta_c))

            if config.fl == "fedyogi":
                central, yogi_state = fedyogi_server_update(yogi_state, central, updates)
            elif config.fl == "scaffold":
                central = scaffold_server_update(
                    scaffold_state, central, updates, config.M
                )
                for omega, c_plus in c_plus_map.items():
                    scaffold_state.c_clients[omega] = c_plus
            else:
                central = fedavg_aggregate(updates)
            transcripts.append(
                RoundTranscript(
                    seed=seed,
                    arch=arch,
                    experience=t,
                    round=r,
                    client_losses=losses,
                    checksum=model_checksum(central),
                )
            )

        audit_batch = data.batches[(AUDIT_CLIENT, t)]
        if audit_batch is not None:
            eval_batches.append(audit_batch)
            target = (
                concat_batches(eval_batches) if config.eval_cumulative else audit_batch
            )
            records.extend(
                _evaluate(config, central, spec, layout, target, seed, t, arch)
            )

        for omega in active:
            clients[omega].end_experience(
                central,
                data.batches[(omega, t)],
                substream(seed, NS_FISHER, omega, t),
                substream(seed, NS_BUFFER, omega, t),
            )
    return records, transcripts


def run_simulation(config):
    """Full sweep over seeds and architectures; the core of a run."""
    if isinstance(config, dict):
        config = RunConfig(**config)
    shared_table = None
    if config.dataset.kind != "synthetic":
        shared_table = build_table(config, config.seeds[0])
    records, transcripts = [], []
    for seed in config.seeds:
        data = prepare_seed_data(config, seed, table=shared_table)
        for arch in config.architectures:
            r, tr = run_protocol(config, seed, arch, data)
            records.extend(r)
            transcripts.extend(tr)
    return records, transcripts
