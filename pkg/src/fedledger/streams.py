"""Scenario schedules and per-client experience streams.

A schedule is a boolean activity tensor (client, experience, department).
Scenario 1 keeps the collaborators fully active while the audit client's
activities come and go; scenario 2 flips that; scenario 3 makes everyone
sparse.  Sparse cells are independent Bernoulli draws, repaired so that
every client keeps at least one active department per experience.
"""

from dataclasses import dataclass

import numpy as np

from fedledger.errors import ConfigError, DataError
from fedledger.rng import NS_SCHEDULE, NS_STREAM, substream

AUDIT_CLIENT = 1  # client ids are 1-based; client 1 holds the audit data


@dataclass
class ScenarioSchedule:
    scenario: int
    activity: np.ndarray  # (n_clients, n_experiences, n_departments) bool
    departments: tuple
    p: float

    @property
    def n_clients(self):
        return self.activity.shape[0]

    @property
    def n_experiences(self):
        return self.activity.shape[1]

    def active_departments(self, client, experience):
        """Department names active for a 1-based client at a 1-based t."""
        row = self.activity[client - 1, experience - 1]
        return [d for d, on in zip(self.departments, row) if on]


def _sparse_row(rng, n_experiences, n_departments, p):
    row = rng.random((n_experiences, n_departments)) < p
    for t in range(n_experiences):
        if not row[t].any():
            # repair: every client trains on something each experience
            row[t, rng.integers(n_departments)] = True
    return row


def generate_schedule(scenario, n_clients, n_experiences, departments, p, seed):
    """Draw the activity tensor for one scenario.

    p = 1 makes every sparse cell active.  Draws are per-client substreams,
    so the audit client's schedule does not depend on the collaborator
    count.
    """
    if scenario not in (1, 2, 3):
        raise ConfigError(f"unknown scenario {scenario}")
    if n_clients < 1:
        raise ConfigError("need at least one client")
    if n_experiences < 1:
        raise ConfigError("need at least one experience")
    if not 0.0 < p <= 1.0:
        raise ConfigError("activity probability must be in (0, 1]")
    departments = tuple(departments)
    if not departments:
        raise ConfigError("need at least one department")
    n_dep = len(departments)
    activity = np.zeros((n_clients, n_experiences, n_dep), dtype=bool)
    for client in range(1, n_clients + 1):
        is_audit = client == AUDIT_CLIENT
        if scenario == 1:
            sparse = is_audit
        elif scenario == 2:
            sparse = not is_audit
        else:
            sparse = True
        if sparse:
            rng = substream(seed, NS_SCHEDULE, client)
            activity[client - 1] = _sparse_row(rng, n_experiences, n_dep, p)
        else:
            activity[client - 1] = True
    return ScenarioSchedule(
        scenario=scenario, activity=activity, departments=departments, p=p
    )


def schedule_from_matrix(scenario, matrix, departments, p=1.0):
    """Wrap an explicit activity matrix; no repair is applied."""
    activity = np.asarray(matrix, dtype=bool)
    if activity.ndim != 3:
        raise ConfigError("activity matrix must have shape (clients, experiences, departments)")
    if activity.shape[2] != len(departments):
        raise ConfigError(
            f"activity matrix has {activity.shape[2]} departments, expected {len(departments)}"
        )
    return ScenarioSchedule(
        scenario=scenario,
        activity=activity,
        departments=tuple(departments),
        p=p,
    )


@dataclass
class ExperienceStream:
    """Sampled entry ids per experience for one client."""

    client_id: int
    scenario: int
    experiences: list  # one dict {department: np.ndarray of entry ids} per t


def build_experience_streams(dept_rows, schedule, rho, seed):
    """Sample entry ids for every client, experience and active department.

    Departments with at least rho entries are sampled without replacement;
    smaller ones with replacement.  Clients sample independently from the
    shared pool.
    """
    if rho < 1:
        raise ConfigError("need at least one payment per activity")
    for dept in schedule.departments:
        if len(dept_rows.get(dept, ())) == 0:
            raise DataError(f"department {dept!r} has no entries to sample")
    streams = []
    for client in range(1, schedule.n_clients + 1):
        experiences = []
        for t in range(1, schedule.n_experiences + 1):
            sampled = {}
            for d_idx, dept in enumerate(schedule.departments):
                if not schedule.activity[client - 1, t - 1, d_idx]:
                    continue
                pool = np.asarray(dept_rows[dept], dtype=np.int64)
                rng = substream(seed, NS_STREAM, client, t, d_idx)
                replace = len(pool) < rho
                sampled[dept] = pool[rng.choice(len(pool), size=rho, replace=replace)]
            experiences.append(sampled)
        streams.append(
            ExperienceStream(
                client_id=client, scenario=schedule.scenario, experiences=experiences
            )
        )
    return streams
