"""Anomaly injection into encoded payment activities.

Two families are injected into the audit client's stream, mutating encoded
rows in place and recording labels in the batch metadata:

* global anomalies carry attribute values that never occur in the
  activity's clean rows: one or two categorical segments are rewritten to a
  synthetic pool value, optionally plus a numerical slot pushed outside the
  [0, 1] range clean rows occupy;
* local anomalies carry individually common values in a combination that
  never occurs among clean rows: a pair of categorical segments is
  rewritten with values taken from donor rows, each value frequent on its
  own, the pair jointly unseen.

The department attribute is never perturbed: it is the stratification key
that defines the activity.
"""

from dataclasses import dataclass

import numpy as np

from fedledger.encoding import LABEL_GLOBAL, LABEL_LOCAL, LABEL_NONE
from fedledger.errors import InjectionError
from fedledger.tabular import CATEGORICAL

F_MIN_DEFAULT = 10
MAX_RESAMPLE_DEFAULT = 100


@dataclass(frozen=True)
class AnomalyPool:
    """Synthetic rare values, registered in the schema before encoding."""

    tokens: dict  # categorical attribute name -> tuple of synthetic values

    def values_for(self, name):
        return self.tokens.get(name, ())


def build_pool(attributes, department_attr, pool_size):
    """One block of synthetic values per non-department categorical attribute."""
    if pool_size < 1:
        raise InjectionError("pool size must be at least 1")
    tokens = {}
    for attr in attributes:
        if attr.role != CATEGORICAL or attr.name == department_attr:
            continue
        tokens[attr.name] = tuple(
            f"SYN_{attr.name}_{i:03d}" for i in range(pool_size)
        )
    return AnomalyPool(tokens=tokens)


@dataclass
class InjectionReport:
    targets: np.ndarray  # row indices that were mutated
    relaxed: np.ndarray  # per-target: local constraints were relaxed


def _perturbable_attrs(schema):
    names = []
    for attr in schema.attributes:
        if attr.role == CATEGORICAL and attr.name != schema.department_attr:
            names.append(attr.name)
    return names


def _segment(schema, name):
    start = schema.attribute_start(name)
    return start, start + len(schema.dictionaries[name])


def _write_one_hot(rows, row_idx, start, stop, hot_index):
    rows[row_idx, start:stop] = 0.0
    rows[row_idx, start + hot_index] = 1.0


def _pick_targets(batch, k, rng):
    candidates = np.flatnonzero(batch.labels == LABEL_NONE)
    if k > len(candidates):
        raise InjectionError(
            f"cannot inject {k} anomalies into {len(candidates)} unlabeled rows"
        )
    chosen = rng.choice(len(candidates), size=k, replace=False)
    return candidates[np.sort(chosen)]


def inject_global(batch, schema, pool, k, rng):
    """Mutate k unlabeled rows into global anomalies.

    Every injected row gets one or two categorical segments rewritten to a
    pool value (zero frequency among clean rows by construction) and, with
    probability one half when the schema has numerical attributes, one
    numerical slot set to 1 + u with u drawn from (0.5, 2).
    """
    if k == 0:
        return InjectionReport(
            targets=np.array([], dtype=np.int64), relaxed=np.array([], dtype=bool)
        )
    attrs = _perturbable_attrs(schema)
    usable = [a for a in attrs if pool.values_for(a)]
    if not usable:
        raise InjectionError("no categorical attribute has pool values to inject")
    num_attrs = schema.numerical_attributes()
    targets = _pick_targets(batch, k, rng)
    for row_idx in targets:
        n_perturb = int(rng.integers(1, min(2, len(usable)) + 1))
        picked = rng.choice(len(usable), size=n_perturb, replace=False)
        for a_idx in np.sort(picked):
            name = usable[a_idx]
            values = pool.values_for(name)
            token = values[int(rng.integers(len(values)))]
            start, stop = _segment(schema, name)
            _write_one_hot(batch.rows, row_idx, start, stop, schema.value_index(name, token))
        if num_attrs and rng.random() < 0.5:
            name = num_attrs[int(rng.integers(len(num_attrs)))]
            u = rng.uniform(0.5, 2.0)
            batch.rows[row_idx, schema.attribute_start(name)] = 1.0 + u
        batch.labels[row_idx] = LABEL_GLOBAL
        batch.entry_ids[row_idx] = -1
    return InjectionReport(targets=targets, relaxed=np.zeros(len(targets), dtype=bool))


def inject_local(
    batch,
    schema,
    k,
    rng,
    f_min=F_MIN_DEFAULT,
    max_resample=MAX_RESAMPLE_DEFAULT,
):
    """Mutate k unlabeled rows into local anomalies.

    For each target a pair of categorical attributes is rewritten with
    values from donor rows (donors of a different department are preferred
    when present) such that each value occurs at least f_min times among
    clean rows while the joint combination occurs zero times.  After
    max_resample failed draws the rarest sampled combination is used
    instead and flagged as relaxed.
    """
    if k == 0:
        return InjectionReport(
            targets=np.array([], dtype=np.int64), relaxed=np.array([], dtype=bool)
        )
    attrs = _perturbable_attrs(schema)
    if len(attrs) < 2:
        raise InjectionError(
            "local anomalies need at least two perturbable categorical attributes"
        )
    targets = _pick_targets(batch, k, rng)
    target_set = set(int(i) for i in targets)
    clean = np.array(
        [
            i
            for i in range(len(batch))
            if batch.labels[i] == LABEL_NONE and i not in target_set
        ],
        dtype=np.int64,
    )
    if len(clean) == 0:
        raise InjectionError("no clean rows left to source local anomaly values from")

    segments = {name: _segment(schema, name) for name in attrs}
    hot = {
        name: np.argmax(batch.rows[np.ix_(clean, np.arange(start, stop))], axis=1)
        for name, (start, stop) in segments.items()
    }
    counts = {
        name: np.bincount(hot[name], minlength=segments[name][1] - segments[name][0])
        for name in attrs
    }
    clean_depts = batch.departments[clean]

    relaxed_flags = np.zeros(len(targets), dtype=bool)
    for t_pos, row_idx in enumerate(targets):
        other_dept = np.flatnonzero(clean_depts != batch.departments[row_idx])
        donor_pool = other_dept if len(other_dept) else np.arange(len(clean))
        best = None  # (joint_count, name_a, va, name_b, vb)
        done = False
        for _ in range(max_resample):
            pair = rng.choice(len(attrs), size=2, replace=False)
            name_a, name_b = attrs[pair[0]], attrs[pair[1]]
            da = donor_pool[int(rng.integers(len(donor_pool)))]
            db = donor_pool[int(rng.integers(len(donor_pool)))]
            va = int(hot[name_a][da])
            vb = int(hot[name_b][db])
            if counts[name_a][va] < f_min or counts[name_b][vb] < f_min:
                continue
            joint = int(np.sum((hot[name_a] == va) & (hot[name_b] == vb)))
            if best is None or joint < best[0]:
                best = (joint, name_a, va, name_b, vb)
            if joint == 0:
                done = True
                break
        if best is None:
            raise InjectionError(
                f"no attribute values reach frequency {f_min} in this activity"
            )
        _, name_a, va, name_b, vb = best
        sa = segments[name_a]
        sb = segments[name_b]
        _write_one_hot(batch.rows, row_idx, sa[0], sa[1], va)
        _write_one_hot(batch.rows, row_idx, sb[0], sb[1], vb)
        batch.labels[row_idx] = LABEL_LOCAL
        batch.entry_ids[row_idx] = -1
        relaxed_flags[t_pos] = not done
    return InjectionReport(targets=targets, relaxed=relaxed_flags)
