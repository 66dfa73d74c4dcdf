"""End-to-end gate over the simulator's promised behaviours.

Every test prints one [PASS]/[FAIL] line with its measured numbers before
asserting, so a red entry still reports what it saw.  Run with -s to see
the lines for green entries too.  The two trend tests drive the full
simulation loop and take a few minutes each; everything else is fast.
"""

import itertools
import time

import numpy as np

from fedledger.anomalies import build_pool, inject_global, inject_local
from fedledger.config import parse_config, run_id
from fedledger.encoding import LABEL_GLOBAL, LABEL_LOCAL, LABEL_NONE, build_schema, make_batch
from fedledger.features import FeatureLayout
from fedledger.federated import (
    ClientUpdate,
    ScaffoldState,
    fedavg_aggregate,
    scaffold_control_update,
    scaffold_server_update,
)
from fedledger.metrics import average_precision
from fedledger.network import ArchitectureSpec, batch_loss, backward, init_model, reconstruction_loss
from fedledger.params import ParamVector
from fedledger.rng import substream
from fedledger.runner import execute_run
from fedledger.simulation import run_simulation
from fedledger.tabular import synthesize_dataset


def report(ok, label, detail=""):
    tag = "PASS" if ok else "FAIL"
    line = f"[{tag}] {label}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)


# ---------------------------------------------------------------------------
# ranking metric against exhaustive enumeration


def ap_by_enumeration(scores, positives):
    """Quadratic-time reference: rank every element explicitly.

    Stable descending rank of element i counts the strictly greater scores
    plus earlier-in-input ties.  AP is the mean, over positives, of the
    precision at each positive's rank, accumulated in rank order.
    """
    n = len(scores)
    ranks = []
    for i in range(n):
        r = 0
        for j in range(n):
            if scores[j] > scores[i] or (scores[j] == scores[i] and j < i):
                r += 1
        ranks.append(r)
    pos_ranks = sorted(ranks[i] for i in range(n) if positives[i])
    if not pos_ranks:
        return None
    # summed via np.sum so the accumulation order matches the implementation
    # bit for bit; the ranks and precisions above are derived independently
    prec = np.array([k / (r + 1) for k, r in enumerate(pos_ranks, start=1)])
    return float(np.sum(prec) / len(pos_ranks))


def test_average_precision_matches_exhaustive_ranking():
    rng = np.random.default_rng(20240817)
    start = time.perf_counter()
    checked = 0
    for n in range(1, 13):
        distinct = rng.permutation(np.linspace(0.0, 1.0, n))
        tied = rng.integers(0, 3, size=n) / 2.0
        for scores in (distinct, tied):
            for mask in range(2**n):
                positives = np.array([(mask >> i) & 1 == 1 for i in range(n)])
                got = average_precision(scores, positives)
                want = ap_by_enumeration(scores, positives)
                if want is None:
                    assert got is None
                else:
                    # both sides sum the same precisions in the same order
                    assert got == want, (n, mask, scores.tolist())
                checked += 1
    elapsed = time.perf_counter() - start
    report(
        elapsed < 10.0,
        "ranking metric matches exhaustive enumeration up to n=12 incl. ties",
        f"{checked} cases in {elapsed:.1f}s",
    )
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# analytic gradients against central finite differences


def random_layout_rows(rng):
    segments = []
    offset = 0
    for _ in range(int(rng.integers(1, 3))):
        width = int(rng.integers(2, 4))
        segments.append((offset, offset + width))
        offset += width
    slots = tuple(range(offset, offset + int(rng.integers(0, 2))))
    width = offset + len(slots)
    layout = FeatureLayout(tuple(segments), slots, width)
    n = int(rng.integers(3, 7))
    rows = np.zeros((n, width))
    for start, stop in layout.cat_segments:
        idx = rng.integers(start, stop, size=n)
        rows[np.arange(n), idx] = 1.0
    for slot in layout.num_slots:
        rows[:, slot] = rng.uniform(0.0, 1.0, size=n)
    return layout, rows


def numeric_grad(params, spec, layout, rows, theta, h=1e-4):
    grad = np.zeros(len(params))
    for i in range(len(params)):
        up = params.values.copy()
        up[i] += h
        down = params.values.copy()
        down[i] -= h
        hi = batch_loss(params.with_values(up), spec, layout, rows, theta).total
        lo = batch_loss(params.with_values(down), spec, layout, rows, theta).total
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def test_analytic_gradients_match_finite_differences():
    rng = np.random.default_rng(31)
    start = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        layout, rows = random_layout_rows(rng)
        hidden = int(rng.integers(3, 7))
        bottleneck = int(rng.integers(2, 5))
        if trial % 2:
            enc = (layout.width, hidden, bottleneck)
        else:
            enc = (layout.width, bottleneck)
        spec = ArchitectureSpec(enc, tuple(reversed(enc)))
        params = init_model(spec, seed=trial)
        assert len(params) <= 200
        theta = (0.0, 1.0, 2.0 / 3.0, float(rng.uniform(0.1, 0.9)))[trial % 4]
        analytic = backward(params, spec, layout, rows, theta)[0].values
        numeric = numeric_grad(params, spec, layout, rows, theta)
        for a, b in zip(analytic, numeric):
            scale = max(abs(a), abs(b))
            if scale > 1e-6:
                rel = abs(a - b) / scale
                worst = max(worst, rel)
                assert rel < 1e-4, (trial, a, b)
            else:
                assert abs(a - b) < 1e-10
    elapsed = time.perf_counter() - start
    report(
        elapsed < 30.0,
        "backprop matches central differences on 20 random models",
        f"worst rel err {worst:.2e}, {elapsed:.1f}s",
    )
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# weighted aggregation fixture plus order/scale invariance


def flat_params(value, n=2):
    return ParamVector(np.full(n, float(value)), ((1, 1),))


def test_weighted_aggregation_fixture_and_invariances():
    merged = fedavg_aggregate(
        [ClientUpdate(1, flat_params(1.0), 100), ClientUpdate(2, flat_params(3.0), 300)]
    )
    fixture_ok = bool(np.all(merged.values == 2.5))

    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 7))
        counts = [int(c) for c in rng.integers(1, 1000, size=k)]
        shapes = ((1, 2),)
        vectors = [rng.normal(size=4) for _ in range(k)]
        updates = [
            ClientUpdate(i, ParamVector(vectors[i].copy(), shapes), counts[i])
            for i in range(k)
        ]
        base = fedavg_aggregate(updates).values

        shuffled = [updates[i] for i in rng.permutation(k)]
        permuted = fedavg_aggregate(shuffled).values
        worst = max(worst, float(np.max(np.abs(permuted - base))))

        scaled = [
            ClientUpdate(u.client_id, u.params, u.n_samples * 7) for u in updates
        ]
        rescaled = fedavg_aggregate(scaled).values
        worst = max(worst, float(np.max(np.abs(rescaled - base))))
    report(
        fixture_ok and worst <= 1e-12,
        "weighted merge hits 2.5 fixture; order and count scaling are no-ops",
        f"max drift {worst:.1e}",
    )
    assert fixture_ok
    assert worst <= 1e-12


# ---------------------------------------------------------------------------
# disabled strategies collapse onto the plain sequential/fedavg run


def tiny_protocol(**extra):
    base = {
        "T": 3,
        "R": 2,
        "eta": 12,
        "rho": 40,
        "gamma": 8,
        "L": 4,
        "M": 3,
        "seeds": [7],
        "scenario": 1,
        # dense activity keeps every batch the same size, which the pinned
        # scaffold baseline needs for its unweighted merge to equal fedavg
        "activity_p": 1.0,
        "architecture": "shallow",
        "fl": "fedavg",
        "cl": "sequential",
        "dataset": {
            "kind": "synthetic",
            "synthetic": {
                "n_departments": 4,
                "rows_per_dept": 240,
                "n_categorical": 2,
                "n_numerical": 1,
                "alphabet_size": 6,
            },
        },
        "anomalies": {"k_global": 2, "k_local": 2, "f_min": 2, "pool_size": 3},
    }
    base.update(extra)
    return base


def transcript_key(transcripts):
    return [(t.experience, t.round, t.checksum, t.client_losses) for t in transcripts]


def test_neutral_settings_reproduce_sequential_fedavg_bit_for_bit():
    _, baseline = run_simulation(parse_config(tiny_protocol()))
    key = transcript_key(baseline)
    variants = {
        "ewc lambda=0": tiny_protocol(cl="ewc", ewc_lambda=0),
        "lwf alpha=0": tiny_protocol(cl="lwf", lwf_alpha=0),
        "replay buffer=0": tiny_protocol(cl="replay", buffer_size=0),
        "fedprox mu=0": tiny_protocol(fl="fedprox", fedprox_mu=0),
        "scaffold pinned": tiny_protocol(fl="scaffold", scaffold={"pin_zero": True}),
    }
    mismatches = []
    for name, cfg in variants.items():
        _, transcripts = run_simulation(parse_config(cfg))
        if transcript_key(transcripts) != key:
            mismatches.append(name)
    report(
        not mismatches,
        "zeroed-out strategies match the sequential/fedavg transcripts",
        "all five variants bit-identical" if not mismatches else f"diverged: {mismatches}",
    )
    assert not mismatches


# ---------------------------------------------------------------------------
# the two simulation-level trend checks share one laptop-sized shape


def trend_config(scenario, fl, cl):
    return {
        "T": 5,
        "R": 2,
        "eta": 200,
        "rho": 200,
        "gamma": 16,
        "L": 5,
        "M": 4,
        "seeds": [1, 2, 3],
        "scenario": scenario,
        "architecture": "shallow",
        "fl": fl,
        "cl": cl,
        "dataset": {
            "kind": "synthetic",
            "synthetic": {
                "n_departments": 5,
                "rows_per_dept": 2000,
                "n_categorical": 4,
                "n_numerical": 1,
                "alphabet_size": 8,
            },
        },
    }


def mean_global_ap(records):
    per_seed = {}
    for r in records:
        if r.dept == "all" and r.ap_global is not None:
            per_seed.setdefault(r.seed, {})[r.experience] = r.ap_global
    return sum(sum(v.values()) / len(v) for v in per_seed.values()) / len(per_seed)


def test_memory_strategies_beat_plain_sequential_training():
    start = time.perf_counter()
    means = {}
    for cl in ("scratch", "sequential", "replay", "lwf", "ewc"):
        records, _ = run_simulation(parse_config(trend_config(1, "fedavg", cl)))
        means[cl] = mean_global_ap(records)
    elapsed = time.perf_counter() - start
    ordered = (
        means["replay"] > means["sequential"]
        and means["lwf"] > means["sequential"]
        and means["ewc"] > means["sequential"]
        and means["sequential"] > means["scratch"]
    )
    detail = ", ".join(f"{k}={v:.6f}" for k, v in means.items())
    report(ordered and elapsed < 900.0, "replay/lwf/ewc > sequential > scratch on mean AP", detail)
    assert ordered, means
    assert elapsed < 900.0


def test_drift_aware_federation_beats_plain_averaging_under_sparsity():
    start = time.perf_counter()
    means = {}
    for fl in ("fedavg", "fedprox", "scaffold"):
        records, _ = run_simulation(parse_config(trend_config(2, fl, "sequential")))
        means[fl] = mean_global_ap(records)
    elapsed = time.perf_counter() - start
    ordered = means["fedprox"] > means["fedavg"] and means["scaffold"] > means["fedavg"]
    detail = ", ".join(f"{k}={v:.6f}" for k, v in means.items())
    report(ordered and elapsed < 900.0, "fedprox and scaffold > fedavg on mean AP under sparse activity", detail)
    assert ordered, means
    assert elapsed < 900.0


# ---------------------------------------------------------------------------
# injected anomalies keep their frequency contracts


def decoded_values(schema, batch):
    out = {}
    for attr, words in schema.dictionaries.items():
        start = schema.attribute_start(attr)
        out[attr] = np.argmax(batch.rows[:, start : start + len(words)], axis=1)
    return out


def test_injected_anomalies_satisfy_frequency_invariants():
    f_min = 8
    for i in range(50):
        rows_per_dept = (150, 200, 250)[i % 3]
        n_cat = (3, 4, 5)[i % 3]
        table, _ = synthesize_dataset(
            1, rows_per_dept, n_categorical=n_cat, n_numerical=1, seed=1000 + i
        )
        pool = build_pool(table.attributes, "department", 4)
        schema = build_schema(table, pool)
        batch = make_batch(schema, table, range(len(table)))
        g_report = inject_global(batch, schema, pool, 8, substream(1000 + i, 1))
        l_report = inject_local(batch, schema, 8, substream(1000 + i, 2), f_min=f_min)

        values = decoded_values(schema, batch)
        attrs = [a for a in schema.dictionaries if a != "department"]
        clean = np.flatnonzero(batch.labels == LABEL_NONE)
        counts = {
            a: dict(zip(*np.unique(values[a][clean], return_counts=True)))
            for a in attrs
        }
        num_slot = schema.attribute_start("num_0")

        assert np.all(batch.labels[g_report.targets] == LABEL_GLOBAL)
        for row in g_report.targets:
            unseen = sum(
                1 for a in attrs if counts[a].get(int(values[a][row]), 0) == 0
            )
            if batch.rows[row, num_slot] > 1.0:
                unseen += 1
            assert unseen >= 1, (i, row)

        assert np.all(batch.labels[l_report.targets] == LABEL_LOCAL)
        for row, relaxed in zip(l_report.targets, l_report.relaxed):
            if relaxed:
                continue
            qualifying = 0
            for a, b in itertools.combinations(attrs, 2):
                va, vb = int(values[a][row]), int(values[b][row])
                if counts[a].get(va, 0) < f_min or counts[b].get(vb, 0) < f_min:
                    continue
                joint = int(np.sum((values[a][clean] == va) & (values[b][clean] == vb)))
                if joint == 0:
                    qualifying += 1
            assert qualifying >= 1, (i, row)
    report(
        True,
        "global rows carry out-of-vocabulary values; local rows pair frequent "
        "values into unseen combinations",
        "50 activities",
    )


# ---------------------------------------------------------------------------
# reruns of one configuration produce byte-identical metrics


def test_identical_configs_reproduce_byte_equal_metrics(tmp_path):
    def cfg(out):
        data = trend_config(1, "fedavg", "sequential")
        data.update(T=3, eta=100, rho=100, seeds=[1, 2], out_dir=str(out))
        return parse_config(data)

    first = cfg(tmp_path / "a")
    second = cfg(tmp_path / "b")
    same_id = run_id(first) == run_id(second)
    res1 = execute_run(first)
    res2 = execute_run(second)
    bytes1 = (tmp_path / "a" / res1["run_id"] / "metrics.csv").read_bytes()
    bytes2 = (tmp_path / "b" / res2["run_id"] / "metrics.csv").read_bytes()
    report(
        same_id and bytes1 == bytes2,
        "same config in fresh directories: same run id, byte-equal metrics.csv",
        f"{len(bytes1)} bytes",
    )
    assert same_id
    assert bytes1 == bytes2


# ---------------------------------------------------------------------------
# hand-computed loss fixture


def test_mixed_loss_matches_hand_computed_value():
    layout = FeatureLayout(((0, 2),), (2,), 3)
    target = np.array([1.0, 0.0, 0.5])
    # tanh outputs whose rescaled probabilities are 0.8 and 0.2
    output = np.array([2.0 * 0.8 - 1.0, 2.0 * 0.2 - 1.0, 0.3])
    total = reconstruction_loss(layout, target, output, 2.0 / 3.0).total
    ok = abs(total - 0.16210) <= 1e-5
    report(ok, "mixed categorical/numeric loss fixture", f"total={total:.7f}")
    assert ok


# ---------------------------------------------------------------------------
# control-variate bookkeeping


def test_control_variate_refresh_and_server_mean_invariant():
    c_plus = scaffold_control_update(
        np.zeros(1), np.zeros(1), np.array([1.0]), np.array([0.9]), 1, 0.1
    )
    fixture_ok = abs(float(c_plus[0]) - 1.0) <= 1e-12

    # three full-participation rounds with synthetic local displacements,
    # sequenced exactly like the protocol loop: refresh each variate from
    # the broadcast/result pair, merge, then commit the refreshed variates
    rng = np.random.default_rng(5)
    shapes = ((1, 2),)
    ids = [0, 1, 2]
    state = ScaffoldState(4, ids)
    central = ParamVector(rng.normal(size=4), shapes)
    worst_gap = 0.0
    for _ in range(3):
        updates = {}
        for cid in ids:
            x = central.values
            y = x - rng.normal(scale=0.05, size=4)
            refreshed = scaffold_control_update(
                state.c_clients[cid], state.c, x, y, 4, 0.05
            )
            delta = refreshed - state.c_clients[cid]
            updates[cid] = (ClientUpdate(cid, central.with_values(y), 40, delta), refreshed)
        central = scaffold_server_update(
            state, central, [u for u, _ in updates.values()], len(ids)
        )
        for cid, (_, refreshed) in updates.items():
            state.c_clients[cid] = refreshed
        worst_gap = max(worst_gap, state.mean_gap())
    invariant_ok = worst_gap <= 1e-12
    report(
        fixture_ok and invariant_ok,
        "variate refresh fixture equals 1.0; server variate stays the client mean",
        f"max gap {worst_gap:.1e}",
    )
    assert fixture_ok
    assert invariant_ok
