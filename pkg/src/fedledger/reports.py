"""Run artifacts: metrics table, summary, transcripts and SVG charts.

Everything written here is byte-reproducible: floats are serialized with
repr (shortest round-trip form), keys are sorted, line endings are fixed
to "\n", and the SVG renderer is hand-rolled with fixed-precision
coordinates instead of pulling in a plotting dependency.
"""

import csv
import json

from fedledger.errors import DataError
from fedledger.metrics import MetricsRecord, summarize

METRICS_COLUMNS = (
    "seed", "t", "fl", "cl", "arch", "ap_global", "ap_local", "dept",
    "mean_rec_error",
)


def _fmt(value):
    if value is None:
        return ""
    return repr(value)


def write_metrics_csv(records, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.seed, r.experience, r.fl, r.cl, r.arch,
                    _fmt(r.ap_global), _fmt(r.ap_local), r.dept,
                    _fmt(r.mean_rec_error),
                ]
            )


def read_metrics_csv(path):
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read metrics file {path}: {exc}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(METRICS_COLUMNS):
            raise DataError(f"unexpected metrics header in {path}: {header}")
        records = []
        for row in reader:
            seed, t, fl, cl, arch, ap_g, ap_l, dept, err = row
            records.append(
                MetricsRecord(
                    seed=int(seed),
                    experience=int(t),
                    fl=fl,
                    cl=cl,
                    arch=arch,
                    dept=dept,
                    ap_global=float(ap_g) if ap_g else None,
                    ap_local=float(ap_l) if ap_l else None,
                    mean_rec_error=float(err),
                )
            )
    return records


def write_summary_json(records, path):
    table = summarize(records)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return table


def write_transcripts(transcripts, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for tr in transcripts:
            fh.write(
                json.dumps(
                    {
                        "seed": tr.seed,
                        "arch": tr.arch,
                        "t": tr.experience,
                        "r": tr.round,
                        "losses": {str(k): tr.client_losses[k] for k in sorted(tr.client_losses)},
                        "checksum": tr.checksum,
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


def write_config_json(config, path):
    data = config.model_dump()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- SVG charts -------------------------------------------------------------

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#17becf", "#7f7f7f",
)

_W, _H = 720, 420
_ML, _MR, _MT, _MB = 64, 24, 40, 56


def _coord(value, lo, hi, out_lo, out_hi):
    if hi == lo:
        return (out_lo + out_hi) / 2.0
    frac = (value - lo) / (hi - lo)
    return out_lo + frac * (out_hi - out_lo)


def render_line_chart(title, series, y_label, y_range=None):
    """Minimal deterministic SVG: one polyline per labeled series.

    ``series`` maps label -> list of (x, y) points; x values are shared
    integers (experience indices).
    """
    points = [p for pts in series.values() for p in pts]
    if not points:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    else:
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    if y_range is not None:
        y_lo, y_hi = y_range
    else:
        y_lo, y_hi = min(ys), max(ys)
        if y_lo == y_hi:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    plot_l, plot_r = _ML, _W - _MR
    plot_t, plot_b = _MT, _H - _MB

    def px(x):
        return _coord(x, x_lo, x_hi, plot_l, plot_r)

    def py(y):
        return _coord(y, y_lo, y_hi, plot_b, plot_t)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<line x1="{plot_l}" y1="{plot_b}" x2="{plot_r}" y2="{plot_b}" '
        'stroke="black" stroke-width="1"/>',
        f'<line x1="{plot_l}" y1="{plot_t}" x2="{plot_l}" y2="{plot_b}" '
        'stroke="black" stroke-width="1"/>',
    ]
    for i in range(5):
        y = y_lo + (y_hi - y_lo) * i / 4.0
        ypx = py(y)
        out.append(
            f'<line x1="{plot_l - 4}" y1="{ypx:.2f}" x2="{plot_l}" y2="{ypx:.2f}" '
            'stroke="black" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{plot_l - 8}" y="{ypx + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{y:.2f}</text>'
        )
    x_ticks = sorted({int(x) for x in xs}) or [0]
    for x in x_ticks:
        xpx = px(x)
        out.append(
            f'<line x1="{xpx:.2f}" y1="{plot_b}" x2="{xpx:.2f}" y2="{plot_b + 4}" '
            'stroke="black" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{xpx:.2f}" y="{plot_b + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{x}</text>'
        )
    out.append(
        f'<text x="{(plot_l + plot_r) // 2}" y="{_H - 16}" text-anchor="middle" '
        'font-family="sans-serif" font-size="12">experience</text>'
    )
    out.append(
        f'<text x="18" y="{(plot_t + plot_b) // 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {(plot_t + plot_b) // 2})">{y_label}</text>'
    )
    for i, (label, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        if pts:
            path = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
            out.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                f'points="{path}"/>'
            )
        ly = plot_t + 16 * i
        out.append(
            f'<line x1="{plot_r - 150}" y1="{ly}" x2="{plot_r - 130}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{plot_r - 124}" y="{ly + 4}" font-family="sans-serif" '
            f'font-size="11">{label}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _mean(values):
    return sum(values) / len(values)


def ap_chart(records):
    """Mean AP per experience, one line per strategy pair and metric."""
    series = {}
    for arch, field in (("shallow", "ap_global"), ("deep", "ap_local")):
        by_key = {}
        for r in records:
            if r.arch != arch or r.dept != "all":
                continue
            value = getattr(r, field)
            if value is None:
                continue
            by_key.setdefault((r.fl, r.cl), {}).setdefault(r.experience, []).append(value)
        for (fl, cl), by_t in sorted(by_key.items()):
            label = f"{fl}+{cl} {field}"
            series[label] = [(t, _mean(by_t[t])) for t in sorted(by_t)]
    return render_line_chart(
        "Average precision per experience", series, "AP", y_range=(0.0, 1.0)
    )


def dept_error_chart(records):
    """Mean audit-client reconstruction error per department."""
    arch = None
    for r in records:
        if r.dept != "all":
            arch = r.arch
            break
    series = {}
    depts = sorted({r.dept for r in records if r.dept != "all" and r.arch == arch})
    for dept in depts:
        by_t = {}
        for r in records:
            if r.arch != arch or r.dept != dept:
                continue
            by_t.setdefault(r.experience, []).append(r.mean_rec_error)
        series[dept] = [(t, _mean(by_t[t])) for t in sorted(by_t)]
    return render_line_chart(
        "Audit-client reconstruction error per department", series,
        "mean reconstruction error",
    )


def write_charts(records, out_dir):
    paths = []
    for name, svg in (
        ("ap_vs_experience.svg", ap_chart(records)),
        ("dept_error_vs_experience.svg", dept_error_chart(records)),
    ):
        path = out_dir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(svg)
        paths.append(path)
    return paths
