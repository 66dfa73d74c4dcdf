"""Command-line entry point.

Every subcommand is a thin client of the HTTP service: by default an
in-process instance handles the request, and --server points the same
calls at a remote one.  Exit codes map the error category reported by the
service: 0 success, 1 configuration, 2 data, 3 runtime.
"""

import argparse
import json
import sys

from fedledger import __version__

EXIT_CODES = {"config": 1, "data": 2, "runtime": 3}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fedledger",
        description="Federated continual-learning simulator for payment anomaly detection",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_server(p):
        p.add_argument("--server", help="base URL of a running service (default: in-process)")

    def add_config(p):
        p.add_argument("--config", help="JSON config file (default: all defaults)")
        p.add_argument(
            "--set", dest="overrides", action="append", default=[],
            metavar="KEY=VALUE", help="override a config key (repeatable, dotted keys)",
        )

    run = sub.add_parser("run", help="execute a configured simulation run")
    add_config(run)
    run.add_argument("--out", help="output directory (shorthand for --set out_dir=...)")
    run.add_argument("--scale", type=int, help="shorthand for --set scale=N")
    run.add_argument("--seeds", help="comma-separated seed list, e.g. 1,2,3")
    add_server(run)

    validate = sub.add_parser("validate-config", help="validate and print the canonical config")
    add_config(validate)
    add_server(validate)

    synth = sub.add_parser("synth-data", help="write a synthetic payment CSV")
    synth.add_argument("--out", required=True, help="CSV path to write")
    synth.add_argument("--departments", type=int, default=5)
    synth.add_argument("--rows", type=int, default=2000, help="rows per department")
    synth.add_argument("--cat", type=int, default=4, help="categorical attribute count")
    synth.add_argument("--num", type=int, default=1, help="numerical attribute count")
    synth.add_argument("--alphabet", type=int, default=8)
    synth.add_argument("--seed", type=int, default=1)
    add_server(synth)

    encode = sub.add_parser("encode", help="encode a payment CSV into a dataset cache")
    encode.add_argument("--kind", required=True,
                        choices=["synthetic", "philadelphia", "chicago", "york"])
    encode.add_argument("--path", required=True, help="input CSV")
    encode.add_argument("--out", required=True, help="cache file to write")
    encode.add_argument("--pool-size", type=int, default=32)
    add_server(encode)

    replot = sub.add_parser("replot", help="regenerate charts from a metrics.csv")
    replot.add_argument("--metrics", required=True)
    replot.add_argument("--out", required=True, help="directory for the charts")
    add_server(replot)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def make_client(server):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from fedledger.service import create_app

    return TestClient(create_app())


def load_config_data(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        print(f"error (config): cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(1)
    except json.JSONDecodeError as exc:
        print(f"error (config): {path} is not valid JSON: {exc}", file=sys.stderr)
        raise SystemExit(1)


def fail_from_response(response):
    try:
        body = response.json()
        category = body.get("category", "runtime")
        message = body.get("message", response.text)
        pointer = body.get("pointer")
    except ValueError:
        category, message, pointer = "runtime", response.text, None
    where = f" at {pointer}" if pointer else ""
    print(f"error ({category}{where}): {message}", file=sys.stderr)
    return EXIT_CODES.get(category, 3)


def envelope(args):
    overrides = list(args.overrides)
    if getattr(args, "out", None):
        overrides.append(f"out_dir={json.dumps(args.out)}")
    if getattr(args, "scale", None):
        overrides.append(f"scale={args.scale}")
    if getattr(args, "seeds", None):
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        overrides.append(f"seeds={json.dumps(seeds)}")
    return {"config": load_config_data(args.config), "overrides": overrides}


def cmd_run(args):
    with make_client(args.server) as client:
        response = client.post("/runs", json=envelope(args), params={"wait": True})
        if response.status_code != 200:
            return fail_from_response(response)
        job = response.json()
        if job["status"] == "failed":
            error = job.get("error") or {}
            category = error.get("category", "runtime")
            print(f"error ({category}): {error.get('message', 'run failed')}", file=sys.stderr)
            return EXIT_CODES.get(category, 3)
        print(f"run {job['run_id']} done: {job['n_records']} records")
        print(job["run_dir"])
    return 0


def cmd_validate(args):
    with make_client(args.server) as client:
        response = client.post("/config/validate", json=envelope(args))
        if response.status_code != 200:
            return fail_from_response(response)
        body = response.json()
        print(json.dumps(body["canonical"], indent=2, sort_keys=True))
        print(f"run id: {body['run_id']}", file=sys.stderr)
    return 0


def cmd_synth(args):
    payload = {
        "out_path": args.out,
        "n_departments": args.departments,
        "rows_per_dept": args.rows,
        "n_categorical": args.cat,
        "n_numerical": args.num,
        "alphabet_size": args.alphabet,
        "seed": args.seed,
    }
    with make_client(args.server) as client:
        response = client.post("/data/synthesize", json=payload)
        if response.status_code != 200:
            return fail_from_response(response)
        body = response.json()
        print(f"wrote {body['n_rows']} rows ({len(body['departments'])} departments) to {body['path']}")
    return 0


def cmd_encode(args):
    payload = {
        "kind": args.kind,
        "path": args.path,
        "out_path": args.out,
        "pool_size": args.pool_size,
    }
    with make_client(args.server) as client:
        response = client.post("/data/encode", json=payload)
        if response.status_code != 200:
            return fail_from_response(response)
        body = response.json()
        skipped = f", {body['skipped_rows']} skipped" if body["skipped_rows"] else ""
        print(f"encoded {body['n_rows']} rows (width {body['width']}{skipped}) to {body['path']}")
    return 0


def cmd_replot(args):
    with make_client(args.server) as client:
        response = client.post(
            "/replot", json={"metrics_path": args.metrics, "out_dir": args.out}
        )
        if response.status_code != 200:
            return fail_from_response(response)
        for chart in response.json()["charts"]:
            print(chart)
    return 0


def cmd_serve(args):
    import uvicorn

    from fedledger.service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


HANDLERS = {
    "run": cmd_run,
    "validate-config": cmd_validate,
    "synth-data": cmd_synth,
    "encode": cmd_encode,
    "replot": cmd_replot,
    "serve": cmd_serve,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    return HANDLERS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
