"""Service endpoints: run management, validation, data tooling, replots."""

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse

from fedledger import __version__
from fedledger.config import canonical_json, parse_config, run_id
from fedledger.encoding import build_schema, encode_rows, save_dataset_cache
from fedledger.anomalies import build_pool
from fedledger.errors import ConfigError, DataError, FedledgerError
from fedledger.reports import read_metrics_csv, write_charts
from fedledger.service.jobs import JobRegistry
from fedledger.service.schemas import (
    ConfigEnvelope,
    EncodeRequest,
    EncodeResponse,
    ErrorBody,
    JobInfo,
    ReplotRequest,
    ReplotResponse,
    SynthesizeRequest,
    SynthesizeResponse,
    ValidateResponse,
)
from fedledger.tabular import (
    load_city_csv,
    read_table_csv,
    synthesize_dataset,
    write_table_csv,
)

_STATUS = {"config": 400, "data": 422, "runtime": 500}


def create_app():
    app = FastAPI(title="fedledger", version=__version__)
    app.state.jobs = JobRegistry()

    @app.exception_handler(FedledgerError)
    async def domain_error(request: Request, exc: FedledgerError):
        body = ErrorBody(
            category=exc.category,
            message=str(exc),
            pointer=getattr(exc, "pointer", None),
        )
        return JSONResponse(
            status_code=_STATUS.get(exc.category, 500),
            content=body.model_dump(),
        )

    @app.exception_handler(RequestValidationError)
    async def request_error(request: Request, exc: RequestValidationError):
        first = exc.errors()[0]
        pointer = "/" + "/".join(str(p) for p in first.get("loc", ()))
        body = ErrorBody(category="config", message=first.get("msg", "invalid request"), pointer=pointer)
        return JSONResponse(status_code=400, content=body.model_dump())

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/config/validate", response_model=ValidateResponse)
    def validate(body: ConfigEnvelope):
        config = parse_config(body.config, body.overrides)
        return ValidateResponse(
            valid=True,
            run_id=run_id(config),
            canonical=json.loads(canonical_json(config)),
        )

    @app.post("/runs", response_model=JobInfo)
    def create_run(body: ConfigEnvelope, wait: bool = True):
        config = parse_config(body.config, body.overrides)
        return app.state.jobs.submit(config, wait=wait)

    @app.get("/runs", response_model=list[JobInfo])
    def list_runs():
        return app.state.jobs.list()

    def _job_or_404(rid):
        info = app.state.jobs.info(rid)
        if info is None:
            raise DataError(f"unknown run id {rid!r}")
        return info

    @app.get("/runs/{rid}", response_model=JobInfo)
    def get_run(rid: str):
        return _job_or_404(rid)

    def _artifact(rid, name):
        info = _job_or_404(rid)
        if info["status"] != "done":
            raise DataError(f"run {rid} has no artifacts (status {info['status']})")
        path = Path(info["run_dir"]) / name
        if not path.is_file():
            raise DataError(f"artifact {name} missing for run {rid}")
        return path

    @app.get("/runs/{rid}/metrics")
    def get_metrics(rid: str):
        path = _artifact(rid, "metrics.csv")
        return PlainTextResponse(path.read_text(encoding="utf-8"), media_type="text/csv")

    @app.get("/runs/{rid}/summary")
    def get_summary(rid: str):
        path = _artifact(rid, "summary.json")
        return JSONResponse(json.loads(path.read_text(encoding="utf-8")))

    @app.post("/data/synthesize", response_model=SynthesizeResponse)
    def synthesize(body: SynthesizeRequest):
        table, _ = synthesize_dataset(
            body.n_departments,
            body.rows_per_dept,
            body.n_categorical,
            body.n_numerical,
            seed=body.seed,
            alphabet_size=body.alphabet_size,
        )
        out = Path(body.out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_table_csv(table, out)
        return SynthesizeResponse(
            path=str(out), n_rows=len(table), departments=table.departments()
        )

    @app.post("/data/encode", response_model=EncodeResponse)
    def encode(body: EncodeRequest):
        if body.kind == "synthetic":
            table = read_table_csv(body.path)
        else:
            table = load_city_csv(body.path, body.kind)
        pool = None
        if body.pool_size > 0:
            pool = build_pool(table.attributes, table.department_attr, body.pool_size)
        schema = build_schema(table, pool)
        rows = encode_rows(schema, table, range(len(table)))
        departments = [table.department_of(r) for r in table.rows]
        out = Path(body.out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_dataset_cache(out, schema, rows, departments, list(range(len(table))))
        return EncodeResponse(
            path=str(out),
            n_rows=rows.shape[0],
            width=rows.shape[1],
            skipped_rows=table.skipped_rows,
        )

    @app.post("/replot", response_model=ReplotResponse)
    def replot(body: ReplotRequest):
        records = read_metrics_csv(body.metrics_path)
        out_dir = Path(body.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = write_charts(records, out_dir)
        return ReplotResponse(charts=[str(p) for p in paths])

    return app
