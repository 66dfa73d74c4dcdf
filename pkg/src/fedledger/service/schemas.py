"""Request and response bodies of the service endpoints."""

from pydantic import BaseModel, ConfigDict, Field


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConfigEnvelope(_Strict):
    """A raw config object plus dotted KEY=VALUE overrides."""

    config: dict = Field(default_factory=dict)
    overrides: list[str] = Field(default_factory=list)


class ValidateResponse(_Strict):
    valid: bool
    run_id: str
    canonical: dict


class JobInfo(_Strict):
    run_id: str
    status: str  # running | done | failed
    run_dir: str | None = None
    n_records: int | None = None
    error: dict | None = None


class SynthesizeRequest(_Strict):
    out_path: str
    n_departments: int = Field(5, ge=1)
    rows_per_dept: int = Field(2000, ge=1)
    n_categorical: int = Field(4, ge=1)
    n_numerical: int = Field(1, ge=0)
    alphabet_size: int = Field(8, ge=2)
    seed: int = 1


class SynthesizeResponse(_Strict):
    path: str
    n_rows: int
    departments: list[str]


class EncodeRequest(_Strict):
    kind: str
    path: str
    out_path: str
    pool_size: int = Field(32, ge=0)


class EncodeResponse(_Strict):
    path: str
    n_rows: int
    width: int
    skipped_rows: int


class ReplotRequest(_Strict):
    metrics_path: str
    out_dir: str


class ReplotResponse(_Strict):
    charts: list[str]


class ErrorBody(_Strict):
    category: str
    message: str
    pointer: str | None = None
