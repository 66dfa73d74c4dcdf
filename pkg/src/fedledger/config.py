"""Run configuration: schema, defaults, overrides and canonical hashing.

An empty JSON object is a complete, valid configuration: every field
defaults to the full-scale protocol constants.  The run id is a hash of
the canonicalized configuration (minus the output directory) plus the
package version, so semantically identical configs land in the same run
directory and any code change moves them.
"""

import hashlib
import json
import math

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from fedledger import __version__
from fedledger.continual import CL_STRATEGIES
from fedledger.errors import ConfigError
from fedledger.federated import FL_STRATEGIES

DATASET_KINDS = ("synthetic", "philadelphia", "chicago", "york")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FedYogiSettings(_Strict):
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = Field(1e-3, gt=0)
    server_lr: float = Field(1e-2, gt=0)


class ScaffoldSettings(_Strict):
    server_lr: float = Field(1.0, gt=0)
    pin_zero: bool = False
    reset_each_experience: bool = False


class AnomalySettings(_Strict):
    k_global: int = Field(20, ge=0)
    k_local: int = Field(20, ge=0)
    f_min: int = Field(10, ge=1)
    max_resample: int = Field(100, ge=1)
    pool_size: int = Field(5, ge=1)
    exclude_from_replay: bool = False


class SyntheticSettings(_Strict):
    n_departments: int = Field(5, ge=1)
    rows_per_dept: int = Field(2000, ge=1)
    n_categorical: int = Field(4, ge=1)
    n_numerical: int = Field(1, ge=0)
    alphabet_size: int = Field(8, ge=2)


class DatasetSettings(_Strict):
    kind: str = "synthetic"
    path: str | None = None
    departments: list[str] | None = None
    synthetic: SyntheticSettings = SyntheticSettings()

    @model_validator(mode="after")
    def _check(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"kind must be one of {DATASET_KINDS}")
        if self.kind != "synthetic" and self.path is None:
            raise ValueError("csv datasets need a path")
        return self


class EarlyStopSettings(_Strict):
    patience: int = Field(5, ge=1)
    min_delta: float = Field(1e-5, ge=0)
    eval_every: int = Field(50, ge=1)


class RunConfig(_Strict):
    T: int = Field(20, ge=1)
    R: int = Field(5, ge=1)
    eta: int = Field(1000, ge=1)
    rho: int = Field(1000, ge=1)
    gamma: int = Field(16, ge=1)
    L: int = Field(5, ge=1)
    M: int = Field(4, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5], min_length=1)
    scenario: int = 1
    architecture: str = "shallow"
    fl: str = "fedavg"
    cl: str = "sequential"
    theta_mix: float = Field(2 / 3, ge=0, le=1)
    lr: float = Field(1e-3, gt=0)
    ewc_lambda: float = Field(500.0, ge=0)
    lwf_alpha: float = Field(1.2, ge=0)
    fedprox_mu: float = Field(1.2, ge=0)
    buffer_size: int = Field(1000, ge=0)
    n_fisher: int = Field(1000, ge=1)
    fedyogi: FedYogiSettings = FedYogiSettings()
    scaffold: ScaffoldSettings = ScaffoldSettings()
    anomalies: AnomalySettings = AnomalySettings()
    dataset: DatasetSettings = DatasetSettings()
    activity_p: float = Field(0.5, gt=0, le=1)
    activity_matrix: list[list[list[bool]]] | None = None
    scale: int = Field(1, ge=1)
    out_dir: str = "runs"
    eval_cumulative: bool = False
    early_stop: EarlyStopSettings | None = None
    ap_include_other_class: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.scenario not in (1, 2, 3):
            raise ValueError("scenario must be 1, 2 or 3")
        if self.architecture not in ("shallow", "deep", "both"):
            raise ValueError("architecture must be shallow, deep or both")
        if self.fl not in FL_STRATEGIES:
            raise ValueError(f"fl must be one of {FL_STRATEGIES}")
        if self.cl not in CL_STRATEGIES:
            raise ValueError(f"cl must be one of {CL_STRATEGIES}")
        if self.fl == "single" and self.M != 1:
            raise ValueError("the single-client baseline requires M=1")
        if self.activity_matrix is not None:
            if len(self.activity_matrix) != self.M:
                raise ValueError("activity matrix needs one row block per client")
        return self

    # scale divides the protocol counts with a ceiling so none reaches zero
    @property
    def T_eff(self):
        return math.ceil(self.T / self.scale)

    @property
    def R_eff(self):
        return math.ceil(self.R / self.scale)

    @property
    def eta_eff(self):
        return math.ceil(self.eta / self.scale)

    @property
    def rho_eff(self):
        return math.ceil(self.rho / self.scale)

    @property
    def architectures(self):
        if self.architecture == "both":
            return ("shallow", "deep")
        return (self.architecture,)


def _pointer(loc):
    return "/" + "/".join(str(part) for part in loc)


def parse_config(data, overrides=()):
    """Validate a config mapping, applying dotted KEY=VALUE overrides."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object", pointer="/")
    merged = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = merged
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    try:
        return RunConfig(**merged)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], pointer=_pointer(first["loc"])) from exc


def load_config_file(path, overrides=()):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")
    return parse_config(data, overrides)


def canonical_json(config):
    """Stable serialization: sorted keys, no whitespace, out_dir excluded."""
    data = config.model_dump()
    data.pop("out_dir")
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def run_id(config):
    digest = hashlib.sha256()
    digest.update(canonical_json(config).encode("utf-8"))
    digest.update(b"|")
    digest.update(__version__.encode("utf-8"))
    return digest.hexdigest()[:16]
