"""Dataset schema, row encoding and the encoded-dataset cache.

The schema fixes, per categorical attribute, a value-to-index dictionary
(regular values first, then the registered anomaly pool values, so that
injected values are always encodable) and, per numerical attribute, the
min/max observed over regular entries only.  Encoded rows concatenate
one-hot segments and min-max scaled slots in attribute order.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from fedledger.errors import DataError, SchemaError, ShapeError
from fedledger.features import FeatureLayout
from fedledger.params import CONTAINER_VERSION, DATASET_MAGIC
from fedledger.tabular import CATEGORICAL, NUMERICAL, Attribute

LABEL_NONE = 0
LABEL_GLOBAL = 1
LABEL_LOCAL = 2


@dataclass
class DatasetSchema:
    attributes: list  # Attribute, in encoding order
    dictionaries: dict  # categorical name -> {value: index}
    numeric_ranges: dict  # numerical name -> (min, max)
    department_attr: str
    pool_values: dict = field(default_factory=dict)  # name -> tuple of pool values

    def __post_init__(self):
        starts = []
        offset = 0
        cat_segments = []
        num_slots = []
        for attr in self.attributes:
            starts.append(offset)
            if attr.role == CATEGORICAL:
                width = len(self.dictionaries[attr.name])
                if width == 0:
                    raise SchemaError(f"empty dictionary for {attr.name!r}")
                cat_segments.append((offset, offset + width))
                offset += width
            else:
                num_slots.append(offset)
                offset += 1
        self._starts = starts
        self.layout = FeatureLayout(
            cat_segments=tuple(cat_segments),
            num_slots=tuple(num_slots),
            width=offset,
        )

    @property
    def width(self):
        return self.layout.width

    def attribute_start(self, name):
        for attr, start in zip(self.attributes, self._starts):
            if attr.name == name:
                return start
        raise SchemaError(f"unknown attribute {name!r}")

    def categorical_attributes(self):
        return [a.name for a in self.attributes if a.role == CATEGORICAL]

    def numerical_attributes(self):
        return [a.name for a in self.attributes if a.role == NUMERICAL]

    def value_index(self, name, value):
        try:
            return self.dictionaries[name][value]
        except KeyError:
            raise SchemaError(f"value {value!r} not in dictionary of {name!r}") from None

    def value_at(self, name, index):
        d = self.dictionaries[name]
        for value, i in d.items():
            if i == index:
                return value
        raise SchemaError(f"index {index} out of range for {name!r}")


def build_schema(table, anomaly_pool=None):
    """Derive the schema from regular entries plus the anomaly value pool.

    Dictionary order is: sorted regular values, then sorted pool values, so
    regular indices are independent of the pool size.  Numeric ranges come
    from regular entries only; a constant column keeps min == max and
    encodes to 0.
    """
    dictionaries = {}
    numeric_ranges = {}
    pool_values = {}
    for attr in table.attributes:
        col = table.column_index(attr.name)
        if attr.role == CATEGORICAL:
            seen = sorted({row[col] for row in table.rows})
            extra = ()
            if anomaly_pool is not None:
                extra = tuple(anomaly_pool.values_for(attr.name))
            clash = set(seen) & set(extra)
            if clash:
                raise SchemaError(
                    f"pool values {sorted(clash)} collide with data in {attr.name!r}"
                )
            dictionaries[attr.name] = {
                v: i for i, v in enumerate(list(seen) + sorted(extra))
            }
            if extra:
                pool_values[attr.name] = tuple(sorted(extra))
        else:
            values = [row[col] for row in table.rows]
            numeric_ranges[attr.name] = (float(min(values)), float(max(values)))
    return DatasetSchema(
        attributes=list(table.attributes),
        dictionaries=dictionaries,
        numeric_ranges=numeric_ranges,
        department_attr=table.department_attr,
        pool_values=pool_values,
    )


def encode_entry(schema, row):
    """Encode one raw entry: one-hot categoricals, min-max scaled numerics.

    Numerics outside the training range are clamped into [0, 1]; constant
    columns encode to 0.
    """
    if len(row) != len(schema.attributes):
        raise ShapeError(
            f"entry has {len(row)} values, schema expects {len(schema.attributes)}"
        )
    out = np.zeros(schema.width)
    for attr, start, value in zip(schema.attributes, schema._starts, row):
        if attr.role == CATEGORICAL:
            out[start + schema.value_index(attr.name, value)] = 1.0
        else:
            lo, hi = schema.numeric_ranges[attr.name]
            if hi == lo:
                out[start] = 0.0
            else:
                scaled = (float(value) - lo) / (hi - lo)
                out[start] = min(1.0, max(0.0, scaled))
    return out


def encode_rows(schema, table, indices):
    """Encode a selection of table rows into an (n, width) float64 matrix."""
    out = np.zeros((len(indices), schema.width))
    for i, idx in enumerate(indices):
        out[i] = encode_entry(schema, table.rows[idx])
    return out


def decode_entry(schema, encoded):
    """Invert encode_entry: argmax per segment, unscale numerics."""
    encoded = np.asarray(encoded)
    if encoded.shape != (schema.width,):
        raise ShapeError(f"encoded width {encoded.shape} != schema width {schema.width}")
    values = []
    for attr, start in zip(schema.attributes, schema._starts):
        if attr.role == CATEGORICAL:
            width = len(schema.dictionaries[attr.name])
            hot = int(np.argmax(encoded[start : start + width]))
            values.append(schema.value_at(attr.name, hot))
        else:
            lo, hi = schema.numeric_ranges[attr.name]
            values.append(lo if hi == lo else lo + float(encoded[start]) * (hi - lo))
    return tuple(values)


@dataclass
class EncodedBatch:
    """Encoded rows plus per-row metadata carried through the pipeline."""

    rows: np.ndarray  # (n, width) float64
    departments: np.ndarray  # (n,) object: department tag per row
    labels: np.ndarray  # (n,) int8: 0 none, 1 global anomaly, 2 local anomaly
    entry_ids: np.ndarray  # (n,) int64: source row index, -1 if unknown

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.departments = np.asarray(self.departments, dtype=object)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.entry_ids = np.asarray(self.entry_ids, dtype=np.int64)
        n = self.rows.shape[0]
        if not (len(self.departments) == len(self.labels) == len(self.entry_ids) == n):
            raise ShapeError("batch metadata lengths disagree with row count")

    def __len__(self):
        return self.rows.shape[0]

    def copy(self):
        return EncodedBatch(
            self.rows.copy(),
            self.departments.copy(),
            self.labels.copy(),
            self.entry_ids.copy(),
        )


def make_batch(schema, table, indices, department=None):
    rows = encode_rows(schema, table, indices)
    if department is None:
        departments = np.array(
            [table.department_of(table.rows[i]) for i in indices], dtype=object
        )
    else:
        departments = np.array([department] * len(indices), dtype=object)
    return EncodedBatch(
        rows=rows,
        departments=departments,
        labels=np.zeros(len(indices), dtype=np.int8),
        entry_ids=np.asarray(list(indices), dtype=np.int64),
    )


def concat_batches(batches):
    if not batches:
        raise ShapeError("cannot concatenate zero batches")
    return EncodedBatch(
        np.concatenate([b.rows for b in batches]),
        np.concatenate([b.departments for b in batches]),
        np.concatenate([b.labels for b in batches]),
        np.concatenate([b.entry_ids for b in batches]),
    )


# ---------------------------------------------------------------------------
# cache container


def _schema_to_dict(schema):
    return {
        "attributes": [[a.name, a.role] for a in schema.attributes],
        "dictionaries": {
            name: list(d.keys()) for name, d in schema.dictionaries.items()
        },
        "numeric_ranges": {k: list(v) for k, v in schema.numeric_ranges.items()},
        "department_attr": schema.department_attr,
        "pool_values": {k: list(v) for k, v in schema.pool_values.items()},
    }


def _schema_from_dict(data):
    return DatasetSchema(
        attributes=[Attribute(n, r) for n, r in data["attributes"]],
        dictionaries={
            name: {v: i for i, v in enumerate(values)}
            for name, values in data["dictionaries"].items()
        },
        numeric_ranges={k: tuple(v) for k, v in data["numeric_ranges"].items()},
        department_attr=data["department_attr"],
        pool_values={k: tuple(v) for k, v in data["pool_values"].items()},
    )


def save_dataset_cache(path, schema, rows, departments, entry_ids):
    """Write an encoded dataset in the shared binary container.

    Same header discipline as the parameter container, under its own magic:
    magic, version, then a length-prefixed JSON header (schema and
    departments), then the raw float64 row matrix.
    """
    rows = np.asarray(rows, dtype=np.float64)
    header = {
        "schema": _schema_to_dict(schema),
        "departments": [str(d) for d in departments],
        "entry_ids": [int(i) for i in entry_ids],
        "n_rows": int(rows.shape[0]),
        "width": int(rows.shape[1]),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", CONTAINER_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())


def load_dataset_cache(path):
    """Read back (schema, rows, departments, entry_ids) from a cache file."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != CONTAINER_VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        n_rows, width = header["n_rows"], header["width"]
        payload = fh.read(n_rows * width * 8)
        if len(payload) != n_rows * width * 8:
            raise DataError(f"{path}: truncated row payload")
    schema = _schema_from_dict(header["schema"])
    if schema.width != width:
        raise DataError(f"{path}: header width {width} != schema width {schema.width}")
    rows = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    rows = rows.reshape(n_rows, width)
    departments = np.array(header["departments"], dtype=object)
    entry_ids = np.array(header["entry_ids"], dtype=np.int64)
    return schema, rows, departments, entry_ids
