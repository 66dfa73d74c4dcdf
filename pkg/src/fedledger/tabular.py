"""Raw payment tables: CSV ingestion and synthetic generation.

City payment exports are mapped onto a uniform attribute structure through
per-dataset column profiles.  Profiles carry default column names for the
supported portals; the portals occasionally rename columns, so every name
can be overridden from the run configuration.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from fedledger.errors import DataError, SchemaError
from fedledger.rng import NS_SYNTH, substream

log = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERICAL = "numerical"


@dataclass(frozen=True)
class Attribute:
    name: str
    role: str  # CATEGORICAL or NUMERICAL


@dataclass
class RawTable:
    """Rows of payment entries with a uniform attribute order."""

    attributes: list
    rows: list  # tuples of str (categorical) / float (numerical)
    department_attr: str
    skipped_rows: int = 0
    _columns: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._columns = {a.name: i for i, a in enumerate(self.attributes)}
        if self.department_attr not in self._columns:
            raise SchemaError(
                f"department attribute {self.department_attr!r} not in table"
            )

    def column_index(self, name):
        try:
            return self._columns[name]
        except KeyError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def department_of(self, row):
        return row[self._columns[self.department_attr]]

    def departments(self):
        """Distinct department values in sorted order."""
        col = self._columns[self.department_attr]
        return sorted({row[col] for row in self.rows})

    def rows_by_department(self):
        col = self._columns[self.department_attr]
        grouped = {}
        for i, row in enumerate(self.rows):
            grouped.setdefault(row[col], []).append(i)
        return grouped

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True)
class DatasetProfile:
    """Column mapping of one city payment export."""

    categorical: tuple
    numerical: tuple
    department: str  # must be one of the categorical columns

    def attributes(self):
        attrs = [Attribute(c, CATEGORICAL) for c in self.categorical]
        attrs += [Attribute(n, NUMERICAL) for n in self.numerical]
        return attrs


# Default column names for the public payment portals.  The department
# column doubles as a regular categorical attribute.
PROFILES = {
    "philadelphia": DatasetProfile(
        categorical=(
            "fiscal_year",
            "fm",
            "department_title",
            "character_title",
            "sub_obj_title",
            "vendor_name",
            "contract_description",
            "doc_ref_no_prefix",
            "payment_method",
            "check_date",
        ),
        numerical=("transaction_amount",),
        department="department_title",
    ),
    "chicago": DatasetProfile(
        categorical=(
            "voucher_number",
            "payment_date",
            "department_name",
            "contract_number",
            "vendor_name",
            "cashed",
        ),
        numerical=("amount",),
        department="department_name",
    ),
    "york": DatasetProfile(
        categorical=(
            "directorate",
            "reference",
            "payment_date",
            "cost_centre",
            "cost_centre_description",
            "subjective",
            "subjective_description",
            "analysis",
            "analysis_description",
            "supplier_type",
            "supplier_name",
        ),
        numerical=("total", "irrecoverable_vat"),
        department="directorate",
    ),
}

# Five departments per dataset drive the default experience streams.
DEFAULT_DEPARTMENTS = {
    "philadelphia": (
        "42 Commerce",
        "52 Free Library",
        "10 Managing Director",
        "11 Police",
        "14 Health",
    ),
    "chicago": (
        "Dept. of Family and Suppport Services",
        "Chicago Public Library",
        "Dept. of Streets & Sanitation",
        "Chicago Police Department",
        "Chicago Dept. of Public Health",
    ),
    "york": (
        "Adult Social Care",
        "Economy Regeneration and Housing",
        "Housing and Community Safety",
        "Transport Highways and Environ.",
        "School Funding and Assets",
    ),
}


def load_city_csv(path, kind, profile=None):
    """Read one payment CSV into a RawTable.

    Malformed rows (wrong field count, unparseable numerics, empty
    department) are counted and skipped, not fatal.
    """
    if profile is None:
        try:
            profile = PROFILES[kind]
        except KeyError:
            raise SchemaError(f"unknown dataset kind {kind!r}") from None
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip().lower().replace(" ", "_") for h in header]
        positions = {}
        for name in profile.categorical + profile.numerical:
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
            positions[name] = header.index(name)
        attributes = profile.attributes()
        dept_pos = positions[profile.department]
        numeric_names = set(profile.numerical)
        rows = []
        skipped = 0
        for record in reader:
            if len(record) != len(header):
                skipped += 1
                continue
            if not record[dept_pos].strip():
                skipped += 1
                continue
            values = []
            ok = True
            for attr in attributes:
                raw = record[positions[attr.name]].strip()
                if attr.name in numeric_names:
                    try:
                        values.append(float(raw))
                    except ValueError:
                        ok = False
                        break
                else:
                    values.append(raw)
            if not ok:
                skipped += 1
                continue
            rows.append(tuple(values))
    if skipped:
        log.info("%s: skipped %d malformed rows", path, skipped)
    if not rows:
        raise SchemaError(f"{path}: no usable rows")
    return RawTable(
        attributes=attributes,
        rows=rows,
        department_attr=profile.department,
        skipped_rows=skipped,
    )


# ---------------------------------------------------------------------------
# synthetic data

# Each department mixes a few latent payment profiles.  A profile picks a
# preferred token per attribute (rotated so departments occupy disjoint
# preferred sets) and a narrow numeric mode, which gives rows correlated
# attributes instead of independent marginals.  A small tail of rows draws
# only rarely-used tokens, producing legitimate but surprising combinations.
_N_PROFILES = 3
_TAIL_SHARE = 0.10
_PREFERRED_P = 0.55
_SECONDARY_P = 0.25


def _rare_tokens(alphabet_size, d, j):
    """Alphabet indices no profile of department d prefers for attribute j."""
    hot = set()
    for p in range(_N_PROFILES):
        preferred = (d + 2 * p + 3 * j) % alphabet_size
        hot.add(preferred)
        hot.add((preferred + 1) % alphabet_size)
    rare = [t for t in range(alphabet_size) if t not in hot]
    return rare if rare else list(range(alphabet_size))


def _profile_weights(alphabet_size, preferred, rare):
    # profiles never emit the rare tokens; those only enter through tail rows
    w = np.full(alphabet_size, (1.0 - _PREFERRED_P - _SECONDARY_P) / (alphabet_size - 2))
    w[preferred] = _PREFERRED_P
    w[(preferred + 1) % alphabet_size] = _SECONDARY_P
    if len(rare) < alphabet_size:
        # at the minimum alphabet the profiles cover every token and there
        # is nothing left to reserve for the tail
        w[rare] = 0.0
    return w / w.sum()


def synthesize_dataset(
    n_departments,
    rows_per_dept,
    n_categorical,
    n_numerical,
    seed,
    alphabet_size=8,
):
    """Department-skewed synthetic payments over a shared alphabet.

    Rows are drawn from per-department profile mixtures, so within a
    department the categorical attributes co-vary and the numeric values
    cluster into per-profile modes inside a department-specific range.
    Returns (table, generating_params).
    """
    if n_departments < 1 or rows_per_dept < 1:
        raise DataError("need at least one department and one row")
    if alphabet_size < 2 * _N_PROFILES:
        raise DataError("alphabet too small for distinct profile tokens")
    rng = substream(seed, NS_SYNTH)
    alphabet = [f"v{t:02d}" for t in range(alphabet_size)]

    dept_names = [f"dept_{d:02d}" for d in range(n_departments)]
    attributes = [Attribute("department", CATEGORICAL)]
    attributes += [Attribute(f"cat_{j}", CATEGORICAL) for j in range(n_categorical)]
    attributes += [Attribute(f"num_{k}", NUMERICAL) for k in range(n_numerical)]

    params = {"profiles": {}, "ranges": {}, "alphabet": alphabet}
    rows = []
    for d, dept in enumerate(dept_names):
        mix = np.roll(np.array([3.0, 2.0, 1.0]), d % _N_PROFILES)
        mix = mix * rng.uniform(0.9, 1.1, size=_N_PROFILES)
        mix /= mix.sum()
        # token (d + 2p + 3j) mod size: consecutive departments prefer
        # disjoint token sets, so their marginals stay far apart
        rare_sets = [_rare_tokens(alphabet_size, d, j) for j in range(n_categorical)]
        cat_weights = [
            [
                _profile_weights(
                    alphabet_size, (d + 2 * p + 3 * j) % alphabet_size, rare_sets[j]
                )
                for j in range(n_categorical)
            ]
            for p in range(_N_PROFILES)
        ]
        ranges = {}
        modes = []
        for k in range(n_numerical):
            center = 100.0 * (d + 1) + 50.0 * k
            ranges[f"num_{k}"] = (center - 15.0, center + 15.0)
            modes.append([center + offset for offset in (-10.0, 0.0, 10.0)])
        params["profiles"][dept] = {"mix": mix.tolist()}
        params["ranges"][dept] = ranges

        profile_draw = rng.choice(_N_PROFILES, size=rows_per_dept, p=mix)
        tail_draw = rng.random(rows_per_dept) < _TAIL_SHARE
        for i in range(rows_per_dept):
            p = int(profile_draw[i])
            row = [dept]
            for j in range(n_categorical):
                if tail_draw[i]:
                    token = int(rng.choice(rare_sets[j]))
                else:
                    token = int(rng.choice(alphabet_size, p=cat_weights[p][j]))
                row.append(alphabet[token])
            for k in range(n_numerical):
                lo, hi = ranges[f"num_{k}"]
                if tail_draw[i]:
                    value = rng.uniform(lo, hi)
                else:
                    value = rng.uniform(modes[k][p] - 5.0, modes[k][p] + 5.0)
                row.append(float(value))
            rows.append(tuple(row))
    table = RawTable(attributes=attributes, rows=rows, department_attr="department")
    return table, params


def write_table_csv(table, path):
    """Persist a RawTable as CSV (used by the data synthesis command)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([a.name for a in table.attributes])
        for row in table.rows:
            writer.writerow(row)


def read_table_csv(path):
    """Read back a CSV written by write_table_csv (synthetic layout)."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        attributes = []
        for name in header:
            role = NUMERICAL if name.startswith("num_") else CATEGORICAL
            attributes.append(Attribute(name, role))
        if "department" not in header:
            raise SchemaError(f"{path}: missing department column")
        numeric = {a.name for a in attributes if a.role == NUMERICAL}
        rows = []
        skipped = 0
        for record in reader:
            if len(record) != len(header):
                skipped += 1
                continue
            try:
                rows.append(
                    tuple(
                        float(v) if attributes[i].name in numeric else v
                        for i, v in enumerate(record)
                    )
                )
            except ValueError:
                skipped += 1
    if not rows:
        raise SchemaError(f"{path}: no usable rows")
    return RawTable(
        attributes=attributes,
        rows=rows,
        department_attr="department",
        skipped_rows=skipped,
    )
