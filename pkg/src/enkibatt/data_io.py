"""File formats: drive-cycle and measurement CSVs, YAML run configs, JSON results."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .enki import EnKIResult, IterationRecord, PERTURBATION_MODES, PriorSpec
from .models import CellConstants, get_model, nominal_params
from .ocv import LINEAR_FIXTURE, OcvCurve
from .simulator import DriveCycle, MeasurementSeries, NoiseSpec, ProfileSpec

CYCLE_HEADER = ("time_s", "current_A", "amb_temp_K")
MEASUREMENT_HEADER = ("time_s", "voltage_V", "surf_temp_K")


class DataError(ValueError):
    """Malformed input file or config. ``location`` names the row or key."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


# --------------------------------------------------------------------------- CSV


def _open_text(source, mode="r"):
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, mode, encoding="utf-8", newline=""), True
        except OSError as exc:
            raise DataError(f"cannot open {source}: {exc.strerror}", location=str(source)) from None
    return source, False


def _rows(source, name):
    """Yield ``(row_number, cells)`` skipping blank and ``#`` lines.

    Row numbers count data rows from 1, so the first row after the header is
    row 1.
    """
    fh, owned = _open_text(source)
    try:
        reader = csv.reader(line for line in fh if line.strip() and not line.lstrip().startswith("#"))
        header = next(reader, None)
        if header is None:
            raise DataError(f"{name}: file is empty", location="row 0")
        header = [h.strip() for h in header]
        rows = [(i, [c.strip() for c in cells]) for i, cells in enumerate(reader, start=1)]
    finally:
        if owned:
            fh.close()
    return header, rows


def _float(cell, row, column, name):
    try:
        value = float(cell)
    except ValueError:
        raise DataError(
            f"{name}: non-numeric value {cell!r} in column {column!r} at row {row}",
            location=f"row {row}, column {column}",
        ) from None
    if not math.isfinite(value):
        raise DataError(
            f"{name}: non-finite value {cell!r} in column {column!r} at row {row}",
            location=f"row {row}, column {column}",
        )
    return value


def _numeric_table(header, rows, name):
    ncol = len(header)
    table = np.empty((len(rows), ncol))
    for k, (row, cells) in enumerate(rows):
        if len(cells) != ncol:
            raise DataError(
                f"{name}: expected {ncol} columns at row {row}, found {len(cells)}",
                location=f"row {row}",
            )
        for j, cell in enumerate(cells):
            table[k, j] = _float(cell, row, header[j], name)
    return table


def _check_spacing(times, name):
    if times.size < 2:
        return
    steps = np.diff(times)
    dt = steps[0]
    tol = 1e-9 * abs(dt) + 8 * np.finfo(float).eps * np.max(np.abs(times))
    bad = np.nonzero((steps <= 0) | (np.abs(steps - dt) > tol))[0]
    if bad.size:
        row = int(bad[0]) + 2
        raise DataError(f"{name}: non-uniform spacing at row {row}", location=f"row {row}")


def parse_drive_cycle(source, t_amb: float | None = None, max_current: float = 4.0) -> DriveCycle:
    """Read a ``time_s,current_A[,amb_temp_K]`` CSV into a :class:`DriveCycle`.

    Without an ambient column every sample gets ``t_amb``.
    """
    name = str(source) if isinstance(source, (str, os.PathLike)) else "drive cycle"
    header, rows = _rows(source, name)
    if tuple(header) not in (CYCLE_HEADER[:2], CYCLE_HEADER):
        raise DataError(
            f"{name}: header must be 'time_s,current_A[,amb_temp_K]', got {','.join(header)!r}",
            location="header",
        )
    if not rows:
        raise DataError(f"{name}: no data rows", location="row 1")
    table = _numeric_table(header, rows, name)
    times = table[:, 0]
    _check_spacing(times, name)
    if table.shape[1] == 3:
        amb = table[:, 2]
    elif t_amb is None:
        raise DataError(f"{name}: no amb_temp_K column and no ambient temperature configured")
    else:
        amb = np.full(times.shape, float(t_amb))
    try:
        return DriveCycle(times, table[:, 1], amb, max_current=max_current)
    except ValueError as exc:
        raise DataError(f"{name}: {exc}") from None


def write_drive_cycle(cycle: DriveCycle, sink, comment: str | None = None) -> None:
    _write_table(sink, CYCLE_HEADER, (cycle.times, cycle.current, cycle.t_amb), comment)


def read_measurements(source) -> MeasurementSeries:
    name = str(source) if isinstance(source, (str, os.PathLike)) else "measurements"
    header, rows = _rows(source, name)
    if tuple(header) != MEASUREMENT_HEADER:
        raise DataError(
            f"{name}: header must be 'time_s,voltage_V,surf_temp_K', got {','.join(header)!r}",
            location="header",
        )
    table = _numeric_table(header, rows, name).reshape(-1, 3)
    return MeasurementSeries(table[:, 0], table[:, 1], table[:, 2])


def write_measurements(series: MeasurementSeries, sink, comment: str | None = None) -> None:
    """Write a measurement CSV; ``comment`` goes on a leading ``#`` line."""
    _write_table(
        sink, MEASUREMENT_HEADER, (series.times, series.voltage, series.surf_temp), comment
    )


def _write_table(sink, header, columns, comment=None):
    # repr() of a float is the shortest string that parses back to the same double
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    buf.write(",".join(header) + "\n")
    for row in zip(*(np.asarray(c, dtype=float).tolist() for c in columns)):
        buf.write(",".join(repr(v) for v in row) + "\n")
    _emit(sink, buf.getvalue())


def pair_measurements(cycle: DriveCycle, series: MeasurementSeries) -> None:
    """Check that a measurement series lines up with its drive cycle."""
    if len(series) != len(cycle):
        raise DataError(
            f"measurement series has {len(series)} rows but the drive cycle has {len(cycle)}"
        )
    bad = np.nonzero(np.abs(series.times - cycle.times) > 1e-9 * max(cycle.dt, 1.0))[0]
    if bad.size:
        raise DataError(
            f"measurement time {series.times[bad[0]]} does not match cycle time "
            f"{cycle.times[bad[0]]} at row {bad[0] + 1}",
            location=f"row {bad[0] + 1}",
        )


def load_cycles(paths: Sequence, t_amb=None, max_current: float = 4.0) -> DriveCycle:
    """Read one or more drive-cycle CSVs and join them back to back."""
    if not paths:
        raise DataError("no drive cycle given (use --cycle or data.cycle)")
    cycles = [parse_drive_cycle(p, t_amb, max_current) for p in paths]
    if len(cycles) == 1:
        return cycles[0]
    try:
        return DriveCycle.concatenate(cycles)
    except ValueError as exc:
        raise DataError(f"cannot join drive cycles: {exc}") from None


def load_dataset(cycle_paths: Sequence, measurement_paths: Sequence, t_amb=None,
                 max_current: float = 4.0) -> tuple[DriveCycle, MeasurementSeries]:
    """Read paired cycle and measurement files; several pairs become one dataset.

    Each measurement file is checked against its own cycle before the pairs
    are joined on a single continuous time axis.
    """
    if not measurement_paths:
        raise DataError("no measurements given (use --data or data.measurements)")
    if len(cycle_paths) != len(measurement_paths):
        raise DataError(f"{len(cycle_paths)} drive-cycle files but {len(measurement_paths)} "
                        "measurement files; give one of each per dataset")
    parts = []
    for cp, mp in zip(cycle_paths, measurement_paths):
        cycle = parse_drive_cycle(cp, t_amb, max_current)
        series = read_measurements(mp)
        try:
            pair_measurements(cycle, series)
        except DataError as exc:
            raise DataError(f"{mp}: {exc}", location=exc.location) from None
        parts.append((cycle, series))
    if len(parts) == 1:
        return parts[0]
    try:
        cycle = DriveCycle.concatenate([c for c, _ in parts])
    except ValueError as exc:
        raise DataError(f"cannot join drive cycles: {exc}") from None
    series = MeasurementSeries(
        cycle.times,
        np.concatenate([s.voltage for _, s in parts]),
        np.concatenate([s.surf_temp for _, s in parts]),
    )
    return cycle, series


# ------------------------------------------------------------------- atomic I/O


def _emit(sink, text: str) -> None:
    if isinstance(sink, (str, os.PathLike)):
        atomic_write_text(sink, text)
    else:
        sink.write(text)


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# ------------------------------------------------------------------------ config


@dataclass(frozen=True)
class EnKISettings:
    members: int = 200
    max_iter: int = 20
    seed: int = 0
    dmc_dimension: str = "steps"
    variance_form: str = "direct"
    perturbation: str = "tempered"
    misfit_on: str = "forward"
    positivity: str = "floor"
    n_jobs: int = 1


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration.

    ``prior`` is a :class:`PriorSpec` whenever the config defines one (or asks
    for the perturbed-reference construction); ``segments`` describes the
    synthetic profile used by ``simulate``. ``data.cycle`` and
    ``data.measurements`` may each list several files, which are joined in
    order into one dataset.
    """

    model: str
    n_rc: int = 1
    constants: CellConstants = field(default_factory=CellConstants)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    enki: EnKISettings = field(default_factory=EnKISettings)
    dt: float = 1.0
    substeps: int = 1
    t_amb: float = 298.15
    prior_section: Mapping = field(default_factory=dict)
    segments: tuple[ProfileSpec, ...] = ()
    cycle_paths: tuple[Path, ...] = ()
    measurements_paths: tuple[Path, ...] = ()
    reference: np.ndarray | None = None
    output_dir: Path | None = None
    warnings: tuple[str, ...] = ()
    document: Mapping = field(default_factory=dict, repr=False)

    @property
    def model_obj(self):
        return get_model(self.model, self.n_rc)

    def prior(self, seed=None) -> PriorSpec:
        """Build the prior; the perturbed-reference draw uses ``seed``."""
        return build_prior(self.prior_section, self.model_obj, self.enki.seed if seed is None else seed)

    def with_seed(self, seed: int) -> "RunConfig":
        doc = _deepcopy(self.document)
        doc.setdefault("enki", {})["seed"] = int(seed)
        return replace(self, enki=replace(self.enki, seed=int(seed)), document=doc)

    def config_hash(self) -> str:
        return config_hash(self.document, base=self)


_TOP_KEYS = {
    "model", "n_rc", "constants", "prior", "noise", "enki", "integrator",
    "simulate", "data", "reference", "output",
}
_SECTION_KEYS = {
    "constants": {"capacity_ah", "t_ref", "r_s", "ocv", "v_min", "v_max", "max_current"},
    "noise": {"voltage_var", "temp_var"},
    "enki": {
        "members", "max_iter", "seed", "dmc_dimension", "variance_form",
        "perturbation", "misfit_on", "positivity", "n_jobs",
    },
    "integrator": {"dt", "substeps"},
    "data": {"cycle", "measurements", "t_amb"},
    "prior": {"reference", "offset", "spread", "mean", "variance", "floor_fraction"},
    "output": {"dir"},
    "simulate": {"segments", "profile"},
}
_PROFILE_KEYS = set(ProfileSpec.__dataclass_fields__)
_CHOICES = {
    "enki.dmc_dimension": ("steps", "outputs"),
    "enki.variance_form": ("direct", "sqrt"),
    "enki.perturbation": PERTURBATION_MODES,
    "enki.misfit_on": ("forward", "perturbed"),
    "enki.positivity": ("floor", "log", "none"),
}


def _deepcopy(doc):
    return json.loads(json.dumps(doc))


def _number(value, key, *, positive=False, integer=False, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DataError(f"config key {key!r} must be numeric, got {value!r}", location=key)
    if not math.isfinite(value):
        raise DataError(f"config key {key!r} must be finite", location=key)
    if integer and float(value) != int(value):
        raise DataError(f"config key {key!r} must be an integer", location=key)
    if positive and value <= 0:
        raise DataError(f"config key {key!r} must be positive, got {value}", location=key)
    if minimum is not None and value < minimum:
        raise DataError(f"config key {key!r} must be >= {minimum}, got {value}", location=key)
    return int(value) if integer else float(value)


def _section(doc, name, warnings):
    sec = doc.get(name, {}) or {}
    if not isinstance(sec, Mapping):
        raise DataError(f"config section {name!r} must be a mapping", location=name)
    for key in sorted(set(sec) - _SECTION_KEYS.get(name, set(sec))):
        warnings.append(f"unknown key '{name}.{key}' ignored")
    return sec


def _param_vector(value, model, key):
    """Accept a list in schema order, a name->value mapping or ``"nominal"``."""
    names = model.param_names
    if isinstance(value, str):
        if value.lower() != "nominal":
            raise DataError(f"{key!r} must be 'nominal', a list or a mapping", location=key)
        return nominal_params(model)
    if isinstance(value, Mapping):
        missing = [n for n in names if n not in value]
        extra = sorted(set(value) - set(names))
        if missing:
            raise DataError(
                f"{key!r} is missing parameters: {', '.join(missing)}",
                location=", ".join(f"{key}.{n}" for n in missing),
            )
        if extra:
            raise DataError(f"{key!r} has unknown parameters: {', '.join(extra)}", location=key)
        return np.array([_number(value[n], f"{key}.{n}") for n in names])
    if isinstance(value, Sequence):
        if len(value) != len(names):
            raise DataError(
                f"{key!r} needs {len(names)} values for {model.name}, got {len(value)}",
                location=key,
            )
        return np.array([_number(v, f"{key}[{j}]") for j, v in enumerate(value)])
    raise DataError(f"{key!r} must be 'nominal', a list or a mapping", location=key)


def _validate_prior(sec, model):
    if "mean" in sec:
        _param_vector(sec["mean"], model, "prior.mean")
        if "variance" not in sec:
            raise DataError("prior.mean given without prior.variance", location="prior.variance")
    if "variance" in sec:
        var = sec["variance"]
        names = model.param_names
        items = (
            [(f"prior.variance.{n}", var.get(n)) for n in names]
            if isinstance(var, Mapping)
            else [(f"prior.variance[{j}] ({n})", v) for j, (n, v) in enumerate(zip(names, var))]
        )
        for key, v in items:
            if v is not None and isinstance(v, (int, float)) and v < 0:
                raise DataError(f"{key} is negative ({v}); variances must be >= 0", location=key)
        _param_vector(var, model, "prior.variance")
    if "reference" in sec:
        _param_vector(sec["reference"], model, "prior.reference")
    for key in ("offset", "spread"):
        if key in sec:
            _number(sec[key], f"prior.{key}", minimum=0.0)


def build_prior(sec: Mapping, model, seed) -> PriorSpec:
    """Prior from a config ``prior`` section.

    An explicit ``mean``/``variance`` pair is used as is. Otherwise the mean is
    the reference vector perturbed by ``offset`` relative Gaussian noise and
    the standard deviation is ``spread`` times the reference.
    """
    model = get_model(model)
    floor_fraction = sec.get("floor_fraction", 1e-6)
    if "mean" in sec:
        mean = _param_vector(sec["mean"], model, "prior.mean")
        var = _param_vector(sec["variance"], model, "prior.variance")
        floor = None if floor_fraction is None else floor_fraction * np.abs(mean)
        return PriorSpec(mean, var, floor=floor, names=model.param_names)
    ref = _param_vector(sec.get("reference", "nominal"), model, "prior.reference")
    return PriorSpec.from_reference(
        ref,
        offset=float(sec.get("offset", 0.3)),
        spread=float(sec.get("spread", 0.2)),
        seed=np.random.SeedSequence(entropy=int(seed), spawn_key=(4,)),
        floor_fraction=floor_fraction,
        names=model.param_names,
    )


def _resolve(path, base: Path) -> Path:
    p = Path(os.path.expanduser(str(path)))
    return p if p.is_absolute() else (base / p)


def _merge(doc: dict, overrides: Mapping) -> dict:
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(doc.get(key), Mapping):
            doc[key] = _merge(dict(doc[key]), value)
        else:
            doc[key] = value
    return doc


def load_config(
    source, *, check_paths: bool = True, overrides: Mapping | None = None,
    base_dir=None,
) -> RunConfig:
    """Parse a YAML run configuration.

    ``source`` is a path, a text stream or an already-parsed mapping.
    ``overrides`` is merged key by key on top of the document before
    validation. Unknown keys are collected in ``RunConfig.warnings``; missing
    or invalid ones raise :class:`DataError` naming the key. Relative data
    paths resolve against the config file's directory (or ``base_dir``).
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if isinstance(source, Mapping):
        doc = _deepcopy(source)
    else:
        if isinstance(source, (str, os.PathLike)):
            base = Path(source).resolve().parent
            try:
                text = Path(source).read_text(encoding="utf-8")
            except OSError as exc:
                raise DataError(f"cannot read config {source}: {exc.strerror}") from None
        else:
            text = source.read()
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise DataError(f"config is not valid YAML: {exc}") from None
        doc = {} if doc is None else doc
    if not isinstance(doc, Mapping):
        raise DataError("config must be a mapping at the top level")
    if overrides:
        doc = _merge(dict(doc), _deepcopy(overrides))

    missing = [k for k in ("model",) if k not in doc]
    if missing:
        raise DataError(
            "config is missing mandatory keys: " + ", ".join(missing), location=", ".join(missing)
        )
    warnings = [f"unknown key '{k}' ignored" for k in sorted(set(doc) - _TOP_KEYS)]
    try:
        model_name = get_model(doc["model"], 1).name
    except ValueError as exc:
        raise DataError(str(exc), location="model") from None
    n_rc = _number(doc.get("n_rc", 1), "n_rc", integer=True, minimum=1)
    if model_name != "thevenin" and n_rc != 1:
        raise DataError("n_rc applies only to the thevenin model", location="n_rc")
    model = get_model(model_name, n_rc)

    c = _section(doc, "constants", warnings)
    v_min = _number(c.get("v_min", 2.5), "constants.v_min")
    v_max = _number(c.get("v_max", 4.2), "constants.v_max")
    try:
        ocv = OcvCurve.from_dict(c["ocv"], v_min, v_max) if "ocv" in c else LINEAR_FIXTURE
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"constants.ocv: {exc}", location="constants.ocv") from None
    constants = CellConstants(
        capacity_ah=_number(c.get("capacity_ah", 3.3), "constants.capacity_ah", positive=True),
        t_ref=_number(c.get("t_ref", 298.15), "constants.t_ref", positive=True),
        r_s=_number(c.get("r_s", 0.0), "constants.r_s", minimum=0.0),
        ocv=ocv,
        max_current=_number(c.get("max_current", 4.0), "constants.max_current", positive=True),
    )

    n = _section(doc, "noise", warnings)
    noise = NoiseSpec(
        _number(n.get("voltage_var", 1e-4), "noise.voltage_var", positive=True),
        _number(n.get("temp_var", 1e-3), "noise.temp_var", positive=True),
    )

    e = _section(doc, "enki", warnings)
    for key, choices in _CHOICES.items():
        sub = key.split(".")[1]
        if sub in e and e[sub] not in choices:
            raise DataError(f"{key} must be one of {choices}, got {e[sub]!r}", location=key)
    enki = EnKISettings(
        members=_number(e.get("members", 200), "enki.members", integer=True, minimum=2),
        max_iter=_number(e.get("max_iter", 20), "enki.max_iter", integer=True, minimum=1),
        seed=_number(e.get("seed", 0), "enki.seed", integer=True, minimum=0),
        dmc_dimension=e.get("dmc_dimension", "steps"),
        variance_form=e.get("variance_form", "direct"),
        perturbation=e.get("perturbation", "tempered"),
        misfit_on=e.get("misfit_on", "forward"),
        positivity=e.get("positivity", "floor"),
        n_jobs=_number(e.get("n_jobs", 1), "enki.n_jobs", integer=True, minimum=1),
    )

    integ = _section(doc, "integrator", warnings)
    dt = _number(integ.get("dt", 1.0), "integrator.dt", positive=True)
    substeps = _number(integ.get("substeps", 1), "integrator.substeps", integer=True, minimum=1)

    data = _section(doc, "data", warnings)
    t_amb = _number(data.get("t_amb", 298.15), "data.t_amb", positive=True)
    paths = {}
    for key in ("cycle", "measurements"):
        value = data.get(key)
        if value is None:
            continue
        entries = [value] if isinstance(value, (str, os.PathLike)) else value
        if not isinstance(entries, Sequence) or not entries:
            raise DataError(f"data.{key} must be a path or a list of paths", location=f"data.{key}")
        resolved = []
        for entry in entries:
            p = _resolve(entry, base)
            if check_paths and not p.is_file():
                raise DataError(f"data.{key}: file {p} does not exist", location=f"data.{key}")
            resolved.append(p)
        paths[key] = tuple(resolved)
    if len(paths.get("cycle", ())) > 1 and "measurements" in paths:
        if len(paths["measurements"]) != len(paths["cycle"]):
            raise DataError("data.measurements must list one file per data.cycle file",
                            location="data.measurements")

    prior_sec = _section(doc, "prior", warnings)
    _validate_prior(prior_sec, model)

    sim = _section(doc, "simulate", warnings)
    segments = _segments(sim, dt, t_amb, constants.max_current, warnings)

    reference = None
    if doc.get("reference") is not None:
        reference = _param_vector(doc["reference"], model, "reference")

    out = _section(doc, "output", warnings)
    output_dir = _resolve(out["dir"], base) if out.get("dir") else None

    return RunConfig(
        model=model_name, n_rc=n_rc, constants=constants, noise=noise, enki=enki,
        dt=dt, substeps=substeps, t_amb=t_amb, prior_section=prior_sec,
        segments=segments, cycle_paths=paths.get("cycle", ()),
        measurements_paths=paths.get("measurements", ()), reference=reference,
        output_dir=output_dir, warnings=tuple(warnings), document=doc,
    )


def _segments(sim, dt, t_amb, max_current, warnings):
    common = dict(sim.get("profile", {}) or {})
    raw = sim.get("segments")
    if raw is None:
        return ()
    if not isinstance(raw, Sequence) or not raw:
        raise DataError("simulate.segments must be a non-empty list", location="simulate.segments")
    specs = []
    for k, seg in enumerate(raw):
        key = f"simulate.segments[{k}]"
        if not isinstance(seg, Mapping):
            raise DataError(f"{key} must be a mapping", location=key)
        merged = {"dt": dt, "t_amb": t_amb, **common, **seg}
        for unknown in sorted(set(merged) - _PROFILE_KEYS):
            warnings.append(f"unknown key '{key}.{unknown}' ignored")
            merged.pop(unknown)
        if "duration_s" not in merged:
            raise DataError(f"{key} is missing 'duration_s'", location=f"{key}.duration_s")
        if merged.get("amplitude", 0) > max_current or merged.get("pulse_current", 0) > max_current:
            raise DataError(f"{key} exceeds the {max_current} A current limit", location=key)
        try:
            specs.append(ProfileSpec(**merged))
        except (TypeError, ValueError) as exc:
            raise DataError(f"{key}: {exc}", location=key) from None
    return tuple(specs)


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(doc: Mapping, base: RunConfig | None = None) -> str:
    """SHA-256 over the canonical JSON form of the meaningful config fields.

    The output section and the worker count are excluded. Data files are represented by the digest
    of their contents rather than their path, so moving a dataset does not
    change the hash while editing it does.
    """
    canon = _deepcopy(doc)
    canon.pop("output", None)
    # thread count never changes results
    if isinstance(canon.get("enki"), dict):
        canon["enki"].pop("n_jobs", None)
    if base is not None:
        canon["model"] = base.model
        data = dict(canon.get("data", {}) or {})
        for key, ps in (("cycle", base.cycle_paths), ("measurements", base.measurements_paths)):
            digests = [_file_digest(p) if p.is_file() else str(p) for p in ps]
            if digests:
                data[key] = digests[0] if len(digests) == 1 else digests
        if data:
            canon["data"] = data
    text = json.dumps(canon, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ----------------------------------------------------------------------- results


@dataclass
class ResultBundle:
    """Identification result ready for serialization.

    ``relative_errors_pct`` is present exactly when ``reference`` is.
    """

    model: str
    param_names: tuple[str, ...]
    theta_hat: np.ndarray
    records: list[IterationRecord]
    complete: bool
    alphas: list[float]
    rmse: dict[str, float]
    config_hash: str
    seed: int
    reference: np.ndarray | None = None
    final_boxplots: dict | None = None
    timestamps: dict | None = None

    @property
    def relative_errors_pct(self) -> dict | None:
        if self.reference is None:
            return None
        return {
            n: float(100.0 * abs(h - r) / abs(r))
            for n, h, r in zip(self.param_names, self.theta_hat, self.reference)
        }

    @classmethod
    def from_result(cls, model, result: EnKIResult, *, rmse, config_hash, seed,
                    reference=None, timestamps=None) -> "ResultBundle":
        return cls(
            model=get_model(model).name,
            param_names=tuple(result.param_names),
            theta_hat=np.asarray(result.theta_hat, dtype=float),
            records=list(result.records),
            complete=result.complete,
            alphas=[float(a) for a in result.alphas],
            rmse={k: float(v) for k, v in rmse.items()},
            config_hash=config_hash,
            seed=int(seed),
            reference=None if reference is None else np.asarray(reference, dtype=float),
            final_boxplots=result.final_boxplots,
            timestamps=timestamps,
        )

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {
            "model": self.model,
            "parameters": {n: float(v) for n, v in zip(self.param_names, self.theta_hat)},
            "parameter_order": list(self.param_names),
            "complete": bool(self.complete),
            "alphas": list(self.alphas),
            "iterations": [r.to_dict() for r in self.records],
            "final_boxplots": self.final_boxplots,
            "rmse": dict(self.rmse),
            "provenance": {"config_hash": self.config_hash, "seed": self.seed},
        }
        if self.timestamps:
            doc["provenance"]["timestamps"] = dict(self.timestamps)
        if self.reference is not None:
            doc["reference"] = {n: float(v) for n, v in zip(self.param_names, self.reference)}
            doc["relative_errors_pct"] = self.relative_errors_pct
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ResultBundle":
        try:
            names = tuple(doc["parameter_order"])
            ref = doc.get("reference")
            prov = doc["provenance"]
            return cls(
                model=doc["model"],
                param_names=names,
                theta_hat=np.array([doc["parameters"][n] for n in names], dtype=float),
                records=[IterationRecord.from_dict(r) for r in doc["iterations"]],
                complete=bool(doc["complete"]),
                alphas=list(doc["alphas"]),
                rmse=dict(doc["rmse"]),
                config_hash=prov["config_hash"],
                seed=int(prov["seed"]),
                reference=None if ref is None else np.array([ref[n] for n in names], dtype=float),
                final_boxplots=doc.get("final_boxplots"),
                timestamps=prov.get("timestamps"),
            )
        except KeyError as exc:
            raise DataError(f"results document is missing key {exc.args[0]!r}",
                            location=str(exc.args[0])) from None


def dumps_results(bundle: ResultBundle) -> str:
    return json.dumps(bundle.to_dict(), sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_results(bundle: ResultBundle, sink) -> None:
    _emit(sink, dumps_results(bundle))


def read_results(source) -> ResultBundle:
    fh, owned = _open_text(source)
    try:
        doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"results file is not valid JSON: {exc}",
                        location=f"line {exc.lineno}") from None
    finally:
        if owned:
            fh.close()
    return ResultBundle.from_dict(doc)


def read_params(source, model=None) -> tuple[str, np.ndarray]:
    """Parameter vector from a results JSON or a YAML ``{model, params}`` file.

    Returns ``(model_name, theta)``. ``params: nominal`` gives the built-in
    nominal set.
    """
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read parameter file {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise DataError(f"{path}: not valid YAML/JSON: {exc}") from None
    if not isinstance(doc, Mapping):
        raise DataError(f"{path}: expected a mapping")
    if "parameter_order" in doc:
        bundle = ResultBundle.from_dict(doc)
        return bundle.model, bundle.theta_hat
    name = doc.get("model", model)
    if name is None:
        raise DataError(f"{path}: missing 'model'", location="model")
    if "params" not in doc:
        raise DataError(f"{path}: missing 'params'", location="params")
    try:
        mdl = get_model(name, int(doc.get("n_rc", 1)))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}", location="model") from None
    return mdl.name, _param_vector(doc["params"], mdl, "params")


def write_params(model, theta, sink, comment: str | None = None) -> None:
    mdl = get_model(model)
    doc = {"model": mdl.name, "params": {n: float(v) for n, v in zip(mdl.param_names, theta)}}
    head = f"# {comment}\n" if comment else ""
    _emit(sink, head + yaml.safe_dump(doc, sort_keys=False))


def write_boxplot_table(records: Sequence[IterationRecord], sink, names=None,
                        comment: str | None = None) -> None:
    """Long-format CSV of per-iteration boxplot statistics, one row per parameter.

    Rows follow ``names`` when given, otherwise the records' own key order.
    """
    cols = ("iteration", "parameter", "whisker_low", "q1", "median", "q3", "whisker_high",
            "mean", "n_outliers")
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    buf.write(",".join(cols) + "\n")
    for rec in records:
        for name in names or rec.boxplots:
            b = rec.boxplots[name]
            vals = [b["whisker_low"], b["q1"], b["median"], b["q3"], b["whisker_high"], b["mean"]]
            buf.write(",".join([str(rec.iteration), name, *map(repr, vals),
                                str(len(b["outliers"]))]) + "\n")
    _emit(sink, buf.getvalue())


def write_comparison_table(names, theta_hat, reference, sink, comment: str | None = None) -> None:
    """Parameter comparison: reference value, estimate and relative error in percent."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    buf.write("parameter,reference,estimate,relative_error_pct\n")
    for n, h, r in zip(names, np.asarray(theta_hat, float).tolist(), np.asarray(reference, float).tolist()):
        buf.write(f"{n},{r!r},{h!r},{100.0 * abs(h - r) / abs(r)!r}\n")
    _emit(sink, buf.getvalue())
