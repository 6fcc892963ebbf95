"""Reading and writing series, key-value configuration and run manifests."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InvalidParam
from .likelihood import ObservationSeries
from .models import KINDS, builtin_model


def fmt(x) -> str:
    """Full double precision (17 significant digits); integers stay integral."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NA"
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return format(x, ".17g")


# ------------------------------------------------------------------ series

_META_KEYS = ("total", "unit", "name")


def _parse_number(text, line, what):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{what} {text!r} is not a number", line) from None


def parse_series(text: str, total=None, source: str = "") -> ObservationSeries:
    """Parse observation CSV text.

    Lines starting with ``#`` are comments; ``# key: value`` comments set the
    metadata ``total``, ``unit`` and ``name``.  The header is
    ``time,<label1>,...`` and ``NA`` marks an unobserved count.
    """
    meta = {}
    rows = []
    header = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, sep, val = body.partition(":")
            if sep and key.strip().lower() in _META_KEYS:
                meta[key.strip().lower()] = val.strip()
            continue
        cells = [c.strip() for c in next(csv.reader([line]))]
        if header is None:
            if not cells or cells[0].lower() != "time" or len(cells) < 2:
                raise DataError("header must be 'time,<label1>,<label2>,...'", lineno)
            if len(set(cells)) != len(cells):
                raise DataError("duplicate column names in header", lineno)
            header = cells
            continue
        if len(cells) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(cells)}", lineno)
        t = _parse_number(cells[0], lineno, "time")
        if not math.isfinite(t):
            raise DataError("time must be finite", lineno)
        vals = []
        for label, c in zip(header[1:], cells[1:]):
            if c.upper() in ("NA", ""):
                vals.append(math.nan)
                continue
            v = _parse_number(c, lineno, f"count for {label}")
            if v < 0 or not v.is_integer():
                raise DataError(f"count for {label} must be a nonnegative integer, got {c}", lineno)
            vals.append(v)
        if rows and t <= rows[-1][1]:
            raise DataError(f"time {cells[0]} does not increase on the previous row", lineno)
        rows.append((lineno, t, vals))
    if header is None:
        raise DataError(f"{source or 'input'} has no header")
    if len(rows) < 1:
        raise DataError(f"{source or 'input'} has no data rows")
    if total is None and "total" in meta:
        tot = _parse_number(meta["total"], None, "total")
        if tot < 0 or not tot.is_integer():
            raise DataError(f"total must be a nonnegative integer, got {meta['total']}")
        total = int(tot)
    if total is not None:
        for lineno, _, vals in rows:
            if not any(math.isnan(v) for v in vals) and sum(vals) != total:
                raise DataError(f"counts sum to {int(sum(vals))}, not the population total {total}", lineno)
    return ObservationSeries(
        np.array([r[1] for r in rows]),
        np.array([r[2] for r in rows], dtype=float),
        tuple(header[1:]),
        total=total,
        unit=meta.get("unit", ""),
        name=meta.get("name", ""),
    )


def ingest_series(path, total=None) -> ObservationSeries:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return parse_series(text, total, str(path))


def emit_series(series: ObservationSeries) -> str:
    out = io.StringIO()
    if series.total is not None:
        out.write(f"# total: {series.total}\n")
    if series.unit:
        out.write(f"# unit: {series.unit}\n")
    if series.name:
        out.write(f"# name: {series.name}\n")
    out.write(",".join(("time",) + series.labels) + "\n")
    for t, row in zip(series.times, series.counts):
        out.write(",".join([fmt(t)] + [fmt(v) for v in row]) + "\n")
    return out.getvalue()


def write_series(series: ObservationSeries, path) -> None:
    atomic_write(path, emit_series(series))


def eyam_series() -> ObservationSeries:
    """The bundled Eyam plague counts (S, I, R; time in months)."""
    text = resources.files("epibirth").joinpath("data/eyam.csv").read_text()
    return parse_series(text, source="eyam.csv")


# ------------------------------------------------------------------ key-value files


def read_key_values(path) -> list:
    """``key = value`` lines with ``#`` comments; returns (line, key, value) triples."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
        out.append((lineno, key.strip(), val.strip()))
    return out


def _convert(kind, key, text):
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind == "floats":
            return tuple(float(v) for v in text.split(","))
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value {text!r} for key {key!r}", key) from None


def read_config(path, schema: dict, defaults: dict | None = None) -> dict:
    """Validated key-value config; unknown keys are errors naming the key."""
    cfg = dict(defaults or {})
    for lineno, key, val in read_key_values(path):
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})", key)
        cfg[key] = _convert(schema[key], key, val)
    return cfg


def read_model(path):
    """Model file: ``kind``, parameter values, optional ``loop_bound`` and
    ``change_point = <time>: name=value, ...`` lines."""
    kind = None
    loop_bound = 1
    params = {}
    changes = []
    for lineno, key, val in read_key_values(path):
        if key == "kind":
            kind = val.lower()
            if kind not in KINDS:
                raise ConfigError(f"unknown model kind {val!r}; expected one of {KINDS}", key)
        elif key == "loop_bound":
            loop_bound = _convert(int, key, val)
        elif key == "change_point":
            when, sep, rest = val.partition(":")
            if not sep:
                raise ConfigError(f"line {lineno}: change_point needs '<time>: name=value, ...'", key)
            upd = {}
            for item in rest.split(","):
                name, eq, v = item.partition("=")
                if not eq:
                    raise ConfigError(f"line {lineno}: bad change_point entry {item.strip()!r}", key)
                upd[name.strip()] = _convert(float, name.strip(), v.strip())
            changes.append((_convert(float, key, when.strip()), upd))
        else:
            params[key] = _convert(float, key, val)
    if kind is None:
        raise ConfigError("model file must set 'kind'", "kind")
    try:
        model = builtin_model(kind, params, loop_bound=loop_bound)
    except InvalidParam as exc:
        raise ConfigError(str(exc)) from None
    if changes:
        for _, upd in changes:
            bad = [n for n in upd if n not in model.params]
            if bad:
                raise ConfigError(f"change_point sets unknown parameters {bad}", "change_point")
        model = replace(model, change_points=tuple(changes))
    return model


def parse_state(text: str, labels) -> np.ndarray:
    """``"S=100,I=1,R=0"`` (any order) or ``"100,1,0"`` to a count vector."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    vals = {}
    if all("=" in p for p in parts):
        for p in parts:
            k, _, v = p.partition("=")
            vals[k.strip()] = v.strip()
        missing = [l for l in labels if l not in vals]
        extra = [k for k in vals if k not in labels]
        if missing or extra:
            raise ConfigError(f"state {text!r} must name exactly the compartments {list(labels)}")
        raw = [vals[l] for l in labels]
    else:
        if len(parts) != len(labels):
            raise ConfigError(f"state {text!r} needs {len(labels)} counts")
        raw = parts
    out = []
    for r in raw:
        try:
            v = int(r)
        except ValueError:
            raise ConfigError(f"state count {r!r} is not an integer") from None
        if v < 0:
            raise ConfigError(f"state count {v} is negative")
        out.append(v)
    return np.array(out, dtype=np.int64)


# ------------------------------------------------------------------ outputs


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def table_csv(header, rows) -> str:
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return out.getvalue()


def chain_csv(chain) -> str:
    """One row per retained draw; log-scale columns carry a ``log_`` prefix."""
    header = [
        n if not logged or n.startswith("log_") else f"log_{n}" for n, logged in zip(chain.names, chain.log_scale)
    ]
    return table_csv(header, chain.draws.tolist())


@dataclass
class RunManifest:
    command: str
    argv: list
    model_file: str | None = None
    data_file: str | None = None
    config_file: str | None = None
    seed: int | None = None
    output_dir: str | None = None
    tool_version: str = ""
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def write(self, path) -> None:
        atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))
