"""On-disk formats: telemetry TSV, fleet and ledger JSON, model artifacts.

Telemetry file layout (UTF-8, ``\\n`` line ends, tab separated)::

    #pdupower-telemetry<TAB>version=1
    #n_days=<int><TAB>first_day=<int><TAB>fleet_sha256=<hex>
    kind<TAB>entity_id<TAB>day<TAB>period<TAB>cpu<TAB>power<TAB>flags<TAB>it_power<TAB>overhead_power<TAB>true_power
    <rows>
    #end<TAB>rows=<int><TAB>sha256=<hex of every preceding byte>

``kind`` is ``pdu`` or ``machine``. PDU rows come first in fleet order,
then machine rows in fleet order, each in time order. Floats use Python's
shortest round-trip repr, ``nan`` for missing values and ``-`` for
columns that do not apply to the row kind.

Every write goes to a temporary file in the target directory and is then
renamed over the destination.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import IntegrityError, MissingInputError, SchemaError, UnsupportedVersionError
from .fleet_sim import PERIODS_PER_DAY, Anomaly, Dataset, Fleet

TELEMETRY_VERSION = 1
ARTIFACT_VERSION = 1
MODEL_KINDS = ("per_pdu", "unified_machine", "unified_pdu")
COLUMNS = ("kind", "entity_id", "day", "period", "cpu", "power", "flags",
           "it_power", "overhead_power", "true_power")
_MAGIC = "#pdupower-telemetry"


def atomic_write(path, data):
    """Write ``data`` (bytes or an iterable of byte chunks) via temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            if isinstance(data, (bytes, bytearray)):
                fh.write(data)
            else:
                for chunk in data:
                    fh.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj: Any) -> bytes:
    """Sorted keys, no whitespace variance, trailing newline."""
    return (json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n").encode()


def _read(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"{path} does not exist")
    return path.read_bytes()


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def fleet_fingerprint(fleet: Fleet) -> str:
    return sha256(canonical_json(fleet.to_dict()))


def dataset_fingerprint(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(fleet_fingerprint(ds.fleet).encode())
    h.update(f"{ds.n_days}:{ds.first_day}".encode())
    for name in ("pdu_cpu", "pdu_power", "pdu_flags", "machine_cpu", "machine_power", "machine_flags"):
        arr = getattr(ds, name)
        if arr is not None:
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


# --- JSON documents -------------------------------------------------------------------


def save_json(path, obj: Any):
    atomic_write(path, canonical_json(obj))


def load_json(path) -> Any:
    data = _read(path)
    try:
        return json.loads(data)
    except json.JSONDecodeError as e:
        raise IntegrityError(f"{path}: malformed JSON ({e.msg})", offset=e.pos) from None


def save_fleet(path, fleet: Fleet):
    save_json(path, {"format": "pdupower-fleet", "version": ARTIFACT_VERSION, "fleet": fleet.to_dict()})


def load_fleet(path) -> Fleet:
    doc = load_json(path)
    _check_header(doc, "pdupower-fleet", path)
    try:
        return Fleet.from_dict(doc["fleet"])
    except (KeyError, TypeError) as e:
        raise SchemaError(f"{path}: invalid fleet description ({e})") from None


def save_ledger(path, ledger) -> None:
    rows = [{"pdu_id": a.pdu_id, "kind": a.kind, "start": a.start, "length": a.length} for a in ledger]
    save_json(path, {"format": "pdupower-anomalies", "version": ARTIFACT_VERSION, "anomalies": rows})


def load_ledger(path) -> tuple[Anomaly, ...]:
    doc = load_json(path)
    _check_header(doc, "pdupower-anomalies", path)
    return tuple(Anomaly(**a) for a in doc["anomalies"])


def _check_header(doc, fmt: str, path):
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise SchemaError(f"{path}: not a {fmt} document")
    if doc.get("version") != ARTIFACT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: version {doc.get('version')!r}, this reader supports {ARTIFACT_VERSION}"
        )


# --- model artifacts ------------------------------------------------------------------


def model_filename(kind: str, day: int) -> str:
    return f"{kind}-day{day:04d}.json"


def save_model(path, kind: str, day: int, payload: Mapping, config: Mapping, fingerprint: str):
    """Write a model artifact. ``payload`` is the model's ``to_dict`` form
    (for per_pdu, a mapping of pdu_id to model dict)."""
    if kind not in MODEL_KINDS:
        raise SchemaError(f"unknown model kind {kind!r}")
    body = {
        "format": "pdupower-model",
        "version": ARTIFACT_VERSION,
        "kind": kind,
        "day": day,
        "config": config,
        "fingerprint": fingerprint,
        "payload": payload,
    }
    body["checksum"] = sha256(canonical_json({k: v for k, v in body.items()}))
    save_json(path, body)


def load_model(path, kind: str | None = None) -> dict:
    """Read and verify a model artifact; returns its document."""
    doc = load_json(path)
    _check_header(doc, "pdupower-model", path)
    checksum = doc.pop("checksum", None)
    if checksum != sha256(canonical_json(doc)):
        raise IntegrityError(f"{path}: checksum mismatch", offset=0)
    if kind is not None and doc["kind"] != kind:
        raise SchemaError(f"{path}: holds a {doc['kind']} model, expected {kind}")
    return doc


# --- telemetry ------------------------------------------------------------------------


def _f(x: float) -> str:
    return repr(x)


def _entity_lines(kind, eid, days, periods, cols) -> str:
    prefix = f"{kind}\t{eid}\t"
    return "".join(prefix + "\t".join(r) + "\n" for r in zip(days, periods, *cols))


def _floats(row) -> list[str]:
    return [_f(v) for v in row.tolist()]


def iter_telemetry_chunks(ds: Dataset):
    """Yield the file body (everything but the footer) one entity at a time."""
    T = ds.n_periods
    days = [str(ds.first_day + t // PERIODS_PER_DAY) for t in range(T)]
    periods = [str(t % PERIODS_PER_DAY) for t in range(T)]
    dash = ["-"] * T
    yield (
        f"{_MAGIC}\tversion={TELEMETRY_VERSION}\n"
        f"#n_days={ds.n_days}\tfirst_day={ds.first_day}\tfleet_sha256={fleet_fingerprint(ds.fleet)}\n"
        + "\t".join(COLUMNS) + "\n"
    ).encode()
    for i, pid in enumerate(ds.pdu_ids):
        cols = [_floats(ds.pdu_cpu[i]), _floats(ds.pdu_power[i]), [str(v) for v in ds.pdu_flags[i].tolist()],
                _floats(ds.pdu_it_power[i]), _floats(ds.pdu_overhead[i]), dash]
        yield _entity_lines("pdu", pid, days, periods, cols).encode()
    if ds.has_machines:
        for i, m in enumerate(ds.fleet.machines):
            cols = [_floats(ds.machine_cpu[i]), _floats(ds.machine_power[i]),
                    [str(v) for v in ds.machine_flags[i].tolist()], dash, dash,
                    _floats(ds.machine_true_power[i])]
            yield _entity_lines("machine", m.machine_id, days, periods, cols).encode()


def _n_rows(ds: Dataset) -> int:
    return (len(ds.fleet.pdus) + (len(ds.fleet.machines) if ds.has_machines else 0)) * ds.n_periods


def _with_footer(ds: Dataset):
    h = hashlib.sha256()
    for chunk in iter_telemetry_chunks(ds):
        h.update(chunk)
        yield chunk
    yield f"#end\trows={_n_rows(ds)}\tsha256={h.hexdigest()}\n".encode()


def telemetry_bytes(ds: Dataset) -> bytes:
    return b"".join(_with_footer(ds))


def save_telemetry(path, ds: Dataset):
    atomic_write(path, _with_footer(ds))


def _version_gate(path):
    """Read only the first line and reject unknown versions."""
    with open(path, "rb") as fh:
        first = fh.readline(256).decode("utf-8", "replace").rstrip("\n")
    parts = first.split("\t")
    if parts[0] != _MAGIC or len(parts) != 2 or not parts[1].startswith("version="):
        raise SchemaError(f"{path}: not a telemetry file")
    try:
        version = int(parts[1][len("version="):])
    except ValueError:
        raise SchemaError(f"{path}: malformed version field") from None
    if version != TELEMETRY_VERSION:
        raise UnsupportedVersionError(
            f"{path}: telemetry version {version}, this reader supports {TELEMETRY_VERSION}"
        )


def _num(s: str) -> float:
    return math.nan if s == "-" else float(s)


def load_telemetry(path, fleet: Fleet) -> Dataset:
    """Parse a telemetry file written by :func:`save_telemetry`.

    The version is checked before the body is read. Rows must appear in the
    canonical order. A malformed or misplaced row, a missing footer or a
    checksum mismatch raises IntegrityError with the byte offset of the
    offending line; nothing is returned from a file that fails any check.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"{path} does not exist")
    _version_gate(path)
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        fh.readline()
        meta_line = fh.readline()
        header = fh.readline()
        h.update(_MAGIC.encode() + f"\tversion={TELEMETRY_VERSION}\n".encode() + meta_line + header)
        offset = fh.tell()
        try:
            meta = dict(kv.split("=", 1) for kv in meta_line.decode().rstrip("\n")[1:].split("\t"))
            n_days, first_day = int(meta["n_days"]), int(meta["first_day"])
        except (ValueError, KeyError, UnicodeDecodeError):
            raise IntegrityError(f"{path}: malformed metadata line", offset=len(_MAGIC) + 11) from None
        if meta.get("fleet_sha256") != fleet_fingerprint(fleet):
            raise SchemaError(f"{path}: telemetry was written for a different fleet")
        if header.decode().rstrip("\n").split("\t") != list(COLUMNS):
            raise SchemaError(f"{path}: unexpected column header")

        T = n_days * PERIODS_PER_DAY
        n_p, n_m = len(fleet.pdus), len(fleet.machines)
        pdu = {k: np.empty((n_p, T)) for k in ("pdu_cpu", "pdu_power", "pdu_it_power", "pdu_overhead")}
        pdu["pdu_flags"] = np.empty((n_p, T), dtype=np.uint8)
        machine = None
        entities = [("pdu", p.pdu_id) for p in fleet.pdus] + [("machine", m.machine_id) for m in fleet.machines]
        row = 0
        footer = None
        for line in fh:
            if line.startswith(b"#end\t"):
                footer = (offset, line)
                break
            h.update(line)
            try:
                c = line.decode().rstrip("\n").split("\t")
                e, t = divmod(row, T)
                kind, eid = entities[e]
                if (c[0], c[1]) != (kind, eid) or len(c) != len(COLUMNS):
                    raise ValueError
                if int(c[2]) != first_day + t // PERIODS_PER_DAY or int(c[3]) != t % PERIODS_PER_DAY:
                    raise ValueError
                if kind == "pdu":
                    pdu["pdu_cpu"][e, t] = float(c[4])
                    pdu["pdu_power"][e, t] = float(c[5])
                    pdu["pdu_flags"][e, t] = int(c[6])
                    pdu["pdu_it_power"][e, t] = float(c[7])
                    pdu["pdu_overhead"][e, t] = float(c[8])
                else:
                    if machine is None:
                        machine = {k: np.empty((n_m, T)) for k in ("machine_cpu", "machine_power", "machine_true_power")}
                        machine["machine_flags"] = np.empty((n_m, T), dtype=np.uint8)
                    k = e - n_p
                    machine["machine_cpu"][k, t] = float(c[4])
                    machine["machine_power"][k, t] = float(c[5])
                    machine["machine_flags"][k, t] = int(c[6])
                    machine["machine_true_power"][k, t] = _num(c[9])
            except (ValueError, IndexError, UnicodeDecodeError, OverflowError):
                raise IntegrityError(f"{path}: malformed or misplaced row {row}", offset=offset) from None
            offset += len(line)
            row += 1
        if footer is None or not footer[1].endswith(b"\n") or fh.read(1):
            raise IntegrityError(f"{path}: truncated, footer missing", offset=offset)
    try:
        _, rows_kv, sha_kv = footer[1].decode().rstrip("\n").split("\t")
        n_rows = int(rows_kv.split("=", 1)[1])
        digest = sha_kv.split("=", 1)[1]
    except ValueError:
        raise IntegrityError(f"{path}: malformed footer", offset=footer[0]) from None
    if n_rows != row or row not in (n_p * T, (n_p + n_m) * T):
        raise IntegrityError(f"{path}: footer declares {n_rows} rows, found {row}", offset=footer[0])
    if h.hexdigest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch", offset=footer[0])
    return Dataset(fleet=fleet, n_days=n_days, first_day=first_day, **pdu, **(machine or {}))
