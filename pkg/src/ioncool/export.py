"""CSV and JSON writers with an embedded metadata header."""
import csv
import io
import json
import math

from . import __version__
from .store import content_hash
from .units import UNIT_SYSTEM


def base_metadata(config_subset=None, **extra) -> dict:
    meta = {"tool": "ioncool", "version": __version__, "unit_system": UNIT_SYSTEM}
    if config_subset is not None:
        meta["config_hash"] = content_hash(config_subset)
    meta.update(extra)
    return meta


def metadata_lines(meta: dict) -> list:
    out = []
    for k, v in meta.items():
        text = v if isinstance(v, str) else json.dumps(v, sort_keys=True)
        out.append(f"# {k}: {text}")
    return out


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def csv_text(header, rows, meta: dict) -> str:
    buf = io.StringIO(newline="")
    for line in metadata_lines(meta):
        buf.write(line + "\r\n")
    w = csv.writer(buf)
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, meta: dict):
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(header, rows, meta))


def read_csv(path):
    """``(metadata, header, rows)`` of a file written by ``write_csv``."""
    meta, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition(": ")
                meta[k] = v
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    return meta, rows[0], rows[1:]


def json_text(report: dict, meta: dict) -> str:
    return json.dumps({"metadata": meta, **report}, indent=2, sort_keys=True, default=_json_default) + "\n"


def write_json(path, report: dict, meta: dict):
    with open(path, "w") as fh:
        fh.write(json_text(report, meta))


def _json_default(obj):
    import numpy as np

    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
