"""Report serialisation and schema validation."""

from __future__ import annotations

import csv
import hashlib
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

import jsonschema

from .events import GROUPS, HALF_WINDOW


@lru_cache(maxsize=None)
def schema(name: str) -> dict:
    text = resources.files("tradenet").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _head(obj, limit: int):
    if isinstance(obj, dict):
        return {k: _head(v, limit) for k, v in obj.items()}
    if isinstance(obj, list):
        # keep short arrays whole: minItems/maxItems constraints stay checkable
        return [_head(v, limit) for v in (obj if len(obj) <= 2 * limit else obj[:limit])]
    return obj


def validate(report: Mapping, name: str, limit: int | None = None) -> None:
    """Raise ``jsonschema.ValidationError`` if ``report`` does not match schema ``name``.

    With ``limit``, only the first ``limit`` items of long arrays are checked.
    """
    if limit is not None:
        report = _head(report, limit)
    jsonschema.validate(report, schema(name), cls=jsonschema.Draft202012Validator)


def dump_json(obj, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_trajectories(report: Mapping, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "variable", "t", "value"])
        for g in GROUPS:
            for var, entry in report["groups"][g].items():
                if entry["trajectory"] is None:
                    continue
                for k, x in enumerate(entry["trajectory"]):
                    w.writerow([g, var, k - HALF_WINDOW, repr(x)])


def _fmt(x, digits: int) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def write_impact_table(report: Mapping, path: str | Path) -> None:
    """Table-2-shaped CSV: one row per side and lag, then the cumulative rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["side", "panel", "i", "n", "mean_raw_x1e5", "p_raw", "stars_raw", "mean_excess_x1e5", "p_excess", "stars_excess"])
        for side in ("buyer", "seller"):
            if side not in report:
                continue
            for panel in ("panel_a", "panel_b"):
                for row in report[side][panel]:
                    w.writerow(
                        [
                            side,
                            panel[-1].upper(),
                            row["i"],
                            row["n"],
                            _fmt(row["mean_raw"], 2),
                            _fmt(row["p_raw"], 3),
                            row["stars_raw"],
                            _fmt(row["mean_excess"], 2),
                            _fmt(row["p_excess"], 3),
                            row["stars_excess"],
                        ]
                    )
