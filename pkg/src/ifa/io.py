"""Dataset, parameter, and report persistence.

Datasets travel as plain CSV: a header row of item names, integer category
codes, and the literal string NA for missing cells.  Parameter sets travel
as JSON with sorted keys and fixed indentation so identical fits produce
byte-identical files.  Manifests record the seed and a hash of the run
configuration, never timestamps.
"""
from __future__ import annotations

import csv
import hashlib
import json

import numpy as np

from .models import MISSING, Dataset, ItemParams, as_model

_NA = "NA"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(obj))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def config_hash(config: dict) -> str:
    return sha256_text(canonical_json(config))


def item_names(n_items: int) -> list[str]:
    return [f"item_{j + 1}" for j in range(n_items)]


def write_dataset_csv(path, data: Dataset, names=None) -> None:
    names = names or item_names(data.n_items)
    if len(names) != data.n_items:
        raise ValueError("one column name per item is required")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in data.responses:
            writer.writerow([_NA if v == MISSING else int(v) for v in row])


def read_dataset_csv(path) -> Dataset:
    """Parse a dataset CSV; malformed cells raise with row and column names."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("dataset CSV is empty") from None
        header = [h.strip() for h in header]
        rows = []
        for r, record in enumerate(reader, start=1):
            if len(record) != len(header):
                raise ValueError(
                    f"row {r}: expected {len(header)} cells, found {len(record)}"
                )
            parsed = []
            for c, cell in enumerate(record):
                cell = cell.strip()
                if cell == _NA:
                    parsed.append(MISSING)
                    continue
                try:
                    value = int(cell)
                except ValueError:
                    raise ValueError(
                        f"row {r}, column {header[c]!r}: invalid cell {cell!r} "
                        f"(expected an integer category code or {_NA})"
                    ) from None
                if value < 0:
                    raise ValueError(
                        f"row {r}, column {header[c]!r}: negative category code {value}"
                    )
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise ValueError("dataset CSV has a header but no data rows")
    return Dataset.from_responses(np.asarray(rows, dtype=int))


def params_to_dict(
    items,
    *,
    model,
    link,
    k: int,
    estimator: str | None = None,
    seed: int | None = None,
    correlation=None,
    thetas=None,
    names=None,
) -> dict:
    names = names or item_names(len(items))
    payload = {
        "model": str(getattr(model, "value", model)),
        "link": str(getattr(link, "value", link)),
        "k": int(k),
        "items": [
            {
                "name": names[j],
                "intercepts": [float(v) for v in it.intercepts],
                "loadings": [float(v) for v in it.loadings],
            }
            for j, it in enumerate(items)
        ],
    }
    if estimator is not None:
        payload["estimator"] = estimator
    if seed is not None:
        payload["seed"] = int(seed)
    if correlation is not None:
        payload["correlation"] = np.asarray(correlation, dtype=float).tolist()
    if thetas is not None:
        payload["thetas"] = np.asarray(thetas, dtype=float).tolist()
    return payload


def params_from_dict(payload: dict):
    """Rebuild (items, extras) from a parameter payload."""
    model = as_model(payload["model"])
    items = [
        ItemParams(
            model,
            np.asarray(rec["intercepts"], dtype=float),
            np.asarray(rec["loadings"], dtype=float),
        )
        for rec in payload["items"]
    ]
    extras = {
        "model": model,
        "link": payload.get("link", "logit"),
        "k": int(payload["k"]),
        "names": [rec["name"] for rec in payload["items"]],
        "correlation": None,
        "thetas": None,
    }
    if payload.get("correlation") is not None:
        extras["correlation"] = np.asarray(payload["correlation"], dtype=float)
    if payload.get("thetas") is not None:
        extras["thetas"] = np.asarray(payload["thetas"], dtype=float)
    return items, extras


def write_trajectory_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_number(v) for v in row])


def _format_number(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    return repr(float(v))


def write_manifest(path, *, command: str, seed, config: dict, inputs: dict, outputs: list) -> None:
    write_json(
        path,
        {
            "command": command,
            "seed": seed,
            "config_hash": config_hash(config),
            "config": config,
            "inputs": inputs,
            "outputs": sorted(outputs),
        },
    )
