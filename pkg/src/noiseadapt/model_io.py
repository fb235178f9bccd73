"""Versioned JSON model documents.

A document looks like::

    {"format": "noiseadapt-model", "version": 1, "type": "<tag>",
     "meta": {...},
     "arrays": {"name": {"shape": [r, c], "dtype": "<f8", "data": "<base64>"}}}

Array data is the raw little-endian buffer in C order, base64 encoded, so
any language with a JSON parser and base64 decoder can read it back.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT = "noiseadapt-model"
VERSION = 1


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8",
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    if d.get("dtype") != "<f8":
        raise FormatError(f"unsupported array dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).copy()


def save_document(path, type_tag: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    doc = {"format": FORMAT, "version": VERSION, "type": type_tag, "meta": meta,
           "arrays": {k: encode_array(v) for k, v in arrays.items()}}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_document(path, type_tag: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a model document ({exc})") from None
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise FormatError(f"{path}: unknown model format/version")
    if doc.get("type") != type_tag:
        raise FormatError(f"{path}: expected a {type_tag!r} document, found {doc.get('type')!r}")
    return doc["meta"], {k: decode_array(v) for k, v in doc["arrays"].items()}
