"""Versioned text bundles for decoder parameters.

Layout::

    neuralbp-params 1
    code_id=bch63_36
    h_hash=...
    spec=check=sum_product;weights=...
    array edge_weights 5 432
    <values, one per line, row-major>
    ...

Values are written with ``repr`` so a round trip is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codes import LinearCode
from .decoder import PARAM_FIELDS, DecoderSpec, Parameters, parse_spec, tanner_for

MAGIC = "neuralbp-params"
VERSION = 1


@dataclass
class ParamBundle:
    spec: DecoderSpec
    params: Parameters
    code_id: str
    h_hash: str

    def check_code(self, code: LinearCode):
        if code.h_hash != self.h_hash:
            raise ValueError(f"parameters were trained for H {self.h_hash} ({self.code_id}), "
                             f"not {code.h_hash} ({code.code_id})")
        self.params.validate(self.spec, tanner_for(code))


def emit_params(spec: DecoderSpec, params: Parameters, code: LinearCode) -> str:
    params.validate(spec, tanner_for(code))
    lines = [f"{MAGIC} {VERSION}", f"code_id={code.code_id}", f"h_hash={code.h_hash}",
             f"spec={spec.describe()}"]
    for name, arr in params.arrays().items():
        lines.append(f"array {name} " + " ".join(str(d) for d in arr.shape))
        lines.extend(repr(float(v)) for v in arr.ravel())
    return "\n".join(lines) + "\n"


def parse_params(text: str) -> ParamBundle:
    lines = text.splitlines()
    if not lines or lines[0].split()[:1] != [MAGIC]:
        raise ValueError("not a parameter bundle (bad magic line)")
    version = int(lines[0].split()[1])
    if version != VERSION:
        raise ValueError(f"unsupported parameter bundle version {version}")
    header, i = {}, 1
    while i < len(lines) and not lines[i].startswith("array "):
        if lines[i].strip():
            key, _, value = lines[i].partition("=")
            header[key.strip()] = value.strip()
        i += 1
    for key in ("code_id", "h_hash", "spec"):
        if key not in header:
            raise ValueError(f"parameter bundle missing {key!r}")
    arrays = {}
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] != "array" or len(parts) < 2 or parts[1] not in PARAM_FIELDS:
            raise ValueError(f"line {i + 1}: expected 'array <name> <shape>'")
        shape = tuple(int(d) for d in parts[2:])
        size = int(np.prod(shape))
        values = lines[i + 1:i + 1 + size]
        if len(values) != size:
            raise ValueError(f"array {parts[1]}: expected {size} values, got {len(values)}")
        arrays[parts[1]] = np.array([float(v) for v in values]).reshape(shape)
        i += 1 + size
    return ParamBundle(parse_spec(header["spec"]), Parameters(**arrays),
                       header["code_id"], header["h_hash"])


def save_params(path, spec: DecoderSpec, params: Parameters, code: LinearCode) -> Path:
    path = Path(path)
    path.write_text(emit_params(spec, params, code))
    return path


def load_params(path) -> ParamBundle:
    return parse_params(Path(path).read_text())
