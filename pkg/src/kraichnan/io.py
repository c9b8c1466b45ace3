"""Run configuration, artifact writers and manifests for the command line front end."""
import copy
import csv
import hashlib
import json
import os
import platform
from importlib import metadata

import jsonschema

MANIFEST_FORMAT = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}
_posint = {"type": "integer", "minimum": 1}
_vec = {"type": "array", "items": _num}
_blocks = {"type": "array", "items": _vec, "minItems": 1}
_window = {"anyOf": [{"type": "null"},
                     {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2}]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


SCHEMA = _obj({
    "params": _obj({"n": {"type": "integer", "minimum": 2}, "d": {"type": "integer", "minimum": 2},
                    "xi": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2}}),
    "sde": _obj({"dt_base": _pos, "t_max": _pos, "adapt_floor": _pos, "paths": _posint,
                 "dt_max": {"anyOf": [{"type": "null"}, _pos]}}),
    "forcing": _obj({"kind": {"enum": ["ball", "bump"]}, "radius": _pos}),
    "seed": {"type": "integer", "minimum": 0},
    "workers": _posint,
    "output": {"type": "string"},
    "cache": {"anyOf": [{"type": "null"}, {"type": "string"}]},
    "symbol": _obj({"points": {"type": "array", "items": _blocks}}),
    "simulate": _obj({"x0": _blocks, "checkpoints": _vec, "split": {"type": "integer", "minimum": 0}}),
    "heat": _obj({"x0": _blocks, "times": {"type": "array", "items": _pos, "minItems": 1},
                  "fit_window": _window}),
    "green": _obj({"x0": _blocks, "edges": {"type": "array", "items": {"type": "number", "minimum": 0},
                                             "minItems": 2},
                   "nangle": _posint, "rho": {"type": "number", "minimum": 0},
                   "fit_window": _window}),
    "f2": _obj({"r": {"type": "array", "items": _pos, "minItems": 1}, "mc": {"type": "boolean"}}),
    "f4": _obj({"points": {"type": "array", "items": _vec, "minItems": 4, "maxItems": 4}}),
    "verify": _obj({"xi": {"anyOf": [{"type": "null"}, {"type": "array", "items": _num}]},
                    "n": {"anyOf": [{"type": "null"}, {"type": "array", "items": _int}]},
                    "samples": {"anyOf": [{"type": "null"}, _posint]}}),
    "fit": _obj({"input": {"type": "string"}, "x": {"type": "string"}, "y": {"type": "string"},
                 "stderr": {"anyOf": [{"type": "null"}, {"type": "string"}]},
                 "window": _window}),
})

DEFAULTS = {
    "params": {"n": 2, "d": 2, "xi": 1.0},
    "sde": {"dt_base": 0.005, "t_max": 100.0, "adapt_floor": 1e-7, "paths": 20000, "dt_max": 100.0},
    "forcing": {"kind": "ball", "radius": 1.0},
    "seed": 20261014,
    "workers": 1,
    "output": "out",
    "cache": None,
    "symbol": {"points": [[[1.0, 0.0]]]},
    "simulate": {"x0": [[1.0, 0.0]], "checkpoints": [], "split": 0},
    "heat": {"x0": [[1.0, 0.0]], "times": [10.0, 17.78, 31.62, 56.23, 100.0], "fit_window": None},
    "green": {"x0": [[1.0, 0.0]], "edges": [1.0, 1.41, 2.0, 2.83, 4.0], "nangle": 1, "rho": 0.25,
              "fit_window": None},
    "f2": {"r": [2.0], "mc": True},
    "f4": {"points": [[0.0, 0.0], [1.0, 0.0], [0.0, 4.0], [1.0, 4.0]]},
    "verify": {"xi": None, "n": None, "samples": None},
    "fit": {"input": "series.csv", "x": "x", "y": "value", "stderr": "stderr", "window": None},
}


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item):
    """'a.b=value' -> (['a', 'b'], value); values are JSON when they parse as JSON."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    k, v = item.split("=", 1)
    try:
        val = json.loads(v)
    except json.JSONDecodeError:
        val = v
    return [p for p in k.strip().split(".") if p], val


def apply_overrides(cfg, items):
    cfg = copy.deepcopy(cfg)
    for item in items or ():
        keys, val = parse_override(item)
        if not keys:
            raise ConfigError(f"empty key in override {item!r}")
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-object")
        node[keys[-1]] = val
    return cfg


def validate(cfg):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"invalid configuration at {where}: {e.message}") from None


def resolve_config(user=None, overrides=()):
    """User config (validated strictly) merged over the defaults, then overrides."""
    user = {} if user is None else user
    validate(user)
    cfg = apply_overrides(_merge(DEFAULTS, user), overrides)
    validate(cfg)
    return cfg


def load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if isinstance(data, dict) and "manifest_format" in data:
        return data["config"]
    return data


def config_digest(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# writers ----------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    try:
        import numpy as np
        if isinstance(v, np.floating):
            return repr(float(v))
        if isinstance(v, np.integer):
            return str(int(v))
    except ImportError:
        pass
    return str(v)


def write_csv(path, header, rows):
    """RFC 4180 CSV (CRLF line ends, minimal quoting); floats are written with repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path} is empty")
    return rows[0], rows[1:]


def to_jsonable(obj):
    from .verify.report import _jsonable
    return _jsonable(obj)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions():
    import numpy
    import scipy
    from . import __version__
    return {"python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "jsonschema": metadata.version("jsonschema"),
            "kraichnan": __version__}


def write_manifest(outdir, command, argv_extra, cfg, artifacts, wall_time, status):
    """manifest.json: everything needed to regenerate the artifacts, plus wall time."""
    files = {os.path.basename(a): sha256_file(a) for a in artifacts}
    man = {"manifest_format": MANIFEST_FORMAT, "command": command, "arguments": argv_extra,
           "config": cfg, "config_hash": config_digest(cfg), "seed": cfg["seed"],
           "versions": versions(), "wall_time_seconds": round(float(wall_time), 3),
           "artifacts": files, "status": status}
    return write_json(os.path.join(outdir, "manifest.json"), man)
