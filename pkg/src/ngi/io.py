"""File formats and experiment configuration.

A stack is two files sharing a stem: ``<stem>.f32`` holds raw little-endian
float32 frames (frame-major, row-major) and ``<stem>.json`` the manifest.
The payload is written first and the manifest last, so an interrupted write
never leaves a manifest pointing at a short payload.
"""

from __future__ import annotations

import copy
import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import jsonschema
import numpy as np

from .mask import BeamGeometry, Detector, MaskConfig
from .recon import ReconConfig

FORMAT_VERSION = 1
STACK_KINDS = ("speckle", "image", "bucket")


class ConfigError(ValueError):
    """Invalid configuration or input file."""


# --- stack files ---------------------------------------------------------------

@dataclass
class StackFile:
    frames: np.ndarray  # (count, height, width)
    pitch_um: float
    angles_deg: list = field(default_factory=list)
    exposure_s: float = 0.0
    seed: int | None = None
    kind: str = "image"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim == 2:
            f = f[None]
        if f.ndim != 3:
            raise ConfigError(f"stack frames must be 2D or 3D, got shape {f.shape}")
        self.frames = f
        if self.kind not in STACK_KINDS:
            raise ConfigError(f"stack kind must be one of {STACK_KINDS}, got {self.kind!r}")

    @property
    def count(self) -> int:
        return self.frames.shape[0]

    def manifest(self) -> dict:
        m = {
            "format_version": FORMAT_VERSION,
            "width": int(self.frames.shape[2]),
            "height": int(self.frames.shape[1]),
            "count": int(self.frames.shape[0]),
            "dtype": "f32le",
            "pitch_um": float(self.pitch_um),
            "angles_deg": [float(a) for a in self.angles_deg],
            "exposure_s": float(self.exposure_s),
            "seed": self.seed,
            "kind": self.kind,
        }
        if self.extra:
            m["extra"] = self.extra
        return m


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".f32") else p


def write_stack(path, stack: StackFile) -> Path:
    """Write ``stack`` to ``<stem>.f32`` and ``<stem>.json``; returns the manifest path."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(stack.frames, dtype="<f4")
    data_path = stem.with_suffix(".f32")
    man_path = stem.with_suffix(".json")
    if man_path.exists():
        man_path.unlink()
    payload.tofile(data_path)
    text = json.dumps(stack.manifest(), indent=1, sort_keys=True)
    tmp = man_path.with_suffix(".json.tmp")
    tmp.write_text(text + "\n", encoding="utf-8")
    os.replace(tmp, man_path)
    return man_path


def read_stack(path) -> StackFile:
    stem = _stem(path)
    try:
        m = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"no stack manifest at {stem.with_suffix('.json')}") from e
    if m.get("format_version") != FORMAT_VERSION or m.get("dtype") != "f32le":
        raise ConfigError(f"unsupported stack format in {stem}.json")
    w, h, n = int(m["width"]), int(m["height"]), int(m["count"])
    data_path = stem.with_suffix(".f32")
    size = data_path.stat().st_size
    if size != 4 * w * h * n:
        raise ConfigError(f"payload {data_path} has {size} bytes, manifest implies {4 * w * h * n}")
    frames = np.fromfile(data_path, dtype="<f4").reshape(n, h, w)
    if len(m["angles_deg"]) not in (0, n):
        raise ConfigError("manifest angle list does not match the frame count")
    return StackFile(frames, m["pitch_um"], m["angles_deg"], m["exposure_s"], m["seed"],
                     m["kind"], m.get("extra", {}))


# --- CSV / PGM -----------------------------------------------------------------

def write_bucket_csv(path, values: np.ndarray, angles) -> None:
    """One row per frame: index, angle_deg, then the R*C bucket values row-major."""
    v = np.asarray(values, dtype=np.float64)
    v = v.reshape(v.shape[0], -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "angle_deg"] + [f"b{k}" for k in range(v.shape[1])])
        for j, row in enumerate(v):
            w.writerow([j, repr(float(angles[j]))] + [repr(float(x)) for x in row])


def read_bucket_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (values of shape (N, R*C), angles)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["index", "angle_deg"]:
        raise ConfigError(f"{path} is not a bucket CSV")
    body = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(rows[0]))
    return body[:, 2:], body[:, 1]


def write_residual_csv(path, history, initial=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "residual"])
        if initial is not None:
            w.writerow([0, repr(float(initial))])
        for k, r in enumerate(history, start=1):
            w.writerow([k, repr(float(r))])


def write_pgm(path, values: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    """16-bit binary PGM, linearly mapped from [lo, hi] (default min/max)."""
    v = np.asarray(values, dtype=np.float64)
    lo = float(v.min()) if lo is None else lo
    hi = float(v.max()) if hi is None else hi
    scaled = np.zeros_like(v) if hi <= lo else np.clip((v - lo) / (hi - lo), 0, 1)
    data = np.rint(scaled * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{v.shape[1]} {v.shape[0]}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ConfigError(f"{path} is not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dt = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[4], dtype=dt, count=w * h).reshape(h, w)


# --- experiment configuration ----------------------------------------------------

def _props(dc, types) -> dict:
    return {f.name: types.get(f.name, {"type": "number"}) for f in fields(dc)}


_MASK_TYPES = {"max_attempts": {"type": "integer", "minimum": 1}}
_BEAM_TYPES = {}
_RECON_TYPES = {
    "method": {"enum": ["xc", "ixc"]},
    "iterations": {"type": "integer", "minimum": 0},
    "step_size": {"oneOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
    "regularizer": {"enum": ["none", "gradient_sparsity", "smoothness"]},
    "nonnegativity": {"type": "boolean"},
    "absolute_level": {"type": "boolean"},
    "deblock": {"type": "boolean"},
    "deblock_mode": {"enum": ["in_loop", "post"]},
    "notch_halfwidth": {"type": "integer", "minimum": 1},
    "power_iterations": {"type": "integer", "minimum": 1},
}


def _section(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mask": _section(_props(MaskConfig, _MASK_TYPES)),
        "beam": _section(_props(BeamGeometry, _BEAM_TYPES)),
        "detector": _section({
            "width": {"type": "integer", "minimum": 1},
            "height": {"type": "integer", "minimum": 1},
            "pitch_um": {"type": "number", "exclusiveMinimum": 0},
            "bin": {"type": "integer", "minimum": 1},
        }),
        "angles": _section({
            "n": {"type": "integer", "minimum": 1},
            "step_deg": {"type": "number"},
            "start_deg": {"type": "number"},
        }),
        "exposure": _section({
            "speckle_s": {"type": "number", "exclusiveMinimum": 0},
            "bucket_s": {"type": "number", "exclusiveMinimum": 0},
        }),
        "noise": {"type": "boolean"},
        "phantom": _section({
            "kind": {"enum": ["cd_stencil", "resolution_star", "uniform"]},
            "params": {"type": "object"},
        }),
        "grid": _section({
            "rows": {"type": "integer", "minimum": 1},
            "cols": {"type": "integer", "minimum": 1},
            "zoom": {"type": "integer", "minimum": 1},
        }),
        "recon": _section(_props(ReconConfig, _RECON_TYPES)),
        "seed": {"type": "integer", "minimum": 0},
    },
}


DEFAULT_CONFIG = {
    "mask": asdict(MaskConfig()),
    "beam": asdict(BeamGeometry()),
    "detector": {"width": 64, "height": 64, "pitch_um": 51.4, "bin": 1},
    "angles": {"n": 256, "step_deg": 0.21, "start_deg": 0.0},
    "exposure": {"speckle_s": 40.0, "bucket_s": 5.0},
    "noise": True,
    "phantom": {"kind": "cd_stencil", "params": {"holes": [[1.0, [0.0, 0.0]]]}},
    "grid": {"rows": 1, "cols": 1, "zoom": 64},
    "recon": {k: v for k, v in asdict(ReconConfig()).items()},
    "seed": 0,
}


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; ``override`` wins. ``params`` dicts are replaced whole."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<top>"
        raise ConfigError(f"config error at {where}: {e.message}") from None
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file at ``path``, then ``overrides``; validated."""
    cfg = DEFAULT_CONFIG
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        validate_config(merge({}, user))
        cfg = merge(cfg, user)
    if overrides:
        cfg = merge(cfg, overrides)
    return validate_config(cfg)


def parse_override(text: str) -> dict:
    """``section.key=value`` (value parsed as JSON, else kept as a string)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def mask_config(cfg) -> MaskConfig:
    return MaskConfig(**cfg["mask"])


def beam_geometry(cfg) -> BeamGeometry:
    return BeamGeometry(**cfg["beam"])


def detector_of(cfg) -> Detector:
    d = cfg["detector"]
    return Detector(d["width"], d["height"], d["pitch_um"])


def recon_config(cfg) -> ReconConfig:
    return ReconConfig(**cfg["recon"])
