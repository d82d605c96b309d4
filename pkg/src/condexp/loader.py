"""JSON documents describing spaces, schedules and Gaussian setups.

Space document::

    {"schema": "1", "weights": [...],
     "fields": {"G1": [[0, 1], [2, 3]], ...},
     "rvs": {"X": [1.0, 2.0, ...], ...}}

All problems raise :class:`ConfigError` naming the offending key and, where
relevant, the atom or block coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import Schedule, ScheduleError
from .prob_space import ProbSpace, RandomVar, SigmaField, SpaceError

SCHEMA = "1"


class ConfigError(ValueError):
    pass


def read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    check_schema(doc, str(path))
    return doc


def check_schema(doc: dict, where: str = "document"):
    s = doc.get("schema", SCHEMA)
    if str(s) != SCHEMA:
        raise ConfigError(f"{where}: unsupported schema {s!r} (expected {SCHEMA!r})")


def _number_list(v, where) -> list[float]:
    if not isinstance(v, list):
        raise ConfigError(f"{where} must be a list of numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{where}[{i}] = {x!r} is not a number")
        if not math.isfinite(x):
            raise ConfigError(f"{where}[{i}] is not finite")
        out.append(float(x))
    return out


def parse_weights(doc: dict) -> ProbSpace:
    if "weights" not in doc:
        raise ConfigError("missing key 'weights'")
    try:
        return ProbSpace(_number_list(doc["weights"], "weights"))
    except SpaceError as e:
        raise ConfigError(str(e)) from None


def parse_field(blocks, n: int, where: str) -> SigmaField:
    if not isinstance(blocks, list):
        raise ConfigError(f"{where} must be a list of blocks")
    for bi, b in enumerate(blocks):
        if not isinstance(b, list):
            raise ConfigError(f"{where} block {bi} must be a list of atom indices")
        for j, a in enumerate(b):
            if isinstance(a, bool) or not isinstance(a, int):
                raise ConfigError(f"{where} block {bi} entry {j} = {a!r} is not an integer")
            if not 0 <= a < n:
                raise ConfigError(f"{where} block {bi}: atom {a} outside 0..{n - 1}")
    try:
        G = SigmaField(blocks)
    except SpaceError as e:
        raise ConfigError(f"{where}: {e}") from None
    if G.atom_count != n:
        raise ConfigError(f"{where}: atom {G.atom_count} is not covered by any block")
    return G


def quantize(values: np.ndarray, digits: int | None) -> np.ndarray:
    """Round to ``digits`` decimals so nearly equal values share a level set."""
    if digits is None:
        return values
    out = np.round(values, digits)
    return out + 0.0  # fold -0.0 into 0.0


@dataclass
class SpaceDoc:
    space: ProbSpace | None
    fields: dict[str, SigmaField] = field(default_factory=dict)
    rvs: dict[str, np.ndarray] = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def field(self, name: str) -> SigmaField:
        if name not in self.fields:
            raise ConfigError(f"unknown field {name!r} (known: {', '.join(self.fields) or 'none'})")
        return self.fields[name]

    def rv(self, name: str, space: ProbSpace | None = None) -> RandomVar:
        if name not in self.rvs:
            raise ConfigError(
                f"unknown random variable {name!r} (known: {', '.join(self.rvs) or 'none'})")
        return RandomVar(self.rvs[name], space or self.space)


def load_space(doc: dict, *, local_atoms: int | None = None, digits: int | None = None) -> SpaceDoc:
    """Validate a space document.

    ``local_atoms`` validates fields and random variables against that many
    atoms instead of the weights' length (used for objects declared over C).
    """
    space = parse_weights(doc)
    n = space.atom_count if local_atoms is None else local_atoms
    fields_raw = doc.get("fields", {})
    rvs_raw = doc.get("rvs", {})
    if not isinstance(fields_raw, dict):
        raise ConfigError("'fields' must be an object mapping names to block lists")
    if not isinstance(rvs_raw, dict):
        raise ConfigError("'rvs' must be an object mapping names to value lists")
    fields = {k: parse_field(v, n, f"fields.{k}") for k, v in fields_raw.items()}
    rvs = {}
    for k, v in rvs_raw.items():
        vals = _number_list(v, f"rvs.{k}")
        if len(vals) != n:
            raise ConfigError(f"rvs.{k} has {len(vals)} values, expected {n}")
        rvs[k] = quantize(np.array(vals), digits)
    return SpaceDoc(space, fields, rvs, doc)


def space_to_doc(space: ProbSpace, fields: dict, rvs: dict) -> dict:
    return {
        "schema": SCHEMA,
        "weights": space.weights.tolist(),
        "fields": {k: [list(b) for b in g.blocks] for k, g in fields.items()},
        "rvs": {k: (v.values if isinstance(v, RandomVar) else np.asarray(v)).tolist()
                for k, v in rvs.items()},
    }


def parse_schedule(cfg, K: int) -> Schedule:
    if not isinstance(cfg, dict):
        raise ConfigError("'schedule' must be an object with a 'kind'")
    kind = cfg.get("kind")
    try:
        if kind == "periodic":
            if "pattern" not in cfg:
                raise ConfigError("schedule.pattern is required for periodic schedules")
            return Schedule.periodic(cfg["pattern"], K)
        if kind == "alternating":
            return Schedule.alternating(K)
        if kind == "explicit":
            if "sequence" not in cfg:
                raise ConfigError("schedule.sequence is required for explicit schedules")
            return Schedule.explicit(cfg["sequence"], K)
        if kind == "random":
            if cfg.get("seed") is None:
                raise ConfigError("schedule.seed is required for random schedules")
            dist = cfg.get("distribution", "uniform")
            return Schedule.random(K, int(cfg["seed"]), dist if isinstance(dist, str) else tuple(dist))
    except ScheduleError as e:
        raise ConfigError(f"schedule: {e}") from None
    raise ConfigError(f"schedule.kind must be periodic, alternating, explicit or random, got {kind!r}")


def require(doc: dict, key: str, kind=None):
    if key not in doc:
        raise ConfigError(f"missing key {key!r}")
    v = doc[key]
    if kind is not None:
        wrong = not isinstance(v, kind) or (kind is int and isinstance(v, bool))
        if wrong:
            raise ConfigError(f"key {key!r} must be of type {kind.__name__}, got {type(v).__name__}")
    return v
