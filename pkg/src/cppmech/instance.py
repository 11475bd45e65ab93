"""Problem instances and their JSON form.

Instance JSON::

    {"n": 2, "m": 3, "k": 1, "players": [<valuation>, <valuation>]}

Project labels in JSON are 1-based; the Python API is 0-based throughout.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

from .exceptions import InputError
from .valuations import (
    Valuation,
    valuation_from_json,
    valuation_to_json,
    zero_valuation,
)


@dataclass(frozen=True, eq=False)
class Instance:
    n: int
    m: int
    k: int
    valuations: tuple

    def __post_init__(self):
        vals = tuple(self.valuations)
        object.__setattr__(self, "valuations", vals)
        if self.n < 1:
            raise InputError(f"n must be >= 1, got {self.n}")
        if len(vals) != self.n:
            raise InputError(f"expected {self.n} valuations, got {len(vals)}")
        if not 1 <= self.k <= self.m:
            raise InputError(f"k must satisfy 1 <= k <= m={self.m}, got {self.k}")
        for i, v in enumerate(vals):
            if v.m != self.m:
                raise InputError(f"players[{i}] is defined over {v.m} projects, expected {self.m}")

    @classmethod
    def from_valuations(cls, valuations: Sequence[Valuation], k: int) -> "Instance":
        valuations = tuple(valuations)
        if not valuations:
            raise InputError("at least one valuation is required")
        return cls(len(valuations), valuations[0].m, k, valuations)

    @property
    def f_upper(self) -> float:
        return math.fsum(v.grand_value for v in self.valuations)

    def welfare(self, S) -> float:
        return math.fsum(v.value(S) for v in self.valuations)

    def replace_valuation(self, i: int, v: Valuation) -> "Instance":
        vals = list(self.valuations)
        vals[i] = v
        return Instance(self.n, self.m, self.k, tuple(vals))

    def without_player(self, i: int) -> "Instance":
        """Same instance with player ``i`` reporting the zero valuation."""
        return self.replace_valuation(i, zero_valuation(self.m))

    def with_k(self, k: int) -> "Instance":
        return Instance(self.n, self.m, k, self.valuations)

    def scaled(self, c: float) -> "Instance":
        return Instance(self.n, self.m, self.k, tuple(v.scaled(c) for v in self.valuations))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "k": self.k,
            "players": [valuation_to_json(v) for v in self.valuations],
        }


def _int_field(obj: dict, name: str) -> int:
    val = obj.get(name)
    if isinstance(val, bool) or not isinstance(val, int):
        raise InputError(f"{name}: expected an integer, got {val!r}")
    return val


def instance_from_json(obj) -> Instance:
    if not isinstance(obj, dict):
        raise InputError("instance: expected a JSON object")
    n, m, k = (_int_field(obj, f) for f in ("n", "m", "k"))
    if m < 1:
        raise InputError(f"m: must be >= 1, got {m}")
    players = obj.get("players")
    if not isinstance(players, list):
        raise InputError("players: expected a list of valuations")
    if len(players) != n:
        raise InputError(f"players: expected {n} entries, got {len(players)}")
    vals = tuple(valuation_from_json(p, m, f"players[{i}]") for i, p in enumerate(players))
    return Instance(n, m, k, vals)


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip float repr."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def load_instance(path) -> Instance:
    """Read an instance file; JSON syntax errors carry line and column."""
    with open(path) as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return instance_from_json(obj)
