"""Matroid rank functions and matroid-rank-sum (MRS) valuations.

Two valuation representations are supported:

* :class:`MrsValuation` -- an explicit non-negative combination of rank
  functions of uniform, partition and graphic matroids;
* :class:`CoverageValuation` -- weighted points of a finite universe, with
  project ``j`` covering a subset ``A_j`` of them.

Both expose an exact bounded-lottery-value oracle.  Coverage valuations use
a closed form and work at any ``m``; general MRS valuations enumerate all
``2**m`` subsets and are therefore capped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import ClassVar, Iterable, Sequence

import numpy as np

from .exceptions import CapacityError, InputError
from .lottery import (
    ENUM_CAP,
    containment_probabilities,
    draw_distribution,
    mobius,
    popcounts,
)
from .validation import (
    check_marginals,
    check_random_state,
    check_subset,
    subset_to_mask,
)


class DisjointSet:
    """Union-find with path halving and union by size."""

    def __init__(self):
        self._parent = {}
        self._size = {}

    def find(self, a):
        parent = self._parent
        if a not in parent:
            parent[a] = a
            self._size[a] = 1
            return a
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a, b) -> bool:
        """Merge the sets of ``a`` and ``b``; False if already merged."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]
        return True


# ------------------------------------------------------------------ matroids


def _masks(m: int) -> np.ndarray:
    return np.arange(1 << m, dtype=np.int64)


@dataclass(frozen=True)
class UniformMatroid:
    ground_size: int
    rank_cap: int
    kind: ClassVar[str] = "uniform"

    def __post_init__(self):
        if not 0 <= self.rank_cap <= self.ground_size:
            raise InputError(
                f"uniform matroid rank {self.rank_cap} outside [0, {self.ground_size}]"
            )

    def rank(self, S: frozenset) -> int:
        return min(len(S), self.rank_cap)

    def rank_table(self) -> np.ndarray:
        return np.minimum(popcounts(self.ground_size), self.rank_cap)


@dataclass(frozen=True)
class PartitionMatroid:
    ground_size: int
    blocks: tuple
    caps: tuple
    kind: ClassVar[str] = "partition"

    def __post_init__(self):
        blocks = tuple(frozenset(int(j) for j in b) for b in self.blocks)
        caps = tuple(int(c) for c in self.caps)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "caps", caps)
        if len(blocks) != len(caps):
            raise InputError("partition matroid needs one capacity per block")
        if any(c < 0 for c in caps):
            raise InputError("partition matroid capacities must be >= 0")
        seen = [j for b in blocks for j in b]
        if sorted(seen) != list(range(self.ground_size)):
            raise InputError(f"partition blocks must partition [0, {self.ground_size})")

    def rank(self, S: frozenset) -> int:
        return sum(min(len(S & b), c) for b, c in zip(self.blocks, self.caps))

    def rank_table(self) -> np.ndarray:
        masks = _masks(self.ground_size)
        out = np.zeros(masks.shape[0], dtype=np.int64)
        for b, c in zip(self.blocks, self.caps):
            out += np.minimum(np.bitwise_count(masks & subset_to_mask(b)), c)
        return out


@dataclass(frozen=True)
class GraphicMatroid:
    """Cycle matroid of a multigraph; project ``j`` is edge ``edges[j]``."""

    edges: tuple
    kind: ClassVar[str] = "graphic"

    def __post_init__(self):
        edges = []
        for e in self.edges:
            try:
                u, v = e
                u, v = int(u), int(v)
            except (TypeError, ValueError) as exc:
                raise InputError(f"graphic matroid edge {e!r} is not a vertex pair") from exc
            if u < 0 or v < 0:
                raise InputError(f"graphic matroid edge {e!r} has a negative vertex id")
            edges.append((u, v))
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def ground_size(self) -> int:
        return len(self.edges)

    def rank(self, S: frozenset) -> int:
        # size of a spanning forest of the edges in S
        ds = DisjointSet()
        return sum(ds.union(*self.edges[j]) for j in S)

    def rank_table(self) -> np.ndarray:
        m = self.ground_size
        out = np.zeros(1 << m, dtype=np.int64)
        for mask in range(1, 1 << m):
            ds = DisjointSet()
            r, j, rest = 0, 0, mask
            while rest:
                if rest & 1:
                    r += ds.union(*self.edges[j])
                rest >>= 1
                j += 1
            out[mask] = r
        return out


Matroid = UniformMatroid | PartitionMatroid | GraphicMatroid


def rank(matroid: Matroid, S: Iterable[int]) -> int:
    """Rank of ``S`` in ``matroid`` (size of a largest independent subset)."""
    return matroid.rank(check_subset(S, matroid.ground_size))


# ---------------------------------------------------------------- valuations


@dataclass(frozen=True)
class LotterySpec:
    """The k-bounded lottery: ``draws`` draws from ``marginals`` plus ``promise``."""

    marginals: np.ndarray
    draws: int
    promise: frozenset = frozenset()

    def __post_init__(self):
        y = check_marginals(self.marginals)
        y.setflags(write=False)
        object.__setattr__(self, "marginals", y)
        if int(self.draws) < 0:
            raise InputError(f"draw count must be >= 0, got {self.draws}")
        object.__setattr__(self, "draws", int(self.draws))
        object.__setattr__(self, "promise", check_subset(self.promise, y.shape[0], "promise"))

    @property
    def m(self) -> int:
        return self.marginals.shape[0]


class Valuation:
    """Common interface of the two MRS representations."""

    m: int

    def value(self, S: Iterable[int]) -> float:
        return self._value(check_subset(S, self.m))

    def value_mask(self, mask: int) -> float:
        return self._value(frozenset(j for j in range(self.m) if mask >> j & 1))

    def table(self, cap: int | None = None) -> np.ndarray:
        """Values of every subset, indexed by bitmask."""
        cap = ENUM_CAP if cap is None else cap
        if self.m > cap:
            raise CapacityError(
                f"value table over 2**{self.m} subsets exceeds the cap m <= {cap}"
            )
        return self._table

    @cached_property
    def grand_value(self) -> float:
        """``v([m])``, an upper bound on any lottery value."""
        return self._value(frozenset(range(self.m)))

    @cached_property
    def singleton_values(self) -> np.ndarray:
        return np.array([self._value(frozenset([j])) for j in range(self.m)])

    def lottery_value(self, spec: LotterySpec, cap: int | None = None) -> float:
        if spec.m != self.m:
            raise InputError(f"lottery over {spec.m} projects, valuation has {self.m}")
        return self._lottery_value(spec.marginals, spec.draws, spec.promise, cap)

    def lottery_gains(self, y: np.ndarray, draws: int, cap: int | None = None) -> np.ndarray:
        """Vector of ``L({j}) - L(empty)`` over the lottery ``(y, draws)``.

        ``L(R)`` is the lottery value with promise ``R``.  Equivalent to
        ``2*m`` oracle calls, batched.
        """
        raise NotImplementedError

    @property
    def is_zero(self) -> bool:
        raise NotImplementedError

    def expected_polynomial(self, y: np.ndarray, draws: int, cap: int | None = None) -> float:
        """The lottery value as a polynomial in ``y``, with no clamping.

        Agrees with :meth:`lottery_value` on valid marginals and extends it
        smoothly past the boundary, which finite-difference checks need.
        """
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class MrsValuation(Valuation):
    """``v(S) = sum_l w_l * rank_l(S)`` with ``w_l >= 0``.

    An empty term list is the zero valuation.
    """

    m: int
    terms: tuple = ()
    cap: int | None = field(default=None, compare=False)

    def __post_init__(self):
        terms = []
        for idx, term in enumerate(self.terms):
            w, matroid = term
            w = float(w)
            if not math.isfinite(w) or w < 0:
                raise InputError(f"terms[{idx}].weight must be finite and >= 0, got {w!r}")
            if matroid.ground_size != self.m:
                raise InputError(
                    f"terms[{idx}].matroid has ground size {matroid.ground_size}, expected {self.m}"
                )
            terms.append((w, matroid))
        object.__setattr__(self, "terms", tuple(terms))

    def _value(self, S: frozenset) -> float:
        return math.fsum(w * mat.rank(S) for w, mat in self.terms)

    @cached_property
    def _table(self) -> np.ndarray:
        out = np.zeros(1 << self.m)
        for w, mat in self.terms:
            out += w * mat.rank_table()
        return out

    @property
    def is_zero(self) -> bool:
        return all(w == 0 for w, _ in self.terms)

    def _lottery_value(self, y, draws, promise, cap) -> float:
        if self.is_zero:
            return 0.0
        self._enum_guard(cap)
        table = self.table(cap)
        probs = draw_distribution(y, draws, cap)
        rmask = subset_to_mask(promise)
        return math.fsum(probs * table[_masks(self.m) | rmask])

    def lottery_gains(self, y, draws, cap=None) -> np.ndarray:
        if self.is_zero:
            return np.zeros(self.m)
        self._enum_guard(cap)
        table = self.table(cap)
        probs = draw_distribution(np.asarray(y, dtype=float), draws, cap)
        masks = _masks(self.m)
        return np.array(
            [math.fsum(probs * (table[masks | (1 << j)] - table)) for j in range(self.m)]
        )

    def expected_polynomial(self, y, draws, cap=None) -> float:
        self._enum_guard(cap)
        probs = mobius(containment_probabilities(np.asarray(y, dtype=float), draws, clip=False))
        return math.fsum(probs * self.table(cap))

    def _enum_guard(self, cap):
        cap = ENUM_CAP if cap is None else cap
        if self.m > cap:
            raise CapacityError(
                f"exact lottery value for a general MRS valuation enumerates 2**{self.m} "
                f"subsets (cap m <= {cap}); use a coverage representation or "
                "lottery_value_mc"
            )

    def scaled(self, c: float) -> "MrsValuation":
        return MrsValuation(self.m, tuple((c * w, mat) for w, mat in self.terms))


@dataclass(frozen=True, eq=False)
class CoverageValuation(Valuation):
    """Weighted coverage: value of ``S`` is the weight of ``union(A_j, j in S)``.

    ``sets[j]`` holds indices into ``weights`` (the universe points).
    """

    m: int
    weights: np.ndarray
    sets: tuple
    point_ids: tuple | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)) or (w.size and w.min() < 0):
            raise InputError("coverage point weights must be finite and >= 0")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if len(self.sets) != self.m:
            raise InputError(f"coverage valuation needs {self.m} project sets, got {len(self.sets)}")
        sets = tuple(check_subset(s, w.shape[0], f"sets[{j}]") for j, s in enumerate(self.sets))
        object.__setattr__(self, "sets", sets)
        if self.point_ids is None:
            object.__setattr__(self, "point_ids", tuple(f"p{i}" for i in range(w.shape[0])))

    @cached_property
    def incidence(self) -> np.ndarray:
        """Boolean matrix, points x projects."""
        B = np.zeros((self.weights.shape[0], self.m), dtype=bool)
        for j, s in enumerate(self.sets):
            B[list(s), j] = True
        return B

    def _value(self, S: frozenset) -> float:
        if not S:
            return 0.0
        covered = self.incidence[:, sorted(S)].any(axis=1)
        return math.fsum(self.weights[covered])

    @cached_property
    def _table(self) -> np.ndarray:
        point_masks = self.incidence.astype(np.int64) @ (1 << np.arange(self.m, dtype=np.int64))
        masks = _masks(self.m)
        out = np.zeros(masks.shape[0])
        for w, pm in zip(self.weights, point_masks):
            out += w * ((masks & pm) != 0)
        return out

    @property
    def is_zero(self) -> bool:
        return not np.any(self.weights[self.incidence.any(axis=1)] > 0)

    def _miss_probability(self, y, draws) -> np.ndarray:
        y_cover = self.incidence.astype(float) @ y
        return np.clip(1.0 - y_cover, 0.0, 1.0) ** draws

    def _lottery_value(self, y, draws, promise, cap) -> float:
        covered = 1.0 - self._miss_probability(y, draws)
        if promise:
            covered = np.where(self.incidence[:, sorted(promise)].any(axis=1), 1.0, covered)
        return math.fsum(self.weights * covered)

    def lottery_gains(self, y, draws, cap=None) -> np.ndarray:
        # A promised j covers its points surely; otherwise they stay uncovered
        # with the miss probability of the draws.
        miss = self._miss_probability(np.asarray(y, dtype=float), draws)
        return self.incidence.T.astype(float) @ (self.weights * miss)

    def expected_polynomial(self, y, draws, cap=None) -> float:
        y_cover = self.incidence.astype(float) @ np.asarray(y, dtype=float)
        return math.fsum(self.weights * (1.0 - (1.0 - y_cover) ** draws))

    def as_mrs(self) -> MrsValuation:
        """The same function as a sum of rank-1 partition matroids."""
        terms = []
        everything = frozenset(range(self.m))
        for w, s in zip(self.weights, self.projects_covering()):
            rest = everything - s
            blocks, caps = ([s], [1]) if s else ([], [])
            if rest:
                blocks.append(rest)
                caps.append(0)
            terms.append((float(w), PartitionMatroid(self.m, tuple(blocks), tuple(caps))))
        return MrsValuation(self.m, tuple(terms))

    def projects_covering(self) -> list[frozenset]:
        """``T_p`` for every point ``p``: the projects that cover it."""
        return [frozenset(np.flatnonzero(row).tolist()) for row in self.incidence]

    def scaled(self, c: float) -> "CoverageValuation":
        return CoverageValuation(self.m, c * self.weights, self.sets, self.point_ids)


def zero_valuation(m: int) -> MrsValuation:
    return MrsValuation(m, ())


def value(v: Valuation, S: Iterable[int]) -> float:
    """``v(S)``."""
    return v.value(S)


def lottery_value(v: Valuation, spec: LotterySpec, cap: int | None = None) -> float:
    """Exact expectation of ``v`` over the k-bounded lottery ``spec``."""
    return v.lottery_value(spec, cap)


def lottery_value_mc(v: Valuation, spec: LotterySpec, samples: int, seed=None):
    """Monte Carlo estimate of :func:`lottery_value` and its standard error."""
    if samples < 1:
        raise InputError(f"samples must be >= 1, got {samples}")
    rng = check_random_state(seed)
    m = spec.m
    masks = np.full(samples, subset_to_mask(spec.promise), dtype=np.int64)
    edges = np.cumsum(spec.marginals)
    for _ in range(spec.draws):
        idx = np.searchsorted(edges, rng.random(samples), side="right")
        masks |= np.where(idx < m, np.left_shift(1, np.minimum(idx, 62)), 0)
    uniq, inverse = np.unique(masks, return_inverse=True)
    vals = np.array([v.value_mask(int(u)) for u in uniq])[inverse]
    est = float(vals.mean())
    err = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return est, err


# --------------------------------------------------------------------- JSON


def _field_error(path: str, msg: str) -> InputError:
    return InputError(f"{path}: {msg}")


def _number(obj, path: str, nonneg: bool = True) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise _field_error(path, f"expected a number, got {obj!r}")
    val = float(obj)
    if not math.isfinite(val):
        raise _field_error(path, "must be finite")
    if nonneg and val < 0:
        raise _field_error(path, f"must be >= 0, got {val!r}")
    return val


def _project(label, m: int, path: str) -> int:
    try:
        j = int(label)
    except (TypeError, ValueError) as exc:
        raise _field_error(path, f"project label {label!r} is not an integer") from exc
    if not 1 <= j <= m:
        raise _field_error(path, f"project {j} outside 1..{m}")
    return j - 1


def matroid_from_json(obj: dict, m: int, path: str = "matroid") -> Matroid:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise _field_error(path, "expected an object with a 'kind'")
    kind = obj["kind"]
    try:
        if kind == "uniform":
            r = obj.get("rank")
            if isinstance(r, bool) or not isinstance(r, int):
                raise _field_error(f"{path}.rank", f"expected an integer, got {r!r}")
            return UniformMatroid(m, r)
        if kind == "partition":
            blocks = [
                [_project(j, m, f"{path}.blocks[{b}]") for j in block]
                for b, block in enumerate(obj["blocks"])
            ]
            return PartitionMatroid(m, tuple(blocks), tuple(obj["caps"]))
        if kind == "graphic":
            mat = GraphicMatroid(tuple(tuple(e) for e in obj["edges"]))
            if mat.ground_size != m:
                raise _field_error(f"{path}.edges", f"needs exactly {m} edges, got {mat.ground_size}")
            return mat
    except KeyError as exc:
        raise _field_error(path, f"missing field {exc.args[0]!r}") from exc
    except InputError as exc:
        if str(exc).startswith(path):
            raise
        raise _field_error(path, str(exc)) from exc
    raise _field_error(f"{path}.kind", f"unknown matroid kind {kind!r}")


def matroid_to_json(mat: Matroid) -> dict:
    if isinstance(mat, UniformMatroid):
        return {"kind": "uniform", "rank": mat.rank_cap}
    if isinstance(mat, PartitionMatroid):
        return {
            "kind": "partition",
            "blocks": [sorted(j + 1 for j in b) for b in mat.blocks],
            "caps": list(mat.caps),
        }
    return {"kind": "graphic", "edges": [list(e) for e in mat.edges]}


def valuation_from_json(obj: dict, m: int, path: str = "valuation") -> Valuation:
    """Parse the valuation schema; project labels are 1-based."""
    if not isinstance(obj, dict):
        raise _field_error(path, "expected an object")
    kind = obj.get("type")
    if kind == "coverage":
        universe = obj.get("universe")
        if not isinstance(universe, list):
            raise _field_error(f"{path}.universe", "expected a list of points")
        ids, weights = [], []
        for p, point in enumerate(universe):
            if not isinstance(point, dict) or "id" not in point:
                raise _field_error(f"{path}.universe[{p}]", "expected {'id', 'weight'}")
            ids.append(str(point["id"]))
            weights.append(_number(point.get("weight"), f"{path}.universe[{p}].weight"))
        if len(set(ids)) != len(ids):
            raise _field_error(f"{path}.universe", "duplicate point ids")
        index = {pid: p for p, pid in enumerate(ids)}
        sets = [set() for _ in range(m)]
        raw = obj.get("sets", {})
        if not isinstance(raw, dict):
            raise _field_error(f"{path}.sets", "expected an object keyed by project")
        for label, members in raw.items():
            j = _project(label, m, f"{path}.sets")
            for pid in members:
                if str(pid) not in index:
                    raise _field_error(f"{path}.sets[{label}]", f"unknown point id {pid!r}")
                sets[j].add(index[str(pid)])
        return CoverageValuation(m, np.array(weights), tuple(sets), tuple(ids))
    if kind == "mrs":
        terms = obj.get("terms")
        if not isinstance(terms, list):
            raise _field_error(f"{path}.terms", "expected a list")
        parsed = []
        for t, term in enumerate(terms):
            if not isinstance(term, dict):
                raise _field_error(f"{path}.terms[{t}]", "expected an object")
            w = _number(term.get("weight"), f"{path}.terms[{t}].weight")
            parsed.append((w, matroid_from_json(term.get("matroid"), m, f"{path}.terms[{t}].matroid")))
        return MrsValuation(m, tuple(parsed))
    raise _field_error(f"{path}.type", f"expected 'coverage' or 'mrs', got {kind!r}")


def valuation_to_json(v: Valuation) -> dict:
    if isinstance(v, CoverageValuation):
        return {
            "type": "coverage",
            "universe": [
                {"id": pid, "weight": float(w)} for pid, w in zip(v.point_ids, v.weights)
            ],
            "sets": {
                str(j + 1): [v.point_ids[p] for p in sorted(s)]
                for j, s in enumerate(v.sets)
                if s
            },
        }
    return {
        "type": "mrs",
        "terms": [{"weight": w, "matroid": matroid_to_json(mat)} for w, mat in v.terms],
    }


def additive_valuation(weights: Sequence[float]) -> CoverageValuation:
    """Modular valuation ``v(S) = sum(weights[S])`` as a coverage function."""
    m = len(weights)
    return CoverageValuation(m, np.asarray(weights, dtype=float), tuple({j} for j in range(m)))
