"""Two-stage aggregation of model scores and the score-to-set decision rule.

Stage one blends each group of models with a logistic model over their
scores; stage two takes a fixed nonnegative combination of the blended
group scores.  A pair is predicted when its final score reaches a
threshold, optionally keeping only each user's ``k`` best brands.
"""
from __future__ import annotations

import json
import os
from collections.abc import Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from .instances import InstanceSet
from .sharding import ordered_map, shard_of, user_hash

# -- prediction sets -----------------------------------------------------------


class PredictionSet(Mapping):
    """Immutable ``user -> frozenset(brands)``; users with no brands are dropped."""

    def __init__(self, pairs: Mapping | None = None):
        self._d = {}
        for u, bs in (pairs or {}).items():
            bs = frozenset(int(b) for b in bs)
            if bs:
                self._d[int(u)] = bs

    @classmethod
    def from_arrays(cls, user, brand) -> "PredictionSet":
        out: dict[int, set[int]] = {}
        for u, b in zip(np.asarray(user).tolist(), np.asarray(brand).tolist()):
            out.setdefault(u, set()).add(b)
        return cls(out)

    def __getitem__(self, u):
        return self._d[u]

    def __iter__(self):
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def __eq__(self, other) -> bool:
        if isinstance(other, Mapping):
            return dict(self._d) == {int(u): frozenset(b) for u, b in other.items() if b}
        return NotImplemented

    def __repr__(self) -> str:
        return f"PredictionSet({len(self)} users, {self.n_pairs} pairs)"

    @property
    def n_pairs(self) -> int:
        return sum(len(b) for b in self._d.values())

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Pairs as (user, brand) arrays in ascending order."""
        rows = [(u, b) for u in sorted(self._d) for b in sorted(self._d[u])]
        arr = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]

    def to_text(self) -> str:
        return "".join(
            f"{u}\t{','.join(str(b) for b in sorted(self._d[u]))}\n" for u in sorted(self._d)
        )

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "PredictionSet":
        out: dict[int, set[int]] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 2:
                    raise ValueError("expected 'user<TAB>brand,brand,...'")
                u = int(parts[0])
                brands = [int(b) for b in parts[1].split(",")]
            except ValueError as exc:
                raise ValueError(f"{source}:{lineno}: {exc}") from None
            if u in out:
                raise ValueError(f"{source}:{lineno}: user {u} listed twice")
            out[u] = set(brands)
        return cls(out)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PredictionSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), str(path))


AnswerSet = PredictionSet


def _membership(user, brand, answer: Mapping) -> np.ndarray:
    """Whether each (user, brand) is in ``answer``."""
    user = np.asarray(user, dtype=np.int64)
    brand = np.asarray(brand, dtype=np.int64)
    au, ab = PredictionSet(answer).arrays()
    if len(au) == 0 or len(user) == 0:
        return np.zeros(len(user), dtype=bool)
    users = np.unique(np.concatenate([user, au]))
    brands = np.unique(np.concatenate([brand, ab]))
    nb = len(brands)
    key = np.searchsorted(users, user) * nb + np.searchsorted(brands, brand)
    akey = np.searchsorted(users, au) * nb + np.searchsorted(brands, ab)
    return np.isin(key, akey)


# -- groups and score matrix -----------------------------------------------------


@dataclass(frozen=True)
class ModelGroup:
    name: str
    members: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError(f"model group {self.name!r} is empty")


def _scheme_of(name: str) -> str:
    return name.split("_", 1)[1] if "_" in name else "global"


def default_groups(model_names) -> list[ModelGroup]:
    """One group per time-span scheme; untrained scorers form their own group."""
    groups: dict[str, list[str]] = {}
    for name in model_names:
        groups.setdefault(_scheme_of(name), []).append(name)
    return [ModelGroup(g, tuple(m)) for g, m in groups.items()]


def check_groups(groups, model_names) -> None:
    """Groups must be non-empty and partition ``model_names``."""
    seen: list[str] = []
    for g in groups:
        if not g.members:
            raise ValueError(f"model group {g.name!r} is empty")
        seen.extend(g.members)
    dup = sorted({m for m in seen if seen.count(m) > 1})
    if dup:
        raise ValueError(f"models {dup} appear in more than one group")
    missing = sorted(set(model_names) - set(seen))
    extra = sorted(set(seen) - set(model_names))
    if missing or extra:
        raise ValueError(f"groups do not partition the models: missing {missing}, unknown {extra}")


def score_matrix(models, instances: InstanceSet, log=None, shards: int = 1) -> np.ndarray:
    """One column of scores per model, in the given model order.

    Scoring runs per user-hash shard; rows keep the order of ``instances``.
    """
    for m in models:
        m._check_schema(instances)
    n = len(instances)
    out = np.zeros((n, len(models)))
    if n == 0 or not models:
        return out
    shards = max(int(shards), 1)
    part = shard_of(instances.user, shards)
    idx = [np.flatnonzero(part == s) for s in range(shards)]

    def run(rows):
        sub = instances.take(rows)
        return np.stack([m.score(sub, log) for m in models], axis=1) if len(rows) else None

    for rows, block in zip(idx, ordered_map(run, idx, shards)):
        if block is not None:
            out[rows] = block
    return out


# -- stage one: logistic blending ---------------------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _rowdot(M, w) -> np.ndarray:
    """``M @ w`` computed row by row, independent of the other rows present."""
    M = np.asarray(M, dtype=np.float64)
    return (M * np.asarray(w, dtype=np.float64)).sum(axis=1) if M.size else np.zeros(len(M))


def _logistic_newton(Z, y, l2, tol=1e-10, max_iter=100):
    """Minimize mean log-loss + l2/2 |w|^2 (bias unpenalized) by damped Newton."""
    n, d = Z.shape
    A = np.hstack([Z, np.ones((n, 1))])
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0
    theta = np.zeros(d + 1)
    p0 = np.clip(y.mean(), 1e-12, 1 - 1e-12)
    theta[-1] = np.log(p0 / (1 - p0))

    def loss(t):
        z = A @ t
        return np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * (reg * t) @ t

    cur = loss(theta)
    for _ in range(max_iter):
        p = _sigmoid(A @ theta)
        g = A.T @ (p - y) / n + reg * theta
        if np.max(np.abs(g)) < tol:
            break
        H = (A * (p * (1 - p))[:, None]).T @ A / n + np.diag(reg)
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(d + 1), g)
        except np.linalg.LinAlgError:
            step = g
        t = 1.0
        while t > 1e-12:
            cand = theta - t * step
            new = loss(cand)
            if new <= cur:
                break
            t *= 0.5
        else:
            break
        theta, cur = cand, new
    return theta[:-1], float(theta[-1])


# monotone input maps applied to a member's scores before blending
TRANSFORMS = {
    "identity": lambda x: x,
    # unbounded nonnegative scores (the global scorer): keeps the logistic
    # blend from saturating into ties
    "log1p": lambda x: np.log1p(np.maximum(x, 0.0)),
    # probability-like scores on the log-odds scale, clipped away from 0 and 1
    "logit": lambda x: np.log(np.clip(x, 1e-4, 1 - 1e-4)) - np.log1p(-np.clip(x, 1e-4, 1 - 1e-4)),
}


def _inputs(matrix, columns, members, transforms) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    columns = list(columns)
    return np.stack([TRANSFORMS[t](matrix[:, columns.index(m)]) for m, t in zip(members, transforms)],
                    axis=1).reshape(len(matrix), len(members))


@dataclass
class BlendModel:
    """Logistic model over one group's (transformed) score columns."""

    group: str
    members: tuple[str, ...]
    weights: np.ndarray
    bias: float
    transforms: tuple[str, ...] | None = None

    def __post_init__(self):
        self.members = tuple(self.members)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.transforms is None:
            self.transforms = ("identity",) * len(self.members)
        self.transforms = tuple(self.transforms)
        if len(self.weights) != len(self.members) or len(self.transforms) != len(self.members):
            raise ValueError(f"blend {self.group!r}: {len(self.weights)} weights for {len(self.members)} models")
        unknown = set(self.transforms) - set(TRANSFORMS)
        if unknown:
            raise ValueError(f"blend {self.group!r}: unknown transforms {sorted(unknown)}")

    def predict(self, matrix: np.ndarray, columns) -> np.ndarray:
        return _sigmoid(_rowdot(_inputs(matrix, columns, self.members, self.transforms), self.weights) + self.bias)

    def to_dict(self) -> dict:
        return {"group": self.group, "members": list(self.members), "transforms": list(self.transforms),
                "weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_dict(cls, d: dict) -> "BlendModel":
        return cls(d["group"], tuple(d["members"]), d["weights"], float(d["bias"]),
                   tuple(d.get("transforms") or ()) or None)


def blend_fit(matrix: np.ndarray, labels, groups, columns, l2: float = 1e-6,
              transforms: Mapping | None = None) -> list[BlendModel]:
    """Fit one logistic blend per group on held-out labels.

    ``transforms`` maps a model name to a key of :data:`TRANSFORMS` (default
    identity).  Columns are standardized for the fit; returned weights act on
    the transformed scores.
    """
    transforms = dict(transforms or {})
    matrix = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    columns = list(columns)
    out = []
    for g in groups:
        if len(y) == 0 or y.min() == y.max():
            cls = "no" if len(y) == 0 else f"all {int(y[0]) if len(y) else ''}"
            raise ValueError(f"cannot blend group {g.name!r}: held-out labels are {cls} (need both classes)")
        tr = tuple(transforms.get(m, "identity") for m in g.members)
        M = _inputs(matrix, columns, g.members, tr)
        mu = M.mean(axis=0)
        sd = M.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        w, b = _logistic_newton((M - mu) / sd, y, l2)
        out.append(BlendModel(g.name, g.members, w / sd, b - float((w / sd) @ mu), tr))
    return out


def blend_scores(blends, matrix, columns) -> np.ndarray:
    """Matrix of blended group scores, one column per blend."""
    if not blends:
        return np.zeros((len(matrix), 0))
    return np.stack([b.predict(matrix, columns) for b in blends], axis=1)


# -- decision rule -----------------------------------------------------------------


def _user_rank(user, brand, score) -> np.ndarray:
    """Rank of each pair within its user by descending score, ties to lower brand."""
    user = np.asarray(user)
    n = len(user)
    rank = np.empty(n, dtype=np.int64)
    if n == 0:
        return rank
    order = np.lexsort((np.asarray(brand), -np.asarray(score, dtype=np.float64), user))
    u = user[order]
    start = np.r_[0, np.flatnonzero(u[1:] != u[:-1]) + 1]
    first = np.repeat(start, np.diff(np.r_[start, n]))
    rank[order] = np.arange(n) - first
    return rank


def select_pairs(user, brand, score, tau: float, k: int | None = None) -> np.ndarray:
    """Mask of pairs with ``score >= tau`` among each user's ``k`` best brands."""
    score = np.asarray(score, dtype=np.float64)
    keep = score >= tau
    if k is not None:
        keep &= _user_rank(user, brand, score) < k
    return keep


@dataclass
class EnsembleModel:
    """Blends, nonnegative normalized stage-two weights and the decision rule."""

    blends: list[BlendModel]
    weights: np.ndarray
    tau: float = -np.inf
    k: int | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if len(w) != len(self.blends):
            raise ValueError("need one stage-two weight per blended group")
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("stage-two weights must be nonnegative and not all zero")
        self.weights = w / w.sum()
        if self.k is not None and self.k < 1:
            raise ValueError("k must be positive")

    @property
    def groups(self) -> list[ModelGroup]:
        return [ModelGroup(b.group, b.members) for b in self.blends]

    def final_score(self, matrix, columns) -> np.ndarray:
        return _rowdot(blend_scores(self.blends, matrix, columns), self.weights)

    def predict(self, instances: InstanceSet, matrix, columns) -> "PredictionSet":
        return ensemble_predict(instances.user, instances.brand,
                                blend_scores(self.blends, matrix, columns),
                                self.weights, self.tau, self.k)

    def to_dict(self) -> dict:
        return {
            "format": "tmpp-ensemble", "version": 1,
            "blends": [b.to_dict() for b in self.blends],
            "weights": self.weights.tolist(),
            "tau": _float_out(self.tau), "k": self.k,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        if d.get("format") != "tmpp-ensemble":
            raise ValueError("not a tmpp ensemble file")
        return cls([BlendModel.from_dict(b) for b in d["blends"]], d["weights"],
                   _float_in(d["tau"]), d["k"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EnsembleModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _float_out(x: float):
    return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")


def _float_in(x) -> float:
    return float(x)


def ensemble_predict(user, brand, group_scores, weights, tau: float = -np.inf, k: int | None = None) -> PredictionSet:
    """Prediction set from blended group scores under ``(tau, k)``."""
    w = np.asarray(weights, dtype=np.float64)
    final = _rowdot(np.asarray(group_scores, dtype=np.float64).reshape(len(user), -1), w)
    keep = select_pairs(user, brand, final, tau, k)
    return PredictionSet.from_arrays(np.asarray(user)[keep], np.asarray(brand)[keep])


@dataclass(frozen=True)
class DecisionGrid:
    """Thresholds at score quantiles (as top fractions) crossed with per-user caps."""

    top_fractions: tuple[float, ...] = tuple(np.round(np.logspace(-4, 0, 65), 10).tolist())
    ks: tuple[int | None, ...] = (1, 2, 3, 5, None)

    def __post_init__(self):
        if not self.top_fractions or not self.ks:
            raise ValueError("decision grid is empty")
        if any(not 0 < f <= 1 for f in self.top_fractions):
            raise ValueError("top fractions must be in (0, 1]")
        if any(k is not None and k < 1 for k in self.ks):
            raise ValueError("k values must be positive")

    def thresholds(self, score: np.ndarray) -> np.ndarray:
        """Candidate thresholds: +inf (empty set) and the score at each top fraction."""
        s = np.sort(np.asarray(score, dtype=np.float64))[::-1]
        if len(s) == 0:
            return np.array([np.inf])
        idx = np.ceil(np.asarray(self.top_fractions) * len(s)).astype(np.int64) - 1
        return np.unique(np.r_[s[np.clip(idx, 0, len(s) - 1)], np.inf])


@dataclass(frozen=True)
class Decision:
    tau: float
    k: int | None
    f1: Fraction
    n_pred: int
    hits: int

    def sort_key(self):
        # best F1, then smaller set, then higher threshold, then smaller cap
        return (-self.f1, self.n_pred, -self.tau, np.inf if self.k is None else self.k)


def tune_decision(user, brand, score, answer: Mapping, grid: DecisionGrid = DecisionGrid()) -> Decision:
    """Grid ``(tau, k)`` maximizing F1 against ``answer``, ties to smaller sets.

    ``answer`` may hold pairs that are not among the scored candidates; they
    still count in the recall denominator.
    """
    if grid is None or not grid.top_fractions or not grid.ks:
        raise ValueError("decision grid is empty")
    score = np.asarray(score, dtype=np.float64)
    n_answer = PredictionSet(answer).n_pairs
    hit = _membership(user, brand, answer)
    taus = grid.thresholds(score)
    rank = _user_rank(user, brand, score) if len(score) else np.zeros(0, np.int64)
    best = None
    for k in grid.ks:
        keep = np.ones(len(score), bool) if k is None else rank < k
        s = score[keep]
        order = np.argsort(-s, kind="stable")
        s_desc = s[order]
        cum_hits = np.r_[0, np.cumsum(hit[keep][order])]
        # number of kept pairs with score >= tau
        counts = np.searchsorted(-s_desc, -taus, side="right")
        for tau, c in zip(taus.tolist(), counts.tolist()):
            h = int(cum_hits[c])
            f1 = Fraction(2 * h, c + n_answer) if h else Fraction(0)
            d = Decision(tau, k, f1, c, h)
            if best is None or d.sort_key() < best.sort_key():
                best = d
    return best


def simplex_grid(n: int, step: float = 0.1) -> list[np.ndarray]:
    """All nonnegative weight vectors on a lattice of ``step`` that sum to 1."""
    if n < 1:
        raise ValueError("need at least one group")
    m = int(round(1 / step))
    if not np.isclose(m * step, 1.0):
        raise ValueError("step must divide 1")
    out = []
    # stars and bars over m units in n bins
    for bars in combinations(range(m + n - 1), n - 1):
        edges = (-1, *bars, m + n - 1)
        out.append(np.array([edges[i + 1] - edges[i] - 1 for i in range(n)], dtype=np.float64) / m)
    return out


@dataclass
class EnsembleTuning:
    weights: np.ndarray
    decision: Decision
    tried: int = field(default=0)


def tune_ensemble(user, brand, group_scores, answer: Mapping, grid: DecisionGrid = DecisionGrid(),
                  step: float = 0.1) -> EnsembleTuning:
    """Coarse simplex search of stage-two weights, each with its best decision."""
    group_scores = np.asarray(group_scores, dtype=np.float64)
    best_w, best = None, None
    candidates = simplex_grid(group_scores.shape[1], step)
    for w in candidates:
        d = tune_decision(user, brand, _rowdot(group_scores, w), answer, grid)
        if best is None or d.sort_key() < best.sort_key():
            best_w, best = w, d
    return EnsembleTuning(best_w, best, len(candidates))


# -- held-out blend split ------------------------------------------------------------

ROLE_TRAIN, ROLE_BLEND, ROLE_TUNE = 0, 1, 2


def assign_roles(user, holdout_percent: int = 20, tune_percent: int = 10) -> np.ndarray:
    """Per-row role from the user hash.

    Users with ``hash % 100 >= 100 - holdout_percent`` are held out from base
    model training.  The top ``tune_percent`` of those buckets tune the
    decision rule; the rest fit the blends.
    """
    if not 0 < holdout_percent < 100 or not 0 <= tune_percent < holdout_percent:
        raise ValueError("need 0 < holdout_percent < 100 and 0 <= tune_percent < holdout_percent")
    bucket = (user_hash(user) % np.uint64(100)).astype(np.int64)
    role = np.full(len(bucket), ROLE_TRAIN, dtype=np.int8)
    role[bucket >= 100 - holdout_percent] = ROLE_BLEND
    role[bucket >= 100 - tune_percent] = ROLE_TUNE
    return role
