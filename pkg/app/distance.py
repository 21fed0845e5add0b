"""Integrated point-wise cosine distance between fingerprints, distance and affinity matrices."""

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import List, Sequence, Tuple

import numpy as np

from app.config import COSINE_EPS
from app.exceptions import IncomparableError, RejectedInputError, UnsupportedMetricError
from app.gif_engine import GiFCurve, GiFCurveSet

logger = logging.getLogger(__name__)


class Metric(str, enum.Enum):
    COSINE = "cosine"
    IG_COSINE = "ig-cosine"
    HAUSDORFF = "hausdorff"
    FRECHET = "frechet"

    @classmethod
    def parse(cls, value) -> "Metric":
        try:
            metric = cls(value)
        except ValueError:
            raise RejectedInputError(f"unknown metric {value!r}") from None
        if metric in (cls.HAUSDORFF, cls.FRECHET):
            raise UnsupportedMetricError(f"metric {metric.value!r} is reserved but not implemented")
        return metric


def guarded_cosine(u: np.ndarray, v: np.ndarray, eps: float = COSINE_EPS) -> np.ndarray:
    """Row-wise cosine with norms floored at eps; two null rows count as agreeing (cos = 1)."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    cos = np.einsum("...d,...d->...", u, v) / (np.maximum(nu, eps) * np.maximum(nv, eps))
    cos = np.where((nu < eps) & (nv < eps), 1.0, cos)
    return np.clip(cos, -1.0, 1.0)


def curve_distance(c1: GiFCurve, c2: GiFCurve) -> float:
    """(1/S) sum_s (1 - cos(g1(t_s), g2(t_s))), in [0, 2]."""
    if c1.samples.shape != c2.samples.shape or c1.rule != c2.rule:
        raise IncomparableError(f"curves differ in grid: {c1.samples.shape} vs {c2.samples.shape}")
    for name, a, b in (("baseline", c1.baseline, c2.baseline), ("endpoint", c1.endpoint, c2.endpoint)):
        if np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and not np.array_equal(a, b):
            raise IncomparableError(f"curves start or end at different points ({name})")
    return float(np.mean(1.0 - guarded_cosine(c1.samples, c2.samples)))


def _cosine_terms(f1: GiFCurveSet, f2: GiFCurveSet) -> np.ndarray:
    return (1.0 - guarded_cosine(f1.curves, f2.curves)).mean(axis=1)


def _ig_terms(f1: GiFCurveSet, f2: GiFCurveSet) -> np.ndarray:
    return 1.0 - guarded_cosine(f1.attributions(), f2.attributions())


def model_distance(f1: GiFCurveSet, f2: GiFCurveSet, metric: Metric = Metric.COSINE) -> float:
    """Sum over the K aligned curves; in [0, 2K]."""
    metric = Metric.parse(metric)
    f1.check_comparable(f2)
    terms = _cosine_terms(f1, f2) if metric == Metric.COSINE else _ig_terms(f1, f2)
    return float(terms.sum())


@dataclass(eq=False)
class DistanceMatrix:
    ids: List[str]
    values: np.ndarray
    metric: Metric
    refset_hash: int
    curve_count: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.ids), len(self.ids)):
            raise RejectedInputError(f"matrix shape {self.values.shape} does not match {len(self.ids)} ids")

    def __getitem__(self, pair: Tuple[str, str]) -> float:
        a, b = pair
        return float(self.values[self.ids.index(a), self.ids.index(b)])

    def row(self, model_id: str) -> np.ndarray:
        return self.values[self.ids.index(model_id)]

    def subset(self, ids: Sequence[str]) -> "DistanceMatrix":
        index = [self.ids.index(i) for i in ids]
        return DistanceMatrix(list(ids), self.values[np.ix_(index, index)], self.metric,
                              self.refset_hash, self.curve_count)


@dataclass(eq=False)
class AffinityMatrix:
    ids: List[str]
    values: np.ndarray
    normalization: str = "1-d/2K"

    def dissimilarity(self) -> np.ndarray:
        return 1.0 - self.values

    def upper_triangle(self) -> np.ndarray:
        return self.values[np.triu_indices(len(self.ids), k=1)]


def distance_matrix(fingerprints: Sequence[GiFCurveSet], metric: Metric = Metric.COSINE,
                    jobs: int = 1) -> DistanceMatrix:
    metric = Metric.parse(metric)
    if len(fingerprints) < 2:
        raise RejectedInputError("a distance matrix needs at least two fingerprints")
    ids = [f.model_id for f in fingerprints]
    if len(set(ids)) != len(ids):
        raise RejectedInputError(f"duplicate model ids in {ids}")
    first = fingerprints[0]
    for other in fingerprints[1:]:
        first.check_comparable(other)

    pairs = list(combinations(range(len(fingerprints)), 2))

    def run(pair: Tuple[int, int]) -> float:
        i, j = pair
        return model_distance(fingerprints[i], fingerprints[j], metric)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, pairs))
    else:
        results = [run(pair) for pair in pairs]

    values = np.zeros((len(ids), len(ids)))
    for (i, j), value in zip(pairs, results):
        values[i, j] = values[j, i] = value
    logger.info("Computed %d %s distances over %d fingerprints", len(pairs), metric.value, len(ids))
    return DistanceMatrix(ids, values, metric, first.refset_hash, first.count)


def to_affinity(dm: DistanceMatrix) -> AffinityMatrix:
    span = 2.0 * dm.curve_count
    if np.any(dm.values < 0) or np.any(dm.values > span + 1e-9):
        raise RejectedInputError(f"distances must lie in [0, {span}]")
    values = np.clip(1.0 - dm.values / span, 0.0, 1.0)
    np.fill_diagonal(values, 1.0)
    return AffinityMatrix(list(dm.ids), values)
