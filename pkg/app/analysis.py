"""Task-relatedness statistics, stolen-model detection scores and unlearning verdicts."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.hierarchy import ClusterNode, linkage, to_tree
from scipy.spatial.distance import squareform
from scipy.stats import spearmanr
from sklearn.metrics import roc_auc_score, roc_curve

from app.distance import AffinityMatrix, DistanceMatrix
from app.exceptions import RejectedInputError, UndefinedCorrelationError

logger = logging.getLogger(__name__)


def _as_sequence(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        if values.shape[0] != values.shape[1]:
            raise RejectedInputError(f"matrix input must be square, got {values.shape}")
        return values[np.triu_indices(values.shape[0], k=1)]
    return values.ravel()


def spearman(a, b) -> float:
    """Rank correlation with average ranks for ties; square matrices use their strict upper triangle."""
    a, b = _as_sequence(a), _as_sequence(b)
    if len(a) != len(b):
        raise RejectedInputError(f"sequences differ in length: {len(a)} vs {len(b)}")
    if len(a) < 3:
        raise RejectedInputError(f"spearman needs at least 3 values, got {len(a)}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedCorrelationError("rank correlation is undefined for a constant input")
    return float(spearmanr(a, b).correlation)


def ground_truth_affinity(angles: Mapping[str, float], ids: Sequence[str]) -> np.ndarray:
    """Relatedness -|delta theta| of the rotated-boundary family."""
    theta = np.array([angles[i] for i in ids], dtype=np.float64)
    return -np.abs(theta[:, None] - theta[None, :])


# ==================== Similarity tree ====================

@dataclass
class Dendrogram:
    root: ClusterNode
    ids: List[str]
    linkage_matrix: np.ndarray
    method: str = "average"

    @property
    def heights(self) -> np.ndarray:
        return self.linkage_matrix[:, 2]

    def members(self, node: ClusterNode) -> List[str]:
        return sorted(self.ids[i] for i in node.pre_order())

    def _children(self, node: ClusterNode) -> Tuple[ClusterNode, ClusterNode]:
        left, right = node.get_left(), node.get_right()
        if min(self.members(right)) < min(self.members(left)):
            left, right = right, left
        return left, right

    def top_split(self) -> Tuple[List[str], List[str]]:
        if self.root.is_leaf():
            return self.members(self.root), []
        left, right = self._children(self.root)
        return self.members(left), self.members(right)

    def to_newick(self) -> str:
        def walk(node: ClusterNode, parent_height: float) -> str:
            length = f":{parent_height - node.dist:.9g}"
            if node.is_leaf():
                return f"{self.ids[node.id]}{length}"
            left, right = self._children(node)
            return f"({walk(left, node.dist)},{walk(right, node.dist)}){length}"

        return walk(self.root, self.root.dist).rsplit(":", 1)[0] + ";"

    def to_dot(self) -> str:
        lines = ["graph dendrogram {", "  node [shape=box];"]

        def name(node: ClusterNode) -> str:
            return f'"{self.ids[node.id]}"' if node.is_leaf() else f"merge{node.id}"

        def walk(node: ClusterNode) -> None:
            if node.is_leaf():
                lines.append(f"  {name(node)};")
                return
            lines.append(f'  {name(node)} [shape=point, label="", xlabel="{node.dist:.4g}"];')
            for child in self._children(node):
                walk(child)
                lines.append(f"  {name(node)} -- {name(child)};")

        walk(self.root)
        lines.append("}")
        return "\n".join(lines) + "\n"


def cluster(affinity: AffinityMatrix, method: str = "average") -> Dendrogram:
    """Agglomerative clustering on 1 - affinity; ids are ordered lexicographically first so
    ties resolve the same way for any input order."""
    if len(affinity.ids) < 2:
        raise RejectedInputError("clustering needs at least two models")
    order = sorted(range(len(affinity.ids)), key=lambda i: affinity.ids[i])
    ids = [affinity.ids[i] for i in order]
    dissimilarity = affinity.dissimilarity()[np.ix_(order, order)]
    dissimilarity = np.clip((dissimilarity + dissimilarity.T) / 2.0, 0.0, None)
    np.fill_diagonal(dissimilarity, 0.0)
    matrix = linkage(squareform(dissimilarity, checks=False), method=method)
    return Dendrogram(to_tree(matrix), ids, matrix, method)


# ==================== Stolen-model detection ====================

def auc_roc(positive_scores: Sequence[float], negative_scores: Sequence[float]
            ) -> Tuple[float, List[Tuple[float, float]]]:
    """AUC = P(pos > neg) + P(pos = neg) / 2, with the (fpr, tpr) ROC points."""
    positive = np.asarray(positive_scores, dtype=np.float64)
    negative = np.asarray(negative_scores, dtype=np.float64)
    if positive.size == 0 or negative.size == 0:
        raise RejectedInputError("AUC needs at least one positive and one negative score")
    labels = np.concatenate([np.ones(positive.size), np.zeros(negative.size)])
    scores = np.concatenate([positive, negative])
    auc = float(roc_auc_score(labels, scores))
    fpr, tpr, _ = roc_curve(labels, scores, drop_intermediate=False)
    return auc, list(zip(fpr.tolist(), tpr.tolist()))


@dataclass(frozen=True)
class SuspectScore:
    model_id: str
    kind: str
    score: float


@dataclass
class DetectionReport:
    victim_id: str
    suspects: List[SuspectScore]
    auc: Dict[str, float] = field(default_factory=dict)
    roc: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)

    def table(self) -> str:
        width = max([len(f) for f in self.auc] + [6])
        rows = [f"{'family':<{width}}  auc"]
        rows += [f"{family:<{width}}  {value:.4f}" for family, value in self.auc.items()]
        return "\n".join(rows) + "\n"


def detection_report(dm: DistanceMatrix, victim_id: str, kinds: Mapping[str, str],
                     negative_kind: str = "independent",
                     families: Optional[Sequence[str]] = None) -> DetectionReport:
    """Scores every suspect by -d(victim, suspect); one AUC per stolen family against the
    independently trained models."""
    if victim_id not in dm.ids:
        raise RejectedInputError(f"victim {victim_id} has no fingerprint in the matrix")
    row = dm.row(victim_id)
    suspects = [SuspectScore(model_id, kinds[model_id], -float(row[i]))
                for i, model_id in enumerate(dm.ids) if model_id != victim_id and model_id in kinds]
    negatives = [s.score for s in suspects if s.kind == negative_kind]
    if families is None:
        families = list(dict.fromkeys(s.kind for s in suspects if s.kind != negative_kind))
    report = DetectionReport(victim_id, suspects)
    for family in families:
        positives = [s.score for s in suspects if s.kind == family]
        if not positives:
            continue
        report.auc[family], report.roc[family] = auc_roc(positives, negatives)
        logger.info("AUC %s vs %s: %.4f", family, negative_kind, report.auc[family])
    return report


# ==================== Unlearning ====================

@dataclass
class UnlearningReport:
    d_unrelated: float
    d_exact: float
    approx_series: List[float]
    exact_detected: bool
    approx_incomplete: bool
    forgetting_trend: bool
    trend: Optional[float] = None

    def __post_init__(self):
        if min([self.d_unrelated, self.d_exact] + list(self.approx_series)) < 0:
            raise RejectedInputError("distances must be non-negative")

    def summary(self) -> str:
        lines = [
            f"d_unrelated={self.d_unrelated:.9g}",
            f"d_exact={self.d_exact:.9g}",
            "approx=" + ",".join(f"{d:.9g}" for d in self.approx_series),
            f"exact_detected={str(self.exact_detected).lower()}",
            f"approx_incomplete={str(self.approx_incomplete).lower()}",
            f"forgetting_trend={str(self.forgetting_trend).lower()}",
        ]
        if self.trend is not None:
            lines.append(f"trend_spearman={self.trend:.9g}")
        return "\n".join(lines) + "\n"


def unlearning_report(d_unrelated: float, d_exact: float, approx_series: Sequence[float]) -> UnlearningReport:
    series = [float(d) for d in approx_series]
    trend = None
    if len(series) >= 3:
        try:
            trend = spearman(np.arange(1, len(series) + 1), series)
        except UndefinedCorrelationError:
            trend = None
    elif len(series) == 2 and series[1] != series[0]:
        trend = 1.0 if series[1] > series[0] else -1.0
    return UnlearningReport(
        d_unrelated=float(d_unrelated),
        d_exact=float(d_exact),
        approx_series=series,
        exact_detected=d_exact > d_unrelated,
        approx_incomplete=bool(series) and series[0] < d_unrelated,
        forgetting_trend=trend is not None and trend > 0,
        trend=trend,
    )
