"""Desk-scale synthetic data: rotated-boundary task family, Gaussian blobs, pattern images.

All inputs live in the shared box [0, 1]^D. The distribution id seeds the class geometry,
so two splits with the same id come from the same distribution.
"""

import enum
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import RejectedInputError
from app.utils import derive_seed, make_rng


class SplitTag(str, enum.Enum):
    TRAIN = "train"
    TRANSFER = "transfer"
    HOLDOUT = "holdout"
    FORGET = "forget"
    RETAINED = "retained"


@dataclass(eq=False)
class DatasetSplit:
    inputs: np.ndarray
    labels: np.ndarray
    tag: SplitTag
    distribution_id: int
    ids: np.ndarray
    num_classes: int = 0  # 0 means regression targets

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.num_classes:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        else:
            self.labels = np.asarray(self.labels, dtype=np.float32)
        if not (len(self.inputs) == len(self.labels) == len(self.ids)):
            raise RejectedInputError("inputs, labels and ids must have the same length")
        if self.inputs.ndim < 2:
            raise RejectedInputError("inputs must be (N, ...) with a shared input shape")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    @property
    def is_regression(self) -> bool:
        return self.num_classes == 0

    def targets(self) -> np.ndarray:
        """One-hot rows for classification, (N, 1) column for regression."""
        if self.is_regression:
            return self.labels.reshape(-1, 1)
        return np.eye(self.num_classes, dtype=np.float32)[self.labels]

    def take(self, indices: Sequence[int], tag: Optional[SplitTag] = None) -> "DatasetSplit":
        indices = np.asarray(indices, dtype=np.int64)
        return DatasetSplit(self.inputs[indices], self.labels[indices], tag or self.tag,
                            self.distribution_id, self.ids[indices], self.num_classes)

    def select_ids(self, ids: Iterable[int], tag: Optional[SplitTag] = None) -> "DatasetSplit":
        wanted = np.asarray(sorted(set(int(i) for i in ids)), dtype=np.int64)
        missing = np.setdiff1d(wanted, self.ids)
        if missing.size:
            raise RejectedInputError(f"ids not in {self.tag.value} split: {missing[:5].tolist()}")
        return self.take(np.flatnonzero(np.isin(self.ids, wanted)), tag)

    def without(self, ids: Iterable[int], tag: Optional[SplitTag] = None) -> "DatasetSplit":
        """Order-preserving removal of the given sample ids."""
        drop = np.asarray(list(ids), dtype=np.int64)
        return self.take(np.flatnonzero(~np.isin(self.ids, drop)), tag)


def rotated_boundary_task(theta_deg: float, n: int, seed: int, distribution_id: int = 0,
                          permuted: bool = False, margin: float = 0.0) -> DatasetSplit:
    """Uniform points in [0,1]^2 labelled by the side of a line through the centre.

    The line normal is (cos theta, sin theta); permuted=True swaps the two labels.
    Points closer than `margin` to the boundary are resampled.
    """
    rng = make_rng(derive_seed(seed, "rotated", distribution_id))
    normal = np.array([np.cos(np.deg2rad(theta_deg)), np.sin(np.deg2rad(theta_deg))])
    points = []
    while sum(len(p) for p in points) < n:
        batch = rng.uniform(0.0, 1.0, size=(2 * n, 2))
        points.append(batch[np.abs((batch - 0.5) @ normal) >= margin])
    inputs = np.concatenate(points)[:n]
    labels = ((inputs - 0.5) @ normal > 0).astype(np.int64)
    if permuted:
        labels = 1 - labels
    return DatasetSplit(inputs, labels, SplitTag.TRAIN, distribution_id, np.arange(n), 2)


def gaussian_blobs(n: int, centers: np.ndarray, spread: float, seed: int,
                   distribution_id: int = 0) -> DatasetSplit:
    centers = np.asarray(centers, dtype=np.float64)
    rng = make_rng(derive_seed(seed, "blobs", distribution_id))
    labels = rng.integers(0, len(centers), size=n)
    inputs = np.clip(centers[labels] + spread * rng.standard_normal((n, centers.shape[1])), 0.0, 1.0)
    return DatasetSplit(inputs, labels, SplitTag.TRAIN, distribution_id, np.arange(n), len(centers))


def pattern_prototypes(num_classes: int, shape: Tuple[int, int, int], distribution_id: int,
                       coarse: int = 4) -> np.ndarray:
    """Smooth class templates: a coarse random grid upsampled to the image size."""
    height, width, channels = shape
    if height % coarse or width % coarse:
        raise RejectedInputError(f"image extents {shape[:2]} must be multiples of {coarse}")
    rng = make_rng(derive_seed(distribution_id, "prototypes"))
    grid = rng.uniform(0.15, 0.85, size=(num_classes, coarse, coarse, channels))
    block = np.ones((1, height // coarse, width // coarse, 1))
    return np.stack([np.kron(g, block[0]) for g in grid])


def pattern_images(n: int, num_classes: int = 10, shape: Tuple[int, int, int] = (16, 16, 1),
                   noise: float = 0.15, seed: int = 0, distribution_id: int = 0) -> DatasetSplit:
    prototypes = pattern_prototypes(num_classes, shape, distribution_id)
    rng = make_rng(derive_seed(seed, "images", distribution_id))
    labels = rng.integers(0, num_classes, size=n)
    inputs = np.clip(prototypes[labels] + noise * rng.standard_normal((n,) + tuple(shape)), 0.0, 1.0)
    return DatasetSplit(inputs, labels, SplitTag.TRAIN, distribution_id, np.arange(n), num_classes)


def split(dataset: DatasetSplit, fractions: Dict[SplitTag, float], seed: int) -> Dict[SplitTag, DatasetSplit]:
    """Disjoint random partition; fractions are normalised to the dataset size."""
    if not fractions or any(f < 0 for f in fractions.values()) or sum(fractions.values()) <= 0:
        raise RejectedInputError(f"invalid split fractions {fractions}")
    total = sum(fractions.values())
    order = make_rng(derive_seed(seed, "split", dataset.distribution_id)).permutation(len(dataset))
    parts, start = {}, 0
    tags = list(fractions)
    for position, tag in enumerate(tags):
        stop = len(dataset) if position == len(tags) - 1 else start + int(round(len(dataset) * fractions[tag] / total))
        parts[tag] = dataset.take(np.sort(order[start:stop]), tag)
        start = stop
    return parts


def sample_forget(train: DatasetSplit, count: int, seed: int) -> Tuple[DatasetSplit, DatasetSplit]:
    """Random forget subset of the train split and the retained remainder."""
    if not 0 <= count < len(train):
        raise RejectedInputError(f"forget count must be in [0, {len(train)}), got {count}")
    chosen = make_rng(derive_seed(seed, "forget")).choice(len(train), size=count, replace=False)
    forget = train.take(np.sort(chosen), SplitTag.FORGET)
    return forget, train.without(forget.ids, SplitTag.RETAINED)
