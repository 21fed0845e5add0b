import enum
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import CUTMIX_AREA_RANGE
from app.datasets import DatasetSplit
from app.exceptions import RejectedInputError
from app.tensor_core import DiffModel, input_gradient
from app.utils import make_rng, stable_hash

logger = logging.getLogger(__name__)


class SamplerKind(enum.IntEnum):
    RANDOM = 1
    CUTMIX = 2
    PGD = 3
    GIVEN = 4

    @property
    def tag(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: str) -> "SamplerKind":
        try:
            return cls[value.upper()]
        except KeyError:
            raise RejectedInputError(f"unknown sampler kind {value!r}") from None


@dataclass(eq=False)
class ReferenceSet:
    points: np.ndarray
    kind: SamplerKind
    seed: int
    source_ids: Tuple[int, ...] = ()
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32)
        self.source_ids = tuple(int(i) for i in self.source_ids)
        if self.points.ndim < 2 or len(self.points) < 1:
            raise RejectedInputError("a reference set needs K >= 1 points")
        if self.points.min() < 0.0 or self.points.max() > 1.0:
            raise RejectedInputError("reference points must lie in [0, 1]^D")

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.points.shape[1:])

    @property
    def dim(self) -> int:
        return int(np.prod(self.input_shape))

    def flat(self) -> np.ndarray:
        return self.points.reshape(self.count, self.dim)

    @cached_property
    def refset_hash(self) -> int:
        header = f"{self.kind.value}:{self.seed}:{self.points.shape}".encode()
        return stable_hash(header + self.points.tobytes())

    def prefix(self, count: int) -> "ReferenceSet":
        if not 1 <= count <= self.count:
            raise RejectedInputError(f"prefix length must be in [1, {self.count}], got {count}")
        return ReferenceSet(self.points[:count], self.kind, self.seed, self.source_ids,
                            {**self.metadata, "prefix_of": self.refset_hash})


@dataclass(frozen=True)
class CutMixConfig:
    area_range: Tuple[float, float] = CUTMIX_AREA_RANGE

    def __post_init__(self):
        low, high = self.area_range
        if not 0.0 <= low <= high <= 1.0:
            raise RejectedInputError(f"area range must satisfy 0 <= low <= high <= 1, got {self.area_range}")


@dataclass(frozen=True)
class PGDConfig:
    steps: int = 10
    alpha: float = 0.01
    eps: float = 0.05

    def __post_init__(self):
        if self.steps < 1:
            raise RejectedInputError(f"PGD needs at least one step, got {self.steps}")
        if self.alpha <= 0:
            raise RejectedInputError(f"PGD step size must be positive, got {self.alpha}")
        if self.eps < 0:
            raise RejectedInputError(f"PGD budget must be non-negative, got {self.eps}")


def _pool(datasets: Sequence[DatasetSplit]) -> List[DatasetSplit]:
    pool = [d for d in datasets if len(d) > 0]
    if not pool:
        raise RejectedInputError("at least one non-empty dataset is required")
    shapes = {d.input_shape for d in pool}
    if len(shapes) != 1:
        raise RejectedInputError(f"datasets disagree on the input shape: {sorted(shapes)}")
    return pool


def _draw(rng: np.random.Generator, pool: Sequence[DatasetSplit], count: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-stage draw: a distribution uniformly, then a point uniformly within it."""
    which = rng.integers(0, len(pool), size=count)
    rows = np.array([rng.integers(0, len(pool[w])) for w in which], dtype=np.int64)
    points = np.stack([pool[w].inputs[r] for w, r in zip(which, rows)])
    return points, which, rows


def _check_count(count: int) -> None:
    if count < 1:
        raise RejectedInputError(f"K must be at least 1, got {count}")


def sample_random(datasets: Sequence[DatasetSplit], count: int, seed: int) -> ReferenceSet:
    _check_count(count)
    pool = _pool(datasets)
    points, which, rows = _draw(make_rng(seed), pool, count)
    return ReferenceSet(points, SamplerKind.RANDOM, seed,
                        tuple(sorted({d.distribution_id for d in pool})),
                        {"dataset_index": which.tolist(),
                         "sample_ids": [int(pool[w].ids[r]) for w, r in zip(which, rows)]})


def rectangle_mask(shape: Tuple[int, int], top: int, left: int, height: int, width: int) -> np.ndarray:
    """Binary mask of ones with a zero rectangle (the pasted patch)."""
    mask = np.ones(shape, dtype=np.float32)
    mask[top:top + height, left:left + width] = 0.0
    return mask


def cutmix(x: np.ndarray, x_star: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """m * x + (1 - m) * x_star with an (H, W) mask broadcast over channels."""
    mask = np.asarray(mask, dtype=np.float32)
    if mask.ndim == x.ndim - 1:
        mask = mask[..., None]
    return (mask * x + (1.0 - mask) * x_star).astype(np.float32)


def sample_cutmix(datasets: Sequence[DatasetSplit], count: int, seed: int,
                  patch_cfg: Optional[CutMixConfig] = None) -> ReferenceSet:
    _check_count(count)
    patch_cfg = patch_cfg or CutMixConfig()
    pool = _pool(datasets)
    if len(pool[0].input_shape) != 3:
        raise RejectedInputError(f"CutMix needs spatial (H, W, C) inputs, got {pool[0].input_shape}")
    height, width, _ = pool[0].input_shape
    rng = make_rng(seed)
    base, _, _ = _draw(rng, pool, count)
    patch, _, _ = _draw(rng, pool, count)
    low, high = patch_cfg.area_range
    mixed, areas = [], []
    for x, x_star in zip(base, patch):
        area = rng.uniform(low, high)
        cut_h = min(height, max(1, int(round(height * np.sqrt(area)))))
        cut_w = min(width, max(1, int(round(width * np.sqrt(area)))))
        top = int(rng.integers(0, height - cut_h + 1))
        left = int(rng.integers(0, width - cut_w + 1))
        mixed.append(cutmix(x, x_star, rectangle_mask((height, width), top, left, cut_h, cut_w)))
        areas.append(cut_h * cut_w / (height * width))
    return ReferenceSet(np.stack(mixed), SamplerKind.CUTMIX, seed,
                        tuple(sorted({d.distribution_id for d in pool})),
                        {"area_ratio": areas, "area_range": list(patch_cfg.area_range)})


def pgd_ascend(x0: np.ndarray, gradient: Callable[[np.ndarray], np.ndarray], cfg: PGDConfig) -> np.ndarray:
    """x_{t+1} = clip(x_t + alpha * sign(grad), x0 - eps, x0 + eps) within [0, 1]."""
    start = np.asarray(x0, dtype=np.float64)
    low = np.clip(start - cfg.eps, 0.0, 1.0)
    high = np.clip(start + cfg.eps, 0.0, 1.0)
    x = start.copy()
    for _ in range(cfg.steps):
        step = cfg.alpha * np.sign(gradient(x.astype(np.float32)))
        x = np.clip(x + step, low, high)
    return x.astype(np.float32)


def sample_pgd(datasets: Sequence[DatasetSplit], count: int, probe: DiffModel, steps: int,
               alpha: float, eps: float, seed: int) -> ReferenceSet:
    """Seed points ascend the probe's scalarized output; the probe is never a compared model."""
    if eps <= 0:
        raise RejectedInputError(f"PGD budget must be positive, got {eps}")
    cfg = PGDConfig(steps=steps, alpha=alpha, eps=eps)
    seeds = sample_random(datasets, count, seed)
    if seeds.input_shape != probe.input_shape:
        raise RejectedInputError(f"probe input {probe.input_shape} != data {seeds.input_shape}")
    points = pgd_ascend(seeds.points, lambda x: input_gradient(probe, x), cfg)
    logger.debug("PGD moved reference points by mean |dx|=%.4g", float(np.abs(points - seeds.points).mean()))
    return ReferenceSet(points, SamplerKind.PGD, seed, seeds.source_ids,
                        {**seeds.metadata, "steps": steps, "alpha": alpha, "eps": eps})


def sample_given(points: np.ndarray, seed: int = 0, source_ids: Sequence[int] = (),
                 **metadata: Any) -> ReferenceSet:
    return ReferenceSet(points, SamplerKind.GIVEN, seed, tuple(source_ids), dict(metadata))


def sample_references(kind: SamplerKind, datasets: Sequence[DatasetSplit], count: int, seed: int,
                      probe: Optional[DiffModel] = None, pgd: Optional[PGDConfig] = None,
                      patch_cfg: Optional[CutMixConfig] = None) -> ReferenceSet:
    if kind == SamplerKind.RANDOM:
        refs = sample_random(datasets, count, seed)
    elif kind == SamplerKind.CUTMIX:
        refs = sample_cutmix(datasets, count, seed, patch_cfg)
    elif kind == SamplerKind.PGD:
        if probe is None:
            raise RejectedInputError("PGD sampling needs a probe model")
        pgd = pgd or PGDConfig()
        refs = sample_pgd(datasets, count, probe, pgd.steps, pgd.alpha, pgd.eps, seed)
    else:
        raise RejectedInputError(f"{kind.tag} reference sets are built from explicit points")
    logger.info("Sampled %d %s reference points (seed=%d)", refs.count, kind.tag, seed)
    return refs
