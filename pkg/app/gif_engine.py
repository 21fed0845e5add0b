"""
Gradient-field curves.

A curve integrates the model gradient field along the straight segment x(a) = x0 + a (x1 - x0):

    g(t) = integral_0^t F(x(a)) da

evaluated on the grid t_s = s / S, s = 1..S, by cumulative quadrature (g(t_0) = 0 is implicit).
With the midpoint rule the nodes are a_j = (j - 1/2) / S, so every increment
(g(t_s) - g(t_{s-1})) * S is exactly the field at the middle of its interval.

Sums are accumulated in float64; files store float32.
"""

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from app.config import DEFAULT_STEPS, RELU_RESIDUAL_TOLERANCE, RESIDUAL_NOISE_FLOOR, TANH_RESIDUAL_TOLERANCE
from app.exceptions import IncomparableError, RejectedInputError
from app.reference_sampler import ReferenceSet
from app.tensor_core import DiffModel, LayerKind, as_batch, evaluate_batch, input_gradient
from app.utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

MAX_POINTS_PER_PASS = 8192


class BaselineMode(enum.IntEnum):
    ZERO = 0
    RANDOM = 1

    @classmethod
    def parse(cls, value: str) -> "BaselineMode":
        try:
            return cls[value.upper()]
        except KeyError:
            raise RejectedInputError(f"unknown baseline mode {value!r}") from None


class QuadratureRule(enum.IntEnum):
    MIDPOINT = 1
    RIGHT = 2


class Scalarization(enum.IntEnum):
    LOGITS = 1  # scalar head as is, wider heads by the l2 norm of the logits
    TRUNK = 2  # l2 norm of the output of everything before the final affine layer


@dataclass(eq=False)
class GiFCurve:
    samples: np.ndarray  # (S, D) cumulative integral at t_1..t_S
    baseline: np.ndarray
    endpoint: np.ndarray
    rule: QuadratureRule = QuadratureRule.MIDPOINT

    @property
    def steps(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.steps + 1) / self.steps

    def value(self, s: int) -> np.ndarray:
        """g(t_s); s = 0 is the empty integral."""
        if s == 0:
            return np.zeros(self.dim)
        return self.samples[s - 1]

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]


def quadrature_nodes(steps: int, rule: QuadratureRule) -> np.ndarray:
    if steps < 2:
        raise RejectedInputError(f"a curve needs S >= 2 steps, got {steps}")
    j = np.arange(1, steps + 1, dtype=np.float64)
    return (j - 0.5) / steps if rule == QuadratureRule.MIDPOINT else j / steps


def field_at(model: DiffModel, x) -> np.ndarray:
    """The model gradient field at x (one point or a batch)."""
    return input_gradient(model, x)


def _curve_block(model: DiffModel, baselines: np.ndarray, endpoints: np.ndarray,
                 steps: int, rule: QuadratureRule) -> np.ndarray:
    """(B, S, D) cumulative integrals for B flat (baseline, endpoint) pairs."""
    alphas = quadrature_nodes(steps, rule)
    x0 = baselines.astype(np.float64)[:, None, :]
    delta = endpoints.astype(np.float64)[:, None, :] - x0
    points = (x0 + alphas[None, :, None] * delta).astype(np.float32)
    count, dim = len(baselines), baselines.shape[1]
    grads = field_at(model, points.reshape((count * steps,) + model.input_shape))
    grads = grads.reshape(count, steps, dim).astype(np.float64)
    return np.cumsum(grads, axis=1) / steps


def _flat(model: DiffModel, x) -> np.ndarray:
    batch, single = as_batch(model, x)
    if not single:
        raise RejectedInputError("expected a single input point")
    return batch.reshape(-1)


def extract_curve(model: DiffModel, x0, x1, steps: int = DEFAULT_STEPS,
                  rule: QuadratureRule = QuadratureRule.MIDPOINT) -> GiFCurve:
    x0, x1 = _flat(model, x0), _flat(model, x1)
    samples = _curve_block(model, x0[None, :], x1[None, :], steps, rule)[0]
    return GiFCurve(samples, x0, x1, rule)


def make_baselines(count: int, input_shape: Tuple[int, ...], mode: BaselineMode, seed: int) -> np.ndarray:
    dim = int(np.prod(input_shape))
    if mode == BaselineMode.ZERO:
        return np.zeros((count, dim), dtype=np.float32)
    rng = make_rng(derive_seed(seed, "baseline"))
    return rng.uniform(0.0, 1.0, size=(count, dim)).astype(np.float32)


@dataclass(eq=False)
class GiFCurveSet:
    """A model fingerprint: K curves over a shared ReferenceSet."""

    model_id: str
    curves: np.ndarray  # (K, S, D)
    refset_hash: int
    baseline_mode: BaselineMode
    baseline_seed: int
    rule: QuadratureRule
    scalarization: Scalarization
    baselines: np.ndarray  # (K, D)
    endpoints: Optional[np.ndarray] = None  # (K, D), absent when loaded without its refset

    @property
    def count(self) -> int:
        return self.curves.shape[0]

    @property
    def steps(self) -> int:
        return self.curves.shape[1]

    @property
    def dim(self) -> int:
        return self.curves.shape[2]

    def curve(self, k: int) -> GiFCurve:
        endpoint = self.endpoints[k] if self.endpoints is not None else np.full(self.dim, np.nan)
        return GiFCurve(self.curves[k], self.baselines[k], endpoint, self.rule)

    def check_comparable(self, other: "GiFCurveSet") -> None:
        mismatches = []
        if self.refset_hash != other.refset_hash:
            mismatches.append("reference set")
        if self.curves.shape != other.curves.shape:
            mismatches.append(f"shape {self.curves.shape} vs {other.curves.shape}")
        if (self.baseline_mode, self.baseline_seed) != (other.baseline_mode, other.baseline_seed):
            mismatches.append("baseline")
        if self.rule != other.rule:
            mismatches.append("quadrature rule")
        if self.scalarization != other.scalarization:
            mismatches.append("scalarization")
        if mismatches:
            raise IncomparableError(f"fingerprints differ in {', '.join(mismatches)}",
                                    (self.model_id, other.model_id))

    def prefix(self, count: int) -> "GiFCurveSet":
        """The first `count` curves, i.e. the fingerprint on a prefix of the reference set."""
        if not 1 <= count <= self.count:
            raise RejectedInputError(f"prefix length must be in [1, {self.count}], got {count}")
        return GiFCurveSet(self.model_id, self.curves[:count], self.refset_hash ^ count,
                           self.baseline_mode, self.baseline_seed, self.rule, self.scalarization,
                           self.baselines[:count],
                           None if self.endpoints is None else self.endpoints[:count])

    def attach(self, refset: ReferenceSet) -> "GiFCurveSet":
        """The same curves with the endpoints of the reference set they were taken on."""
        if refset.refset_hash != self.refset_hash or refset.count != self.count:
            raise IncomparableError(f"fingerprint {self.model_id} was not taken on this reference set",
                                    (self.model_id,))
        return replace(self, endpoints=refset.flat())

    def attributions(self) -> np.ndarray:
        """Integrated-gradients attributions (x1 - x0) * g(1) per curve, shape (K, D)."""
        if self.endpoints is None:
            raise RejectedInputError(f"fingerprint {self.model_id} was loaded without its reference set")
        return (self.endpoints.astype(np.float64) - self.baselines) * self.curves[:, -1, :]


def _chunks(count: int, size: int) -> List[Tuple[int, int]]:
    return [(start, min(start + size, count)) for start in range(0, count, size)]


def fingerprint(model: DiffModel, refset: ReferenceSet, baseline_mode: BaselineMode = BaselineMode.ZERO,
                steps: int = DEFAULT_STEPS, *, seed: int = 0, model_id: str = "",
                rule: QuadratureRule = QuadratureRule.MIDPOINT, trunk_only: bool = False,
                jobs: int = 1) -> GiFCurveSet:
    """One curve per reference point, from a zero or seeded random baseline."""
    quadrature_nodes(steps, rule)
    if refset.input_shape != model.input_shape:
        raise RejectedInputError(f"reference points {refset.input_shape} do not match model input {model.input_shape}")
    scalarization = Scalarization.TRUNK if trunk_only else Scalarization.LOGITS
    probe = model.trunk() if trunk_only else model
    baselines = make_baselines(refset.count, refset.input_shape, baseline_mode, seed)
    endpoints = refset.flat()
    per_pass = max(1, MAX_POINTS_PER_PASS // steps)
    blocks = _chunks(refset.count, per_pass)

    def run(block: Tuple[int, int]) -> np.ndarray:
        start, stop = block
        return _curve_block(probe, baselines[start:stop], endpoints[start:stop], steps, rule)

    if jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(block) for block in blocks]
    logger.info("Fingerprint %s: K=%d S=%d D=%d baseline=%s", model_id or "<anonymous>",
                refset.count, steps, refset.dim, baseline_mode.name.lower())
    return GiFCurveSet(model_id, np.concatenate(parts), refset.refset_hash, baseline_mode,
                       seed if baseline_mode == BaselineMode.RANDOM else 0, rule, scalarization,
                       baselines, endpoints)


def completeness_residual(model: DiffModel, curve: GiFCurve) -> float:
    """|sum_i (x1_i - x0_i) g_i(1) - (M(x1) - M(x0))|."""
    delta = curve.endpoint.astype(np.float64) - curve.baseline.astype(np.float64)
    if not np.any(delta):
        return 0.0
    attribution = float(np.dot(delta, curve.final))
    points = np.stack([curve.baseline, curve.endpoint]).reshape((2,) + model.input_shape)
    values = evaluate_batch(model, points).astype(np.float64)
    return abs(attribution - (values[1] - values[0]))


def derivative_defect(model: DiffModel, curve: GiFCurve) -> float:
    """max |(g(t_s) - g(t_{s-1})) * S - F(node_s)| over the grid."""
    nodes = quadrature_nodes(curve.steps, curve.rule)
    x0 = curve.baseline.astype(np.float64)
    points = (x0 + nodes[:, None] * (curve.endpoint - x0)).astype(np.float32)
    field = field_at(model, points.reshape((curve.steps,) + model.input_shape)).reshape(curve.steps, -1)
    increments = np.diff(np.vstack([np.zeros(curve.dim), curve.samples]), axis=0) * curve.steps
    return float(np.max(np.abs(increments - field)))


def fingerprint_residuals(model: DiffModel, fingerprint_set: GiFCurveSet) -> np.ndarray:
    probe = model.trunk() if fingerprint_set.scalarization == Scalarization.TRUNK else model
    return np.array([completeness_residual(probe, fingerprint_set.curve(k)) for k in range(fingerprint_set.count)])


def residual_tolerance(model: DiffModel) -> float:
    """Piecewise-linear nets get the looser bound: their field jumps across kinks."""
    if any(layer.kind == LayerKind.RELU for layer in model.layers):
        return RELU_RESIDUAL_TOLERANCE
    return TANH_RESIDUAL_TOLERANCE


def check_completeness(model: DiffModel, fingerprint_set: GiFCurveSet) -> List[int]:
    """Indices of curves whose completeness residual exceeds tol * |M(x1) - M(x0)| + floor."""
    if fingerprint_set.endpoints is None:
        raise RejectedInputError(f"fingerprint {fingerprint_set.model_id} was loaded without its reference set")
    probe = model.trunk() if fingerprint_set.scalarization == Scalarization.TRUNK else model
    shape = (fingerprint_set.count,) + probe.input_shape
    change = np.abs(evaluate_batch(probe, fingerprint_set.endpoints.reshape(shape)).astype(np.float64)
                    - evaluate_batch(probe, fingerprint_set.baselines.reshape(shape)).astype(np.float64))
    residuals = fingerprint_residuals(model, fingerprint_set)
    failing = np.flatnonzero(residuals > residual_tolerance(probe) * change + RESIDUAL_NOISE_FLOOR).tolist()
    if failing:
        logger.warning("Fingerprint %s: %d of %d curves miss completeness (max residual %.3g); "
                       "consider more steps", fingerprint_set.model_id, len(failing), fingerprint_set.count,
                       float(residuals.max()))
    return failing
