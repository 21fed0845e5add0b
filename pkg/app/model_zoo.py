"""
Model zoo: training and every derivation the experiments compare against.

Derivations mirror common stealing attacks and unlearning procedures:
- fine-tuning (all layers / last layer only), global magnitude pruning, transfer to a new head
- extraction from hard labels or probability vectors, optionally adversarially hardened
- exact unlearning (retraining without the forget set) and approximate unlearning
  (forget-set gradient ascent with a retained-set maintenance pass, checkpointed per epoch)

Each entry of a ZooManifest records lineage kind, parent, seed and training config hash;
rebuilding a zoo from the same zoo spec reproduces bit-identical checkpoints.
"""

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.config import FORGET_SET_SIZE
from app.datasets import (
    DatasetSplit,
    SplitTag,
    pattern_images,
    rotated_boundary_task,
    sample_forget,
    split,
)
from app.exceptions import ConfigError, RejectedInputError, TrainingFailure
from app.reference_sampler import PGDConfig, pgd_ascend
from app.tensor_core import (
    DTYPE,
    ComputeGraph,
    DiffModel,
    Layer,
    LayerKind,
    forward_logits,
    parameter_gradient,
    sgd_step,
)
from app.utils import config_hash, derive_seed, make_rng

logger = logging.getLogger(__name__)


class LineageKind(str, enum.Enum):
    VICTIM = "victim"
    FINETUNE_ALL = "finetune-all"
    FINETUNE_LAST = "finetune-last"
    PRUNED = "pruned"
    EXTRACT_LABEL = "extract-label"
    EXTRACT_PROB = "extract-prob"
    EXTRACT_ADV = "extract-adv"
    TRANSFER = "transfer"
    INDEPENDENT = "independent"
    UNLEARN_EXACT = "unlearn-exact"
    UNLEARN_APPROX = "unlearn-approx"
    UNRELATED = "unrelated"
    REFERENCE = "reference"
    PROBE = "probe"


ROOT_KINDS = {LineageKind.VICTIM, LineageKind.INDEPENDENT, LineageKind.UNRELATED,
              LineageKind.REFERENCE, LineageKind.PROBE}

STOLEN_KINDS = (LineageKind.FINETUNE_ALL, LineageKind.FINETUNE_LAST, LineageKind.PRUNED,
                LineageKind.EXTRACT_LABEL, LineageKind.EXTRACT_PROB, LineageKind.EXTRACT_ADV,
                LineageKind.TRANSFER)


# ==================== Architectures ====================

@dataclass(frozen=True)
class ArchSpec:
    kind: str = "mlp"
    input_shape: Tuple[int, ...] = (2,)
    hidden: Tuple[int, ...] = (16,)
    outputs: int = 2
    activation: str = "tanh"
    channels: int = 4

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.kind not in ("mlp", "cnn"):
            raise RejectedInputError(f"unknown architecture kind {self.kind!r}")
        if self.activation not in ("tanh", "relu"):
            raise RejectedInputError(f"unknown activation {self.activation!r}")
        if self.kind == "cnn" and len(self.input_shape) != 3:
            raise RejectedInputError("cnn architectures need (H, W, C) inputs")

    def build(self, seed: int) -> DiffModel:
        """Glorot-uniform weights, zero biases."""
        rng = make_rng(derive_seed(seed, "init"))
        act = LayerKind.TANH if self.activation == "tanh" else LayerKind.RELU
        layers: List[Layer] = []
        if self.kind == "cnn":
            height, width, channels = self.input_shape
            layers += [Layer(LayerKind.CONV2D, (_glorot(rng, (3, 3, channels, self.channels),
                                                        9 * channels, 9 * self.channels),
                                                np.zeros(self.channels))),
                       Layer(act), Layer(LayerKind.MAXPOOL2)]
            width_in = (height // 2) * (width // 2) * self.channels
        else:
            width_in = int(np.prod(self.input_shape))
        layers.append(Layer(LayerKind.FLATTEN))
        for units in self.hidden:
            layers += [_dense(rng, width_in, units), Layer(act)]
            width_in = units
        layers.append(_dense(rng, width_in, self.outputs))
        return DiffModel(self.input_shape, tuple(layers))


def _glorot(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


def _dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    return Layer(LayerKind.DENSE, (_glorot(rng, (fan_in, fan_out), fan_in, fan_out), np.zeros(fan_out)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 0.1
    batch: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1:
            raise RejectedInputError(f"invalid training config {self}")
        if self.lr < 0:
            raise RejectedInputError(f"learning rate must be non-negative, got {self.lr}")

    @property
    def hash(self) -> int:
        return config_hash(asdict(self))


# ==================== Training loop ====================

Perturb = Callable[[DiffModel, np.ndarray, np.ndarray], np.ndarray]


def _objective(targets: np.ndarray, regression: bool, ascent: bool = False):
    def objective(graph: ComputeGraph, logits):
        loss = graph.mse(logits, targets) if regression else graph.softmax_cross_entropy(logits, targets)
        return graph.scale(loss, -1.0) if ascent else loss
    return objective


def fit(model: DiffModel, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig, *,
        ids: Optional[np.ndarray] = None, regression: bool = False,
        trainable: Optional[Sequence[bool]] = None, masks: Optional[Sequence[Optional[np.ndarray]]] = None,
        perturb: Optional[Perturb] = None, audit: Optional[List[int]] = None,
        ascent: bool = False, history: Optional[List[float]] = None) -> DiffModel:
    """Minibatch SGD. Raises TrainingFailure on a non-finite loss.

    `audit`, when given, receives the id of every sample that contributed a gradient.
    `masks` zero selected parameter entries after every step (pruning keeps its zeros).
    """
    if len(inputs) == 0:
        raise RejectedInputError("cannot train on an empty dataset")
    ids = np.arange(len(inputs)) if ids is None else ids
    rng = make_rng(derive_seed(config.seed, "shuffle"))
    for epoch in range(config.epochs):
        order = rng.permutation(len(inputs))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch):
            batch = order[start:start + config.batch]
            x, t = inputs[batch], targets[batch]
            if perturb is not None:
                x = perturb(model, x, t)
            grads, loss = parameter_gradient(model, _objective(t, regression, ascent), x)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingFailure(epoch, loss=loss)
            model = sgd_step(model, grads, config.lr, trainable)
            if masks is not None:
                model = apply_masks(model, masks)
            if audit is not None:
                audit.extend(int(i) for i in ids[batch])
            total += loss * len(batch)
            seen += len(batch)
        if history is not None:
            history.append(total / seen)
        logger.debug("epoch %d/%d loss=%.6f", epoch + 1, config.epochs, total / seen)
    if config.epochs:
        logger.info("Trained %d epochs on %d samples, final loss %.6f", config.epochs, len(inputs), total / seen)
    return model


def train(arch: ArchSpec, dataset: DatasetSplit, config: TrainConfig,
          audit: Optional[List[int]] = None, history: Optional[List[float]] = None) -> DiffModel:
    if len(dataset) == 0:
        raise RejectedInputError("cannot train on an empty dataset")
    if arch.input_shape != dataset.input_shape:
        raise RejectedInputError(f"architecture input {arch.input_shape} != data {dataset.input_shape}")
    expected = 1 if dataset.is_regression else dataset.num_classes
    if arch.outputs != expected:
        raise RejectedInputError(f"architecture has {arch.outputs} outputs, task needs {expected}")
    model = arch.build(config.seed)
    return fit(model, dataset.inputs, dataset.targets(), config, ids=dataset.ids,
               regression=dataset.is_regression, audit=audit, history=history)


def predict_proba(model: DiffModel, inputs: np.ndarray) -> np.ndarray:
    logits = forward_logits(model, inputs).astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    return probs / probs.sum(axis=1, keepdims=True)


def accuracy(model: DiffModel, dataset: DatasetSplit, pgd: Optional[PGDConfig] = None) -> float:
    inputs = dataset.inputs
    if pgd is not None:
        inputs = loss_pgd(model, inputs, dataset.targets(), pgd)
    return float(np.mean(np.argmax(forward_logits(model, inputs), axis=1) == dataset.labels))


def agreement(first: DiffModel, second: DiffModel, inputs: np.ndarray) -> float:
    return float(np.mean(np.argmax(forward_logits(first, inputs), axis=1)
                         == np.argmax(forward_logits(second, inputs), axis=1)))


# ==================== Derivations ====================

def _output_count(model: DiffModel) -> int:
    return model.layers[model.final_dense_index()].params[0].shape[1]


def final_layer_mask(model: DiffModel) -> List[bool]:
    last = model.final_dense_index()
    return [index == last for index in model.parameter_layer_index()]


def finetune(parent: DiffModel, dataset: DatasetSplit, mode: str, config: TrainConfig) -> DiffModel:
    """mode='last' trains only the final affine layer; every other parameter stays bit-identical."""
    if mode not in ("all", "last"):
        raise RejectedInputError(f"unknown fine-tune mode {mode!r}")
    expected = 1 if dataset.is_regression else dataset.num_classes
    if _output_count(parent) != expected:
        raise RejectedInputError(f"parent head has {_output_count(parent)} outputs, data needs {expected}")
    trainable = final_layer_mask(parent) if mode == "last" else None
    return fit(parent, dataset.inputs, dataset.targets(), config, ids=dataset.ids,
               regression=dataset.is_regression, trainable=trainable)


def transfer(parent: DiffModel, dataset: DatasetSplit, mode: str, config: TrainConfig) -> DiffModel:
    """Replace the final affine layer with a fresh head for the new label set, then fine-tune."""
    index = parent.final_dense_index()
    fan_in = parent.layers[index].params[0].shape[0]
    outputs = 1 if dataset.is_regression else dataset.num_classes
    layers = list(parent.layers)
    layers[index] = _dense(make_rng(derive_seed(config.seed, "head")), fan_in, outputs)
    return finetune(DiffModel(parent.input_shape, tuple(layers)), dataset, mode, config)


def weight_indices(model: DiffModel) -> List[int]:
    """Positions of weight tensors in model.parameters(); biases are the odd positions."""
    return list(range(0, len(model.parameters()), 2))


def apply_masks(model: DiffModel, masks: Sequence[Optional[np.ndarray]]) -> DiffModel:
    return model.with_parameters([p if m is None else p * m for p, m in zip(model.parameters(), masks)])


def prune_masks(model: DiffModel, fraction: float) -> List[Optional[np.ndarray]]:
    if not 0.0 <= fraction <= 1.0:
        raise RejectedInputError(f"prune fraction must be in [0, 1], got {fraction}")
    params = model.parameters()
    weights = weight_indices(model)
    magnitudes = np.concatenate([np.abs(params[i]).ravel() for i in weights])
    count = int(round(fraction * magnitudes.size))
    keep = np.ones(magnitudes.size, dtype=DTYPE)
    keep[np.argsort(magnitudes, kind="stable")[:count]] = 0.0
    masks: List[Optional[np.ndarray]] = [None] * len(params)
    offset = 0
    for i in weights:
        size = params[i].size
        masks[i] = keep[offset:offset + size].reshape(params[i].shape)
        offset += size
    return masks


def prune(parent: DiffModel, fraction: float, finetune_epochs: int = 0,
          dataset: Optional[DatasetSplit] = None, config: Optional[TrainConfig] = None) -> DiffModel:
    """Global magnitude pruning of weights (biases exempt), then an optional masked fine-tune."""
    masks = prune_masks(parent, fraction)
    pruned = apply_masks(parent, masks)
    if finetune_epochs <= 0:
        return pruned
    if dataset is None:
        raise RejectedInputError("pruning with fine-tune epochs needs a dataset")
    base = config or TrainConfig()
    config = TrainConfig(epochs=finetune_epochs, lr=base.lr, batch=base.batch, seed=base.seed)
    return fit(pruned, dataset.inputs, dataset.targets(), config, ids=dataset.ids,
               regression=dataset.is_regression, masks=masks)


def victim_targets(victim: DiffModel, inputs: np.ndarray, mode: str) -> np.ndarray:
    if mode not in ("label", "prob"):
        raise RejectedInputError(f"unknown extraction mode {mode!r}")
    outputs = _output_count(victim)
    if outputs == 1:
        if mode == "label":
            raise RejectedInputError("regression victims expose no labels to extract")
        return forward_logits(victim, inputs).astype(np.float32)
    probs = predict_proba(victim, inputs)
    if mode == "label":
        return np.eye(outputs, dtype=np.float32)[np.argmax(probs, axis=1)]
    return probs.astype(np.float32)


def extract(victim: DiffModel, transfer_inputs: np.ndarray, mode: str, surrogate_arch: ArchSpec,
            config: TrainConfig, perturb: Optional[Perturb] = None) -> DiffModel:
    """Train a fresh surrogate on the victim's hard labels or full probability vectors."""
    inputs = transfer_inputs.inputs if isinstance(transfer_inputs, DatasetSplit) else np.asarray(transfer_inputs)
    targets = victim_targets(victim, inputs, mode)
    regression = _output_count(victim) == 1
    surrogate = surrogate_arch.build(config.seed)
    return fit(surrogate, inputs.astype(np.float32), targets, config, regression=regression, perturb=perturb)


def loss_pgd(model: DiffModel, inputs: np.ndarray, targets: np.ndarray, cfg: PGDConfig) -> np.ndarray:
    """Untargeted PGD on the cross-entropy of (inputs, targets)."""
    def gradient(x: np.ndarray) -> np.ndarray:
        graph = ComputeGraph()
        leaf = graph.leaf(x, requires_grad=True)
        graph.backward(graph.softmax_cross_entropy(model.forward(graph, leaf), targets))
        return leaf.grad

    return pgd_ascend(inputs, gradient, cfg)


def adversarial_harden(model: DiffModel, dataset: DatasetSplit, pgd_cfg: PGDConfig,
                       epochs: int, config: Optional[TrainConfig] = None) -> DiffModel:
    """Adversarial training: every batch is replaced by PGD perturbations of itself."""
    base = config or TrainConfig()
    config = TrainConfig(epochs=epochs, lr=base.lr, batch=base.batch, seed=base.seed)

    def perturb(current: DiffModel, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        if pgd_cfg.eps == 0:
            return x
        return loss_pgd(current, x, t, pgd_cfg)

    return fit(model, dataset.inputs, dataset.targets(), config, ids=dataset.ids, perturb=perturb)


def unlearn_exact(dataset: DatasetSplit, forget_ids: Iterable[int], arch: ArchSpec,
                  config: TrainConfig, audit: Optional[List[int]] = None) -> DiffModel:
    """Retrain from scratch on train minus forget; forget samples never reach a gradient."""
    forget_ids = set(int(i) for i in forget_ids)
    unknown = forget_ids - set(dataset.ids.tolist())
    if unknown:
        raise RejectedInputError(f"forget ids outside the train split: {sorted(unknown)[:5]}")
    if len(forget_ids) >= len(dataset):
        raise RejectedInputError("forget set covers the whole train split")
    return train(arch, dataset.without(forget_ids), config, audit=audit)


@dataclass(frozen=True)
class UnlearnConfig:
    epochs: int = 5
    ascent_steps: int = 1
    ascent_lr: float = 0.05
    maintenance_lr: float = 0.05
    batch: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise RejectedInputError("approximate unlearning needs at least one epoch")
        if self.ascent_steps < 0 or self.ascent_lr < 0 or self.maintenance_lr < 0:
            raise RejectedInputError(f"invalid unlearning config {self}")


def unlearn_approx(reference: DiffModel, forget_set: DatasetSplit, retained: DatasetSplit,
                   config: UnlearnConfig) -> List[DiffModel]:
    """Per epoch: `ascent_steps` passes of gradient ascent on the forget loss, then one
    maintenance pass on the retained data. One checkpoint per epoch.

    With zero ascent steps every epoch is skipped and each checkpoint equals the incoming model.
    """
    checkpoints: List[DiffModel] = []
    model = reference
    for epoch in range(config.epochs):
        if config.ascent_steps > 0:
            ascent = TrainConfig(epochs=config.ascent_steps, lr=config.ascent_lr, batch=config.batch,
                                 seed=derive_seed(config.seed, "ascent", epoch))
            model = fit(model, forget_set.inputs, forget_set.targets(), ascent, ids=forget_set.ids,
                        regression=forget_set.is_regression, ascent=True)
            maintain = TrainConfig(epochs=1, lr=config.maintenance_lr, batch=config.batch,
                                   seed=derive_seed(config.seed, "maintain", epoch))
            model = fit(model, retained.inputs, retained.targets(), maintain, ids=retained.ids,
                        regression=retained.is_regression)
        checkpoints.append(model)
        logger.debug("approximate unlearning epoch %d done", epoch + 1)
    return checkpoints


# ==================== Manifest ====================

@dataclass(frozen=True)
class ZooEntry:
    model_id: str
    kind: LineageKind
    parent_id: Optional[str]
    seed: int
    config_hash: int


@dataclass
class ZooManifest:
    entries: List[ZooEntry] = field(default_factory=list)

    def add(self, entry: ZooEntry) -> None:
        if any(e.model_id == entry.model_id for e in self.entries):
            raise ConfigError(f"duplicate model id {entry.model_id}")
        self.entries.append(entry)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, model_id: str) -> ZooEntry:
        for entry in self.entries:
            if entry.model_id == model_id:
                return entry
        raise KeyError(model_id)

    def ids(self, kinds: Optional[Iterable[LineageKind]] = None) -> List[str]:
        kinds = set(kinds) if kinds is not None else None
        return [e.model_id for e in self.entries if kinds is None or e.kind in kinds]

    def validate(self) -> None:
        """Parents precede children, so file order is a topological order of the lineage."""
        seen = set()
        for entry in self.entries:
            if entry.parent_id is None and entry.kind not in ROOT_KINDS:
                raise ConfigError(f"{entry.model_id}: {entry.kind.value} models need a parent")
            if entry.parent_id is not None and entry.parent_id not in seen:
                raise ConfigError(f"{entry.model_id}: parent {entry.parent_id} is not an earlier entry")
            seen.add(entry.model_id)


# ==================== Zoo building ====================

@dataclass
class Zoo:
    manifest: ZooManifest
    models: Dict[str, DiffModel]

    def register(self, model_id: str, kind: LineageKind, model: DiffModel, seed: int,
                 config: TrainConfig, parent_id: Optional[str] = None) -> DiffModel:
        self.manifest.add(ZooEntry(model_id, kind, parent_id, seed, config.hash))
        self.models[model_id] = model
        logger.info("Zoo model %s (%s%s) ready", model_id, kind.value,
                    f" <- {parent_id}" if parent_id else "")
        return model


def run_jobs(tasks: Sequence[Callable[[], DiffModel]], jobs: int) -> List[DiffModel]:
    """Runs independent training jobs; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda task: task(), tasks))


def guarded(model_id: str, task: Callable[[], DiffModel]) -> Callable[[], DiffModel]:
    def run() -> DiffModel:
        try:
            return task()
        except TrainingFailure as exc:
            raise exc.for_model(model_id) from exc
    return run


def _derived(seed: int, *labels) -> int:
    return derive_seed(seed, *labels) % (2**31)


@dataclass(frozen=True)
class TaskZooSpec:
    """Rotated-boundary task family; ground-truth relatedness is -|delta theta|."""
    thetas: Tuple[float, ...] = (0.0, 15.0, 30.0, 60.0, 90.0)
    permuted_control: bool = True
    samples: int = 600
    probe_theta: float = 45.0
    arch: ArchSpec = ArchSpec(kind="mlp", input_shape=(2,), hidden=(16,), outputs=2, activation="tanh")
    train: TrainConfig = TrainConfig(epochs=30, lr=0.5, batch=32, seed=0)
    seed: int = 0

    def tasks(self) -> List[Tuple[str, float, bool]]:
        """(model id, boundary angle, permuted labels) per compared task model."""
        tasks = [(f"task-{int(theta):03d}", float(theta), False) for theta in self.thetas]
        if self.permuted_control:
            tasks.append((f"task-{int(self.thetas[0]):03d}-permuted", float(self.thetas[0]), True))
        return tasks

    def ground_truth_angles(self) -> Dict[str, float]:
        return {model_id: theta for model_id, theta, _ in self.tasks()}

    def datasets(self) -> Dict[str, DatasetSplit]:
        return {model_id: rotated_boundary_task(theta, self.samples, self.seed, distribution_id=index,
                                                permuted=permuted)
                for index, (model_id, theta, permuted) in enumerate(self.tasks())}

    def probe_dataset(self) -> DatasetSplit:
        return rotated_boundary_task(self.probe_theta, self.samples, self.seed, distribution_id=999)


def build_task_zoo(spec: TaskZooSpec, jobs: int = 1) -> Zoo:
    zoo = Zoo(ZooManifest(), {})
    datasets = spec.datasets()
    ids = list(datasets)
    configs = [TrainConfig(spec.train.epochs, spec.train.lr, spec.train.batch, _derived(spec.seed, model_id))
               for model_id in ids]
    probe_config = TrainConfig(spec.train.epochs, spec.train.lr, spec.train.batch, _derived(spec.seed, "probe"))
    tasks = [guarded(model_id, lambda d=datasets[model_id], c=config: train(spec.arch, d, c))
             for model_id, config in zip(ids, configs)]
    tasks.append(guarded("probe", lambda: train(spec.arch, spec.probe_dataset(), probe_config)))
    models = run_jobs(tasks, jobs)
    for model_id, config, model in zip(ids, configs, models):
        zoo.register(model_id, LineageKind.INDEPENDENT, model, config.seed, config)
    zoo.register("probe", LineageKind.PROBE, models[-1], probe_config.seed, probe_config)
    zoo.manifest.validate()
    return zoo


@dataclass(frozen=True)
class IPZooSpec:
    """Victim, three models per stealing family and independently trained models."""
    samples: int = 3000
    num_classes: int = 10
    image_shape: Tuple[int, int, int] = (16, 16, 1)
    noise: float = 0.15
    arch: ArchSpec = ArchSpec(kind="mlp", input_shape=(16, 16, 1), hidden=(64,), outputs=10, activation="relu")
    independent_arches: Tuple[ArchSpec, ...] = (
        ArchSpec(kind="mlp", input_shape=(16, 16, 1), hidden=(64,), outputs=10, activation="relu"),
        ArchSpec(kind="mlp", input_shape=(16, 16, 1), hidden=(48,), outputs=10, activation="relu"),
    )
    train: TrainConfig = TrainConfig(epochs=20, lr=0.05, batch=32, seed=0)
    finetune_epochs: int = 5
    extract_epochs: int = 30
    prune_fractions: Tuple[float, ...] = (0.2, 0.4, 0.6)
    per_family: int = 3
    independent: int = 6
    pgd: PGDConfig = PGDConfig(steps=5, alpha=0.01, eps=0.03)
    harden_epochs: int = 3
    include_transfer: bool = False
    seed: int = 0

    def datasets(self) -> Dict[str, DatasetSplit]:
        full = pattern_images(self.samples, self.num_classes, self.image_shape, self.noise, self.seed, 0)
        parts = split(full, {SplitTag.TRAIN: 0.5, SplitTag.TRANSFER: 0.3, SplitTag.HOLDOUT: 0.2}, self.seed)
        datasets = {tag.value: part for tag, part in parts.items()}
        if self.include_transfer:
            datasets["transfer-task"] = pattern_images(self.samples // 2, self.num_classes, self.image_shape,
                                                       self.noise, self.seed, 1)
        return datasets


def _config(base: TrainConfig, epochs: int, seed: int) -> TrainConfig:
    return TrainConfig(epochs=epochs, lr=base.lr, batch=base.batch, seed=seed)


def build_ip_zoo(spec: IPZooSpec, jobs: int = 1) -> Zoo:
    zoo = Zoo(ZooManifest(), {})
    data = spec.datasets()
    train_split, transfer_split = data["train"], data["transfer"]
    if np.intersect1d(train_split.ids, transfer_split.ids).size:
        raise ConfigError("transfer inputs overlap the victim's train split")

    victim_config = _config(spec.train, spec.train.epochs, _derived(spec.seed, "victim"))
    victim = zoo.register("victim", LineageKind.VICTIM,
                          guarded("victim", lambda: train(spec.arch, train_split, victim_config))(),
                          victim_config.seed, victim_config)
    stolen_labels = DatasetSplit(transfer_split.inputs, np.argmax(victim_targets(victim, transfer_split.inputs, "label"), axis=1),
                                 SplitTag.TRANSFER, transfer_split.distribution_id, transfer_split.ids,
                                 transfer_split.num_classes)

    plan: List[Tuple[str, LineageKind, Optional[str], TrainConfig, Callable[[], DiffModel]]] = []
    for i in range(spec.per_family):
        ft = _config(spec.train, spec.finetune_epochs, _derived(spec.seed, "finetune", i))
        ex = _config(spec.train, spec.extract_epochs, _derived(spec.seed, "extract", i))
        fraction = spec.prune_fractions[i % len(spec.prune_fractions)]
        plan += [
            (f"finetune-all-{i}", LineageKind.FINETUNE_ALL, "victim", ft,
             lambda c=ft: finetune(victim, transfer_split, "all", c)),
            (f"finetune-last-{i}", LineageKind.FINETUNE_LAST, "victim", ft,
             lambda c=ft: finetune(victim, transfer_split, "last", c)),
            (f"pruned-{i}", LineageKind.PRUNED, "victim", ft,
             lambda c=ft, f=fraction: prune(victim, f, c.epochs, transfer_split, c)),
            (f"extract-label-{i}", LineageKind.EXTRACT_LABEL, "victim", ex,
             lambda c=ex: extract(victim, transfer_split, "label", spec.arch, c)),
            (f"extract-prob-{i}", LineageKind.EXTRACT_PROB, "victim", ex,
             lambda c=ex: extract(victim, transfer_split, "prob", spec.arch, c)),
            (f"extract-adv-{i}", LineageKind.EXTRACT_ADV, "victim", ex,
             lambda c=ex: adversarial_harden(extract(victim, transfer_split, "label", spec.arch, c),
                                             stolen_labels, spec.pgd, spec.harden_epochs, c)),
        ]
        if spec.include_transfer:
            plan.append((f"transfer-{i}", LineageKind.TRANSFER, "victim", ft,
                         lambda c=ft: transfer(victim, data["transfer-task"], "all", c)))
    for i in range(spec.independent):
        arch = spec.independent_arches[i % len(spec.independent_arches)]
        ind = _config(spec.train, spec.train.epochs, _derived(spec.seed, "independent", i))
        plan.append((f"independent-{i}", LineageKind.INDEPENDENT, None, ind,
                     lambda c=ind, a=arch: train(a, train_split, c)))
    probe = _config(spec.train, spec.train.epochs, _derived(spec.seed, "probe"))
    plan.append(("probe", LineageKind.PROBE, None, probe, lambda c=probe: train(spec.arch, train_split, c)))

    plan.sort(key=lambda item: (list(LineageKind).index(item[1]), item[0]))
    models = run_jobs([guarded(model_id, task) for model_id, _, _, _, task in plan], jobs)
    for (model_id, kind, parent, config, _), model in zip(plan, models):
        zoo.register(model_id, kind, model, config.seed, config, parent)
    zoo.manifest.validate()
    return zoo


@dataclass(frozen=True)
class UnlearnZooSpec:
    samples: int = 1000
    num_classes: int = 10
    image_shape: Tuple[int, int, int] = (16, 16, 1)
    noise: float = 0.35
    forget: int = FORGET_SET_SIZE
    arch: ArchSpec = ArchSpec(kind="mlp", input_shape=(16, 16, 1), hidden=(64,), outputs=10, activation="relu")
    train: TrainConfig = TrainConfig(epochs=30, lr=0.05, batch=32, seed=0)
    unlearn: UnlearnConfig = UnlearnConfig(epochs=5, ascent_steps=1, ascent_lr=0.02, maintenance_lr=0.02)
    seed: int = 0

    def datasets(self) -> Dict[str, DatasetSplit]:
        full = pattern_images(self.samples, self.num_classes, self.image_shape, self.noise, self.seed, 0)
        full = full.take(np.arange(len(full)), SplitTag.TRAIN)
        forget, retained = sample_forget(full, self.forget, self.seed)
        return {"train": full, "forget": forget, "retained": retained}


def build_unlearning_zoo(spec: UnlearnZooSpec, jobs: int = 1) -> Zoo:
    zoo = Zoo(ZooManifest(), {})
    data = spec.datasets()
    configs = {name: _config(spec.train, spec.train.epochs, _derived(spec.seed, name))
               for name in ("reference", "unrelated", "unlearn-exact")}
    reference, unrelated, exact = run_jobs([
        guarded("reference", lambda: train(spec.arch, data["train"], configs["reference"])),
        guarded("unrelated", lambda: train(spec.arch, data["train"], configs["unrelated"])),
        guarded("unlearn-exact", lambda: unlearn_exact(data["train"], data["forget"].ids, spec.arch,
                                                       configs["unlearn-exact"])),
    ], jobs)
    zoo.register("reference", LineageKind.REFERENCE, reference, configs["reference"].seed, configs["reference"])
    zoo.register("unrelated", LineageKind.UNRELATED, unrelated, configs["unrelated"].seed, configs["unrelated"])
    zoo.register("unlearn-exact", LineageKind.UNLEARN_EXACT, exact, configs["unlearn-exact"].seed,
                 configs["unlearn-exact"], "reference")
    approx_config = TrainConfig(spec.unlearn.epochs, spec.unlearn.ascent_lr, spec.unlearn.batch, spec.unlearn.seed)
    checkpoints = guarded("unlearn-approx",
                          lambda: unlearn_approx(reference, data["forget"], data["retained"], spec.unlearn))()
    parent = "reference"
    for epoch, model in enumerate(checkpoints, start=1):
        model_id = f"unlearn-approx-{epoch:02d}"
        zoo.register(model_id, LineageKind.UNLEARN_APPROX, model, spec.unlearn.seed, approx_config, parent)
        parent = model_id
    zoo.manifest.validate()
    return zoo
