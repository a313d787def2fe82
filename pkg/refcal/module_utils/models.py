from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from refcal.module_utils.errors import (
    ConfigInvalid,
    EmptyBatch,
    EpsilonOutOfRange,
    LabelOutOfRange,
    NegativeGamma,
    NotStochastic,
    NotUnitNorm,
    ShapeMismatch,
)
from refcal.module_utils.types import BoolArray, FloatArray, IntArray, StrArray, TJsonObject

UNIT_NORM_TOLERANCE = 1e-9
STOCHASTIC_TOLERANCE = 1e-6
SPLITS = ("train", "val", "test")
LOSS_KINDS = ("nll", "label_smoothing", "focal")
# short names accepted on the command line
LOSS_ALIASES = {
    "nll": "nll",
    "ce": "nll",
    "ls": "label_smoothing",
    "label_smoothing": "label_smoothing",
    "focal": "focal",
}
SELECTION_MODES = ("best_val", "final")


def _optional_float(value: Optional[float]) -> Optional[float]:
    return None if value is None else float(value)


@dataclass
class EmbeddingBatch:
    vectors: FloatArray
    labels: IntArray
    num_classes: int

    @property
    def size(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @classmethod
    def create(
        cls, vectors: Sequence[Sequence[float]], labels: Sequence[int], num_classes: Optional[int] = None
    ) -> "EmbeddingBatch":
        matrix = np.asarray(vectors, dtype=np.float64)
        label_array = np.asarray(labels, dtype=np.int64)
        if matrix.ndim != 2 or label_array.shape != (matrix.shape[0],):
            raise ShapeMismatch(
                "Embedding batch needs an N x d matrix and N labels, got {0} and {1}.".format(
                    matrix.shape, label_array.shape
                )
            )
        if matrix.shape[0] < 2 or matrix.shape[1] < 1:
            raise ShapeMismatch("Embedding batch needs N >= 2 and d >= 1, got {0}.".format(matrix.shape))
        k = int(label_array.max()) + 1 if num_classes is None else int(num_classes)
        if label_array.min() < 0 or label_array.max() >= k:
            raise LabelOutOfRange("Labels must lie in [0, {0}).".format(k))
        norms = np.linalg.norm(matrix, axis=1)
        worst = int(np.argmax(np.abs(norms - 1.0)))
        if abs(norms[worst] - 1.0) > UNIT_NORM_TOLERANCE:
            raise NotUnitNorm("Row {0} has norm {1!r}, expected 1.".format(worst, float(norms[worst])), row=worst)
        return cls(vectors=matrix, labels=label_array, num_classes=k)


@dataclass
class ProbabilityBatch:
    probs: FloatArray
    labels: IntArray

    @property
    def size(self) -> int:
        return int(self.probs.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[1])

    @property
    def predictions(self) -> IntArray:
        return np.argmax(self.probs, axis=1).astype(np.int64)

    @property
    def confidences(self) -> FloatArray:
        return np.max(self.probs, axis=1)

    @property
    def correct(self) -> BoolArray:
        return np.asarray(self.predictions == self.labels)

    @classmethod
    def create(cls, probs: Sequence[Sequence[float]], labels: Sequence[int]) -> "ProbabilityBatch":
        matrix = np.asarray(probs, dtype=np.float64)
        label_array = np.asarray(labels, dtype=np.int64)
        if matrix.ndim != 2 or matrix.shape[0] == 0:
            raise EmptyBatch("Probability batch is empty.")
        if label_array.shape != (matrix.shape[0],):
            raise ShapeMismatch("Expected {0} labels, got {1}.".format(matrix.shape[0], label_array.shape))
        if matrix.shape[1] < 2:
            raise ShapeMismatch("Probability rows need K >= 2 classes, got {0}.".format(matrix.shape[1]))
        if label_array.min() < 0 or label_array.max() >= matrix.shape[1]:
            raise LabelOutOfRange("Labels must lie in [0, {0}).".format(matrix.shape[1]))
        bad_rows = np.flatnonzero(
            ~np.all(np.isfinite(matrix), axis=1)
            | np.any(matrix < 0, axis=1)
            | (np.abs(matrix.sum(axis=1) - 1.0) > STOCHASTIC_TOLERANCE)
        )
        if bad_rows.size:
            raise NotStochastic("Row {0} is not a probability vector.".format(int(bad_rows[0])), row=int(bad_rows[0]))
        return cls(probs=matrix, labels=label_array)


@dataclass
class LossValue:
    value: float
    gradient: Optional[FloatArray] = None


@dataclass
class BoundReport:
    l_sc_tau1: float
    l_ref: float
    # jensen, drop of the +1, log-sum-exp/max, cosine identity
    chain: List[float]

    @property
    def margin(self) -> float:
        return self.l_sc_tau1 - self.l_ref

    def to_json(self) -> TJsonObject:
        return {
            "l_sc_tau1": self.l_sc_tau1,
            "l_ref": self.l_ref,
            "margin": self.margin,
            "chain": list(self.chain),
        }


@dataclass
class CalibrationLossSpec:
    kind: str = "nll"
    epsilon: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ConfigInvalid(
                "Unsupported calibration loss '{0}', choose one of: {1}.".format(self.kind, ", ".join(LOSS_KINDS))
            )
        if (self.kind == "label_smoothing") != (self.epsilon is not None):
            raise ConfigInvalid("epsilon is required by label_smoothing and only by it.")
        if (self.kind == "focal") != (self.gamma is not None):
            raise ConfigInvalid("gamma is required by focal and only by it.")
        if self.epsilon is not None and not 0.0 <= self.epsilon < 1.0:
            raise EpsilonOutOfRange("Label smoothing epsilon must lie in [0, 1), got {0}.".format(self.epsilon))
        if self.gamma is not None and self.gamma < 0:
            raise NegativeGamma("Focal gamma must be >= 0, got {0}.".format(self.gamma))

    @classmethod
    def from_json(cls, json: TJsonObject) -> "CalibrationLossSpec":
        name = str(json.get("loss", "nll"))
        if name not in LOSS_ALIASES:
            raise ConfigInvalid(
                "Unsupported calibration loss '{0}', choose one of: nll, ls, focal.".format(name),
            )
        kind = LOSS_ALIASES[name]
        return cls(
            kind=kind,
            epsilon=float(json.get("epsilon", 0.1)) if kind == "label_smoothing" else None,
            gamma=float(json.get("gamma", 2.0)) if kind == "focal" else None,
        )

    def to_json(self) -> TJsonObject:
        result: TJsonObject = {"loss": self.kind}
        if self.epsilon is not None:
            result["epsilon"] = self.epsilon
        if self.gamma is not None:
            result["gamma"] = self.gamma
        return result


@dataclass
class BinTable:
    edges: FloatArray
    counts: IntArray
    # empty bins carry 0 accuracy and 0 confidence
    accuracies: FloatArray
    confidences: FloatArray

    @property
    def num_bins(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def intervals(self) -> List[Tuple[float, float]]:
        return [(float(lo), float(hi)) for lo, hi in zip(self.edges[:-1], self.edges[1:])]

    def expected_calibration_error(self) -> float:
        weights = self.counts / float(self.total)
        return float(np.sum(weights * np.abs(self.accuracies - self.confidences)))

    def maximum_calibration_error(self) -> float:
        occupied = self.counts > 0
        if not np.any(occupied):
            return 0.0
        return float(np.max(np.abs(self.accuracies - self.confidences)[occupied]))

    def to_json(self) -> TJsonObject:
        return {
            "counts": [int(c) for c in self.counts],
            "accuracies": [float(a) for a in self.accuracies],
            "confidences": [float(c) for c in self.confidences],
        }

    @classmethod
    def from_json(cls, json: TJsonObject) -> "BinTable":
        counts = np.asarray(json["counts"], dtype=np.int64)
        return cls(
            edges=np.arange(counts.shape[0] + 1, dtype=np.float64) / counts.shape[0],
            counts=counts,
            accuracies=np.asarray(json["accuracies"], dtype=np.float64),
            confidences=np.asarray(json["confidences"], dtype=np.float64),
        )


@dataclass
class OodReport:
    fpr_at_tpr95: float
    detection_error: float
    auroc: float
    aupr_in: float
    aupr_out: float

    def to_json(self) -> TJsonObject:
        return {
            "fpr_at_tpr95": self.fpr_at_tpr95,
            "detection_error": self.detection_error,
            "auroc": self.auroc,
            "aupr_in": self.aupr_in,
            "aupr_out": self.aupr_out,
        }


@dataclass
class Layer:
    # fan_in x fan_out, applied as inputs @ weight + bias
    weight: FloatArray
    bias: FloatArray

    def copy(self) -> "Layer":
        return Layer(weight=self.weight.copy(), bias=self.bias.copy())


@dataclass
class LayerStack:
    encoder: List[Layer]
    projection: Layer
    classifier: Layer

    def named_arrays(self) -> List[Tuple[str, FloatArray]]:
        arrays: List[Tuple[str, FloatArray]] = []
        for index, layer in enumerate(self.encoder):
            arrays.append(("encoder.{0}.weight".format(index), layer.weight))
            arrays.append(("encoder.{0}.bias".format(index), layer.bias))
        for name, layer in (("projection", self.projection), ("classifier", self.classifier)):
            arrays.append(("{0}.weight".format(name), layer.weight))
            arrays.append(("{0}.bias".format(name), layer.bias))
        return arrays


@dataclass
class NetworkParams(LayerStack):
    temperature: float = 1.0

    @property
    def input_dim(self) -> int:
        first = self.encoder[0] if self.encoder else self.projection
        return int(first.weight.shape[0])

    @property
    def representation_dim(self) -> int:
        return int(self.projection.weight.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.classifier.weight.shape[1])

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            encoder=[layer.copy() for layer in self.encoder],
            projection=self.projection.copy(),
            classifier=self.classifier.copy(),
            temperature=self.temperature,
        )

    def with_temperature(self, temperature: float) -> "NetworkParams":
        return replace(self, temperature=float(temperature))

    @classmethod
    def from_named_arrays(cls, arrays: Dict[str, FloatArray], temperature: float) -> "NetworkParams":
        def layer(prefix: str) -> Layer:
            try:
                return Layer(weight=arrays["{0}.weight".format(prefix)], bias=arrays["{0}.bias".format(prefix)])
            except KeyError as e:
                raise ShapeMismatch("Missing parameter block {0}.".format(e))

        depth = len([name for name in arrays if name.startswith("encoder.") and name.endswith(".weight")])
        return cls(
            encoder=[layer("encoder.{0}".format(index)) for index in range(depth)],
            projection=layer("projection"),
            classifier=layer("classifier"),
            temperature=temperature,
        )


@dataclass
class NetworkGradients(LayerStack):
    pass


@dataclass
class OptimizerState:
    lr: float
    momentum: float = 0.0
    steps: int = 0
    velocity: Dict[str, FloatArray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ConfigInvalid("Learning rate must be positive, got {0}.".format(self.lr))
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigInvalid("Momentum must lie in [0, 1), got {0}.".format(self.momentum))


@dataclass
class DatasetMeta:
    num_classes: int
    imbalance_factor: float = 1.0
    seed: Optional[int] = None
    corruption_severity: int = 0

    def to_json(self) -> TJsonObject:
        return {
            "num_classes": self.num_classes,
            "imbalance_factor": self.imbalance_factor,
            "seed": self.seed,
            "corruption_severity": self.corruption_severity,
        }

    @classmethod
    def from_json(cls, json: TJsonObject) -> "DatasetMeta":
        seed = json.get("seed")
        return cls(
            num_classes=int(json["num_classes"]),
            imbalance_factor=float(json.get("imbalance_factor", 1.0)),
            seed=None if seed is None else int(seed),
            corruption_severity=int(json.get("corruption_severity", 0)),
        )


@dataclass
class SyntheticDataset:
    features: FloatArray
    labels: IntArray
    split: StrArray
    meta: DatasetMeta

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def mask(self, split: str) -> BoolArray:
        return np.asarray(self.split == split)

    def subset(self, split: str) -> Tuple[FloatArray, IntArray]:
        selected = self.mask(split)
        return self.features[selected], self.labels[selected]

    def class_counts(self, split: Optional[str] = None) -> IntArray:
        labels = self.labels if split is None else self.labels[self.mask(split)]
        return np.bincount(labels, minlength=self.meta.num_classes).astype(np.int64)


@dataclass
class Stage1Config:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    # desk scale, image-scale runs use 0.1
    tau: float = 0.5


@dataclass
class Stage2Config:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    loss: CalibrationLossSpec = field(default_factory=CalibrationLossSpec)
    apply_temperature_scaling: bool = False


@dataclass
class ArchitectureConfig:
    hidden_dims: List[int] = field(default_factory=lambda: [64])
    representation_dim: int = 32
    projection_dim: int = 16


@dataclass
class TrainConfig:
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    seed: int = 1234
    selection: str = "best_val"

    KEYS = (
        "stage1_epochs",
        "stage1_batch_size",
        "stage1_lr",
        "stage1_momentum",
        "tau",
        "stage2_epochs",
        "stage2_batch_size",
        "stage2_lr",
        "stage2_momentum",
        "loss",
        "epsilon",
        "gamma",
        "temperature_scaling",
        "selection",
        "seed",
        "hidden_dims",
        "representation_dim",
        "projection_dim",
    )

    def validate(self) -> None:
        for name, epochs in (("stage1_epochs", self.stage1.epochs), ("stage2_epochs", self.stage2.epochs)):
            if epochs < 0:
                raise ConfigInvalid("{0} must be >= 0, got {1}.".format(name, epochs))
        sizes = (("stage1_batch_size", self.stage1.batch_size), ("stage2_batch_size", self.stage2.batch_size))
        for name, size in sizes:
            if size < 2:
                raise ConfigInvalid("{0} must be >= 2, got {1}.".format(name, size))
        for name, value in (("stage1_lr", self.stage1.lr), ("stage2_lr", self.stage2.lr)):
            if not value > 0:
                raise ConfigInvalid("{0} must be positive, got {1}.".format(name, value))
        for name, value in (("stage1_momentum", self.stage1.momentum), ("stage2_momentum", self.stage2.momentum)):
            if not 0.0 <= value < 1.0:
                raise ConfigInvalid("{0} must lie in [0, 1), got {1}.".format(name, value))
        if not self.stage1.tau > 0:
            raise ConfigInvalid("tau must be positive, got {0}.".format(self.stage1.tau))
        if self.selection not in SELECTION_MODES:
            raise ConfigInvalid(
                "selection must be one of {0}, got '{1}'.".format(", ".join(SELECTION_MODES), self.selection)
            )
        architecture = self.architecture
        if min([architecture.representation_dim, architecture.projection_dim] + list(architecture.hidden_dims)) < 1:
            raise ConfigInvalid("Layer widths must be >= 1.")

    @classmethod
    def from_json(cls, json: TJsonObject) -> "TrainConfig":
        unknown = sorted(set(json) - set(cls.KEYS))
        if unknown:
            raise ConfigInvalid("Unknown configuration keys: {0}.".format(", ".join(unknown)))
        defaults = cls()
        try:
            config = cls(
                stage1=Stage1Config(
                    epochs=int(json.get("stage1_epochs", defaults.stage1.epochs)),
                    batch_size=int(json.get("stage1_batch_size", defaults.stage1.batch_size)),
                    lr=float(json.get("stage1_lr", defaults.stage1.lr)),
                    momentum=float(json.get("stage1_momentum", defaults.stage1.momentum)),
                    tau=float(json.get("tau", defaults.stage1.tau)),
                ),
                stage2=Stage2Config(
                    epochs=int(json.get("stage2_epochs", defaults.stage2.epochs)),
                    batch_size=int(json.get("stage2_batch_size", defaults.stage2.batch_size)),
                    lr=float(json.get("stage2_lr", defaults.stage2.lr)),
                    momentum=float(json.get("stage2_momentum", defaults.stage2.momentum)),
                    loss=CalibrationLossSpec.from_json(json),
                    apply_temperature_scaling=bool(json.get("temperature_scaling", False)),
                ),
                architecture=ArchitectureConfig(
                    hidden_dims=[int(d) for d in json.get("hidden_dims", defaults.architecture.hidden_dims)],
                    representation_dim=int(
                        json.get("representation_dim", defaults.architecture.representation_dim)
                    ),
                    projection_dim=int(json.get("projection_dim", defaults.architecture.projection_dim)),
                ),
                seed=int(json.get("seed", defaults.seed)),
                selection=str(json.get("selection", defaults.selection)),
            )
        except (TypeError, ValueError) as e:
            raise ConfigInvalid("Malformed configuration value: {0}.".format(e))
        config.validate()
        return config

    def to_json(self) -> TJsonObject:
        result: TJsonObject = {
            "stage1_epochs": self.stage1.epochs,
            "stage1_batch_size": self.stage1.batch_size,
            "stage1_lr": self.stage1.lr,
            "stage1_momentum": self.stage1.momentum,
            "tau": self.stage1.tau,
            "stage2_epochs": self.stage2.epochs,
            "stage2_batch_size": self.stage2.batch_size,
            "stage2_lr": self.stage2.lr,
            "stage2_momentum": self.stage2.momentum,
        }
        result.update(self.stage2.loss.to_json())
        result.update(
            {
                "temperature_scaling": self.stage2.apply_temperature_scaling,
                "selection": self.selection,
                "seed": self.seed,
                "hidden_dims": list(self.architecture.hidden_dims),
                "representation_dim": self.architecture.representation_dim,
                "projection_dim": self.architecture.projection_dim,
            }
        )
        return result


@dataclass
class MetricConfig:
    bins: int = 15
    ace_ranges: int = 15
    smece_bandwidth: float = 0.05

    def to_json(self) -> TJsonObject:
        return {"bins": self.bins, "ace_ranges": self.ace_ranges, "smece_bandwidth": self.smece_bandwidth}


@dataclass
class TrainingLogEntry:
    epoch: int
    stage: str
    loss: float
    val_top1: Optional[float] = None
    val_auc: Optional[float] = None
    val_ece: Optional[float] = None
    # stage 1 only, full training split
    refinement: Optional[float] = None


@dataclass
class ReliabilityReport:
    top1: float
    auc: Optional[float]
    ece: float
    sce: float
    ace: float
    smece: float
    mce: float
    nll: float
    bin_table: BinTable
    config_fingerprint: str
    seed: Optional[int]
    predictions: Optional[ProbabilityBatch] = field(default=None, repr=False, compare=False)

    def to_json(self) -> TJsonObject:
        return {
            "top1": self.top1,
            "auc": self.auc,
            "ece": self.ece,
            "sce": self.sce,
            "ace": self.ace,
            "smece": self.smece,
            "mce": self.mce,
            "nll": self.nll,
            "bin_table": self.bin_table.to_json(),
            "config_fingerprint": self.config_fingerprint,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, json: TJsonObject) -> "ReliabilityReport":
        seed = json.get("seed")
        return cls(
            top1=float(json["top1"]),
            auc=_optional_float(json.get("auc")),
            ece=float(json["ece"]),
            sce=float(json["sce"]),
            ace=float(json["ace"]),
            smece=float(json["smece"]),
            mce=float(json["mce"]),
            nll=float(json["nll"]),
            bin_table=BinTable.from_json(json["bin_table"]),
            config_fingerprint=str(json["config_fingerprint"]),
            seed=None if seed is None else int(seed),
        )


@dataclass
class SeverityResult:
    severity: int
    top1: float
    auc: Optional[float]
    ece: float

    def to_json(self) -> TJsonObject:
        return {"severity": self.severity, "top1": self.top1, "auc": self.auc, "ece": self.ece}


@dataclass
class RobustnessReport:
    severities: List[SeverityResult]
    ood: OodReport

    def to_json(self) -> TJsonObject:
        return {"severities": [result.to_json() for result in self.severities], "ood": self.ood.to_json()}


@dataclass
class PropertyResult:
    name: str
    passed: bool
    checked: int
    # worst observed margin or error, direction depends on the property
    worst: float

    def to_json(self) -> TJsonObject:
        return {"name": self.name, "passed": self.passed, "checked": self.checked, "worst": self.worst}


@dataclass
class VerificationReport:
    properties: List[PropertyResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.properties)

    def to_json(self) -> TJsonObject:
        return {"passed": self.passed, "properties": [result.to_json() for result in self.properties]}


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    inputs: List[str]
    outputs: List[str]
    seed: Optional[int]
    version: str
    duration_seconds: float

    def to_json(self) -> TJsonObject:
        return {
            "command": self.command,
            "config_path": self.config_path,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "seed": self.seed,
            "version": self.version,
            "duration_seconds": self.duration_seconds,
        }
