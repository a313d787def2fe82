"""Text and binary formats of every artifact the commands read or write.

Floats are written with 17 significant digits, which round-trips float64 exactly.
"""

import csv
import io
import json
import logging
import os
import re
import struct
import tempfile
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from refcal.module_utils.errors import CheckpointFormatError, DatasetFormatError, PredictionFormatError
from refcal.module_utils.models import (
    SPLITS,
    STOCHASTIC_TOLERANCE,
    DatasetMeta,
    NetworkParams,
    ProbabilityBatch,
    ReliabilityReport,
    RunManifest,
    SyntheticDataset,
    TrainingLogEntry,
)
from refcal.module_utils.types import FloatArray, IntArray, TJsonObject

logger = logging.getLogger(__name__)

DATASET_HEADER = re.compile(r"^# refcal-dataset v1 K=(\d+) d=(\d+) N=(\d+)$")
DATASET_META = re.compile(r"^# meta imbalance_factor=(\S+) seed=(\S+) corruption_severity=(\d+)$")
PREDICTIONS_HEADER = re.compile(r"^# refcal-predictions v1 K=(\d+) N=(\d+)$")
CHECKPOINT_MAGIC = b"RCALCKPT"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("epoch", "stage", "loss", "val_top1", "val_auc", "val_ece")


def format_float(value: float) -> str:
    return "{0:.17g}".format(value)


def _format_optional(value: Optional[float]) -> str:
    return "" if value is None else format_float(value)


def atomic_write(path: str, content: Union[str, bytes]) -> None:
    """Write to a temporary file in the target directory, then rename over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    data = content.encode("utf-8") if isinstance(content, str) else content
    handle, temporary = tempfile.mkstemp(dir=directory, prefix=".refcal-", suffix=".tmp")
    try:
        with os.fdopen(handle, "wb") as stream:
            stream.write(data)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.remove(temporary)
        raise
    logger.debug("Wrote %s (%d bytes)", path, len(data))


def _read_text(path: str, error: type) -> List[str]:
    try:
        with open(path, "r", encoding="utf-8") as stream:
            return stream.read().splitlines()
    except OSError as e:
        raise error("Could not read '{0}': {1}.".format(path, e.strerror))
    except UnicodeDecodeError as e:
        raise error("'{0}' is not UTF-8 text: byte {1} is invalid.".format(path, e.start))


def _numbered_rows(lines: Sequence[str], start: int) -> Iterator[Tuple[int, List[str]]]:
    for offset, line in enumerate(lines[start:]):
        if line.strip():
            yield start + offset + 1, line.split(",")


# datasets


def dump_dataset(dataset: SyntheticDataset) -> str:
    meta = dataset.meta
    lines = [
        "# refcal-dataset v1 K={0} d={1} N={2}".format(meta.num_classes, dataset.dim, dataset.size),
        "# meta imbalance_factor={0} seed={1} corruption_severity={2}".format(
            format_float(meta.imbalance_factor), "none" if meta.seed is None else meta.seed, meta.corruption_severity
        ),
    ]
    for split, label, row in zip(dataset.split, dataset.labels, dataset.features):
        lines.append(",".join([str(split), str(int(label))] + [format_float(value) for value in row]))
    return "\n".join(lines) + "\n"


def write_dataset(path: str, dataset: SyntheticDataset) -> None:
    atomic_write(path, dump_dataset(dataset))


def parse_dataset(lines: Sequence[str]) -> SyntheticDataset:
    header = DATASET_HEADER.match(lines[0].strip()) if lines else None
    if header is None:
        raise DatasetFormatError("Line 1: expected '# refcal-dataset v1 K=<K> d=<d> N=<N>'.", line=1)
    num_classes, dim, size = (int(group) for group in header.groups())
    meta = DatasetMeta(num_classes=num_classes)
    start = 1
    if len(lines) > 1 and lines[1].startswith("# meta"):
        found = DATASET_META.match(lines[1].strip())
        if found is None:
            raise DatasetFormatError("Line 2: malformed meta line.", line=2)
        try:
            meta = DatasetMeta(
                num_classes=num_classes,
                imbalance_factor=float(found.group(1)),
                seed=None if found.group(2) == "none" else int(found.group(2)),
                corruption_severity=int(found.group(3)),
            )
        except ValueError:
            raise DatasetFormatError("Line 2: malformed meta values.", line=2)
        start = 2

    features = np.empty((size, dim), dtype=np.float64)
    labels = np.empty(size, dtype=np.int64)
    split = np.empty(size, dtype="<U5")
    count = 0
    for number, fields in _numbered_rows(lines, start):
        if count == size:
            raise DatasetFormatError("Line {0}: more rows than the declared N={1}.".format(number, size), line=number)
        if len(fields) != dim + 2:
            raise DatasetFormatError(
                "Line {0}: expected {1} fields, got {2}.".format(number, dim + 2, len(fields)), line=number
            )
        if fields[0] not in SPLITS:
            raise DatasetFormatError("Line {0}: unknown split '{1}'.".format(number, fields[0]), line=number)
        try:
            labels[count] = int(fields[1])
            features[count] = [float(value) for value in fields[2:]]
        except ValueError:
            raise DatasetFormatError("Line {0}: non-numeric field.".format(number), line=number)
        if not np.all(np.isfinite(features[count])):
            raise DatasetFormatError("Line {0}: non-finite feature.".format(number), line=number)
        if not 0 <= labels[count] < num_classes:
            raise DatasetFormatError("Line {0}: label outside [0, {1}).".format(number, num_classes), line=number)
        split[count] = fields[0]
        count += 1
    if count != size:
        raise DatasetFormatError("Expected {0} rows, found {1}.".format(size, count))
    return SyntheticDataset(features=features, labels=labels, split=split, meta=meta)


def read_dataset(path: str) -> SyntheticDataset:
    return parse_dataset(_read_text(path, DatasetFormatError))


# prediction dumps


def dump_predictions(batch: ProbabilityBatch, sample_ids: Optional[Sequence[int]] = None) -> str:
    ids = range(batch.size) if sample_ids is None else sample_ids
    lines = ["# refcal-predictions v1 K={0} N={1}".format(batch.num_classes, batch.size)]
    for sample_id, label, row in zip(ids, batch.labels, batch.probs):
        lines.append(",".join([str(int(sample_id)), str(int(label))] + [format_float(value) for value in row]))
    return "\n".join(lines) + "\n"


def write_predictions(path: str, batch: ProbabilityBatch, sample_ids: Optional[Sequence[int]] = None) -> None:
    atomic_write(path, dump_predictions(batch, sample_ids))


def parse_predictions(lines: Sequence[str]) -> Tuple[ProbabilityBatch, IntArray]:
    header = PREDICTIONS_HEADER.match(lines[0].strip()) if lines else None
    if header is None:
        raise PredictionFormatError("Line 1: expected '# refcal-predictions v1 K=<K> N=<N>'.", line=1)
    num_classes, size = int(header.group(1)), int(header.group(2))
    probs = np.empty((size, num_classes), dtype=np.float64)
    labels = np.empty(size, dtype=np.int64)
    sample_ids = np.empty(size, dtype=np.int64)
    count = 0
    for number, fields in _numbered_rows(lines, 1):
        if count == size:
            raise PredictionFormatError(
                "Line {0}: more rows than the declared N={1}.".format(number, size), line=number
            )
        if len(fields) != num_classes + 2:
            raise PredictionFormatError(
                "Line {0}: expected {1} fields, got {2}.".format(number, num_classes + 2, len(fields)), line=number
            )
        try:
            sample_ids[count] = int(fields[0])
            labels[count] = int(fields[1])
            row = np.array([float(value) for value in fields[2:]], dtype=np.float64)
        except ValueError:
            raise PredictionFormatError("Line {0}: non-numeric field.".format(number), line=number)
        if not 0 <= labels[count] < num_classes:
            raise PredictionFormatError("Line {0}: label outside [0, {1}).".format(number, num_classes), line=number)
        if not np.all(np.isfinite(row)):
            raise PredictionFormatError("Line {0}: non-finite probability.".format(number), line=number)
        if np.any(row < 0) or abs(float(row.sum()) - 1.0) > STOCHASTIC_TOLERANCE:
            raise PredictionFormatError(
                "Line {0}: probabilities sum to {1!r}, expected 1.".format(number, float(row.sum())), line=number
            )
        probs[count] = row
        count += 1
    if count != size:
        raise PredictionFormatError("Expected {0} rows, found {1}.".format(size, count))
    return ProbabilityBatch.create(probs, labels), sample_ids


def read_predictions(path: str) -> Tuple[ProbabilityBatch, IntArray]:
    return parse_predictions(_read_text(path, PredictionFormatError))


# checkpoints: magic, version, header length, JSON header, little-endian float64 payload


def dump_checkpoint(params: NetworkParams) -> bytes:
    arrays = params.named_arrays()
    header = json.dumps(
        {
            "names": [name for name, _ in arrays],
            "shapes": [list(array.shape) for _, array in arrays],
            "temperature": params.temperature,
        },
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(array, dtype="<f8").tobytes() for _, array in arrays)
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header + payload


def load_checkpoint(data: bytes) -> NetworkParams:
    prefix = len(CHECKPOINT_MAGIC) + 8
    if len(data) < prefix or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointFormatError("Not a refcal checkpoint.")
    version, header_length = struct.unpack("<II", data[len(CHECKPOINT_MAGIC) : prefix])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError("Unsupported checkpoint version {0}.".format(version))
    try:
        header = json.loads(data[prefix : prefix + header_length].decode("utf-8"))
        names: List[str] = header["names"]
        shapes: List[List[int]] = header["shapes"]
        temperature = float(header["temperature"])
    except (ValueError, KeyError, TypeError):
        raise CheckpointFormatError("Corrupt checkpoint header.")

    arrays: Dict[str, FloatArray] = {}
    offset = prefix + header_length
    for name, shape in zip(names, shapes):
        length = int(np.prod(shape)) * 8
        if offset + length > len(data):
            raise CheckpointFormatError("Checkpoint payload is truncated at {0}.".format(name))
        block = np.frombuffer(data, dtype="<f8", count=length // 8, offset=offset)
        arrays[name] = block.astype(np.float64).reshape(shape)
        offset += length
    if offset != len(data):
        raise CheckpointFormatError("Checkpoint has {0} trailing bytes.".format(len(data) - offset))
    return NetworkParams.from_named_arrays(arrays, temperature)


def write_checkpoint(path: str, params: NetworkParams) -> None:
    atomic_write(path, dump_checkpoint(params))


def read_checkpoint(path: str) -> NetworkParams:
    try:
        with open(path, "rb") as stream:
            return load_checkpoint(stream.read())
    except OSError as e:
        raise CheckpointFormatError("Could not read '{0}': {1}.".format(path, e.strerror))


# JSON documents


def dump_json(document: TJsonObject) -> str:
    return json.dumps(document, indent=2) + "\n"


def write_report(path: str, report: ReliabilityReport) -> None:
    atomic_write(path, dump_json(report.to_json()))


def read_report(path: str) -> ReliabilityReport:
    with open(path, "r", encoding="utf-8") as stream:
        return ReliabilityReport.from_json(json.load(stream))


def write_manifest(path: str, manifest: RunManifest) -> None:
    atomic_write(path, dump_json(manifest.to_json()))


def manifest_path(output: str, directory: bool = False) -> str:
    return os.path.join(output, "manifest.json") if directory else output + ".manifest.json"


# training logs


def dump_training_log(entries: Sequence[TrainingLogEntry]) -> str:
    stream = io.StringIO()
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for entry in entries:
        writer.writerow(
            [
                entry.epoch,
                entry.stage,
                format_float(entry.loss),
                _format_optional(entry.val_top1),
                _format_optional(entry.val_auc),
                _format_optional(entry.val_ece),
            ]
        )
    return stream.getvalue()


def write_training_log(path: str, entries: Sequence[TrainingLogEntry]) -> None:
    atomic_write(path, dump_training_log(entries))


def parse_training_log(text: str) -> List[TrainingLogEntry]:
    def optional(value: str) -> Optional[float]:
        return float(value) if value else None

    reader = csv.DictReader(io.StringIO(text))
    return [
        TrainingLogEntry(
            epoch=int(row["epoch"]),
            stage=row["stage"],
            loss=float(row["loss"]),
            val_top1=optional(row["val_top1"]),
            val_auc=optional(row["val_auc"]),
            val_ece=optional(row["val_ece"]),
        )
        for row in reader
    ]
