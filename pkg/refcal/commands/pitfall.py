#!/usr/bin/python
# -*- coding: utf-8 -*-
# GNU General Public License v3.0+ (see https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

# language=yaml
DOCUMENTATION = r"""
---
command: pitfall
short_description: Shows how a post-hoc confidence remapping trades refinement for calibration.
description:
  - Computes, from the validation dump, the distribution of true labels for each predicted class, replaces
    every test probability vector with the row of its predicted class and reports the metrics before and after.
  - Writes C(before.json), C(after.json), C(delta.json) and C(manifest.json) into I(out_dir).
  - Fails with exit code 4 when a row peaks at a different class than the one it replaces, since the
    prediction would change.
options:
  predictions:
    description:
      - Prediction dump of the evaluated (test) samples.
    type: path
    required: true
  validation:
    description:
      - Prediction dump of the validation samples the rows are estimated from.
    type: path
    required: true
  out_dir:
    description:
      - Directory receiving the reports.
    type: path
    required: true
  bins:
    description:
      - Number of equal-width bins of ECE, SCE and MCE.
    type: int
    default: 15
  ace_ranges:
    description:
      - Number of adaptive ranges of ACE.
    type: int
    default: 15
  smece_bandwidth:
    description:
      - Kernel bandwidth of smECE.
    type: float
    default: 0.05
"""

# language=yaml
EXAMPLES = r"""
refcal evaluate --checkpoint runs/refcal/checkpoint.bin --data d.txt --split val --dump val.txt --out val.json
refcal pitfall --predictions runs/refcal/predictions.txt --validation val.txt --out-dir runs/pitfall
"""

# language=yaml
RETURN = r"""
delta_auc:
  type: float
  description: AUC after minus AUC before, null when either is undefined.
  returned: always
delta_ece:
  type: float
  description: ECE after minus ECE before.
  returned: always
distinct_confidences:
  type: dict
  description: Number of distinct top-label confidences before and after the transform.
  returned: always
"""

import logging
import os
import time
from typing import Optional, Sequence

import numpy as np

from refcal.module_utils.arguments import parse_arguments
from refcal.module_utils.errors import RefcalError
from refcal.module_utils.models import MetricConfig, ProbabilityBatch, ReliabilityReport
from refcal.module_utils.pipeline import confusion_rows, pitfall_transform, report_from_predictions
from refcal.module_utils.serialization import (
    atomic_write,
    dump_json,
    manifest_path,
    read_predictions,
    write_manifest,
    write_report,
)
from refcal.module_utils.types import TJsonObject
from refcal.module_utils.utils import build_manifest, fingerprint, format_percent, validate_input_file

logger = logging.getLogger(__name__)

BEFORE_FILE = "before.json"
AFTER_FILE = "after.json"
DELTA_FILE = "delta.json"


def distinct_confidences(batch: ProbabilityBatch) -> int:
    return int(np.unique(batch.confidences).size)


def delta_summary(
    before: ReliabilityReport, after: ReliabilityReport, before_batch: ProbabilityBatch, after_batch: ProbabilityBatch
) -> TJsonObject:
    return {
        "delta_auc": None if before.auc is None or after.auc is None else after.auc - before.auc,
        "delta_ece": after.ece - before.ece,
        "distinct_confidences": {
            "before": distinct_confidences(before_batch),
            "after": distinct_confidences(after_batch),
        },
    }


def main(argv: Optional[Sequence[str]] = None) -> None:
    started = time.perf_counter()
    try:
        params = parse_arguments(DOCUMENTATION, argv)
        inputs = [params["predictions"], params["validation"]]
        for path in inputs:
            validate_input_file(path)
        metric_config = MetricConfig(
            bins=params["bins"], ace_ranges=params["ace_ranges"], smece_bandwidth=params["smece_bandwidth"]
        )
        config_fingerprint = fingerprint(None, metric_config)
        test_batch, _ = read_predictions(params["predictions"])
        validation_batch, _ = read_predictions(params["validation"])

        rows = confusion_rows(validation_batch)
        transformed = pitfall_transform(test_batch, rows)
        before = report_from_predictions(test_batch, metric_config, config_fingerprint, None)
        after = report_from_predictions(transformed, metric_config, config_fingerprint, None)
        summary = delta_summary(before, after, test_batch, transformed)

        out_dir: str = params["out_dir"]
        outputs = [os.path.join(out_dir, name) for name in (BEFORE_FILE, AFTER_FILE, DELTA_FILE)]
        write_report(outputs[0], before)
        write_report(outputs[1], after)
        atomic_write(outputs[2], dump_json(summary))
        write_manifest(
            manifest_path(out_dir, directory=True), build_manifest("pitfall", None, inputs, outputs, None, started)
        )
    except RefcalError as e:
        e.fail(logger)

    for name, report in (("before", before), ("after", after)):
        print(
            "{0:<6} Top-1 {1} | AUC {2} | ECE {3}".format(
                name, format_percent(report.top1), format_percent(report.auc), format_percent(report.ece)
            )
        )
    print(
        "Delta AUC {0} | Delta ECE {1} | distinct confidences {2} -> {3}".format(
            format_percent(summary["delta_auc"]),  # type: ignore[arg-type]
            format_percent(summary["delta_ece"]),  # type: ignore[arg-type]
            distinct_confidences(test_batch),
            distinct_confidences(transformed),
        )
    )


if __name__ == "__main__":
    main()
