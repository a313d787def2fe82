#!/usr/bin/python
# -*- coding: utf-8 -*-
# GNU General Public License v3.0+ (see https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

# language=yaml
DOCUMENTATION = r"""
---
command: evaluate
short_description: Computes the reliability report of a prediction dump or of a checkpoint.
description:
  - Reads a prediction dump (from any classifier) and writes its reliability report.
  - Alternatively evaluates I(checkpoint) on one split of I(data), optionally dumping the predictions.
  - Exactly one of I(predictions) or I(checkpoint) must be given.
options:
  predictions:
    description:
      - Prediction dump with rows C(sample_id,label,prob_0,...,prob_{K-1}).
    type: path
  checkpoint:
    description:
      - Checkpoint written by C(refcal train). Requires I(data).
    type: path
  data:
    description:
      - Dataset file evaluated with I(checkpoint).
    type: path
  split:
    description:
      - Split of I(data) to evaluate.
    choices: [ train, val, test ]
    default: test
    type: str
  dump:
    description:
      - Write the predictions of I(checkpoint) to this path.
    type: path
  out:
    description:
      - Path of the report JSON. A manifest is written next to it.
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
# audit predictions of an external model
refcal evaluate --predictions external.txt --out external.json --bins 10

# validation predictions of a trained model, for refcal pitfall
refcal evaluate --checkpoint runs/refcal/checkpoint.bin --data d.txt --split val --dump val.txt --out val.json
"""

# language=yaml
RETURN = r"""
report:
  type: dict
  description: The reliability report written to I(out).
  returned: always
"""

import logging
import time
from typing import List, Optional, Sequence

import numpy as np

from refcal.module_utils.arguments import parse_arguments
from refcal.module_utils.errors import RefcalError, UsageError
from refcal.module_utils.models import MetricConfig
from refcal.module_utils.pipeline import evaluate, report_from_predictions
from refcal.module_utils.serialization import (
    manifest_path,
    read_checkpoint,
    read_dataset,
    read_predictions,
    write_manifest,
    write_predictions,
    write_report,
)
from refcal.module_utils.utils import build_manifest, fingerprint, format_percent, validate_input_file

logger = logging.getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> None:
    started = time.perf_counter()
    try:
        params = parse_arguments(DOCUMENTATION, argv)
        if (params["predictions"] is None) == (params["checkpoint"] is None):
            raise UsageError("Exactly one of --predictions or --checkpoint is required.")
        if params["checkpoint"] is not None and params["data"] is None:
            raise UsageError("--checkpoint requires --data.")
        metric_config = MetricConfig(
            bins=params["bins"], ace_ranges=params["ace_ranges"], smece_bandwidth=params["smece_bandwidth"]
        )
        config_fingerprint = fingerprint(None, metric_config)
        outputs: List[str] = []

        if params["predictions"] is not None:
            inputs = [params["predictions"]]
            validate_input_file(params["predictions"])
            batch, _ = read_predictions(params["predictions"])
            seed = None
            report = report_from_predictions(batch, metric_config, config_fingerprint, seed)
        else:
            inputs = [params["checkpoint"], params["data"]]
            for path in inputs:
                validate_input_file(path)
            model = read_checkpoint(params["checkpoint"])
            dataset = read_dataset(params["data"])
            seed = dataset.meta.seed
            report = evaluate(model, dataset, params["split"], metric_config, config_fingerprint, seed)
            if params["dump"] is not None:
                assert report.predictions is not None
                write_predictions(params["dump"], report.predictions, np.flatnonzero(dataset.mask(params["split"])))
                outputs.append(params["dump"])

        write_report(params["out"], report)
        outputs.append(params["out"])
        write_manifest(manifest_path(params["out"]), build_manifest("evaluate", None, inputs, outputs, seed, started))
    except RefcalError as e:
        e.fail(logger)

    print(
        "Top-1 {0} | AUC {1} | ECE {2} | SCE {3} | ACE {4} | smECE {5} | MCE {6}".format(
            format_percent(report.top1),
            format_percent(report.auc),
            format_percent(report.ece),
            format_percent(report.sce),
            format_percent(report.ace),
            format_percent(report.smece),
            format_percent(report.mce),
        )
    )


if __name__ == "__main__":
    main()
