#!/usr/bin/python
# -*- coding: utf-8 -*-
# GNU General Public License v3.0+ (see https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

# language=yaml
DOCUMENTATION = r"""
---
command: train
short_description: Trains a classifier and reports its reliability on the test split.
description:
  - With I(regime=refcal), pretrains the encoder with the supervised contrastive loss (stage 1), then
    trains a linear classifier on the frozen encoder with the calibration loss (stage 2).
  - With I(regime=baseline), trains encoder and classifier end to end with the calibration loss.
  - Writes C(checkpoint.bin), C(training_log.csv), C(report.json), C(predictions.txt) and C(manifest.json)
    into I(out_dir).
  - Flags override the values of the configuration file.
options:
  data:
    description:
      - Dataset file written by C(refcal generate).
    type: path
    required: true
  out_dir:
    description:
      - Directory receiving the outputs.
    type: path
    required: true
  config:
    description:
      - Flat JSON or YAML mapping of training configuration keys.
    type: path
  regime:
    description:
      - Two-stage training or single-stage baseline.
    choices: [ refcal, baseline ]
    default: refcal
    type: str
  loss:
    description:
      - Calibration loss of the classifier. C(ce) is an alias of C(nll).
    choices: [ nll, ce, ls, focal ]
    type: str
  epsilon:
    description:
      - Label smoothing factor in [0, 1), used with I(loss=ls). Defaults to 0.1.
    type: float
  gamma:
    description:
      - Focusing parameter, at least 0, used with I(loss=focal). Defaults to 2.0.
    type: float
  ts:
    description:
      - Fit a temperature on the validation split after training.
    type: bool
  selection:
    description:
      - Keep the epoch with the best validation Top-1 or the final epoch.
    choices: [ best_val, final ]
    type: str
  stage1_epochs:
    description:
      - Epochs of contrastive pretraining, 0 skips the stage.
    type: int
  stage1_batch_size:
    description:
      - Stage 1 batch size.
    type: int
  stage1_lr:
    description:
      - Stage 1 learning rate.
    type: float
  tau:
    description:
      - Temperature of the supervised contrastive loss.
    type: float
  stage2_epochs:
    description:
      - Epochs of classifier training.
    type: int
  stage2_batch_size:
    description:
      - Stage 2 batch size.
    type: int
  stage2_lr:
    description:
      - Stage 2 learning rate.
    type: float
  seed:
    description:
      - Random seed. Falls back to the configuration file, C(REFCAL_SEED), then 1234.
    type: int
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
# two-stage training with the default desk configuration
refcal train --data d.txt --out-dir runs/refcal

# stage 2 only on a random encoder
refcal train --data d.txt --out-dir runs/calibration-only --regime refcal --stage1-epochs 0

# label smoothing baseline followed by temperature scaling
refcal train --data d.txt --out-dir runs/ls --regime baseline --loss ls --epsilon 0.05 --ts
"""

# language=yaml
RETURN = r"""
report:
  type: dict
  description: Reliability report of the test split, also written to C(report.json).
  returned: always
  contains:
    top1:
      type: float
      description: Fraction of correct predictions.
    auc:
      type: float
      description: Probability that a correct prediction is more confident than an incorrect one. Null when undefined.
    ece:
      type: float
      description: Expected calibration error.
temperature:
  type: float
  description: Temperature of the saved classifier, 1.0 unless I(ts) is set.
  returned: always
"""

import logging
import os
import time
from typing import Any, Dict, Optional, Sequence

import numpy as np

from refcal.module_utils.arguments import parse_arguments
from refcal.module_utils.errors import RefcalError
from refcal.module_utils.models import MetricConfig
from refcal.module_utils.pipeline import evaluate, train_baseline, train_refcal
from refcal.module_utils.serialization import (
    manifest_path,
    read_dataset,
    write_checkpoint,
    write_manifest,
    write_predictions,
    write_report,
    write_training_log,
)
from refcal.module_utils.utils import (
    build_manifest,
    build_train_config,
    fingerprint,
    format_percent,
    load_config_file,
    resolve_seed,
    validate_input_file,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.bin"
LOG_FILE = "training_log.csv"
REPORT_FILE = "report.json"
PREDICTIONS_FILE = "predictions.txt"


def config_overrides(params: Dict[str, Any], file_values: Dict[str, Any]) -> Dict[str, object]:
    overrides: Dict[str, object] = {
        key: params[key]
        for key in (
            "loss",
            "epsilon",
            "gamma",
            "selection",
            "stage1_epochs",
            "stage1_batch_size",
            "stage1_lr",
            "tau",
            "stage2_epochs",
            "stage2_batch_size",
            "stage2_lr",
        )
    }
    overrides["temperature_scaling"] = True if params["ts"] else None
    if params["seed"] is not None or "seed" not in file_values:
        overrides["seed"] = resolve_seed(params["seed"])
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> None:
    started = time.perf_counter()
    try:
        params = parse_arguments(DOCUMENTATION, argv)
        validate_input_file(params["data"])
        file_values = load_config_file(params["config"]) if params["config"] else {}
        config = build_train_config(file_values, config_overrides(params, file_values))
        metric_config = MetricConfig(
            bins=params["bins"], ace_ranges=params["ace_ranges"], smece_bandwidth=params["smece_bandwidth"]
        )
        dataset = read_dataset(params["data"])

        train = train_refcal if params["regime"] == "refcal" else train_baseline
        logger.info("Training %s regime with seed %d", params["regime"], config.seed)
        model, log = train(dataset, config)
        report = evaluate(model, dataset, "test", metric_config, fingerprint(config, metric_config), config.seed)
        assert report.predictions is not None

        out_dir: str = params["out_dir"]
        outputs = [os.path.join(out_dir, name) for name in (CHECKPOINT_FILE, LOG_FILE, REPORT_FILE, PREDICTIONS_FILE)]
        write_checkpoint(outputs[0], model)
        write_training_log(outputs[1], log)
        write_report(outputs[2], report)
        write_predictions(outputs[3], report.predictions, np.flatnonzero(dataset.mask("test")))
        write_manifest(
            manifest_path(out_dir, directory=True),
            build_manifest("train", params["config"], [params["data"]], outputs, config.seed, started),
        )
    except RefcalError as e:
        e.fail(logger)

    print(
        "Test Top-1 {0} | AUC {1} | ECE {2} | SCE {3} | ACE {4} | smECE {5} | T={6:.4f}".format(
            format_percent(report.top1),
            format_percent(report.auc),
            format_percent(report.ece),
            format_percent(report.sce),
            format_percent(report.ace),
            format_percent(report.smece),
            model.temperature,
        )
    )
    print("Outputs written to {0}".format(out_dir))


if __name__ == "__main__":
    main()
