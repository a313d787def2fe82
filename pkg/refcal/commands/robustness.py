#!/usr/bin/python
# -*- coding: utf-8 -*-
# GNU General Public License v3.0+ (see https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

# language=yaml
DOCUMENTATION = r"""
---
command: robustness
short_description: Evaluates a checkpoint under test-split corruption and against out-of-distribution samples.
description:
  - Reports Top-1, AUC and ECE of the clean test split (severity 0) and of the test split corrupted with
    Gaussian noise of each severity.
  - Detects out-of-distribution samples drawn far outside the class centers by their maximum softmax
    probability, the in-distribution test split being the positive class.
options:
  checkpoint:
    description:
      - Checkpoint written by C(refcal train).
    type: path
    required: true
  data:
    description:
      - Dataset file the checkpoint was trained on.
    type: path
    required: true
  severities:
    description:
      - Comma separated corruption severities between 1 and 5.
    type: str
    default: "1,2,3,4,5"
  n_ood:
    description:
      - Number of out-of-distribution samples.
    type: int
    default: 500
  seed:
    description:
      - Random seed of the corruption and OOD draws. Falls back to C(REFCAL_SEED), then to 1234.
    type: int
  bins:
    description:
      - Number of equal-width ECE bins.
    type: int
    default: 15
  out:
    description:
      - Path of the robustness report JSON. A manifest is written next to it.
    type: path
    required: true
"""

# language=yaml
EXAMPLES = r"""
refcal robustness --checkpoint runs/refcal/checkpoint.bin --data d.txt --out robustness.json
refcal robustness --checkpoint runs/refcal/checkpoint.bin --data d.txt --severities 1,5 --n-ood 200 --out r.json
"""

# language=yaml
RETURN = r"""
severities:
  type: list
  description: Test-split metrics per severity, severity 0 being the clean split.
  returned: always
ood:
  type: dict
  description: FPR at 95% TPR, detection error, AUROC, AUPR-in and AUPR-out.
  returned: always
"""

import logging
import time
from typing import Optional, Sequence

from refcal.module_utils.arguments import parse_arguments
from refcal.module_utils.errors import RefcalError
from refcal.module_utils.models import MetricConfig
from refcal.module_utils.pipeline import evaluate_robustness
from refcal.module_utils.serialization import (
    atomic_write,
    dump_json,
    manifest_path,
    read_checkpoint,
    read_dataset,
    write_manifest,
)
from refcal.module_utils.utils import (
    build_manifest,
    format_percent,
    parse_int_list,
    resolve_seed,
    validate_at_least,
    validate_input_file,
)

logger = logging.getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> None:
    started = time.perf_counter()
    try:
        params = parse_arguments(DOCUMENTATION, argv)
        inputs = [params["checkpoint"], params["data"]]
        for path in inputs:
            validate_input_file(path)
        validate_at_least("n-ood", params["n_ood"], 1)
        severities = parse_int_list("severities", params["severities"])
        seed = resolve_seed(params["seed"])
        model = read_checkpoint(params["checkpoint"])
        dataset = read_dataset(params["data"])

        metric_config = MetricConfig(bins=params["bins"])
        report = evaluate_robustness(model, dataset, severities, params["n_ood"], seed, metric_config)
        atomic_write(params["out"], dump_json(report.to_json()))
        write_manifest(
            manifest_path(params["out"]), build_manifest("robustness", None, inputs, [params["out"]], seed, started)
        )
    except RefcalError as e:
        e.fail(logger)

    for result in report.severities:
        print(
            "severity {0}: Top-1 {1} | AUC {2} | ECE {3}".format(
                result.severity, format_percent(result.top1), format_percent(result.auc), format_percent(result.ece)
            )
        )
    print(
        "OOD: AUROC {0} | FPR@95 {1} | detection error {2}".format(
            format_percent(report.ood.auroc),
            format_percent(report.ood.fpr_at_tpr95),
            format_percent(report.ood.detection_error),
        )
    )


if __name__ == "__main__":
    main()
