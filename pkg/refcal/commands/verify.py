#!/usr/bin/python
# -*- coding: utf-8 -*-
# GNU General Public License v3.0+ (see https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

# language=yaml
DOCUMENTATION = r"""
---
command: verify
short_description: Runs the randomized property sweep of the toolkit.
description:
  - Checks the unit-sphere cosine identity, the contrastive upper bound on the refinement loss with every
    intermediate inequality, analytic gradients against central finite differences, every metric against a
    brute-force reference, the calibrated simulation and temperature recovery.
  - Exits with code 1 when any property fails.
options:
  batches:
    description:
      - Number of random batches of the bound and identity sweeps. Gradient and metric checks use at most 100.
    type: int
    default: 1000
  seed:
    description:
      - Random seed. Falls back to C(REFCAL_SEED), then to 1234.
    type: int
  self_test:
    description:
      - Flip the sign of the analytic quantities to prove the sweep can fail.
    type: bool
  out:
    description:
      - Write the verification report as JSON to this path. A manifest is written next to it.
    type: path
"""

# language=yaml
EXAMPLES = r"""
refcal verify
refcal verify --batches 10 --seed 7 --out verify.json

# must exit 1
refcal verify --batches 10 --self-test
"""

# language=yaml
RETURN = r"""
passed:
  type: bool
  description: Whether every property held.
  returned: always
properties:
  type: list
  description: One entry per property.
  returned: always
  contains:
    name:
      type: str
      description: Property name.
    checked:
      type: int
      description: Number of random instances.
    worst:
      type: float
      description: Smallest bound margin, or largest error or discrepancy, observed.
"""

import logging
import time
from typing import Optional, Sequence

from refcal.module_utils.arguments import parse_arguments
from refcal.module_utils.errors import RefcalError, VerificationFailure
from refcal.module_utils.oracles import run_property_sweep
from refcal.module_utils.serialization import atomic_write, dump_json, manifest_path, write_manifest
from refcal.module_utils.utils import build_manifest, resolve_seed, validate_at_least

logger = logging.getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> None:
    started = time.perf_counter()
    try:
        params = parse_arguments(DOCUMENTATION, argv)
        validate_at_least("batches", params["batches"], 1)
        seed = resolve_seed(params["seed"])
        report = run_property_sweep(seed, params["batches"], fault=params["self_test"])

        for result in report.properties:
            print(
                "{0:<26} {1}  checked={2:<6} worst={3:.3g}".format(
                    result.name, "PASS" if result.passed else "FAIL", result.checked, result.worst
                )
            )
        if params["out"] is not None:
            atomic_write(params["out"], dump_json(report.to_json()))
            write_manifest(
                manifest_path(params["out"]), build_manifest("verify", None, [], [params["out"]], seed, started)
            )
        if not report.passed:
            failed = [result.name for result in report.properties if not result.passed]
            raise VerificationFailure("Properties failed: {0}.".format(", ".join(failed)), failed=failed)
    except RefcalError as e:
        e.fail(logger)
    print("All {0} properties passed".format(len(report.properties)))


if __name__ == "__main__":
    main()
