#!/usr/bin/python
# -*- coding: utf-8 -*-
# GNU General Public License v3.0+ (see https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

# language=yaml
DOCUMENTATION = r"""
---
command: generate
short_description: Writes a seeded synthetic long-tailed dataset.
description:
  - Draws Gaussian blobs around well separated class centers with exponentially decaying class counts
    and a stratified 70/15/15 train/val/test split.
  - Optionally regroups the classes into a binary task and corrupts the test split.
options:
  classes:
    description:
      - Number of classes K, at least 2.
    type: int
    default: 4
  n_max:
    description:
      - Number of samples of the largest class, at least 2K.
    type: int
    default: 2000
  imbalance:
    description:
      - Ratio of the smallest to the largest class count, in (0, 1].
      - Class k receives round(n_max * imbalance^(k/(K-1))) samples, never fewer than 2.
    type: float
    default: 0.1
  dims:
    description:
      - Feature dimension.
    type: int
    default: 8
  separation:
    description:
      - Minimum distance between class centers.
    type: float
    default: 4.0
  noise:
    description:
      - Standard deviation of the isotropic noise around each center.
    type: float
    default: 1.0
  group_map:
    description:
      - Regroup classes into a binary task, written as C(class:group) pairs, for example C(0:0,1:0,2:1,3:1).
    type: str
  severity:
    description:
      - Corrupt the test split with Gaussian noise of this severity (1 to 5).
    type: int
  seed:
    description:
      - Random seed. Falls back to C(REFCAL_SEED), then to 1234.
    type: int
  out:
    description:
      - Path of the dataset file. A manifest is written next to it.
    type: path
    required: true
"""

# language=yaml
EXAMPLES = r"""
# default scenario: K=4, imbalance 0.1, class counts 2000, 928, 431, 200
refcal generate --seed 1234 --out d.txt

# smaller two-dimensional scenario, class counts 500, 232, 108, 50
refcal generate --classes 4 --n-max 500 --imbalance 0.1 --dims 2 --seed 1234 --out small.txt

# binary task with a corrupted test split
refcal generate --classes 4 --group-map 0:0,1:0,2:1,3:1 --severity 3 --out binary.txt
"""

# language=yaml
RETURN = r"""
out:
  type: str
  description: Path of the dataset file.
  returned: always
class_counts:
  type: list
  description: Number of samples of each class, over all splits.
  returned: always
  sample: [2000, 928, 431, 200]
"""

import logging
import time
from typing import Optional, Sequence

from refcal.module_utils.arguments import parse_arguments
from refcal.module_utils.datagen import binary_group, corrupt, generate_blobs
from refcal.module_utils.errors import RefcalError
from refcal.module_utils.serialization import manifest_path, write_dataset, write_manifest
from refcal.module_utils.utils import build_manifest, parse_group_map, resolve_seed

logger = logging.getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> None:
    started = time.perf_counter()
    try:
        params = parse_arguments(DOCUMENTATION, argv)
        seed = resolve_seed(params["seed"])
        dataset = generate_blobs(
            num_classes=params["classes"],
            n_max=params["n_max"],
            dim=params["dims"],
            imbalance_factor=params["imbalance"],
            class_separation=params["separation"],
            noise_sigma=params["noise"],
            seed=seed,
        )
        if params["group_map"] is not None:
            dataset = binary_group(dataset, parse_group_map(params["group_map"]))
        if params["severity"] is not None:
            dataset = corrupt(dataset, params["severity"], seed)

        out: str = params["out"]
        write_dataset(out, dataset)
        write_manifest(
            manifest_path(out),
            build_manifest("generate", None, [], [out], seed, started),
        )
    except RefcalError as e:
        e.fail(logger)

    counts = [int(count) for count in dataset.class_counts()]
    print("Wrote {0} samples of {1} classes to {2}".format(dataset.size, dataset.meta.num_classes, out))
    print("Class counts: {0}".format(", ".join(str(count) for count in counts)))


if __name__ == "__main__":
    main()
