# Copyright 2026 The pfmaudit Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Python bindings for the pfmaudit toolkit.

Cohort files, synthetic cohorts, split planning, metrics and full audits.
JSON documents returned by the extension are decoded into plain dicts.
"""

import json
import os
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from . import _pfmaudit
from ._pfmaudit import (
    PfmauditError,
    accuracy,
    concordance_index,
    decode_qemb,
    degradation,
    encode_qemb,
    institution_cv,
    leakage_score,
    macro_f1,
    normalize_manifest,
    read_qemb,
    retrieve_and_score,
    subgroup_gap,
    write_qemb,
)

__version__ = _pfmaudit.__version__

PathLike = Union[str, os.PathLike]

__all__ = [
    "PfmauditError",
    "accuracy",
    "concordance_index",
    "decode_qemb",
    "degradation",
    "encode_qemb",
    "generate_cohort",
    "institution_cv",
    "leakage_score",
    "macro_f1",
    "make_split",
    "matched_baseline",
    "normalize_manifest",
    "read_qemb",
    "render_markdown",
    "retrieve_and_score",
    "run_audit",
    "subgroup_gap",
    "validate",
    "write_qemb",
    "write_synth_cohort",
]


def validate(embeddings: PathLike, manifest: PathLike) -> Dict[str, Any]:
    """Checks a QEMB file against its manifest; same document as `pfmaudit validate`."""
    return json.loads(_pfmaudit.validate_json(os.fspath(embeddings), os.fspath(manifest)))


def generate_cohort(spec: Mapping[str, Any]) -> Tuple[np.ndarray, str, Dict[str, Any]]:
    """Returns (embeddings, manifest CSV text, ground truth) for a synthetic spec."""
    matrix, manifest, truth = _pfmaudit.generate_cohort(json.dumps(dict(spec)))
    return matrix, manifest, json.loads(truth)


def write_synth_cohort(spec: Mapping[str, Any], out_dir: PathLike) -> None:
    """Writes embeddings.qemb, manifest.csv and ground_truth.json into out_dir."""
    _pfmaudit.write_synth_cohort(json.dumps(dict(spec)), os.fspath(out_dir))


def make_split(
    manifest_csv: str,
    setting: str,
    seed: int = 0,
    group_key: str = "patient",
    test_fraction: float = 0.2,
    num_folds: int = 5,
    drop_infeasible: bool = False,
) -> Dict[str, Any]:
    """Plans an ID_BASELINE, OOD1, OOD2 or OOD3 split over manifest CSV text."""
    return json.loads(
        _pfmaudit.make_split(
            manifest_csv, setting, seed, group_key, test_fraction, num_folds, drop_infeasible
        )
    )


def matched_baseline(manifest_csv: str, plan: Mapping[str, Any], seed: int = 0) -> Dict[str, Any]:
    """Builds the in-distribution baseline over the sample set of an OOD plan."""
    return json.loads(_pfmaudit.matched_baseline(manifest_csv, json.dumps(dict(plan)), seed))


def run_audit(config: PathLike, seed: Optional[int] = None) -> Dict[str, Any]:
    """Runs the audits named in a config file and returns the report."""
    return json.loads(_pfmaudit.run_audit_json(os.fspath(config), seed))


def render_markdown(report: Mapping[str, Any]) -> str:
    """Renders a report as the markdown produced by `pfmaudit report --format markdown`."""
    return _pfmaudit.render_markdown(json.dumps(dict(report)))
