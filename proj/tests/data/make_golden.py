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
"""Writes the golden QEMB fixture (3 vectors of width 4) with `struct` only."""

import pathlib
import struct

VECTORS = [
    [0.0, 1.0, -2.5, 3.25],
    [1e-3, -0.0, 65504.0, -1.5],
    [0.1, 0.2, 0.3, 0.4],
]

MANIFEST = """sample_id,patient_id,slide_id,institution,level,class_label,gender,race,age_group,survival_days,censored
g0,p0,w0,instA,slide,tumor,female,white,age1,120.5,0
g1,p1,w1,instB,slide,normal,male,black_or_african_american,age2,300,1
g2,p2,w2,instA,slide,tumor,,,,,
"""


def main() -> None:
    here = pathlib.Path(__file__).resolve().parent
    payload = b"QEMB" + struct.pack("<BIQ", 1, 4, len(VECTORS))
    for v in VECTORS:
        payload += struct.pack("<4f", *v)
    assert len(payload) == 65
    (here / "golden_3x4.qemb").write_bytes(payload)
    (here / "golden_manifest.csv").write_text(MANIFEST)


if __name__ == "__main__":
    main()
