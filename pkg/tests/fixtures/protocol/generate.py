"""Regenerate the golden wire-protocol fixtures.

request.jsonl is produced by the harness encoder: one well-formed request
(id 1, two deterministic 8x8 images) and one with a short pixel payload
(id 2). response.jsonl is recorded verbatim from the reference adapter,
which is the canonical producer of response bytes:

    python3 tests/fixtures/protocol/generate.py

Requires adapter/dist to be built (npm run build in adapter/).
"""

import base64
import json
import pathlib
import subprocess

import numpy as np

from robustharness.classifier import encode_request

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parents[2]


def request_lines() -> bytes:
    img1 = np.linspace(0.0, 1.0, 192, dtype=np.float32).reshape(8, 8, 3)
    img2 = ((np.arange(192, dtype=np.float32) * 37.0) % 97.0 / 96.0)
    img2 = img2.astype(np.float32).reshape(8, 8, 3)
    good = encode_request(1, [img1, img2])
    short = {
        "id": 2,
        "images": [
            {"h": 8, "w": 8, "data": base64.b64encode(b"\x00" * 100).decode("ascii")}
        ],
    }
    bad = json.dumps(short, separators=(",", ":")).encode("utf-8") + b"\n"
    return good + bad


def main() -> None:
    req = request_lines()
    (HERE / "request.jsonl").write_bytes(req)
    proc = subprocess.run(
        [
            "node",
            str(ROOT / "adapter" / "dist" / "main.js"),
            "--mode",
            "stdio",
            "--weights",
            str(ROOT / "adapter" / "fixtures" / "example_mlp.bin"),
        ],
        input=req,
        capture_output=True,
        timeout=60,
        check=True,
    )
    (HERE / "response.jsonl").write_bytes(proc.stdout)
    print(f"wrote {len(req)} request bytes, {len(proc.stdout)} response bytes")


if __name__ == "__main__":
    main()
