"""Black-box classifier oracle.

One prediction interface covers three built-in reference classifiers
(constant, intensity-threshold, nearest-centroid) and two external
transports (JSON-lines over stdio, JSON over HTTP POST /predict). The
harness only ever sees labels and score vectors.

Wire protocol, one JSON object per LF-terminated line:
  request  {"id": <u64>, "images": [{"h": H, "w": W, "data": <base64>}]}
  response {"id": <u64>, "predictions": [{"label": L, "scores": [...]}]}
The data field is base64 of little-endian float32 values, row-major RGB.
The response id must echo the request id. An endpoint may answer
{"id": ..., "error": "<message>"} instead; that is a protocol error here
but lets the endpoint keep serving.
"""

from __future__ import annotations

import base64
import json
import math
import os
import select
import subprocess
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetManifest
from .errors import ConfigError, DatasetError, ProtocolError, TransportError
from .imaging import resize_bilinear

BUILTIN_KINDS = ("builtin_constant", "builtin_threshold", "builtin_centroid")
EXTERNAL_KINDS = ("external_stdio", "external_http")
CENTROID_SIDE = 8  # centroid classifier compares in a fixed 8x8 space


@dataclass(frozen=True)
class Prediction:
    label: int
    scores: list[float]


def argmax_label(scores) -> int:
    """Index of the maximum score; ties go to the lowest index."""
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


@dataclass
class ClassifierEndpoint:
    """Endpoint configuration; open_connection turns it into a live oracle.

    input_width/input_height of 0 mean the model accepts native resolution
    (the evaluator resizes before prediction otherwise).
    """

    kind: str
    num_classes: int
    input_width: int = 0
    input_height: int = 0
    label: int = 0  # builtin_constant
    thresholds: list[float] | None = None  # builtin_threshold
    centroids: np.ndarray | None = None  # builtin_centroid, (n, 8, 8, 3)
    command: list[str] | None = None  # external_stdio
    url: str | None = None  # external_http
    timeout: float = 30.0

    def validate(self) -> None:
        if self.kind not in BUILTIN_KINDS + EXTERNAL_KINDS:
            raise ConfigError(f"unknown endpoint kind {self.kind!r}")
        if self.num_classes < 2:
            raise ConfigError(f"endpoint needs >= 2 classes, got {self.num_classes}")
        if self.input_width < 0 or self.input_height < 0:
            raise ConfigError("input dimensions must be >= 0 (0 = native)")
        if self.kind == "builtin_constant" and not 0 <= self.label < self.num_classes:
            raise ConfigError(f"constant label {self.label} outside [0, {self.num_classes})")
        if self.kind == "builtin_threshold":
            t = self.effective_thresholds()
            if len(t) != self.num_classes - 1:
                raise ConfigError(
                    f"need {self.num_classes - 1} thresholds, got {len(t)}"
                )
            if any(b <= a for a, b in zip(t, t[1:])):
                raise ConfigError("thresholds must be strictly increasing")
        if self.kind == "external_stdio" and not self.command:
            raise ConfigError("external_stdio endpoint needs a command")
        if self.kind == "external_http" and not self.url:
            raise ConfigError("external_http endpoint needs a url")

    def effective_thresholds(self) -> list[float]:
        if self.thresholds is not None:
            return list(self.thresholds)
        n = self.num_classes
        return [k / n for k in range(1, n)]


def fit_centroid(dataset: DatasetManifest, split: str | None = None) -> np.ndarray:
    """Per-class mean image in the fixed 8x8 comparison space."""
    samples = dataset.samples if split is None else dataset.split(split)
    sums = np.zeros((dataset.num_classes, CENTROID_SIDE, CENTROID_SIDE, 3), dtype=np.float64)
    counts = np.zeros(dataset.num_classes, dtype=np.int64)
    for s in samples:
        img = resize_bilinear(s.load(), CENTROID_SIDE, CENTROID_SIDE)
        sums[s.label] += img
        counts[s.label] += 1
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        raise DatasetError(f"cannot fit centroids: no samples for classes {empty.tolist()}")
    return (sums / counts[:, None, None, None]).astype(np.float32)


# ---------------------------------------------------------------------------
# Built-in prediction
# ---------------------------------------------------------------------------


def _predict_builtin(endpoint: ClassifierEndpoint, images) -> list[Prediction]:
    out = []
    if endpoint.kind == "builtin_constant":
        scores = [0.0] * endpoint.num_classes
        scores[endpoint.label] = 1.0
        return [Prediction(endpoint.label, list(scores)) for _ in images]
    if endpoint.kind == "builtin_threshold":
        # scores are negated distances from mean intensity to each band center
        bounds = [0.0] + endpoint.effective_thresholds() + [1.0]
        centers = [(bounds[i] + bounds[i + 1]) / 2.0 for i in range(endpoint.num_classes)]
        for img in images:
            m = float(img.astype(np.float64).mean())
            scores = [-abs(m - c) for c in centers]
            out.append(Prediction(argmax_label(scores), scores))
        return out
    if endpoint.kind == "builtin_centroid":
        if endpoint.centroids is None:
            raise ConfigError("builtin_centroid endpoint has no centroid table")
        cents = endpoint.centroids.astype(np.float64)
        for img in images:
            small = resize_bilinear(img, CENTROID_SIDE, CENTROID_SIDE).astype(np.float64)
            d2 = ((cents - small) ** 2).sum(axis=(1, 2, 3))
            scores = (-d2).tolist()
            out.append(Prediction(argmax_label(scores), scores))
        return out
    raise ConfigError(f"not a builtin kind: {endpoint.kind}")


# ---------------------------------------------------------------------------
# Wire protocol
# ---------------------------------------------------------------------------


def encode_request(request_id: int, images) -> bytes:
    payload = {
        "id": int(request_id),
        "images": [
            {
                "h": int(img.shape[0]),
                "w": int(img.shape[1]),
                "data": base64.b64encode(
                    np.ascontiguousarray(img, dtype="<f4").tobytes()
                ).decode("ascii"),
            }
            for img in images
        ],
    }
    return json.dumps(payload, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_response(
    line: bytes, expected_id: int, expected_count: int, num_classes: int
) -> list[Prediction]:
    excerpt = line[:200].decode("utf-8", "replace")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"response is not JSON ({exc}): {excerpt}") from None
    if not isinstance(obj, dict):
        raise ProtocolError(f"response is not an object: {excerpt}")
    if obj.get("id") != expected_id:
        raise ProtocolError(f"response id {obj.get('id')!r} != request id {expected_id}")
    if "error" in obj:
        raise ProtocolError(f"endpoint reported error: {obj['error']}")
    preds = obj.get("predictions")
    if not isinstance(preds, list) or len(preds) != expected_count:
        got = len(preds) if isinstance(preds, list) else preds
        raise ProtocolError(f"expected {expected_count} predictions, got {got!r}: {excerpt}")
    out = []
    for i, p in enumerate(preds):
        if not isinstance(p, dict):
            raise ProtocolError(f"prediction {i} is not an object: {excerpt}")
        label = p.get("label")
        scores = p.get("scores")
        if not isinstance(label, int) or isinstance(label, bool):
            raise ProtocolError(f"prediction {i}: label {label!r} is not an integer")
        if not isinstance(scores, list) or len(scores) != num_classes:
            raise ProtocolError(
                f"prediction {i}: expected {num_classes} scores, got "
                f"{len(scores) if isinstance(scores, list) else scores!r}"
            )
        vals = []
        for s in scores:
            if not isinstance(s, (int, float)) or isinstance(s, bool) or not math.isfinite(s):
                raise ProtocolError(f"prediction {i}: non-finite or non-numeric score {s!r}")
            vals.append(float(s))
        if label != argmax_label(vals):
            raise ProtocolError(
                f"prediction {i}: label {label} is not the tie-broken argmax of scores"
            )
        out.append(Prediction(label, vals))
    return out


# ---------------------------------------------------------------------------
# Connections
# ---------------------------------------------------------------------------


class BuiltinConnection:
    def __init__(self, endpoint: ClassifierEndpoint):
        self.endpoint = endpoint

    def predict(self, images) -> list[Prediction]:
        return _predict_builtin(self.endpoint, images)

    def close(self) -> None:
        pass


class StdioConnection:
    """Persistent subprocess speaking the JSON-lines protocol."""

    def __init__(self, endpoint: ClassifierEndpoint):
        self.endpoint = endpoint
        try:
            self.proc = subprocess.Popen(
                endpoint.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                # stderr inherits: the protocol reserves stdout for responses
            )
        except OSError as exc:
            raise TransportError(f"cannot start endpoint {endpoint.command!r}: {exc}") from exc
        self._buf = bytearray()
        self._next_id = 0

    def _read_line(self, timeout: float) -> bytes:
        fd = self.proc.stdout.fileno()
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = bytes(self._buf[:nl])
                del self._buf[: nl + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError(f"endpoint timed out after {timeout}s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 1 << 16)
            if not chunk:
                raise TransportError("endpoint closed its output stream")
            self._buf.extend(chunk)

    def predict(self, images) -> list[Prediction]:
        req_id = self._next_id
        self._next_id += 1
        data = encode_request(req_id, images)
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"endpoint pipe closed: {exc}") from exc
        line = self._read_line(self.endpoint.timeout)
        return decode_response(line, req_id, len(images), self.endpoint.num_classes)

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout):
            if stream:
                stream.close()


class HttpConnection:
    def __init__(self, endpoint: ClassifierEndpoint):
        self.endpoint = endpoint
        self.base = endpoint.url.rstrip("/")
        self._next_id = 0

    def predict(self, images) -> list[Prediction]:
        req_id = self._next_id
        self._next_id += 1
        body = encode_request(req_id, images)
        req = urllib.request.Request(
            self.base + "/predict",
            data=body,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.endpoint.timeout) as resp:
                if resp.status != 200:
                    raise TransportError(f"endpoint returned HTTP {resp.status}")
                line = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"endpoint returned HTTP {exc.code}") from exc
        except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as exc:
            raise TransportError(f"endpoint unreachable: {exc}") from exc
        return decode_response(line.rstrip(b"\n"), req_id, len(images), self.endpoint.num_classes)

    def close(self) -> None:
        pass


def open_connection(endpoint):
    """Live connection for an endpoint config.

    Objects that already expose .predict (test doubles, in-process models)
    pass through unchanged.
    """
    if callable(getattr(endpoint, "predict", None)):
        return endpoint
    endpoint.validate()
    if endpoint.kind in BUILTIN_KINDS:
        return BuiltinConnection(endpoint)
    if endpoint.kind == "external_stdio":
        return StdioConnection(endpoint)
    return HttpConnection(endpoint)


def predict_batch(endpoint, images) -> list[Prediction]:
    """One-shot convenience: open, predict, close. Order-preserving."""
    if not images:
        raise ConfigError("predict_batch needs at least one image")
    conn = open_connection(endpoint)
    try:
        preds = conn.predict(images)
    finally:
        if conn is not endpoint:
            conn.close()
    if len(preds) != len(images):
        raise ProtocolError(f"{len(preds)} predictions for {len(images)} images")
    return preds
