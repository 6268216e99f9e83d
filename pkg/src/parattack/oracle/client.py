"""Clients for the NDJSON oracles over HTTP or a subprocess's stdio.

One ``OracleClient`` per endpoint; typed wrappers add the per-oracle calls
(encode/decode, segment, embed, judge) and enforce payload contracts such as
stable embedding dimensions and IoU ranges.
"""

from __future__ import annotations

import itertools
import queue
import shlex
import subprocess
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .dataset import QuerySample
from .masks import BinaryMask, mask_iou
from .protocol import (
    ProtocolError,
    TransportError,
    check_response,
    dumps,
    loads,
    make_request,
)


@dataclass(frozen=True)
class OracleEndpoint:
    """Where an oracle lives: ``http`` with a URL or ``subprocess`` with an argv."""

    transport: str
    target: str
    timeout_ms: int = 30000
    max_concurrency: int = 8

    def __post_init__(self):
        if self.transport not in ("http", "subprocess"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")

    @classmethod
    def parse(cls, spec: str, timeout_ms: int = 30000, max_concurrency: int = 8) -> "OracleEndpoint":
        """Accepts ``http://host:port/...`` (or https) and ``cmd:command line``."""
        if spec.startswith(("http://", "https://")):
            return cls("http", spec, timeout_ms, max_concurrency)
        if spec.startswith("cmd:"):
            return cls("subprocess", spec[4:], timeout_ms, max_concurrency)
        raise ValueError(f"endpoint spec must start with http(s):// or cmd:, got {spec!r}")


class _HttpTransport:
    def __init__(self, endpoint: OracleEndpoint):
        self._url = endpoint.target
        self._timeout = endpoint.timeout_ms / 1000.0
        self._slots = threading.BoundedSemaphore(endpoint.max_concurrency)

    def round_trip(self, line: str) -> str:
        req = urllib.request.Request(
            self._url, data=(line + "\n").encode("utf-8"),
            headers={"Content-Type": "application/x-ndjson"}, method="POST")
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=self._timeout) as resp:
                    return resp.read().decode("utf-8").strip()
            except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
                raise TransportError(f"HTTP oracle at {self._url} failed: {exc}") from exc

    def close(self):
        pass


class _SubprocessTransport:
    """Line-oriented child process; requests are serialized over one pipe and
    a reader thread enforces the timeout."""

    def __init__(self, endpoint: OracleEndpoint):
        argv = shlex.split(endpoint.target)
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, text=True, bufsize=1)
        except OSError as exc:
            raise TransportError(f"cannot start oracle process {argv!r}: {exc}") from exc
        self._timeout = endpoint.timeout_ms / 1000.0
        self._lock = threading.Lock()
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)

    def round_trip(self, line: str) -> str:
        with self._lock:
            if self._proc.poll() is not None:
                raise TransportError(f"oracle process exited with {self._proc.returncode}")
            try:
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise TransportError(f"oracle process pipe broken: {exc}") from exc
            try:
                reply = self._lines.get(timeout=self._timeout)
            except queue.Empty:
                raise TransportError(f"oracle timed out after {self._timeout:.1f}s") from None
            if reply is None:
                raise TransportError("oracle process closed stdout")
            return reply.strip()

    def close(self):
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=3)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class OracleClient:
    """Request/response over one endpoint with protocol validation."""

    def __init__(self, endpoint: OracleEndpoint):
        self.endpoint = endpoint
        self._ids = itertools.count(1)
        if endpoint.transport == "http":
            self._transport = _HttpTransport(endpoint)
        else:
            self._transport = _SubprocessTransport(endpoint)

    def request(self, op: str, **payload) -> dict:
        request_id = f"q{next(self._ids)}"
        line = dumps(make_request(op, request_id, **payload))
        reply = self._transport.round_trip(line)
        return check_response(loads(reply), request_id)

    def raw_round_trip(self, line: str) -> str:
        """Send a pre-serialized line and return the raw response line."""
        return self._transport.round_trip(line)

    def ping(self) -> bool:
        try:
            self.request("ping")
            return True
        except Exception:
            return False

    def close(self):
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _embedding_from(payload: dict, expect_dim: int | None, what: str) -> np.ndarray:
    if "embedding" not in payload or not isinstance(payload["embedding"], list):
        raise ProtocolError(f"{what} response is missing an 'embedding' list")
    vec = np.asarray(payload["embedding"], dtype=float)
    if vec.ndim != 1 or not np.all(np.isfinite(vec)):
        raise ProtocolError(f"{what} returned a malformed embedding")
    if expect_dim is not None and vec.shape[0] != expect_dim:
        raise ProtocolError(
            f"{what} dimension drifted: got {vec.shape[0]}, expected {expect_dim}")
    return vec


class AutoencoderClient(OracleClient):
    """encode/decode pair; the latent dimension is learned from the first
    response and enforced afterwards."""

    def __init__(self, endpoint: OracleEndpoint):
        super().__init__(endpoint)
        self.dim: int | None = None

    def encode_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot encode empty text")
        vec = _embedding_from(self.request("encode", text=text), self.dim, "encode")
        self.dim = vec.shape[0]
        return vec

    def decode_latent(self, z) -> str:
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise ValueError("latent contains non-finite entries")
        payload = self.request("decode", embedding=[float(v) for v in z])
        text = payload.get("text")
        if not isinstance(text, str):
            raise ProtocolError("decode response is missing 'text'")
        return text


class SegmentationClient(OracleClient):
    """Returns IoU for (sample, query); if the oracle replies with a predicted
    mask, IoU is computed locally against the sample's ground truth."""

    def query_segmentation(self, sample: QuerySample, query: str) -> float:
        payload = self.request("segment", sample_id=sample.sample_id, text=query)
        if "iou" in payload:
            iou = payload["iou"]
            if not isinstance(iou, (int, float)) or not 0.0 <= float(iou) <= 1.0:
                raise ProtocolError(f"oracle returned out-of-range iou {iou!r}")
            return float(iou)
        if "mask" in payload:
            if sample.ground_truth is None:
                raise ProtocolError(
                    f"oracle returned a mask but sample {sample.sample_id!r} has no ground truth")
            predicted = BinaryMask.from_wire(payload["mask"])
            return mask_iou(predicted, sample.ground_truth)
        raise ProtocolError("segment response carries neither 'iou' nor 'mask'")


class EmbeddingClient(OracleClient):
    def __init__(self, endpoint: OracleEndpoint):
        super().__init__(endpoint)
        self.dim: int | None = None

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        vec = _embedding_from(self.request("embed", text=text), self.dim, "embed")
        self.dim = vec.shape[0]
        return vec


class JudgeClient(OracleClient):
    def judge(self, original: str, paraphrase: str) -> int:
        payload = self.request("judge", original=original, paraphrase=paraphrase)
        score = payload.get("score")
        if not isinstance(score, int) or isinstance(score, bool) or not 1 <= score <= 5:
            raise ProtocolError(f"judge returned a non-integer or out-of-range score: {score!r}")
        return score
