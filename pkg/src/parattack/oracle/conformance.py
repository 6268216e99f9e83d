"""Protocol conformance checks any NDJSON oracle server must pass.

Used against the bundled synthetic servers and equally against external
bridges. Checks are behavioral: envelope shape, id echoing, error handling,
payload ranges, and byte-stable float serialization on repeated requests.

Each check returns None on success; failures raise ConformanceFailure with a
message naming the violated rule. ``run_conformance`` aggregates them.
"""

from __future__ import annotations

import numpy as np

from .client import AutoencoderClient, EmbeddingClient, JudgeClient, OracleClient, SegmentationClient
from .dataset import QuerySample
from .protocol import ProtocolError, RemoteOracleError, dumps, loads, make_request


class ConformanceFailure(AssertionError):
    pass


def _require(condition: bool, rule: str):
    if not condition:
        raise ConformanceFailure(rule)


def check_ping(client: OracleClient):
    payload = client.request("ping")
    _require(payload == {}, "ping must return an empty ok payload")


def check_id_echo_and_error(client: OracleClient):
    raw = client.raw_round_trip(dumps(make_request("encode", "echo-check", text="x")))
    obj = loads(raw)
    _require(obj.get("id") == "echo-check", "response must echo the request id")
    _require(isinstance(obj.get("ok"), bool), "response must carry a boolean ok")

    raw = client.raw_round_trip('{"op": "no-such-op", "id": "e1"}')
    obj = loads(raw)
    _require(obj.get("ok") is False, "unknown op must yield ok=false")
    _require(isinstance(obj.get("error"), str) and obj["error"],
             "error responses must carry a non-empty error string")

    raw = client.raw_round_trip("this is not json")
    obj = loads(raw)
    _require(obj.get("ok") is False, "malformed lines must yield an error response")

    # the connection must survive an error: a normal request still works
    client.request("ping")


def check_float_stability(client: OracleClient, op: str, **payload):
    line = dumps(make_request(op, "f1", **payload))
    first = client.raw_round_trip(line)
    line2 = dumps(make_request(op, "f1", **payload))
    second = client.raw_round_trip(line2)
    _require(first == second, f"{op} must serialize identically on repeated requests")
    # every float on the wire must round-trip through its own text form
    obj = loads(first)
    for value in _walk_floats(obj):
        _require(np.isfinite(value), f"{op} emitted a non-finite float")


def _walk_floats(obj):
    if isinstance(obj, float):
        yield obj
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from _walk_floats(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _walk_floats(v)


def check_autoencoder(client: AutoencoderClient, texts):
    dims = set()
    for text in texts:
        vec = client.encode_text(text)
        _require(np.all(np.isfinite(vec)), "encode must return finite embeddings")
        dims.add(vec.shape[0])
    _require(len(dims) == 1, "encode must return a stable dimension")
    z = client.encode_text(texts[0])
    decoded = client.decode_latent(z)
    _require(isinstance(decoded, str) and len(decoded) > 0, "decode must return non-empty text")
    # decode must be a pure function of the latent
    _require(client.decode_latent(z) == decoded, "decode must be deterministic")


def check_segmentation(client: SegmentationClient, samples, texts):
    for sample in samples:
        for text in texts:
            iou = client.query_segmentation(sample, text)
            _require(0.0 <= iou <= 1.0, "iou must lie in [0, 1]")
            _require(client.query_segmentation(sample, text) == iou,
                     "segmentation must be deterministic per (sample, text)")
    try:
        client.query_segmentation(
            QuerySample(sample_id="__unknown__", image_ref="", query_text="x"), texts[0])
        raise ConformanceFailure("unknown sample_id must yield an error response")
    except (RemoteOracleError, ProtocolError):
        pass


def check_embedder(client: EmbeddingClient, texts):
    first = client.embed_text(texts[0])
    again = client.embed_text(texts[0])
    _require(np.array_equal(first, again), "embed must be deterministic")
    for text in texts[1:]:
        client.embed_text(text)


def check_judge(client: JudgeClient, pairs):
    for original, paraphrase in pairs:
        score = client.judge(original, paraphrase)
        _require(1 <= score <= 5, "judge score must be an integer in 1..5")


def run_conformance(*, autoencoder: AutoencoderClient | None = None,
                    segmentation: SegmentationClient | None = None,
                    embedder: EmbeddingClient | None = None,
                    judge: JudgeClient | None = None,
                    samples=(), texts=("Find the cup.", "Locate the mug."),
                    judge_pairs=(("Find the cup.", "Locate the cup."),)) -> list[str]:
    """Run every applicable check; returns the list of check names that ran."""
    ran = []
    clients = [c for c in (autoencoder, segmentation, embedder, judge) if c is not None]
    if not clients:
        raise ValueError("no clients supplied")
    for client in clients[:1]:
        check_ping(client)
        ran.append("ping")
        check_id_echo_and_error(client)
        ran.append("id-echo-and-errors")
    if autoencoder is not None:
        check_autoencoder(autoencoder, list(texts))
        ran.append("autoencoder")
        check_float_stability(autoencoder, "encode", text=texts[0])
        ran.append("float-stability")
    if segmentation is not None and samples:
        check_segmentation(segmentation, list(samples), list(texts))
        ran.append("segmentation")
    if embedder is not None:
        check_embedder(embedder, list(texts))
        ran.append("embedder")
    if judge is not None:
        check_judge(judge, list(judge_pairs))
        ran.append("judge")
    return ran
