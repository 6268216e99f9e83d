"""Deterministic desk-scale oracles for testing the full attack loop.

The lattice autoencoder round-trips texts of the form "L[v1,...,vd]" exactly
and quantizes latents to a grid on decode, so nearby latents collapse to the
same text the way a real decoder does. The bowl segmenter scores a decoded
query by its latent distance to the original query's latent. Everything is a
pure function of its inputs, so whole attack runs replay bit-identically.

Run as a server speaking the NDJSON oracle protocol over stdio or HTTP:

    python -m parattack.oracle.synthetic --dim 16 --grid 0.25 --tau 1.0 \
        --dataset samples.jsonl --transport stdio
"""

from __future__ import annotations

import argparse
import hashlib
import sys

import numpy as np

from .dataset import QuerySample, load_samples
from .masks import BinaryMask, mask_iou
from .protocol import RemoteOracleError, dumps, error_response, loads, ok_response

LATTICE_PREFIX = "L["


def text_seed(text: str, salt: str = "") -> int:
    digest = hashlib.sha256((salt + text).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class LatticeAutoencoder:
    """Text autoencoder stand-in over R^dim.

    encode: lattice-format texts parse to their coordinate vector; any other
    text maps to a seeded pseudorandom vector (scale ``text_scale``), so
    arbitrary original queries still get a well-defined latent.
    decode: coordinates snap to multiples of ``grid`` (round-half-to-even)
    and render as "L[...]" -- the identity on everything decode can emit.
    """

    def __init__(self, dim: int, grid: float = 0.25, text_scale: float = 1.5):
        if dim < 1 or grid <= 0:
            raise ValueError("dim must be >= 1 and grid > 0")
        self.dim = dim
        self.grid = grid
        self.text_scale = text_scale

    def parse_lattice(self, text: str) -> np.ndarray | None:
        if not (text.startswith(LATTICE_PREFIX) and text.endswith("]")):
            return None
        body = text[len(LATTICE_PREFIX):-1]
        try:
            values = np.array([float(v) for v in body.split(",")], dtype=float)
        except ValueError:
            return None
        return values

    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot encode empty text")
        parsed = self.parse_lattice(text)
        if parsed is not None:
            if parsed.shape != (self.dim,):
                raise ValueError(f"lattice text has {parsed.size} coordinates, expected {self.dim}")
            return parsed
        rng = np.random.default_rng(text_seed(text, salt="encode:"))
        return rng.normal(0.0, self.text_scale, size=self.dim)

    def decode(self, z) -> str:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"latent has shape {z.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(z)):
            raise ValueError("latent contains non-finite entries")
        snapped = np.rint(z / self.grid) * self.grid
        return LATTICE_PREFIX + ",".join(repr(float(v)) for v in snapped) + "]"


class BowlSegmenter:
    """IoU oracle whose landscape is a Gaussian bowl centered at the latent of
    each sample's original query: IoU = exp(-||z_hat - c||^2 / (2 tau^2))."""

    def __init__(self, autoencoder: LatticeAutoencoder, tau: float = 1.0):
        if tau <= 0:
            raise ValueError("tau must be > 0")
        self.autoencoder = autoencoder
        self.tau = tau
        self._centers: dict[str, np.ndarray] = {}

    def register(self, sample: QuerySample) -> None:
        self._centers[sample.sample_id] = self.autoencoder.encode(sample.query_text)

    def query(self, sample_id: str, text: str) -> float:
        if sample_id not in self._centers:
            raise KeyError(f"unknown sample_id {sample_id!r}")
        z_hat = self.autoencoder.encode(text)
        delta = z_hat - self._centers[sample_id]
        return float(np.exp(-(delta @ delta) / (2.0 * self.tau * self.tau)))


class ShiftMaskSegmenter:
    """Mask-returning oracle: predicts the ground truth translated by a
    text-hash offset (zero offset when the text equals the registered query),
    exercising the client-side IoU path."""

    def __init__(self, max_shift: int = 3):
        self.max_shift = max_shift
        self._samples: dict[str, QuerySample] = {}

    def register(self, sample: QuerySample) -> None:
        if sample.ground_truth is None:
            raise ValueError(f"sample {sample.sample_id!r} has no ground-truth mask")
        self._samples[sample.sample_id] = sample

    def query(self, sample_id: str, text: str) -> BinaryMask:
        if sample_id not in self._samples:
            raise KeyError(f"unknown sample_id {sample_id!r}")
        sample = self._samples[sample_id]
        gt = sample.ground_truth
        if text == sample.query_text:
            return gt
        rng = np.random.default_rng(text_seed(text, salt="mask:" + sample_id))
        span = 2 * self.max_shift + 1
        dy = int(rng.integers(span)) - self.max_shift
        dx = int(rng.integers(span)) - self.max_shift
        shifted = np.zeros_like(gt.bits)
        h, w = gt.bits.shape
        ys, xs = np.nonzero(gt.bits)
        ys = ys + dy
        xs = xs + dx
        keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        shifted[ys[keep], xs[keep]] = True
        return BinaryMask(bits=shifted)


class HashingEmbedder:
    """Sentence-embedding stand-in: lattice texts embed as their parsed
    coordinates (cosines computable by hand); other texts map to seeded unit
    pseudorandom vectors, so distinct texts are nearly orthogonal."""

    def __init__(self, dim: int):
        self.dim = dim
        self._lattice = LatticeAutoencoder(dim=dim)

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        parsed = self._lattice.parse_lattice(text)
        if parsed is not None and parsed.shape == (self.dim,):
            return parsed
        rng = np.random.default_rng(text_seed(text, salt="embed:"))
        vec = rng.normal(size=self.dim)
        return vec / np.linalg.norm(vec)


class StubJudge:
    """Deterministic validity judge for tests: full marks iff the paraphrase
    is cosine-close under the synthetic embedder and keeps the original's
    capitalization/terminal-punctuation shape, otherwise the bottom score."""

    def __init__(self, embedder: HashingEmbedder, threshold: float = 0.825):
        self.embedder = embedder
        self.threshold = threshold

    def score(self, original: str, paraphrase: str) -> int:
        from ..evalproto import regex_consistency

        a = self.embedder.embed(original)
        b = self.embedder.embed(paraphrase)
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 1
        cosine = float(a @ b) / (na * nb)
        if cosine > self.threshold and regex_consistency(original, paraphrase):
            return 5
        return 1


class SyntheticOracleSuite:
    """All four oracles behind one request dispatcher."""

    def __init__(self, dim: int = 16, grid: float = 0.25, tau: float = 1.0,
                 text_scale: float = 1.5, mask_mode: bool = False,
                 judge_threshold: float = 0.825):
        self.autoencoder = LatticeAutoencoder(dim=dim, grid=grid, text_scale=text_scale)
        self.mask_mode = mask_mode
        self.bowl = BowlSegmenter(self.autoencoder, tau=tau)
        self.masker = ShiftMaskSegmenter()
        self.embedder = HashingEmbedder(dim=dim)
        self.judge = StubJudge(self.embedder, threshold=judge_threshold)

    def register(self, sample: QuerySample) -> None:
        self.bowl.register(sample)
        if sample.ground_truth is not None:
            self.masker.register(sample)

    def register_all(self, samples) -> None:
        for sample in samples:
            self.register(sample)

    def handle(self, request: dict) -> dict:
        request_id = request.get("id") if isinstance(request, dict) else None
        try:
            op = request.get("op")
            if op == "ping":
                return ok_response(request_id)
            if op == "encode":
                z = self.autoencoder.encode(str(request["text"]))
                return ok_response(request_id, embedding=[float(v) for v in z])
            if op == "decode":
                text = self.autoencoder.decode(np.asarray(request["embedding"], dtype=float))
                return ok_response(request_id, text=text)
            if op == "segment":
                sample_id = str(request["sample_id"])
                text = str(request["text"])
                if self.mask_mode:
                    mask = self.masker.query(sample_id, text)
                    return ok_response(request_id, mask=mask.to_wire())
                return ok_response(request_id, iou=self.bowl.query(sample_id, text))
            if op == "embed":
                vec = self.embedder.embed(str(request["text"]))
                return ok_response(request_id, embedding=[float(v) for v in vec])
            if op == "judge":
                score = self.judge.score(str(request["original"]), str(request["paraphrase"]))
                return ok_response(request_id, score=score)
            return error_response(request_id, f"unknown op {op!r}")
        except (KeyError, ValueError, TypeError) as exc:
            return error_response(request_id, f"{type(exc).__name__}: {exc}")


class _InProcess:
    """Adapters that expose a suite with the client call surface, translating
    local exceptions into oracle errors so the driver's failure handling is
    identical with and without a wire in between."""

    def __init__(self, suite: SyntheticOracleSuite):
        self.suite = suite

    @staticmethod
    def _guard(fn, *args):
        try:
            return fn(*args)
        except (KeyError, ValueError, TypeError) as exc:
            raise RemoteOracleError(f"{type(exc).__name__}: {exc}") from exc

    def close(self):
        pass


class InProcessAutoencoder(_InProcess):
    def encode_text(self, text: str):
        return self._guard(self.suite.autoencoder.encode, text)

    def decode_latent(self, z) -> str:
        return self._guard(self.suite.autoencoder.decode, z)


class InProcessSegmenter(_InProcess):
    def query_segmentation(self, sample: QuerySample, query: str) -> float:
        if self.suite.mask_mode:
            mask = self._guard(self.suite.masker.query, sample.sample_id, query)
            if sample.ground_truth is None:
                raise RemoteOracleError(f"sample {sample.sample_id!r} has no ground truth")
            return mask_iou(mask, sample.ground_truth)
        return self._guard(self.suite.bowl.query, sample.sample_id, query)


class InProcessEmbedder(_InProcess):
    def embed_text(self, text: str):
        return self._guard(self.suite.embedder.embed, text)


class InProcessJudge(_InProcess):
    def judge(self, original: str, paraphrase: str) -> int:
        return self._guard(self.suite.judge.score, original, paraphrase)


def serve_stdio(suite: SyntheticOracleSuite, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = loads(line)
        except Exception as exc:
            stdout.write(dumps(error_response(None, f"bad request line: {exc}")) + "\n")
            stdout.flush()
            continue
        stdout.write(dumps(suite.handle(request)) + "\n")
        stdout.flush()


def serve_http(suite: SyntheticOracleSuite, port: int = 0, started=None):
    """Blocking HTTP server; POST one NDJSON line, receive one back."""
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length).decode("utf-8")
            try:
                request = loads(body.strip())
                response = suite.handle(request)
            except Exception as exc:
                response = error_response(None, f"bad request line: {exc}")
            payload = (dumps(response) + "\n").encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
    if started is not None:
        started(server)
    server.serve_forever()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="serve the synthetic oracles over NDJSON")
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--grid", type=float, default=0.25)
    parser.add_argument("--tau", type=float, default=1.0)
    parser.add_argument("--text-scale", type=float, default=1.5)
    parser.add_argument("--mask-mode", action="store_true",
                        help="segment returns predicted masks instead of IoU")
    parser.add_argument("--dataset", help="samples.jsonl to register with the segmenter")
    parser.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    parser.add_argument("--port", type=int, default=0)
    args = parser.parse_args(argv)

    suite = SyntheticOracleSuite(dim=args.dim, grid=args.grid, tau=args.tau,
                                 text_scale=args.text_scale, mask_mode=args.mask_mode)
    if args.dataset:
        suite.register_all(load_samples(args.dataset))
    if args.transport == "stdio":
        serve_stdio(suite)
    else:
        def announce(server):
            print(f"listening on http://127.0.0.1:{server.server_address[1]}", flush=True)
        serve_http(suite, port=args.port, started=announce)
    return 0


if __name__ == "__main__":
    sys.exit(main())
