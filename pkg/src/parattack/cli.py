"""Command-line surface: launch attacks, evaluate pools, merge attacks,
analyze latent geometry, and run the synthetic end-to-end benchmark.

Exit codes: 0 success, 1 usage/config error, 2 partial data failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig, OracleSet, run_dataset
from .config import ConfigError, RunConfig, default_config_dict, load_config, parse_config
from .evalproto import ProtocolConfig, evaluate_sample, sr_curve, unify
from .geometry import geometry_report, load_embeddings
from .oracle.cache import IouCache, JudgeCache
from .oracle.client import (
    AutoencoderClient,
    EmbeddingClient,
    JudgeClient,
    OracleEndpoint,
    SegmentationClient,
)
from .oracle.dataset import QuerySample, load_samples, save_samples
from .oracle.protocol import OracleError, dumps
from .oracle.synthetic import (
    InProcessAutoencoder,
    InProcessEmbedder,
    InProcessJudge,
    InProcessSegmenter,
    SyntheticOracleSuite,
)
from . import runstore

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2

# Synthetic-benchmark fixture: bowl landscape in 16-d with a 0.25 lattice.
# sigma_init/learning rates are bench-specific (the library defaults explore
# too conservatively to halve the bowl IoU within 10 iterations).
BENCH_DIM = 16
BENCH_GRID = 0.25
BENCH_TAU = 1.0
BENCH_TEXT_SCALE = 1.5
BENCH_SAMPLES = 4
BENCH_ATTACK = dict(candidates=8, iterations=10, sigma_init=0.5,
                    eps_clip=0.2, eps_adv=1e-8, lambda_adv=1.0, lambda_sim=0.0,
                    lr_mu=0.1, lr_lambda=0.01, lr_value=0.01,
                    hidden=64, inner_steps=1)


def _err(message: str):
    print(f"error: {message}", file=sys.stderr)


def _warn(message: str):
    print(f"warning: {message}", file=sys.stderr)


def _endpoint(spec: str, oracles_cfg: dict) -> OracleEndpoint:
    return OracleEndpoint.parse(
        spec,
        timeout_ms=int(oracles_cfg.get("timeout_ms", 30000)),
        max_concurrency=int(oracles_cfg.get("max_concurrency", 8)))


def _cli_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for flag, key in (("oracle_encode", "oracles.encode"),
                      ("oracle_segment", "oracles.segment"),
                      ("oracle_embed", "oracles.embed"),
                      ("oracle_judge", "oracles.judge")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config, overrides=_cli_overrides(args))
    data = default_config_dict()
    for dotted, value in _cli_overrides(args).items():
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return parse_config(data)


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------

def cmd_attack(args) -> int:
    try:
        cfg = _load_run_config(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    for required in ("encode", "segment"):
        if required not in cfg.oracles:
            _err(f"missing oracle endpoint {required!r} (config oracles.{required} "
                 f"or --oracle-{required})")
            return EXIT_USAGE
    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        _err(f"dataset not found: {dataset_path}")
        return EXIT_USAGE
    try:
        samples = load_samples(dataset_path)
    except (ValueError, KeyError) as exc:
        _err(f"bad dataset: {exc}")
        return EXIT_USAGE

    try:
        encode_ep = _endpoint(cfg.oracles["encode"], cfg.oracles)
        segment_ep = _endpoint(cfg.oracles["segment"], cfg.oracles)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE

    # health ping before doing any work
    probe = AutoencoderClient(encode_ep)
    seg_probe = SegmentationClient(segment_ep)
    alive = probe.ping() and seg_probe.ping()
    probe.close()
    seg_probe.close()
    if not alive:
        _err("oracle health ping failed")
        return EXIT_USAGE

    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    config_wire = cfg.to_wire()
    run_id = runstore.derive_run_id(config_wire, dataset_path.read_bytes())
    runstore.write_manifest(run_dir, run_id, config_wire)

    cache = IouCache()

    def oracle_factory() -> OracleSet:
        return OracleSet(autoencoder=AutoencoderClient(encode_ep),
                         segmentation=SegmentationClient(segment_ep))

    trajectories = run_dataset(
        samples, cfg.attack, oracle_factory, parallelism=args.parallelism,
        cache=cache, on_trajectory=lambda tr: runstore.write_trajectory(run_dir, tr))
    cache.save(run_dir / "iou_cache.jsonl")

    failures = [t.sample_id for t in trajectories if not t.complete]
    for sample_id in failures:
        _warn(f"sample {sample_id} aborted; trajectory flagged incomplete")
    print(f"{run_id}: {len(trajectories) - len(failures)}/{len(trajectories)} samples "
          f"complete under {run_dir}")
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# eval / unify
# ---------------------------------------------------------------------------

def _pools_from_run_dir(run_dir: Path):
    manifest = runstore.read_manifest(run_dir)
    label = manifest["config"].get("source_attack", "latent-ppo")
    pools: dict[str, list] = {}
    originals: dict[str, tuple[str, float]] = {}
    for path in runstore.list_trajectories(run_dir):
        trajectory = runstore.read_trajectory(path)
        pools[trajectory.sample_id] = runstore.trajectory_candidates(trajectory, label)
        originals[trajectory.sample_id] = (trajectory.query_text, trajectory.original_iou)
    return pools, originals, label


def _eval_clients(cfg: RunConfig):
    if "embed" not in cfg.oracles:
        raise ConfigError("missing oracle endpoint 'embed' (config oracles.embed or --oracle-embed)")
    embedder = EmbeddingClient(_endpoint(cfg.oracles["embed"], cfg.oracles))
    judge = None
    if cfg.filters.use_judge:
        if "judge" not in cfg.oracles:
            raise ConfigError("missing oracle endpoint 'judge' (config oracles.judge or --oracle-judge)")
        judge = JudgeClient(_endpoint(cfg.oracles["judge"], cfg.oracles))
    return embedder, judge


class _CachedJudge:
    """JudgeClient wrapper memoizing (original, paraphrase) pairs."""

    def __init__(self, client):
        self._client = client
        self._cache = JudgeCache()

    def judge(self, original: str, paraphrase: str) -> int:
        return self._cache.score(self._client, original, paraphrase)

    def close(self):
        self._client.close()


def _run_protocol(pools, originals, embedder, judge, filters: ProtocolConfig,
                  out_dir: Path, attack_label: str) -> int:
    outcomes = {}
    for sample_id in sorted(pools):
        if sample_id not in originals:
            _err(f"no original record for sample {sample_id!r}")
            return EXIT_USAGE
        text, iou = originals[sample_id]
        outcomes[sample_id] = evaluate_sample(
            sample_id, pools[sample_id], text, iou,
            embedder=embedder, judge=judge, config=filters)

    attackable = [o for o in outcomes.values() if not o.unattackable]
    unattackable = len(outcomes) - len(attackable)
    if unattackable:
        _warn(f"{unattackable} sample(s) have original IoU = 0 and are excluded "
              f"from the curve denominator")
    if not attackable:
        _err("no attackable samples; cannot build a success-rate curve")
        return EXIT_USAGE
    curve = sr_curve([o.delta_iou for o in attackable], unattackable=unattackable)

    out_dir.mkdir(parents=True, exist_ok=True)
    runstore.write_verdicts(out_dir / "verdicts.jsonl", outcomes)
    runstore.write_best(out_dir / "best.jsonl", outcomes)
    runstore.write_curve(out_dir / "curve.json", curve)
    runstore.write_metrics_csv(out_dir / "metrics.csv", [{
        "attack": attack_label, "msr": curve.msr, "sr5": curve.sr5, "sr10": curve.sr10}])
    print(f"{attack_label}: mSR={curve.msr:.6f} SR_5={curve.sr5:.6f} SR_10={curve.sr10:.6f} "
          f"({len(attackable)} samples)")
    return EXIT_OK


def cmd_eval(args) -> int:
    if bool(args.run_dir) == bool(args.candidates):
        _err("provide exactly one of --run-dir or --candidates")
        return EXIT_USAGE
    try:
        cfg = _load_run_config(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE

    skipped = 0
    if args.run_dir:
        run_dir = Path(args.run_dir)
        if not (run_dir / "manifest.json").exists():
            _err(f"{run_dir} has no manifest.json")
            return EXIT_USAGE
        pools, originals, label = _pools_from_run_dir(run_dir)
    else:
        if not args.originals:
            _err("--candidates requires --originals (sample_id, original_text, original_iou)")
            return EXIT_USAGE
        pools, skipped = runstore.load_candidate_file(args.candidates)
        originals = runstore.load_originals_file(args.originals)
        label = "external"
    if not pools:
        _err("no candidates to evaluate")
        return EXIT_USAGE

    try:
        embedder, judge = _eval_clients(cfg)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    judge = _CachedJudge(judge) if judge is not None else None
    try:
        status = _run_protocol(pools, originals, embedder, judge, cfg.filters,
                               Path(args.out), label)
    except OracleError as exc:
        _err(f"oracle failure during evaluation: {exc}")
        return EXIT_PARTIAL
    finally:
        embedder.close()
        if judge is not None:
            judge.close()
    if skipped:
        _warn(f"skipped {skipped} malformed candidate line(s)")
        return EXIT_PARTIAL if status == EXIT_OK else status
    return status


def cmd_unify(args) -> int:
    if not args.candidates and not args.run_dir:
        _err("nothing to unify: pass candidate files and/or --run-dir")
        return EXIT_USAGE
    try:
        cfg = _load_run_config(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE

    result_sets = []
    originals: dict[str, tuple[str, float]] = {}
    skipped = 0
    for run_dir in args.run_dir or []:
        pools, run_originals, _ = _pools_from_run_dir(Path(run_dir))
        result_sets.append(pools)
        originals.update(run_originals)
    for path in args.candidates or []:
        pools, bad = runstore.load_candidate_file(path)
        skipped += bad
        result_sets.append(pools)
    if args.originals:
        originals.update(runstore.load_originals_file(args.originals))
    if not any(result_sets):
        _err("no candidates found in the given inputs")
        return EXIT_USAGE

    try:
        embedder, judge = _eval_clients(cfg)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    judge = _CachedJudge(judge) if judge is not None else None
    try:
        outcomes = unify(result_sets, originals, embedder=embedder, judge=judge,
                         config=cfg.filters)
        attackable = [o for o in outcomes.values() if not o.unattackable]
        if not attackable:
            _err("no attackable samples; cannot build a success-rate curve")
            return EXIT_USAGE
        curve = sr_curve([o.delta_iou for o in attackable],
                         unattackable=len(outcomes) - len(attackable))
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        runstore.write_verdicts(out_dir / "verdicts.jsonl", outcomes)
        runstore.write_best(out_dir / "best.jsonl", outcomes)
        runstore.write_curve(out_dir / "curve.json", curve)
        runstore.write_metrics_csv(out_dir / "metrics.csv", [{
            "attack": "unified", "msr": curve.msr, "sr5": curve.sr5, "sr10": curve.sr10}])
        print(f"unified: mSR={curve.msr:.6f} SR_5={curve.sr5:.6f} SR_10={curve.sr10:.6f}")
    except KeyError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except OracleError as exc:
        _err(f"oracle failure during evaluation: {exc}")
        return EXIT_PARTIAL
    finally:
        embedder.close()
        if judge is not None:
            judge.close()
    if skipped:
        _warn(f"skipped {skipped} malformed candidate line(s)")
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    path = Path(args.embeddings)
    if not path.exists():
        _err(f"embeddings file not found: {path}")
        return EXIT_USAGE
    try:
        embeddings = load_embeddings(path)
        report = geometry_report(embeddings, top_k=args.top_k)
    except (ValueError, KeyError) as exc:
        _err(f"cannot analyze embeddings: {exc}")
        return EXIT_USAGE
    if report["csr"] is None:
        _warn("fewer than 2 labels: csr reported as null")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "geometry.json").write_text(dumps(report) + "\n")
    csv_lines = ["dim,r"] + [f"{row['dim']},{row['r']:.6f}" for row in report["top_dims"]]
    (out_dir / "top_dims.csv").write_text("".join(line + "\n" for line in csv_lines))
    print(f"nnr={report['nnr']:.6f} csr="
          f"{'null' if report['csr'] is None else format(report['csr'], '.6f')} "
          f"({report['points']} points, {report['labels']} labels)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth-bench
# ---------------------------------------------------------------------------

def bench_dataset(dim: int = BENCH_DIM, count: int = BENCH_SAMPLES,
                  seed: int = 2024, scale: float = BENCH_TEXT_SCALE) -> list[QuerySample]:
    """Lattice-format queries with seeded coordinates, so originals and their
    paraphrases live in the same text family."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        vec = rng.normal(0.0, scale, size=dim)
        text = "L[" + ",".join(repr(float(v)) for v in vec) + "]"
        samples.append(QuerySample(sample_id=f"bowl-{i}",
                                   image_ref=f"synthetic://bowl/{i}",
                                   query_text=text))
    return samples


def bench_attack_config(seed: int = 123) -> AttackConfig:
    return AttackConfig(seed=seed, **BENCH_ATTACK)


def cmd_synth_bench(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = bench_dataset()
    suite = SyntheticOracleSuite(dim=BENCH_DIM, grid=BENCH_GRID, tau=BENCH_TAU,
                                 text_scale=BENCH_TEXT_SCALE)
    suite.register_all(samples)
    config = bench_attack_config(seed=args.seed)

    dataset_path = out_dir / "samples.jsonl"
    save_samples(samples, dataset_path)
    config_wire = {
        "schema_version": 1, "seed": config.seed, "source_attack": "latent-ppo",
        "attack": BENCH_ATTACK,
        "oracles": {"kind": "synthetic-bowl", "dim": BENCH_DIM, "grid": BENCH_GRID,
                    "tau": BENCH_TAU, "text_scale": BENCH_TEXT_SCALE},
        "filters": {"cosine_threshold": 0.825, "terminal_punctuation": ".!?",
                    "use_judge": True},
    }
    run_id = runstore.derive_run_id(config_wire, dataset_path.read_bytes())
    runstore.write_manifest(out_dir, run_id, config_wire)

    def oracle_factory() -> OracleSet:
        return OracleSet(autoencoder=InProcessAutoencoder(suite),
                         segmentation=InProcessSegmenter(suite))

    cache = IouCache()
    trajectories = run_dataset(
        samples, config, oracle_factory, parallelism=args.parallelism, cache=cache,
        on_trajectory=lambda tr: runstore.write_trajectory(out_dir, tr))
    cache.save(out_dir / "iou_cache.jsonl")

    embedder = InProcessEmbedder(suite)
    judge = InProcessJudge(suite)
    pools = {t.sample_id: runstore.trajectory_candidates(t, "latent-ppo")
             for t in trajectories}
    originals = {t.sample_id: (t.query_text, t.original_iou) for t in trajectories}
    outcomes = {}
    for sample_id in sorted(pools):
        text, iou = originals[sample_id]
        outcomes[sample_id] = evaluate_sample(sample_id, pools[sample_id], text, iou,
                                              embedder=embedder, judge=judge)
    curve = sr_curve([o.delta_iou for o in outcomes.values()])

    runstore.write_verdicts(out_dir / "verdicts.jsonl", outcomes)
    runstore.write_best(out_dir / "best.jsonl", outcomes)
    runstore.write_curve(out_dir / "curve.json", curve)
    report = {
        "run_id": run_id,
        "seed": config.seed,
        "samples": [
            {"sample_id": t.sample_id,
             "original_iou": t.original_iou,
             "final_mean_iou": t.final_mean_iou(),
             "best_delta_iou": outcomes[t.sample_id].delta_iou}
            for t in trajectories
        ],
        "msr": curve.msr, "sr5": curve.sr5, "sr10": curve.sr10,
        "grid_points": len(curve.grid),
    }
    (out_dir / "report.json").write_text(dumps(report) + "\n")
    print(f"synth-bench: mSR={curve.msr:.6f} over {len(trajectories)} samples "
          f"(grid {len(curve.grid)} points)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_oracle_flags(sub):
    sub.add_argument("--oracle-encode", help="autoencoder endpoint (http:URL or cmd:...)")
    sub.add_argument("--oracle-segment", help="segmentation endpoint")
    sub.add_argument("--oracle-embed", help="sentence-embedding endpoint")
    sub.add_argument("--oracle-judge", help="paraphrase-judge endpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parattack",
        description="Latent-space adversarial paraphrasing toolkit")
    parser.add_argument("--version", action="version", version=f"parattack {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("attack", help="run the latent PPO attack over a dataset")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--dataset", required=True, help="samples.jsonl")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--parallelism", type=int, default=1)
    _add_oracle_flags(p)
    p.set_defaults(func=cmd_attack)

    p = subs.add_parser("eval", help="run the evaluation protocol over candidates")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--run-dir", help="attack run directory to evaluate")
    p.add_argument("--candidates", help="external candidate JSONL")
    p.add_argument("--originals", help="originals JSONL for --candidates mode")
    p.add_argument("--out", required=True)
    _add_oracle_flags(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("unify", help="merge pools from several attacks per sample")
    p.add_argument("candidates", nargs="*", help="candidate JSONL files")
    p.add_argument("--run-dir", action="append", help="attack run directory (repeatable)")
    p.add_argument("--originals", help="originals JSONL")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True)
    _add_oracle_flags(p)
    p.set_defaults(func=cmd_unify)

    p = subs.add_parser("analyze", help="latent-geometry report for an embedding file")
    p.add_argument("--embeddings", required=True, help="JSONL of {vector, label, length}")
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_analyze)

    p = subs.add_parser("synth-bench", help="end-to-end run on the bundled synthetic oracles")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=123)
    p.add_argument("--parallelism", type=int, default=1)
    p.set_defaults(func=cmd_synth_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except OracleError as exc:
        _err(f"oracle failure: {exc}")
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
