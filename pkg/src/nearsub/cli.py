"""Pipeline CLI: ingest -> dedup -> embed -> index -> distances -> select ->
report -> eval, driven by a TOML config file.

Every stage reads its declared inputs from the artifacts directory, writes
its outputs to a temp location promoted atomically on success, and records a
run-log (config digest, input digests, seed, wall time) under logs/. Reruns
with identical inputs and seeds produce byte-identical artifacts; run-logs
live outside the artifact tree because they carry timings.

Exit codes: 0 success, 2 config error, 3 input-data error, 4 external-service
error, 5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import fcntl
import hashlib
import json
import logging
import os
import shutil
import sys
import time

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import dataset, embed, evalharness, knn, report, select
from .errors import ConfigError, InputDataError, NearsubError

log = logging.getLogger("nearsub.cli")

STAGES = ("ingest", "dedup", "embed", "index", "distances", "select", "report", "eval", "synth", "all")

DEFAULT_TIMESTAMP = "1970-01-01T00:00:00Z"


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    unrealistic_path: str
    realworld_path: str
    out_dir: str
    seed: int = 0
    timestamp: str = DEFAULT_TIMESTAMP
    dedup_enabled: bool = True
    dedup_threshold: float = 0.8
    embedder: embed.EmbedderConfig = dataclasses.field(default_factory=embed.EmbedderConfig)
    index_mode: str = "ivf"
    index_centroids: int = 0  # 0 = ceil(sqrt(N))
    index_nprobe: int = 8
    index_include_eval_test: bool = False
    phis: tuple[float, ...] = (0.10, 0.25, 0.50, 0.75, 1.0)
    select_split: bool = True
    report_bins: int = 50
    report_projection_cap: int = 1000
    eval_seeds: tuple[int, ...] = (0, 1, 2)
    probe: evalharness.ProbeConfig = dataclasses.field(default_factory=evalharness.ProbeConfig)
    synth_n_real: int = 1000
    synth_n_unreal: int = 5000
    synth_realistic_fraction: float = 0.3
    synth_dim: int = 32
    synth_noise_label_rate: float = 0.5

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.blake2b(blob, digest_size=8).hexdigest()


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Parse the TOML config; explicit CLI flags override file values."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    overrides = overrides or {}

    def section(name) -> dict:
        value = doc.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] must be a table")
        return value

    inputs = section("inputs")
    output = section("output")
    dedup_s = section("dedup")
    emb_s = section("embedder")
    index_s = section("index")
    select_s = section("select")
    report_s = section("report")
    eval_s = section("eval")
    synth_s = section("synth")

    try:
        embedder = embed.EmbedderConfig(
            backend=emb_s.get("backend", "mock-hash"),
            dim=int(emb_s.get("dim", 1536)),
            max_tokens=int(emb_s.get("max_tokens", 8191)),
            endpoint=emb_s.get("endpoint", ""),
            model_name=emb_s.get("model_name", ""),
            normalize=bool(emb_s.get("normalize", False)),
            batch_size=int(emb_s.get("batch_size", 64)),
            max_retries=int(emb_s.get("max_retries", 3)),
            token_env=emb_s.get("token_env", ""),
            workers=int(emb_s.get("workers", 4)),
        )
        probe = evalharness.ProbeConfig(
            learning_rate=float(eval_s.get("learning_rate", 0.5)),
            epochs=int(eval_s.get("epochs", 50)),
            l2_penalty=float(eval_s.get("l2_penalty", 1e-3)),
        )
        cfg = PipelineConfig(
            unrealistic_path=inputs.get("unrealistic", ""),
            realworld_path=inputs.get("realworld", ""),
            out_dir=str(overrides.get("out_dir") or output.get("dir", "out")),
            seed=int(overrides.get("seed") if overrides.get("seed") is not None else doc.get("seed", 0)),
            timestamp=str(doc.get("timestamp", DEFAULT_TIMESTAMP)),
            dedup_enabled=bool(dedup_s.get("enabled", True)),
            dedup_threshold=float(dedup_s.get("threshold", 0.8)),
            embedder=embedder,
            index_mode=index_s.get("mode", "ivf"),
            index_centroids=int(index_s.get("centroids", 0)),
            index_nprobe=int(index_s.get("nprobe", 8)),
            index_include_eval_test=bool(index_s.get("include_eval_test", False)),
            phis=tuple(float(p) for p in select_s.get("phis", [0.10, 0.25, 0.50, 0.75, 1.0])),
            select_split=bool(select_s.get("split", True)),
            report_bins=int(report_s.get("bins", 50)),
            report_projection_cap=int(report_s.get("projection_cap", 1000)),
            eval_seeds=tuple(int(s) for s in eval_s.get("seeds", [0, 1, 2])),
            probe=probe,
            synth_n_real=int(synth_s.get("n_real", 1000)),
            synth_n_unreal=int(synth_s.get("n_unreal", 5000)),
            synth_realistic_fraction=float(synth_s.get("realistic_fraction", 0.3)),
            synth_dim=int(synth_s.get("dim", 32)),
            synth_noise_label_rate=float(synth_s.get("noise_label_rate", 0.5)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    for phi in cfg.phis:
        if not 0.0 <= phi <= 1.0:
            raise ConfigError(f"phi {phi} outside [0, 1]")
    if not 0.0 <= cfg.dedup_threshold <= 1.0:
        raise ConfigError(f"dedup threshold {cfg.dedup_threshold} outside [0, 1]")
    if cfg.index_mode not in ("exact", "ivf"):
        raise ConfigError(f"index mode {cfg.index_mode!r} not one of exact|ivf")
    if cfg.index_nprobe < 1:
        raise ConfigError(f"nprobe must be >= 1, got {cfg.index_nprobe}")
    if cfg.report_bins < 1:
        raise ConfigError(f"report bins must be >= 1, got {cfg.report_bins}")
    return cfg


class StageIO:
    """Staged output directory with atomic promotion into artifacts/."""

    def __init__(self, out_dir: str, stage: str):
        self.artifacts = os.path.join(out_dir, "artifacts")
        self.logs = os.path.join(out_dir, "logs")
        self.tmp = os.path.join(out_dir, f".tmp-{stage}")
        os.makedirs(self.artifacts, exist_ok=True)
        os.makedirs(self.logs, exist_ok=True)
        if os.path.isdir(self.tmp):
            shutil.rmtree(self.tmp)
        os.makedirs(self.tmp)
        self._outputs: list[str] = []

    def out(self, rel: str) -> str:
        path = os.path.join(self.tmp, rel)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        self._outputs.append(rel)
        return path

    def src(self, rel: str) -> str:
        path = os.path.join(self.artifacts, rel)
        if not os.path.exists(path):
            raise InputDataError(
                f"missing artifact {rel!r}; run the stage that produces it first"
            )
        return path

    def promote(self) -> list[str]:
        promoted = []
        for rel in self._outputs:
            src = os.path.join(self.tmp, rel)
            dst = os.path.join(self.artifacts, rel)
            os.makedirs(os.path.dirname(dst), exist_ok=True)
            os.replace(src, dst)
            promoted.append(rel)
        shutil.rmtree(self.tmp, ignore_errors=True)
        return promoted


def _file_digest(path: str) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_runlog(cfg: PipelineConfig, stage: str, inputs: list[str], outputs: list[str], wall: float):
    io_dir = os.path.join(cfg.out_dir, "logs")
    os.makedirs(io_dir, exist_ok=True)
    artifacts = os.path.join(cfg.out_dir, "artifacts")
    entry = {
        "stage": stage,
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "started_at": _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "wall_seconds": round(wall, 3),
        "inputs": {rel: _file_digest(os.path.join(artifacts, rel)) for rel in sorted(inputs)
                   if os.path.exists(os.path.join(artifacts, rel))},
        "outputs": {rel: _file_digest(os.path.join(artifacts, rel)) for rel in sorted(outputs)},
    }
    with open(os.path.join(io_dir, f"{stage}.json"), "w", encoding="utf-8") as fh:
        json.dump(entry, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _corpus_rel(cfg: PipelineConfig, kind: str) -> str:
    return f"{kind}.dedup.jsonl" if cfg.dedup_enabled else f"{kind}.jsonl"


def _load_reference(cfg: PipelineConfig, io: StageIO):
    """The reference embedding rows the neighbor index is built over.

    By default the real-world eval test split is excluded so distances carry
    no leakage into the evaluation; a config flag restores the full set.
    """
    r_matrix = embed.load_embeddings(io.src("realworld.emb"))
    if cfg.index_include_eval_test:
        return r_matrix
    r_corpus = dataset.load_corpus(io.src(_corpus_rel(cfg, "realworld")), "realworld",
                                   created_at=cfg.timestamp)
    split = evalharness.split_corpus(r_corpus, cfg.seed)
    keep = set(split.train_ids)
    rows = [i for i, sid in enumerate(r_matrix.ids) if sid in keep]
    return embed.EmbeddingMatrix(
        ids=tuple(r_matrix.ids[i] for i in rows),
        data=r_matrix.data[rows],
        normalized=r_matrix.normalized,
    )


def stage_ingest(cfg: PipelineConfig) -> None:
    io = StageIO(cfg.out_dir, "ingest")
    t0 = time.perf_counter()
    for kind, src in (("unrealistic", cfg.unrealistic_path), ("realworld", cfg.realworld_path)):
        if not src:
            raise ConfigError(f"[inputs] {kind} path missing from config")
        if not os.path.exists(src):
            raise InputDataError(f"input corpus does not exist: {src}")
        corpus = dataset.load_corpus(src, kind, created_at=cfg.timestamp)
        dataset.save_corpus(corpus, io.out(f"{kind}.jsonl"))
        log.info("ingested %s: %d samples", kind, len(corpus))
    outputs = io.promote()
    _write_runlog(cfg, "ingest", [], outputs, time.perf_counter() - t0)


def stage_dedup(cfg: PipelineConfig) -> None:
    io = StageIO(cfg.out_dir, "dedup")
    t0 = time.perf_counter()
    inputs = []
    for kind in ("unrealistic", "realworld"):
        rel = f"{kind}.jsonl"
        corpus = dataset.load_corpus(io.src(rel), kind, created_at=cfg.timestamp)
        inputs.append(rel)
        deduped, removed = dataset.dedup(corpus, cfg.dedup_threshold)
        dataset.save_corpus(deduped, io.out(f"{kind}.dedup.jsonl"))
        dataset.save_removed_ids(removed, io.out(f"{kind}.removed.txt"))
        log.info("dedup %s: kept %d, removed %d", kind, len(deduped), len(removed))
    outputs = io.promote()
    _write_runlog(cfg, "dedup", inputs, outputs, time.perf_counter() - t0)


def stage_embed(cfg: PipelineConfig) -> None:
    io = StageIO(cfg.out_dir, "embed")
    t0 = time.perf_counter()
    cache_dir = None
    if cfg.embedder.backend == "external-api":
        cache_dir = os.path.join(cfg.out_dir, "cache", "embed")
    inputs = []
    for kind in ("unrealistic", "realworld"):
        rel = _corpus_rel(cfg, kind)
        corpus = dataset.load_corpus(io.src(rel), kind, created_at=cfg.timestamp)
        inputs.append(rel)
        matrix = embed.embed_corpus(corpus, cfg.embedder, cache_dir=cache_dir)
        embed.save_embeddings(matrix, io.out(f"{kind}.emb"))
        log.info("embedded %s: %d x %d", kind, len(matrix), matrix.dim)
    outputs = io.promote()
    _write_runlog(cfg, "embed", inputs, outputs, time.perf_counter() - t0)


def stage_index(cfg: PipelineConfig) -> None:
    io = StageIO(cfg.out_dir, "index")
    t0 = time.perf_counter()
    reference = _load_reference(cfg, io)
    index = knn.build_index(
        reference,
        cfg.index_mode,
        centroid_count=cfg.index_centroids or None,
        nprobe=cfg.index_nprobe,
        seed=cfg.seed,
    )
    knn.save_index(index, io.out("index.bin"))
    log.info("built %s index over %d rows", cfg.index_mode, len(reference))
    outputs = io.promote()
    inputs = ["realworld.emb"]
    if not cfg.index_include_eval_test:
        inputs.append(_corpus_rel(cfg, "realworld"))
    _write_runlog(cfg, "index", inputs, outputs, time.perf_counter() - t0)


def stage_distances(cfg: PipelineConfig) -> None:
    io = StageIO(cfg.out_dir, "distances")
    t0 = time.perf_counter()
    queries = embed.load_embeddings(io.src("unrealistic.emb"))
    reference = _load_reference(cfg, io)
    if queries.dim != reference.dim:
        raise InputDataError(
            f"dimension mismatch: unrealistic.emb dim {queries.dim} vs realworld.emb dim {reference.dim}"
        )
    index = knn.load_index(io.src("index.bin"), reference)
    records = knn.nearest(index, queries)
    knn.save_distances(records, io.out("distances.csv"))
    log.info("computed %d nearest-neighbor distances", len(records))
    outputs = io.promote()
    _write_runlog(cfg, "distances", ["unrealistic.emb", "realworld.emb", "index.bin"],
                  outputs, time.perf_counter() - t0)


def stage_select(cfg: PipelineConfig) -> None:
    io = StageIO(cfg.out_dir, "select")
    t0 = time.perf_counter()
    u_rel = _corpus_rel(cfg, "unrealistic")
    r_rel = _corpus_rel(cfg, "realworld")
    corpus = dataset.load_corpus(io.src(u_rel), "unrealistic", created_at=cfg.timestamp)
    r_corpus = dataset.load_corpus(io.src(r_rel), "realworld", created_at=cfg.timestamp)
    records = knn.load_distances(io.src("distances.csv"))
    for phi in cfg.phis:
        spec = select.select_subset(
            records,
            phi,
            unrealistic_digest=corpus.manifest.content_digest,
            realworld_digest=r_corpus.manifest.content_digest,
        )
        tag = f"phi{phi:g}"
        select.save_subset_spec(spec, io.out(f"subset_{tag}.ids"))
        kwargs = {}
        if cfg.select_split:
            kwargs = dict(
                split_seed=cfg.seed,
                train_path=io.out(f"subset_{tag}.train.jsonl"),
                val_path=io.out(f"subset_{tag}.val.jsonl"),
            )
        subset_path = io.out(f"subset_{tag}.jsonl")
        io.out(f"subset_{tag}.jsonl.manifest")  # sidecar written by emit_subset
        select.emit_subset(corpus, spec, subset_path, **kwargs)
        log.info("phi=%g: threshold %.6f, %d of %d selected",
                 phi, spec.manifest.threshold, spec.manifest.selected_count, spec.manifest.total_count)
    outputs = io.promote()
    _write_runlog(cfg, "select", [u_rel, r_rel, "distances.csv"], outputs, time.perf_counter() - t0)


def stage_report(cfg: PipelineConfig) -> None:
    io = StageIO(cfg.out_dir, "report")
    t0 = time.perf_counter()
    records = knn.load_distances(io.src("distances.csv"))
    hist = report.histogram(records, cfg.report_bins)
    report.save_histogram(hist, io.out("histogram.csv"))
    rows = report.percentile_table(records, list(cfg.phis))
    report.save_percentile_table(rows, io.out("percentiles.csv"))
    u_matrix = embed.load_embeddings(io.src("unrealistic.emb"))
    r_matrix = embed.load_embeddings(io.src("realworld.emb"))
    proj = report.pca_project(u_matrix, r_matrix, cfg.report_projection_cap, seed=cfg.seed)
    report.save_projection(proj, io.out("projection.csv"))
    outputs = io.promote()
    _write_runlog(cfg, "report", ["distances.csv", "unrealistic.emb", "realworld.emb"],
                  outputs, time.perf_counter() - t0)


def stage_eval(cfg: PipelineConfig) -> None:
    io = StageIO(cfg.out_dir, "eval")
    t0 = time.perf_counter()
    u_rel = _corpus_rel(cfg, "unrealistic")
    r_rel = _corpus_rel(cfg, "realworld")
    u_corpus = dataset.load_corpus(io.src(u_rel), "unrealistic", created_at=cfg.timestamp)
    r_corpus = dataset.load_corpus(io.src(r_rel), "realworld", created_at=cfg.timestamp)
    u_matrix = embed.load_embeddings(io.src("unrealistic.emb"))
    r_matrix = embed.load_embeddings(io.src("realworld.emb"))
    records = knn.load_distances(io.src("distances.csv"))
    results = evalharness.run_regime_grid(
        u_corpus, u_matrix, r_corpus, r_matrix, records,
        phis=list(cfg.phis), seeds=list(cfg.eval_seeds), config=cfg.probe,
        split_seed=cfg.seed,
    )
    evalharness.save_eval_table(results, io.out("eval.csv"))
    skipped = sum(1 for r in results if r.skipped_reason)
    log.info("eval grid: %d rows (%d skipped)", len(results), skipped)
    outputs = io.promote()
    _write_runlog(cfg, "eval", [u_rel, r_rel, "unrealistic.emb", "realworld.emb", "distances.csv"],
                  outputs, time.perf_counter() - t0)


def stage_synth(cfg: PipelineConfig) -> None:
    io = StageIO(cfg.out_dir, "synth")
    t0 = time.perf_counter()
    r_corpus, r_matrix, u_corpus, u_matrix, truth = evalharness.synth_benchmark(
        n_real=cfg.synth_n_real,
        n_unreal=cfg.synth_n_unreal,
        realistic_fraction=cfg.synth_realistic_fraction,
        dim=cfg.synth_dim,
        noise_label_rate=cfg.synth_noise_label_rate,
        seed=cfg.seed,
    )
    dataset.save_corpus(r_corpus, io.out("synth/real.jsonl"))
    dataset.save_corpus(u_corpus, io.out("synth/unreal.jsonl"))
    embed.save_embeddings(r_matrix, io.out("synth/real.emb"))
    embed.save_embeddings(u_matrix, io.out("synth/unreal.emb"))
    with open(io.out("synth/truth_ids.txt"), "w", encoding="utf-8", newline="\n") as fh:
        for sid in sorted(truth):
            fh.write(sid + "\n")
    outputs = io.promote()
    _write_runlog(cfg, "synth", [], outputs, time.perf_counter() - t0)


_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "dedup": stage_dedup,
    "embed": stage_embed,
    "index": stage_index,
    "distances": stage_distances,
    "select": stage_select,
    "report": stage_report,
    "eval": stage_eval,
    "synth": stage_synth,
}


def run(subcommand: str, cfg: PipelineConfig) -> int:
    """Execute one stage (or the whole chain) holding the output-dir lock."""
    if subcommand not in STAGES:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    lock_path = os.path.join(cfg.out_dir, ".lock")
    lock_fh = open(lock_path, "w")
    try:
        try:
            fcntl.flock(lock_fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError as exc:
            raise ConfigError(f"output directory {cfg.out_dir!r} is locked by another run") from exc
        if subcommand == "all":
            chain = ["ingest"]
            if cfg.dedup_enabled:
                chain.append("dedup")
            chain += ["embed", "index", "distances", "select", "report", "eval"]
            for stage in chain:
                log.info("stage %s", stage)
                _STAGE_FUNCS[stage](cfg)
        else:
            _STAGE_FUNCS[subcommand](cfg)
    finally:
        lock_fh.close()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nearsub",
        description="Select the subset of a large corpus nearest to real-world data in embedding space.",
    )
    parser.add_argument("subcommand", choices=STAGES)
    parser.add_argument("--config", "-c", required=True, help="TOML config file")
    parser.add_argument("--output", "-o", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
    parser.add_argument("--verbose", "-v", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        cfg = load_config(args.config, {"out_dir": args.output, "seed": args.seed})
        return run(args.subcommand, cfg)
    except NearsubError as exc:
        print(f"nearsub: error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        print(f"nearsub: error[internal]: {exc!r}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
