"""Command-line surface.

Subcommands: annotate (scene JSON -> annotation JSON + captions),
caption (manifest -> one bundle per video), benchmark (methods x videos ->
results store), leaderboard (store -> markdown/CSV), ablate (sentence-prefix
scoring curve -> CSV), replay (rerun the caption stage against a recorded
exchange log). Exit code is 0 only when nothing failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .backends.config import build_clients, load_backend_configs
from .backends.core import ChatClient, CountingClock, ExchangeLog, load_transcript
from .backends.mocks import TranscriptBackend
from .benchmark import MethodSpec, ResultsStore, emit_leaderboard, run_benchmark
from .capscore import token_ablation
from .errors import CapmixError, SchemaError
from .interaction import InteractionParams, annotate_scene
from .motion import MotionParams
from .pipeline import PipelineConfig, caption_video, load_manifest
from .scene_io import load_scene, window_scenes

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    manifest: str = ""
    backends: str = ""
    output_dir: str = "out"
    seed: int = 0
    workers: int = 1
    run_label: str = "run-0"
    # pipeline roles and parameters
    image_backend: str = ""
    summarizer: str = ""
    video_backends: list[str] = field(default_factory=list)
    target_fps: float = 2.0
    min_frames: int = 8
    motion_epsilon: float = 2.0
    include_annotated: bool = False
    # judge settings
    judge_backend: str = ""
    judge_runs: int = 1
    scale_max: float = 1.0
    # scene annotation
    scenes: str = ""
    window: float = 0.0
    aggregator: str = ""
    # comparison methods
    methods: list[MethodSpec] = field(default_factory=list)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            image_backend=self.image_backend,
            summarizer=self.summarizer,
            video_backends=list(self.video_backends),
            target_fps=self.target_fps,
            min_frames=self.min_frames,
            motion_epsilon=self.motion_epsilon,
            include_annotated=self.include_annotated,
        )


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    else:
        with open(path) as fh:
            data = json.load(fh)
    config = RunConfig()
    for key in ("manifest", "backends", "output_dir", "seed", "workers", "run_label"):
        if key in data:
            setattr(config, key, data[key])
    for section, keys in (
        ("pipeline", (
            "image_backend", "summarizer", "video_backends", "target_fps",
            "min_frames", "motion_epsilon", "include_annotated",
        )),
        ("judge", ()),
        ("annotate", ("scenes", "window", "aggregator")),
    ):
        block = data.get(section, {})
        for key in keys:
            if key in block:
                setattr(config, key, block[key])
    judge = data.get("judge", {})
    if "backend" in judge:
        config.judge_backend = judge["backend"]
    if "runs" in judge:
        config.judge_runs = judge["runs"]
    if "scale_max" in judge:
        config.scale_max = judge["scale_max"]
    for raw in data.get("methods", []):
        try:
            config.methods.append(MethodSpec(**raw))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: bad method entry {raw!r}: {exc}") from exc
    # paths in the file resolve relative to the file
    base = path.parent
    for key in ("manifest", "backends", "scenes"):
        value = getattr(config, key)
        if value and not Path(value).is_absolute():
            setattr(config, key, str(base / value))
    return config


def _make_clients(config: RunConfig, log_path=None):
    backend_configs = load_backend_configs(config.backends)
    log = ExchangeLog(log_path)
    return build_clients(backend_configs, log=log, rng_seed=config.seed), backend_configs


def _out(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_annotate(config: RunConfig) -> int:
    out = _out(config) / "annotations"
    out.mkdir(parents=True, exist_ok=True)
    aggregator = None
    if config.aggregator:
        clients, _ = _make_clients(config, _out(config) / "exchange_log.jsonl")
        aggregator = clients[config.aggregator]
    scene_paths = sorted(Path(config.scenes).glob("*.json"))
    if not scene_paths:
        logger.error("no scene files in %s", config.scenes)
        return 1
    motion_params = MotionParams()
    inter_params = InteractionParams()
    captions = {}
    failures = 0
    for scene_path in scene_paths:
        try:
            scene = load_scene(scene_path)
            pieces = window_scenes(scene, config.window) if config.window > 0 else [scene]
            for piece in pieces:
                annotation = annotate_scene(piece, motion_params, inter_params, aggregator)
                with open(out / f"{piece.scene_id}.json", "w") as fh:
                    json.dump(annotation.to_dict(), fh, indent=2, sort_keys=True)
                    fh.write("\n")
                captions[piece.scene_id] = annotation.caption.text
        except CapmixError as exc:
            failures += 1
            logger.error("scene %s failed: %s", scene_path.name, exc)
    with open(out / "captions.json", "w") as fh:
        json.dump(captions, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("annotated %d scene windows, %d failures", len(captions), failures)
    return 0 if failures == 0 else 1


def _entries_with_annotation_captions(config: RunConfig):
    """Manifest entries; missing ground truths fill from annotate output."""
    entries = load_manifest(config.manifest)
    captions_path = _out(config) / "annotations" / "captions.json"
    if captions_path.exists():
        with open(captions_path) as fh:
            captions = json.load(fh)
        entries = [
            dataclasses.replace(e, ground_truth=captions[e.video_id])
            if not e.ground_truth and e.video_id in captions
            else e
            for e in entries
        ]
    return entries


def cmd_caption(config: RunConfig) -> int:
    out = _out(config)
    bundles_dir = out / "bundles"
    bundles_dir.mkdir(parents=True, exist_ok=True)
    clients, _ = _make_clients(config, out / "exchange_log.jsonl")
    pipeline_config = config.pipeline_config()
    entries = _entries_with_annotation_captions(config)

    def work(entry):
        return caption_video(entry, clients, pipeline_config)

    if config.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            bundles = list(pool.map(work, entries))
    else:
        bundles = [work(entry) for entry in entries]

    failures = 0
    for entry, bundle in zip(entries, bundles):  # written in manifest order
        with open(bundles_dir / f"{entry.video_id}.json", "w") as fh:
            fh.write(bundle.to_json())
        if bundle.status != "ok":
            failures += 1
            logger.error(
                "video %s failed at stage %s: %s", entry.video_id, bundle.failed_stage, bundle.error
            )
    logger.info("captioned %d videos, %d failures", len(entries), failures)
    return 0 if failures == 0 else 1


def cmd_benchmark(config: RunConfig, force: bool = False) -> int:
    out = _out(config)
    clients, _ = _make_clients(config, out / "exchange_log.jsonl")
    judge = clients[config.judge_backend]
    store = ResultsStore(out / "results.jsonl")
    summary = run_benchmark(
        entries=_entries_with_annotation_captions(config),
        methods=config.methods,
        clients=clients,
        pipeline_config=config.pipeline_config(),
        judge=judge,
        store=store,
        judge_runs=config.judge_runs,
        scale_max=config.scale_max,
        seed=config.seed,
        run_label=config.run_label,
        workers=config.workers,
        force=force,
    )
    for video_id, reason in summary.skipped:
        logger.warning("skipped %s: %s", video_id, reason)
    logger.info(
        "benchmark: %d scored, %d skipped, %d deduplicated, %d failures",
        summary.scored, len(summary.skipped), summary.deduplicated, summary.failure_count,
    )
    return 0 if summary.failure_count == 0 else 1


def cmd_leaderboard(config: RunConfig) -> int:
    out = _out(config)
    store = ResultsStore(out / "results.jsonl")
    markdown, csv_text = emit_leaderboard(store.read())
    (out / "leaderboard.md").write_text(markdown)
    (out / "leaderboard.csv").write_text(csv_text)
    print(markdown, end="")
    return 0


def cmd_ablate(config: RunConfig, video_id: str, method: str) -> int:
    out = _out(config)
    store = ResultsStore(out / "results.jsonl")
    record = next(
        (r for r in store.read() if r["video_id"] == video_id and r["method"] == method),
        None,
    )
    if record is None:
        logger.error("no stored result for video %r method %r", video_id, method)
        return 1
    entries = {e.video_id: e for e in _entries_with_annotation_captions(config)}
    entry = entries.get(video_id)
    if entry is None or not entry.ground_truth:
        logger.error("no ground truth for video %r", video_id)
        return 1
    clients, _ = _make_clients(config, out / "exchange_log.jsonl")
    points = token_ablation(
        record["caption"],
        entry.ground_truth,
        clients[config.judge_backend],
        scale_max=config.scale_max,
        runs=config.judge_runs,
        seed=config.seed,
    )
    lines = ["token_count,similarity,quality"]
    lines += [f"{p.token_count},{p.similarity},{p.quality}" for p in points]
    csv_path = out / f"ablation_{video_id}_{method}.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    logger.info("wrote %s (%d points)", csv_path, len(points))
    return 0


def cmd_replay(config: RunConfig, log_path: str) -> int:
    """Re-run the caption stage with every backend replaced by the recorded
    transcript; output must match the original run byte for byte."""
    out = _out(config)
    bundles_dir = out / "bundles"
    bundles_dir.mkdir(parents=True, exist_ok=True)
    transcript = load_transcript(log_path)
    backend_configs = load_backend_configs(config.backends)
    log = ExchangeLog(out / "exchange_log.jsonl")
    clock = CountingClock()
    clients = {
        name: ChatClient(TranscriptBackend(transcript), backend_config, log=log, clock=clock)
        for name, backend_config in backend_configs.items()
    }
    pipeline_config = config.pipeline_config()
    entries = _entries_with_annotation_captions(config)
    failures = 0
    for entry in entries:
        bundle = caption_video(entry, clients, pipeline_config)
        with open(bundles_dir / f"{entry.video_id}.json", "w") as fh:
            fh.write(bundle.to_json())
        if bundle.status != "ok":
            failures += 1
            logger.error("replay of %s failed: %s", entry.video_id, bundle.error)
    logger.info("replayed %d videos, %d failures", len(entries), failures)
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="capmix", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("-c", "--config", required=True, help="run config (TOML or JSON)")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--seed", type=int, help="override random seed")
        return p

    add("annotate", help="annotate scene JSONs into ground-truth captions")
    add("caption", help="run the captioning pipeline over the manifest")
    bench = add("benchmark", help="caption with every method and judge jointly")
    bench.add_argument("--force", action="store_true", help="rescore existing keys")
    add("leaderboard", help="emit markdown + CSV tables from the results store")
    ablate = add("ablate", help="sentence-prefix scoring curve for one stored caption")
    ablate.add_argument("--video", required=True)
    ablate.add_argument("--method", required=True)
    replay = add("replay", help="re-run captioning against a recorded exchange log")
    replay.add_argument("--log", required=True, help="exchange log to replay")

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    config = load_run_config(args.config)
    if args.out:
        config.output_dir = args.out
    if args.seed is not None:
        config.seed = args.seed

    try:
        if args.command == "annotate":
            return cmd_annotate(config)
        if args.command == "caption":
            return cmd_caption(config)
        if args.command == "benchmark":
            return cmd_benchmark(config, force=args.force)
        if args.command == "leaderboard":
            return cmd_leaderboard(config)
        if args.command == "ablate":
            return cmd_ablate(config, args.video, args.method)
        if args.command == "replay":
            return cmd_replay(config, args.log)
    except CapmixError as exc:
        logger.error("%s", exc)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
