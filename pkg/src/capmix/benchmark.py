"""Benchmark execution: comparison protocols, joint judging, leaderboard.

Every compared method produces one caption per video (middle frame,
uniformly sampled frames, whole video, or the full mixture pipeline);
all candidates for a video are scored together in a single judge job.
Results append to a JSONL store keyed by (video_id, method, run).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .backends.core import ChatClient, ChatRequest
from .capscore import JudgeJob, evaluate
from .errors import CapmixError
from .pipeline import ManifestEntry, PipelineConfig, caption_video, list_frames
from .prompts import PROMPTS

logger = logging.getLogger(__name__)

PROTOCOLS = ("middle_frame", "uniform_frames", "whole_video", "pipeline")


def uniform_sample(total_frames: int, k: int) -> list[int]:
    """k evenly spaced frame indices: centers of k equal bins over [0, total).

    k >= total returns every index; k = 1 returns the middle frame.
    """
    if total_frames < 1 or k < 1:
        raise ValueError("total_frames and k must be >= 1")
    if k >= total_frames:
        return list(range(total_frames))
    return [math.floor((i + 0.5) * total_frames / k) for i in range(k)]


@dataclass(frozen=True)
class MethodSpec:
    """One named caption source in the comparison."""

    name: str
    protocol: str
    backend: str = ""          # unused for protocol "pipeline"
    frame_count: int = 16      # uniform_frames only

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.protocol != "pipeline" and not self.backend:
            raise ValueError(f"method {self.name!r}: protocol {self.protocol!r} needs a backend")


def method_caption(
    entry: ManifestEntry,
    method: MethodSpec,
    clients: dict[str, ChatClient],
    pipeline_config: PipelineConfig,
) -> str:
    """Produce this method's caption for one video."""
    if method.protocol == "pipeline":
        bundle = caption_video(entry, clients, pipeline_config)
        if bundle.status != "ok":
            raise CapmixError(
                f"pipeline failed at stage {bundle.failed_stage}: {bundle.error}"
            )
        return bundle.final_caption

    client = clients[method.backend]
    if method.protocol == "whole_video":
        reference = entry.video_path or entry.frames_dir
        request = ChatRequest(
            backend_name=client.name,
            prompt_parts=(PROMPTS["comparison"],),
            video=str(reference),
            temperature=client.config.temperature,
        )
        return client.complete(request).text

    frames = list_frames(entry.frames_dir)
    if not frames:
        raise CapmixError(f"no frames in {entry.frames_dir!r}")
    k = 1 if method.protocol == "middle_frame" else method.frame_count
    images = [frames[i] for i in uniform_sample(len(frames), k)]
    request = ChatRequest(
        backend_name=client.name,
        prompt_parts=(PROMPTS["comparison"],),
        images=tuple(images),
        temperature=client.config.temperature,
    )
    return client.complete(request).text


def derive_seed(seed: int, video_id: str) -> int:
    """Per-video judge seed, independent of execution order."""
    digest = hashlib.sha256(f"{seed}:{video_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class ResultsStore:
    """Append-only JSONL; the latest record per (video_id, method, run) wins."""

    def __init__(self, path):
        self.path = Path(path)

    def read(self) -> list[dict]:
        if not self.path.exists():
            return []
        by_key = {}
        with open(self.path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                by_key[(record["video_id"], record["method"], record["run"])] = record
        return list(by_key.values())

    def keys(self) -> set[tuple]:
        return {(r["video_id"], r["method"], r["run"]) for r in self.read()}

    def append(self, records: list[dict]) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


@dataclass
class BenchmarkSummary:
    scored: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)
    deduplicated: int = 0

    @property
    def failure_count(self) -> int:
        return len(self.failures)


def _score_entry(entry, methods, clients, pipeline_config, judge, judge_runs, scale_max, seed):
    captions = {}
    for method in methods:
        captions[method.name] = method_caption(entry, method, clients, pipeline_config)
    job = JudgeJob(
        ground_truth=entry.ground_truth,
        candidates=tuple((m.name, captions[m.name]) for m in methods),
        scale_max=scale_max,
        runs=judge_runs,
    )
    return captions, evaluate(job, judge, seed=derive_seed(seed, entry.video_id))


def run_benchmark(
    entries: list[ManifestEntry],
    methods: list[MethodSpec],
    clients: dict[str, ChatClient],
    pipeline_config: PipelineConfig,
    judge: ChatClient,
    store: ResultsStore,
    judge_runs: int = 1,
    scale_max: float = 1.0,
    seed: int = 0,
    run_label: str = "run-0",
    workers: int = 1,
    force: bool = False,
) -> BenchmarkSummary:
    """Caption and judge every manifest entry; append one record per method.

    Per-video failures are recorded and the run continues. Records already
    in the store (same video/method/run key) are skipped unless force.
    """
    summary = BenchmarkSummary()
    existing = store.keys() if not force else set()

    todo = []
    for entry in entries:
        if not entry.ground_truth:
            summary.skipped.append((entry.video_id, "missing ground-truth caption"))
            continue
        keys = {(entry.video_id, m.name, run_label) for m in methods}
        if keys <= existing:
            summary.deduplicated += 1
            continue
        todo.append(entry)

    def work(entry):
        try:
            return entry, _score_entry(
                entry, methods, clients, pipeline_config, judge, judge_runs, scale_max, seed
            ), None
        except (CapmixError, KeyError) as exc:
            return entry, None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, todo))
    else:
        outcomes = [work(entry) for entry in todo]

    for entry, scored, exc in outcomes:  # single writer, manifest order
        if exc is not None:
            summary.failures.append((entry.video_id, str(exc)))
            logger.warning("video %s failed: %s", entry.video_id, exc)
            continue
        captions, result = scored
        records = []
        for idx, method in enumerate(methods):
            records.append(
                {
                    "video_id": entry.video_id,
                    "dataset": entry.dataset,
                    "method": method.name,
                    "run": run_label,
                    "caption": captions[method.name],
                    "similarity": result.similarity[idx],
                    "quality": result.quality[idx],
                    "raw_similarity": [row[idx] for row in result.raw_similarity],
                    "raw_quality": [row[idx] for row in result.raw_quality],
                    "spread_similarity": result.spread_similarity[idx],
                    "spread_quality": result.spread_quality[idx],
                    "unstable": result.unstable,
                    "scale_max": scale_max,
                }
            )
        store.append(records)
        summary.scored += 1
    return summary


def leaderboard_rows(records: list[dict]) -> list[dict]:
    """Aggregate store records into per-method, per-dataset mean rows."""
    by_method: dict[str, dict] = {}
    for record in records:
        row = by_method.setdefault(record["method"], {})
        cell = row.setdefault(record["dataset"], {"similarity": [], "quality": []})
        cell["similarity"].append(record["similarity"])
        cell["quality"].append(record["quality"])
    rows = []
    for method, cells in by_method.items():
        all_sims = [v for cell in cells.values() for v in cell["similarity"]]
        rows.append(
            {
                "method": method,
                "mean_similarity": sum(all_sims) / len(all_sims),
                "datasets": {
                    ds: {
                        "similarity": sum(c["similarity"]) / len(c["similarity"]),
                        "quality": sum(c["quality"]) / len(c["quality"]),
                        "samples": len(c["similarity"]),
                    }
                    for ds, c in cells.items()
                },
            }
        )
    rows.sort(key=lambda r: (-r["mean_similarity"], r["method"]))
    return rows


def emit_leaderboard(records: list[dict]) -> tuple[str, str]:
    """Render (markdown, csv); empty store yields header-only tables."""
    rows = leaderboard_rows(records)
    datasets = sorted({ds for row in rows for ds in row["datasets"]})
    if not rows:
        logger.warning("results store is empty; emitting header-only leaderboard")

    headers = ["Method"]
    for ds in datasets:
        headers += [f"{ds} Similarity", f"{ds} Quality"]
    headers.append("Samples")

    def cells(row):
        out = [row["method"]]
        total = 0
        for ds in datasets:
            cell = row["datasets"].get(ds)
            if cell is None:
                out += ["-", "-"]
            else:
                out += [f"{cell['similarity']:.2f}", f"{cell['quality']:.2f}"]
                total += cell["samples"]
        out.append(str(total))
        return out

    table = [headers] + [cells(row) for row in rows]
    markdown_lines = [
        "| " + " | ".join(table[0]) + " |",
        "|" + "|".join(" --- " for _ in table[0]) + "|",
    ]
    markdown_lines += ["| " + " | ".join(line) + " |" for line in table[1:]]
    markdown = "\n".join(markdown_lines) + "\n"
    csv_text = "\n".join(",".join(line) for line in table) + "\n"
    return markdown, csv_text
