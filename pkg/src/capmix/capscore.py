"""LLM-judge caption scoring.

One judge job scores every candidate against one ground-truth caption in a
single prompt and returns two metrics per candidate: similarity to the
ground truth and quality (fewer hallucinations / less misalignment).
Replies must match a strict semicolon/comma format; anything else triggers
a re-ask. Candidate order is shuffled per run (seeded) to counter position
bias and inverted before aggregation.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field

import numpy as np

from .backends.core import ChatClient, ChatRequest
from .errors import (
    BackendError,
    EvaluationError,
    JudgeParseError,
    UndefinedCorrelationError,
)
from .prompts import JUDGE_TEMPLATE, caption_enumeration

STABILITY_THRESHOLD = 0.05
_SCALES = (1.0, 5.0)


@dataclass(frozen=True)
class JudgeJob:
    ground_truth: str
    candidates: tuple[tuple[str, str], ...]  # (name, caption text), ordered
    scale_max: float = 1.0
    runs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(tuple(c) for c in self.candidates))
        if not self.ground_truth:
            raise ValueError("ground_truth must be non-empty")
        if not 1 <= len(self.candidates) <= 9:
            raise ValueError("need between 1 and 9 candidates (single-digit indices)")
        if self.scale_max not in _SCALES:
            raise ValueError(f"scale_max must be one of {_SCALES}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


def build_judge_prompt(job: JudgeJob) -> str:
    """Verbatim judge instruction plus labeled candidates and ground truth."""
    instruction = JUDGE_TEMPLATE.format(
        scale=int(job.scale_max), enum=caption_enumeration(len(job.candidates))
    )
    captions = "\n".join(
        f"Caption {i}: {text}" for i, (_, text) in enumerate(job.candidates, start=1)
    )
    return f"{instruction}\n\n{captions}\n\nGround truth caption: {job.ground_truth}"


def parse_judge_response(text: str, n_candidates: int, scale_max: float):
    """Strict parse of 'a,b,...;c,d,...' into (similarities, qualities).

    Surrounding whitespace is tolerated; wrong group count, wrong arity,
    non-numeric tokens, and out-of-range values are distinct errors.
    """
    groups = text.strip().split(";")
    if len(groups) != 2:
        raise JudgeParseError(
            f"expected 2 semicolon-separated groups, got {len(groups)}", kind="group_count"
        )
    vectors = []
    for group in groups:
        tokens = [t.strip() for t in group.strip().split(",")]
        if len(tokens) != n_candidates:
            raise JudgeParseError(
                f"expected {n_candidates} scores per metric, got {len(tokens)}", kind="arity"
            )
        values = []
        for token in tokens:
            try:
                value = float(token)
            except ValueError:
                raise JudgeParseError(f"non-numeric score {token!r}", kind="non_numeric") from None
            if not math.isfinite(value) or not 0.0 <= value <= scale_max:
                raise JudgeParseError(
                    f"score {value} outside [0, {scale_max}]", kind="range"
                )
            values.append(value)
        vectors.append(values)
    return vectors[0], vectors[1]


@dataclass
class CapScoreResult:
    candidate_names: list[str]
    scale_max: float
    similarity: list[float]            # per-candidate means
    quality: list[float]
    raw_similarity: list[list[float]]  # per successful run, original order
    raw_quality: list[list[float]]
    spread_similarity: list[float]     # max - min per candidate
    spread_quality: list[float]
    unstable: bool
    ask_counts: list[int] = field(default_factory=list)  # judge asks per run
    failed_runs: int = 0

    def to_dict(self):
        return {
            "candidate_names": self.candidate_names,
            "scale_max": self.scale_max,
            "similarity": self.similarity,
            "quality": self.quality,
            "raw_similarity": self.raw_similarity,
            "raw_quality": self.raw_quality,
            "spread_similarity": self.spread_similarity,
            "spread_quality": self.spread_quality,
            "unstable": self.unstable,
            "ask_counts": self.ask_counts,
            "failed_runs": self.failed_runs,
        }


def _spread(rows: list[list[float]], column: int) -> float:
    values = [row[column] for row in rows]
    return max(values) - min(values)


def evaluate(
    job: JudgeJob,
    judge: ChatClient,
    stability_threshold: float = STABILITY_THRESHOLD,
    seed: int = 0,
    temperature: float = 0.0,
) -> CapScoreResult:
    """Run the judge `runs` times and aggregate.

    Each run shuffles candidate order (seeded) and re-asks on parse
    failure up to the judge's max_retries. Judge requests default to
    temperature 0. Runs where every ask failed are dropped; if all runs
    drop, the evaluation fails.
    """
    rng = random.Random(seed)
    n = len(job.candidates)
    raw_sim, raw_qual, ask_counts = [], [], []
    failed_runs = 0
    last_error = None
    for _ in range(job.runs):
        perm = list(range(n))
        rng.shuffle(perm)
        shuffled = JudgeJob(
            ground_truth=job.ground_truth,
            candidates=tuple(job.candidates[p] for p in perm),
            scale_max=job.scale_max,
            runs=1,
        )
        prompt = build_judge_prompt(shuffled)
        request = ChatRequest(
            backend_name=judge.name,
            prompt_parts=(prompt,),
            temperature=temperature,
        )
        parsed = None
        asks = 0
        for _ in range(judge.config.max_retries + 1):
            asks += 1
            try:
                response = judge.complete(request)
                parsed = parse_judge_response(response.text, n, job.scale_max)
                break
            except (JudgeParseError, BackendError) as exc:
                last_error = exc
        if parsed is None:
            failed_runs += 1
            continue
        sim = [0.0] * n
        qual = [0.0] * n
        for pos, original in enumerate(perm):
            sim[original] = parsed[0][pos]
            qual[original] = parsed[1][pos]
        raw_sim.append(sim)
        raw_qual.append(qual)
        ask_counts.append(asks)
    if not raw_sim:
        raise EvaluationError(f"all {job.runs} judge runs failed: {last_error}")
    spread_sim = [_spread(raw_sim, i) for i in range(n)]
    spread_qual = [_spread(raw_qual, i) for i in range(n)]
    return CapScoreResult(
        candidate_names=[name for name, _ in job.candidates],
        scale_max=job.scale_max,
        similarity=[sum(r[i] for r in raw_sim) / len(raw_sim) for i in range(n)],
        quality=[sum(r[i] for r in raw_qual) / len(raw_qual) for i in range(n)],
        raw_similarity=raw_sim,
        raw_quality=raw_qual,
        spread_similarity=spread_sim,
        spread_quality=spread_qual,
        unstable=any(s > stability_threshold for s in spread_sim + spread_qual),
        ask_counts=ask_counts,
        failed_runs=failed_runs,
    )


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be equal-length 1-d sequences")
    if len(xs) < 2:
        raise ValueError("need at least 2 samples")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    dx = float(np.dot(xc, xc))
    dy = float(np.dot(yc, yc))
    if dx == 0.0 or dy == 0.0:
        raise UndefinedCorrelationError("constant input has no defined correlation")
    r = float(np.dot(xc, yc)) / math.sqrt(dx * dy)
    return max(-1.0, min(1.0, r))


def sentence_prefixes(text: str) -> list[str]:
    """Cumulative sentence prefixes; boundaries are ., !, ? followed by space.

    Prefixes are literal substrings of the input, so the last prefix is
    the whole (stripped) caption.
    """
    text = text.strip()
    if not text:
        raise ValueError("caption must be non-empty")
    prefixes = [text[: m.end(1)] for m in re.finditer(r"([.!?])\s+", text)]
    prefixes.append(text)
    return prefixes


@dataclass(frozen=True)
class AblationPoint:
    token_count: int
    similarity: float
    quality: float


def token_ablation(
    caption: str,
    ground_truth: str,
    judge: ChatClient,
    scale_max: float = 1.0,
    runs: int = 1,
    seed: int = 0,
) -> list[AblationPoint]:
    """Score every sentence-prefix of the caption as its own 1-candidate job."""
    points = []
    for k, prefix in enumerate(sentence_prefixes(caption), start=1):
        job = JudgeJob(
            ground_truth=ground_truth,
            candidates=((f"prefix-{k}", prefix),),
            scale_max=scale_max,
            runs=runs,
        )
        result = evaluate(job, judge, seed=seed)
        points.append(
            AblationPoint(
                token_count=len(prefix.split()),
                similarity=result.similarity[0],
                quality=result.quality[0],
            )
        )
    return points
