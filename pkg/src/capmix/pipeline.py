"""Video captioning pipeline.

Stages per video: frame planning, the sequential frame-caption cascade
(each request carries the previous caption), chain summarization, rule-based
motion captions from box-track centers, one video-level caption per
configured video backend, and the final mixture summarization. Every
backend reply is traceable to an exchange digest recorded in provenance.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backends.core import ChatClient, ChatRequest, request_digest
from .errors import (
    CapmixError,
    InvalidTrackError,
    InvalidVideoError,
    PipelineError,
    PreconditionError,
    SchemaError,
)
from .prompts import PROMPTS

TRACKS_SCHEMA_VERSION = 1
_FRAME_SUFFIXES = (".jpg", ".jpeg", ".png")

# strict bracketed-coordinate convention for locations reported inside captions,
# e.g. "[the blue car @ (1, 2)]"
_TRACK_TAG = re.compile(r"\[(?P<label>[^\[\]@]+?) @ \((?P<row>-?\d+(?:\.\d+)?), ?(?P<col>-?\d+(?:\.\d+)?)\)\]")


@dataclass(frozen=True)
class FramePlan:
    video_id: str
    duration: float
    native_frame_count: int
    sampled_indices: tuple[int, ...]
    effective_fps: float

    def __post_init__(self):
        object.__setattr__(self, "sampled_indices", tuple(self.sampled_indices))
        idx = self.sampled_indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("sampled indices must strictly increase")
        if idx and (idx[0] < 0 or idx[-1] >= self.native_frame_count):
            raise ValueError("sampled indices out of range")


def plan_frames(
    duration: float,
    native_fps: float,
    target_fps: float = 2.0,
    min_frames: int = 8,
    video_id: str = "",
) -> FramePlan:
    """Evenly spaced frame indices at target_fps.

    When that yields fewer than min_frames, the rate is raised to the
    smallest fps giving at least min_frames, capped at native_fps.
    """
    if duration <= 0:
        raise InvalidVideoError(f"non-positive duration {duration}")
    if native_fps <= 0 or target_fps <= 0:
        raise InvalidVideoError("frame rates must be positive")
    native_frame_count = max(1, round(duration * native_fps))
    effective = target_fps
    if round(duration * effective) < min_frames:
        effective = min_frames / duration
    effective = min(effective, native_fps)
    count = max(1, min(round(duration * effective), native_frame_count))
    stride = native_frame_count / count
    indices = sorted({min(native_frame_count - 1, math.floor(i * stride)) for i in range(count)})
    return FramePlan(
        video_id=video_id,
        duration=duration,
        native_frame_count=native_frame_count,
        sampled_indices=tuple(indices),
        effective_fps=effective,
    )


@dataclass(frozen=True)
class BoxTrack:
    """Bounding-box center trace for one object across sampled frames."""

    object_id: str
    label: str
    centers: tuple  # (row, col) per frame, None for absent frames
    frame_size: Optional[tuple[int, int]] = None  # (height, width)

    def __post_init__(self):
        object.__setattr__(
            self,
            "centers",
            tuple(None if c is None else (float(c[0]), float(c[1])) for c in self.centers),
        )
        if not any(c is not None for c in self.centers):
            raise ValueError(f"track {self.object_id!r} has no centers")

    def present_centers(self):
        return [c for c in self.centers if c is not None]


def load_tracks(path) -> list[BoxTrack]:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("schema_version") != TRACKS_SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported tracks schema_version")
    size = None
    if "frame_height" in data and "frame_width" in data:
        size = (int(data["frame_height"]), int(data["frame_width"]))
    tracks = []
    for raw in data.get("tracks", []):
        try:
            tracks.append(
                BoxTrack(
                    object_id=str(raw["object_id"]),
                    label=str(raw["label"]),
                    centers=raw["centers"],
                    frame_size=size,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"{path}: bad track entry: {exc}") from exc
    return tracks


def tracks_from_captions(chain_captions: list[str]) -> list[BoxTrack]:
    """Recover tracks from captions via the bracketed-coordinate convention.

    Captions that never use the convention simply produce no tracks.
    """
    by_label: dict[str, list] = {}
    order: list[str] = []
    for frame_idx, caption in enumerate(chain_captions):
        for match in _TRACK_TAG.finditer(caption):
            label = match.group("label").strip()
            if label not in by_label:
                by_label[label] = [None] * len(chain_captions)
                order.append(label)
            by_label[label][frame_idx] = (float(match.group("row")), float(match.group("col")))
    return [
        BoxTrack(object_id=f"track-{i}", label=label, centers=by_label[label])
        for i, label in enumerate(order)
    ]


def motion_caption(
    track: BoxTrack,
    motion_epsilon: float = 2.0,
    rewrite_client: Optional[ChatClient] = None,
) -> str:
    """Movement phrase from the net center displacement.

    Image coordinates are (row, col): col grows to the right, row grows
    downward (toward the camera). The dominant axis wins; below
    motion_epsilon pixels of net displacement the object is stationary.
    """
    if track.frame_size is not None:
        height, width = track.frame_size
        for center in track.present_centers():
            row, col = center
            if not (0 <= row < height and 0 <= col < width):
                raise InvalidTrackError(
                    f"track {track.object_id!r}: center {center} outside {height}x{width} frame"
                )
    centers = track.present_centers()
    if len(centers) < 2:
        phrase = f"{track.label} is present in the scene"
    else:
        d_row = centers[-1][0] - centers[0][0]
        d_col = centers[-1][1] - centers[0][1]
        if math.hypot(d_row, d_col) < motion_epsilon:
            phrase = f"{track.label} is stationary"
        elif abs(d_col) >= abs(d_row):
            direction = "right" if d_col > 0 else "left"
            phrase = f"{track.label} is moving to the {direction}"
        elif d_row > 0:
            phrase = f"{track.label} is moving downward/closer"
        else:
            phrase = f"{track.label} is moving upward/away"
    if rewrite_client is None:
        return phrase
    response = rewrite_client.complete(
        ChatRequest(
            backend_name=rewrite_client.name,
            prompt_parts=(PROMPTS["motion_rewrite"], phrase),
            temperature=rewrite_client.config.temperature,
        )
    )
    return response.text


@dataclass
class CaptionBundle:
    """Everything captioned for one video, with per-field provenance."""

    video_id: str
    chain_captions: list[str] = field(default_factory=list)
    image_level_summary: str = ""
    motion_captions: list[str] = field(default_factory=list)
    video_level_captions: dict[str, str] = field(default_factory=dict)
    annotated_caption: Optional[str] = None
    final_caption: str = ""
    provenance: dict = field(default_factory=dict)
    status: str = "ok"
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    def to_dict(self):
        return {
            "video_id": self.video_id,
            "chain_captions": list(self.chain_captions),
            "image_level_summary": self.image_level_summary,
            "motion_captions": list(self.motion_captions),
            "video_level_captions": dict(self.video_level_captions),
            "annotated_caption": self.annotated_caption,
            "final_caption": self.final_caption,
            "provenance": self.provenance,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _ask(client: ChatClient, parts, images=(), video=None):
    request = ChatRequest(
        backend_name=client.name,
        prompt_parts=tuple(parts),
        images=tuple(images),
        video=video,
        temperature=client.config.temperature,
    )
    response = client.complete(request)
    return response.text, request_digest(request)


def cascade_caption(frames: list[str], image_client: ChatClient) -> tuple[list[str], list[str]]:
    """Sequential frame captions; request k quotes caption k-1 verbatim.

    Returns (captions, exchange digests). A failure names the frame.
    """
    if not frames:
        raise PreconditionError("cascade needs at least one frame", stage="cascade")
    captions, digests = [], []
    for k, frame in enumerate(frames, start=1):
        parts = (
            (PROMPTS["cascade_first"],)
            if k == 1
            else (PROMPTS["cascade_follow"], captions[-1])
        )
        try:
            text, digest = _ask(image_client, parts, images=(str(frame),))
        except CapmixError as exc:
            raise PipelineError(f"cascade failed at frame {k}/{len(frames)}: {exc}", stage="cascade") from exc
        captions.append(text)
        digests.append(digest)
    return captions, digests


def summarize_chain(chain_captions: list[str], summarizer: ChatClient) -> tuple[str, str]:
    """One video-level summary from the numbered caption chain."""
    if not chain_captions:
        raise PreconditionError("empty caption chain", stage="chain_summary")
    numbered = "\n".join(f"{i}. {text}" for i, text in enumerate(chain_captions, start=1))
    try:
        return _ask(summarizer, (PROMPTS["chain_summary"], numbered))
    except CapmixError as exc:
        raise PipelineError(f"chain summary failed: {exc}", stage="chain_summary") from exc


def _mixture_sections(bundle: CaptionBundle, include_annotated: bool) -> str:
    sections = [f"Image-level Caption:\n{bundle.image_level_summary}"]
    if bundle.motion_captions:
        sections.append("Motion Caption:\n" + "\n".join(bundle.motion_captions))
    for name in sorted(bundle.video_level_captions):
        sections.append(f"Video-level Caption ({name}):\n{bundle.video_level_captions[name]}")
    if include_annotated:
        sections.append(f"Annotated Caption:\n{bundle.annotated_caption}")
    return "\n\n".join(sections)


def mixture_summarize(
    bundle: CaptionBundle,
    summarizer: ChatClient,
    include_annotated: bool = False,
) -> tuple[str, str]:
    """Fuse image-level, motion, and video-level captions into the final one."""
    if not bundle.image_level_summary:
        raise PreconditionError("image-level summary missing", stage="mixture")
    if not bundle.video_level_captions:
        raise PreconditionError("no video-level captions", stage="mixture")
    if include_annotated and not bundle.annotated_caption:
        raise PreconditionError("annotated caption requested but missing", stage="mixture")
    sections = _mixture_sections(bundle, include_annotated)
    try:
        return _ask(summarizer, (PROMPTS["mixture_summary"], sections))
    except CapmixError as exc:
        raise PipelineError(f"mixture summary failed: {exc}", stage="mixture") from exc


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    frames_dir: str
    duration: float
    native_fps: Optional[float] = None
    video_path: Optional[str] = None
    tracks: Optional[str] = None
    ground_truth: Optional[str] = None
    annotated_caption: Optional[str] = None
    dataset: str = "default"


def load_manifest(path) -> list[ManifestEntry]:
    """JSONL manifest, one video per line.

    Relative frames_dir/tracks paths resolve against the manifest's
    directory, so a workspace can be moved or run from any working
    directory. video_path stays untouched (it may be an opaque handle).
    """
    base = Path(path).parent

    def resolve(ref):
        if ref is None:
            return None
        return ref if Path(ref).is_absolute() else str(base / ref)

    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            try:
                entries.append(
                    ManifestEntry(
                        video_id=str(raw["video_id"]),
                        frames_dir=resolve(str(raw["frames_dir"])),
                        duration=float(raw["duration"]),
                        native_fps=raw.get("native_fps"),
                        video_path=raw.get("video_path"),
                        tracks=resolve(raw.get("tracks")),
                        ground_truth=raw.get("ground_truth"),
                        annotated_caption=raw.get("annotated_caption"),
                        dataset=str(raw.get("dataset", "default")),
                    )
                )
            except KeyError as exc:
                raise SchemaError(f"{path}:{lineno}: missing manifest field {exc}") from exc
    return entries


def list_frames(frames_dir) -> list[str]:
    frames_dir = Path(frames_dir)
    files = sorted(
        str(p) for p in frames_dir.iterdir() if p.suffix.lower() in _FRAME_SUFFIXES
    ) if frames_dir.is_dir() else []
    return files


@dataclass
class PipelineConfig:
    image_backend: str
    summarizer: str
    video_backends: list[str] = field(default_factory=list)
    target_fps: float = 2.0
    min_frames: int = 8
    motion_epsilon: float = 2.0
    include_annotated: bool = False
    parse_caption_tracks: bool = True


def caption_video(
    entry: ManifestEntry,
    clients: dict[str, ChatClient],
    config: PipelineConfig,
) -> CaptionBundle:
    """Run every stage for one video; failures mark the bundle, not raise."""
    bundle = CaptionBundle(video_id=entry.video_id, annotated_caption=entry.annotated_caption)
    stage = "plan"
    try:
        frames = list_frames(entry.frames_dir)
        if not frames:
            raise PreconditionError(f"no frames in {entry.frames_dir!r}", stage="plan")
        native_fps = entry.native_fps if entry.native_fps else len(frames) / entry.duration
        plan = plan_frames(
            entry.duration,
            native_fps,
            config.target_fps,
            config.min_frames,
            video_id=entry.video_id,
        )
        selected = [frames[i] for i in plan.sampled_indices]
        bundle.provenance["plan"] = {
            "sampled_indices": list(plan.sampled_indices),
            "effective_fps": plan.effective_fps,
        }

        stage = "cascade"
        image_client = clients[config.image_backend]
        bundle.chain_captions, digests = cascade_caption(selected, image_client)
        bundle.provenance["chain_captions"] = {"backend": config.image_backend, "digests": digests}

        stage = "chain_summary"
        summarizer = clients[config.summarizer]
        bundle.image_level_summary, digest = summarize_chain(bundle.chain_captions, summarizer)
        bundle.provenance["image_level_summary"] = {"backend": config.summarizer, "digests": [digest]}

        stage = "motion"
        if entry.tracks:
            tracks = load_tracks(entry.tracks)
        elif config.parse_caption_tracks:
            tracks = tracks_from_captions(bundle.chain_captions)
        else:
            tracks = []
        bundle.motion_captions = [motion_caption(t, config.motion_epsilon) for t in tracks]
        bundle.provenance["motion_captions"] = {"backend": None, "digests": []}

        stage = "video_level"
        video_digests = {}
        for name in config.video_backends:
            client = clients[name]
            if client.config.kind == "video":
                reference = entry.video_path or entry.frames_dir
                text, digest = _ask(client, (PROMPTS["video_level"],), video=str(reference))
            else:
                text, digest = _ask(client, (PROMPTS["video_level"],), images=selected)
            bundle.video_level_captions[name] = text
            video_digests[name] = [digest]
        bundle.provenance["video_level_captions"] = video_digests

        stage = "mixture"
        bundle.final_caption, digest = mixture_summarize(
            bundle, clients[config.summarizer], config.include_annotated
        )
        bundle.provenance["final_caption"] = {"backend": config.summarizer, "digests": [digest]}
    except (CapmixError, KeyError) as exc:
        bundle.status = "failed"
        bundle.failed_stage = getattr(exc, "stage", None) or stage
        bundle.error = str(exc)
    return bundle
