"""Versioned registry of every prompt the pipeline and judge send.

Kept in one place so tests can pin exact bytes; downstream code must not
inline prompt text. Bump PROMPT_VERSION on any wording change.
"""

PROMPT_VERSION = 1

PROMPTS = {
    # first request of the frame-caption cascade
    "cascade_first": "Please generate detailed scene-level information and object locations.",
    # every later cascade request carries the previous caption under this header
    "cascade_follow": (
        "Please generate detailed scene-level information and object locations. "
        "The caption of the previous frame was:"
    ),
    # collapse the per-frame caption chain into one video-level summary
    "chain_summary": "Summarize all the captions to describe the video with accurate temporal information",
    # final fusion of image-level, motion, and video-level descriptions
    "mixture_summary": (
        "Please summarize on the visual and narrative elements of the video in detail "
        "from descriptions from Image Models (Image-level Caption and Motion Caption) "
        "and descriptions from Video Models (Video-level Caption)"
    ),
    # sent to every video-level backend inside the pipeline
    "video_level": (
        "Please describe the visual and narrative elements of the video in detail, "
        "particularly the motion behavior"
    ),
    # sent to every compared captioning method in the benchmark protocols
    "comparison": (
        "elaborate on the visual and narrative elements of the video in detail, "
        "particularly the motion behavior"
    ),
    # optional rewrite of a rule-based motion phrase
    "motion_rewrite": (
        "Rewrite the following object-motion note as one short natural sentence. "
        "Keep the object and direction unchanged."
    ),
    # optional rewrite of the rule-based scene description
    "scene_rewrite": (
        "Rewrite the following driving-scene annotation as a natural, human-like scene "
        "description. Keep every stated fact and do not add new ones."
    ),
}

# judge instruction; {enum} like "captions 1, 2, 3, 4 and 5", {scale} like "1"
JUDGE_TEMPLATE = (
    "Can you give a score (two decimal places) from 0 to {scale} for {enum}, "
    "indicating which one is closer to the ground truth caption (metric 1) and "
    "which contains fewer hallucinations and less misalignment (metric 2)? "
    "Please output only the scores of each metric separated only by a semicolon. "
    "For each metric, please output only the scores of {enum} separated by commas, "
    "in order—no text in the output."
)


def caption_enumeration(count: int) -> str:
    """'caption 1', 'captions 1 and 2', 'captions 1, 2 and 3', ..."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return "caption 1"
    numbers = [str(i) for i in range(1, count + 1)]
    return "captions " + ", ".join(numbers[:-1]) + " and " + numbers[-1]
