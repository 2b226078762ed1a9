"""capmix: mixture-of-experts video caption summarization, driving-scene
annotation, and LLM-judge caption scoring."""

__version__ = "0.1.0"
