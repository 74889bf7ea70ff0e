"""Multi-view consistent panoptic pseudo labels from noisy per-image masks."""

__version__ = "0.1.0"
