"""Prior-guided mask assembly for any-shot segmentation.

A single trained checkpoint serves exact-mask, mask-free, box-supervised
and co-segmentation episodes: all task conditioning lives in a bank of
class-agnostic prior maps assembled from affinities, never in the decoder.
"""

__version__ = "0.1.0"
