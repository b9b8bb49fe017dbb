"""ptclab: a synthetic multi-sensor lab for sparse-supervised depth completion.

Generates box-world scenes with camera, LiDAR-scanline and radar simulators,
trains a small pyramid depth network under configurable position-disruption
augmentations and compensation heads, and measures on/off-scanline error
against exact ray-cast ground truth.
"""

__version__ = "0.1.0"
