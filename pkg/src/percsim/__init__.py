"""Desk-scale perception imitation and synthesis-free closed-loop simulation."""

__version__ = "0.1.0"

from . import baselines, imitator, losses, metrics, numerics, raster, scene, simloop, trainer

__all__ = [
    "baselines", "imitator", "losses", "metrics", "numerics", "raster",
    "scene", "simloop", "trainer", "__version__",
]
