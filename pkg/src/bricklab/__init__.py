"""Lattice brick assembly toolkit.

A self-contained environment for two-phase rebuild-from-inspection
episodes on a brick lattice: take an unseen assembly apart while saving
instruction images to an explicit stack, then rebuild it from an empty
scene using those images. Ships with a deterministic software renderer,
a scripted online expert, structural reconstruction metrics, cursor loss
functions, a linear reference policy, an online imitation trainer, and
procedural dataset generators.
"""

__version__ = "0.1.0"

from bricklab.geometry import Pose
from bricklab.shapes import BrickShape, Catalog, SnapSpec, builtin_catalog
from bricklab.assembly import Assembly, BrickInstance, Edge

__all__ = [
    "Assembly",
    "BrickInstance",
    "BrickShape",
    "Catalog",
    "Edge",
    "Pose",
    "SnapSpec",
    "builtin_catalog",
]
