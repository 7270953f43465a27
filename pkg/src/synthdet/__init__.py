"""Synthetic training data for object detection: posed textured models over
cluttered synthetic or photographic backgrounds, with COCO-style annotations."""

from .composer import CompositionError, LayerComposition, PlacedObject
from .config import GenerationConfig, load_config
from .curriculum import CurriculumCursor, RandomCursor, ScheduleItem
from .dataset import (Annotation, DatasetManifest, GenerationContext, ModelPool, generate_sample,
                      plan_images, run_generation)
from .geometry import BBox, CameraIntrinsics, Pose, TexturedMesh, load_mesh
from .viewsphere import PoseSpace, subdivide_icosahedron

__all__ = [
    "Annotation", "BBox", "CameraIntrinsics", "CompositionError", "CurriculumCursor", "DatasetManifest",
    "GenerationConfig", "GenerationContext", "LayerComposition", "ModelPool", "PlacedObject", "Pose",
    "PoseSpace", "RandomCursor", "ScheduleItem", "TexturedMesh", "generate_sample", "load_config",
    "load_mesh", "plan_images", "run_generation", "subdivide_icosahedron",
]
__version__ = "0.1.0"
