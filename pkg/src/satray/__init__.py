"""satray: deterministic satellite-to-ground ray tracing in a Manhattan-grid city."""

from satray.scene import (
    GROUND_FACE,
    Face,
    MaterialParams,
    Scene,
    SceneConfig,
    Tile,
    Wedge,
    build_manhattan,
    occluded,
    satellite_position,
    scene_to_dict,
    scene_to_json,
)

__all__ = [
    "GROUND_FACE",
    "Face",
    "MaterialParams",
    "Scene",
    "SceneConfig",
    "Tile",
    "Wedge",
    "build_manhattan",
    "occluded",
    "satellite_position",
    "scene_to_dict",
    "scene_to_json",
]
