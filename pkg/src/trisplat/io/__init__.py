from .checkpoint import (CheckpointVersionError, load_checkpoint, load_scene, save_checkpoint,
                         save_scene)
from .colmap import parse_colmap_text, qvec2rotmat, rotmat2qvec, write_colmap_text
from .dataset import SceneDataset, load_dataset, load_manifest, write_manifest
from .errors import DataError, FormatError
from .images import read_image, read_mask, read_normal_map, write_image, write_mask
from .ply import export_ply, import_ply, scene_from_ply

__all__ = [
    "CheckpointVersionError", "DataError", "FormatError", "SceneDataset",
    "export_ply", "import_ply", "load_checkpoint", "load_dataset", "load_manifest", "load_scene",
    "parse_colmap_text", "qvec2rotmat", "read_image", "read_mask", "read_normal_map", "rotmat2qvec",
    "save_checkpoint", "save_scene", "scene_from_ply", "write_colmap_text", "write_image", "write_manifest",
    "write_mask",
]
