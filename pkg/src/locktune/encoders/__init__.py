from .archive import Archive, load_archive, load_weights, save_archive, save_weights
from .pooling import POOLING, PoolingStrategy, pool
from .text import TextTower, init_text_weights, text_forward
from .vision import embed_image, image_features, init_vision_weights, patchify, unpatchify, vit_forward
from .weights import TowerWeights

__all__ = [
    "Archive",
    "POOLING",
    "PoolingStrategy",
    "TextTower",
    "TowerWeights",
    "embed_image",
    "image_features",
    "init_text_weights",
    "init_vision_weights",
    "load_archive",
    "load_weights",
    "patchify",
    "pool",
    "save_archive",
    "save_weights",
    "text_forward",
    "unpatchify",
    "vit_forward",
]
