"""Training-free box-guided object insertion for diffusion images."""

from .types import (
    BinaryMask,
    Box,
    CrossAttentionMap,
    EditSpec,
    EmbeddingMatrix,
    GuidanceConfig,
    Latent,
)

__all__ = [
    "BinaryMask",
    "Box",
    "CrossAttentionMap",
    "EditSpec",
    "EmbeddingMatrix",
    "GuidanceConfig",
    "Latent",
]

__version__ = "0.1.0"
