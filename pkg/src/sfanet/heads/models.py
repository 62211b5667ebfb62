"""The spatial-frequency model architectures and their classification head.

Three fusion architectures share the same building blocks:

* ``SFNet``: global spatial features concatenated with an encoding of the
  whole image's spectrum.
* ``SFPNet``: per-patch spatial features concatenated with per-patch
  spectrum encodings, mean-pooled over patches, then aggregated by an MLP.
* ``SwinAttenNet``: the same per-patch fusion, passed through multi-head
  self-attention and mean-pooled to a single vector.

``BinaryClassifier`` (extractor + head, no frequency branch) backs the
plain sequential-training models and the face-crop pair.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigurationError
from ..freqfeat import (
    LUMA_WEIGHTS,
    batch_magnitude_phase,
    batch_patch_magnitude_phase,
)
from .attention import PatchAttention
from .encoders import FrequencyEncoder
from .extractors import SpatialExtractor

# Scores are clamped into [SCORE_EPS, 1 - SCORE_EPS] so they stay strictly
# inside (0, 1) even when float32 sigmoid saturates.
SCORE_EPS = 1e-7


def images_to_batch(images: "Sequence[np.ndarray] | np.ndarray") -> torch.Tensor:
    """Stack H x W x C uint8 images into a [B, C, H, W] float tensor in [0, 1]."""
    arr = np.asarray(images, dtype=np.float32) / 255.0
    if arr.ndim != 4:
        raise ConfigurationError(f"expected [B, H, W, C] images, got shape {arr.shape}")
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def spatial_features(extractor: SpatialExtractor, batch: torch.Tensor) -> torch.Tensor:
    """Run an extractor and verify its output matches the declared dims."""
    feats = extractor(batch)
    if extractor.is_patchwise:
        expected = (batch.shape[0], extractor.num_patches, extractor.spatial_dim)
    else:
        expected = (batch.shape[0], extractor.spatial_dim)
    if tuple(feats.shape) != expected:
        raise ConfigurationError(
            f"extractor produced shape {tuple(feats.shape)}, declared {expected}"
        )
    if not torch.all(torch.isfinite(feats)):
        raise ConfigurationError("extractor produced non-finite features")
    return feats


def _batch_luminance(batch: torch.Tensor) -> np.ndarray:
    """[B, C, H, W] tensor -> [B, H, W] float64 luminance array."""
    arr = batch.detach().cpu().numpy().astype(np.float64)
    if arr.shape[1] == 1:
        return arr[:, 0]
    if arr.shape[1] == 3:
        weights = np.asarray(LUMA_WEIGHTS, dtype=np.float64)
        return np.tensordot(arr, weights, axes=([1], [0]))
    raise ConfigurationError(f"expected 1 or 3 channels, got {arr.shape[1]}")


class ClassificationHead(nn.Module):
    """MLP head: features -> logit -> sigmoid probability.

    ``hidden=None`` selects one hidden layer of width ceil(in_dim / 2);
    ``hidden=0`` gives a bare linear head (useful for hand-set weights).
    """

    def __init__(
        self,
        in_dim: int,
        hidden: Optional[int] = None,
        dropout: float = 0.1,
    ) -> None:
        super().__init__()
        if hidden is None:
            hidden = math.ceil(in_dim / 2)
        self.in_dim = in_dim
        if hidden > 0:
            self.net = nn.Sequential(
                nn.Linear(in_dim, hidden),
                nn.GELU(),
                nn.Dropout(dropout),
                nn.Linear(hidden, 1),
            )
        else:
            self.net = nn.Sequential(nn.Linear(in_dim, 1))

    def forward_logits(self, features: torch.Tensor) -> torch.Tensor:
        if features.ndim != 2 or features.shape[1] != self.in_dim:
            raise ConfigurationError(
                f"head expects [B, {self.in_dim}] features, got shape {tuple(features.shape)}"
            )
        return self.net(features).squeeze(-1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        probs = torch.sigmoid(self.forward_logits(features))
        return probs.clamp(SCORE_EPS, 1.0 - SCORE_EPS)


class _FusionBase(nn.Module):
    """Shared plumbing: input checks and the frequency-branch tensors."""

    def __init__(self, extractor: SpatialExtractor) -> None:
        super().__init__()
        self.extractor = extractor
        self.resolution = extractor.resolution
        self.channels = extractor.channels
        # Runtime switch: force the frequency feature vector to zero without
        # touching any weights (ablation studies).
        self.frequency_ablated = False

    def _param_dtype(self) -> torch.dtype:
        for p in self.parameters():
            return p.dtype
        return torch.float32

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        probs = torch.sigmoid(self.forward_logits(batch))
        return probs.clamp(SCORE_EPS, 1.0 - SCORE_EPS)


class SFNet(_FusionBase):
    """Global spatial vector + whole-image spectrum encoding -> head."""

    def __init__(
        self,
        extractor: SpatialExtractor,
        encoder: FrequencyEncoder,
        head: Optional[ClassificationHead] = None,
        head_hidden: Optional[int] = None,
        dropout: float = 0.1,
    ) -> None:
        super().__init__(extractor)
        if extractor.is_patchwise:
            raise ConfigurationError("sfnet requires a global (non-patch) extractor")
        if encoder.input_size is not None and encoder.input_size != self.resolution:
            raise ConfigurationError(
                f"sfnet encoder expects grids of {encoder.input_size}, "
                f"image resolution is {self.resolution}"
            )
        self.encoder = encoder
        self.head = head or ClassificationHead(
            extractor.spatial_dim + encoder.freq_dim, head_hidden, dropout
        )

    def frequency_features(self, batch: torch.Tensor) -> torch.Tensor:
        dtype = self._param_dtype()
        if self.frequency_ablated:
            return torch.zeros(batch.shape[0], self.encoder.freq_dim, dtype=dtype)
        mag, phase = batch_magnitude_phase(_batch_luminance(batch))
        return self.encoder(
            torch.from_numpy(mag).to(dtype), torch.from_numpy(phase).to(dtype)
        )

    def forward_logits(self, batch: torch.Tensor) -> torch.Tensor:
        feats = spatial_features(self.extractor, batch)
        fused = torch.cat([feats, self.frequency_features(batch)], dim=1)
        return self.head.forward_logits(fused)


class _PatchFusionBase(_FusionBase):
    """Per-patch spatial + per-patch frequency feature fusion."""

    def __init__(
        self,
        extractor: SpatialExtractor,
        encoder: FrequencyEncoder,
        fft_patch_size: Optional[int] = None,
        align_grids: bool = True,
    ) -> None:
        super().__init__(extractor)
        if not extractor.is_patchwise:
            raise ConfigurationError("per-patch fusion requires a patchwise extractor")
        self.encoder = encoder
        self.fft_patch_size = fft_patch_size or extractor.patch_size
        self.align_grids = align_grids
        h, w = self.resolution
        if h % self.fft_patch_size or w % self.fft_patch_size:
            raise ConfigurationError(
                f"fft patch size {self.fft_patch_size} does not divide "
                f"resolution {h}x{w}"
            )
        self.fft_grid = (h // self.fft_patch_size, w // self.fft_patch_size)
        fft_patches = self.fft_grid[0] * self.fft_grid[1]
        if fft_patches != extractor.num_patches and not align_grids:
            raise ConfigurationError(
                f"frequency grid has {fft_patches} patches, spatial extractor "
                f"declares {extractor.num_patches}"
            )
        if encoder.input_size is not None and encoder.input_size != (
            self.fft_patch_size,
            self.fft_patch_size,
        ):
            raise ConfigurationError(
                f"encoder expects grids of {encoder.input_size}, "
                f"fft patch size is {self.fft_patch_size}"
            )

    @property
    def fused_dim(self) -> int:
        return self.extractor.spatial_dim + self.encoder.freq_dim

    def _patch_frequency_features(self, batch: torch.Tensor) -> torch.Tensor:
        dtype = self._param_dtype()
        b = batch.shape[0]
        if self.frequency_ablated:
            return torch.zeros(
                b, self.extractor.num_patches, self.encoder.freq_dim, dtype=dtype
            )
        mag, phase = batch_patch_magnitude_phase(
            _batch_luminance(batch), self.fft_patch_size
        )
        p = self.fft_patch_size
        n = mag.shape[1]
        flat_mag = torch.from_numpy(mag.reshape(b * n, p, p)).to(dtype)
        flat_phase = torch.from_numpy(phase.reshape(b * n, p, p)).to(dtype)
        fvec = self.encoder(flat_mag, flat_phase).reshape(b, n, -1)
        if n != self.extractor.num_patches:
            # Average-pool the frequency grid onto the extractor's patch grid.
            gfr, gfc = self.fft_grid
            fvec = fvec.reshape(b, gfr, gfc, -1).permute(0, 3, 1, 2)
            fvec = F.adaptive_avg_pool2d(fvec, self.extractor.patch_grid)
            fvec = fvec.permute(0, 2, 3, 1).reshape(b, self.extractor.num_patches, -1)
        return fvec

    def fused_patch_features(self, batch: torch.Tensor) -> torch.Tensor:
        """[B, P, spatial_dim + freq_dim] fused per-patch feature tensor."""
        feats = spatial_features(self.extractor, batch)
        fvec = self._patch_frequency_features(batch)
        return torch.cat([feats, fvec], dim=-1)


class SFPNet(_PatchFusionBase):
    """Patch fusion -> mean over patches -> one-hidden-layer MLP -> head."""

    def __init__(
        self,
        extractor: SpatialExtractor,
        encoder: FrequencyEncoder,
        head: Optional[ClassificationHead] = None,
        agg_dim: Optional[int] = None,
        agg_hidden: Optional[int] = None,
        head_hidden: Optional[int] = None,
        dropout: float = 0.1,
        fft_patch_size: Optional[int] = None,
        align_grids: bool = True,
    ) -> None:
        super().__init__(extractor, encoder, fft_patch_size, align_grids)
        d = self.fused_dim
        agg_dim = agg_dim or d
        agg_hidden = agg_hidden or d
        self.agg_dim = agg_dim
        self.aggregator = nn.Sequential(
            nn.Linear(d, agg_hidden),
            nn.GELU(),
            nn.Linear(agg_hidden, agg_dim),
        )
        self.head = head or ClassificationHead(agg_dim, head_hidden, dropout)

    def forward_logits(self, batch: torch.Tensor) -> torch.Tensor:
        fused = self.fused_patch_features(batch)
        pooled = fused.mean(dim=1)
        return self.head.forward_logits(self.aggregator(pooled))


class SwinAttenNet(_PatchFusionBase):
    """Patch fusion -> multi-head self-attention -> mean pool -> head."""

    def __init__(
        self,
        extractor: SpatialExtractor,
        encoder: FrequencyEncoder,
        head: Optional[ClassificationHead] = None,
        num_heads: int = 1,
        attention_scale: Optional[float] = None,
        head_hidden: Optional[int] = None,
        dropout: float = 0.1,
        fft_patch_size: Optional[int] = None,
        align_grids: bool = True,
    ) -> None:
        super().__init__(extractor, encoder, fft_patch_size, align_grids)
        self.attention = PatchAttention(self.fused_dim, num_heads, attention_scale)
        self.head = head or ClassificationHead(self.fused_dim, head_hidden, dropout)

    def forward_logits(self, batch: torch.Tensor) -> torch.Tensor:
        fused = self.fused_patch_features(batch)
        attended = self.attention(fused)
        pooled = attended.mean(dim=1)
        return self.head.forward_logits(pooled)


class BinaryClassifier(nn.Module):
    """Extractor + head with no frequency branch (patch features mean-pooled)."""

    def __init__(
        self,
        extractor: SpatialExtractor,
        head: Optional[ClassificationHead] = None,
        head_hidden: Optional[int] = None,
        dropout: float = 0.1,
    ) -> None:
        super().__init__()
        self.extractor = extractor
        self.resolution = extractor.resolution
        self.channels = extractor.channels
        self.head = head or ClassificationHead(extractor.spatial_dim, head_hidden, dropout)

    def forward_logits(self, batch: torch.Tensor) -> torch.Tensor:
        feats = spatial_features(self.extractor, batch)
        if self.extractor.is_patchwise:
            feats = feats.mean(dim=1)
        return self.head.forward_logits(feats)

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        probs = torch.sigmoid(self.forward_logits(batch))
        return probs.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
