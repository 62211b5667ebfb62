"""Shared test fixtures: independent oracles and stub model bundles."""

from __future__ import annotations

import numpy as np
import torch

from sfanet.heads.bundle import ModelBundle, ModelConfig


def naive_dft2(image: np.ndarray) -> np.ndarray:
    """Direct O(N^4) double-loop 2-D DFT; deliberately avoids np.fft."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for x in range(h):
                for y in range(w):
                    acc += image[x, y] * np.exp(-2j * np.pi * (u * x / h + v * y / w))
            out[u, v] = acc
    return out


def dft_matrix(n: int) -> np.ndarray:
    """Explicit DFT matrix built from roots of unity (no np.fft)."""
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n)


def matrix_dft2(image: np.ndarray) -> np.ndarray:
    """Direct 2-D DFT via explicit matrix products; independent of np.fft."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    return dft_matrix(h) @ image @ dft_matrix(w)


class FunctionScoreModule(torch.nn.Module):
    """Module whose 'score' is an arbitrary function of each [C, H, W] image."""

    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        values = [float(self.fn(img)) for img in batch.detach().cpu().numpy()]
        return torch.tensor(values, dtype=torch.float64)

    def forward_logits(self, batch: torch.Tensor) -> torch.Tensor:
        probs = self.forward(batch)
        return torch.log(probs / (1.0 - probs))


def score_bundle(name: str, fn, resolution=(16, 16), channels=3) -> ModelBundle:
    """A loaded ModelBundle whose score is fn(image); fn must land in (0, 1)."""
    config = ModelConfig(name=name, resolution=resolution, channels=channels)
    return ModelBundle(config=config, module=FunctionScoreModule(fn))


def constant_bundle(name: str, value: float, resolution=(16, 16)) -> ModelBundle:
    return score_bundle(name, lambda _img: value, resolution=resolution)


def gray_images(values, size=16) -> np.ndarray:
    """Stack of constant-valued uint8 images, one per value."""
    return np.stack(
        [np.full((size, size, 3), v, dtype=np.uint8) for v in values]
    )


def random_images(n: int, size: int = 16, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(n, size, size, 3), dtype=np.uint8)
