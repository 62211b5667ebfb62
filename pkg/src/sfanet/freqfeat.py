"""Frequency-domain feature math: 2-D DFT magnitude/phase and per-patch spectra.

All transforms use the unnormalized forward DFT, so the DC bin equals the
pixel sum and Parseval's identity reads

    sum(pixel^2) = sum(magnitude^2) / (H * W).

Color images are reduced to a single luminance channel (ITU-R 601 weights)
before any transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidInputError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FrequencySpectrum:
    """Polar decomposition of a 2-D DFT: magnitude >= 0, phase in (-pi, pi]."""

    magnitude: np.ndarray
    phase: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.magnitude.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class PatchSpectra:
    """Spectra of the row-major p x p tiles of an image.

    ``magnitude`` and ``phase`` are stacked [P, p, p] arrays; ``grid`` is the
    (rows, cols) tile layout, so P == rows * cols.
    """

    magnitude: np.ndarray
    phase: np.ndarray
    patch_size: int
    grid: tuple[int, int]

    def __len__(self) -> int:
        return self.magnitude.shape[0]

    def spectrum(self, k: int) -> FrequencySpectrum:
        return FrequencySpectrum(self.magnitude[k], self.phase[k])


def luminance(pixels: np.ndarray) -> np.ndarray:
    """Collapse an H x W x 3 image to ITU-R 601 luminance; pass 2-D through."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    raise InvalidInputError(f"expected H x W or H x W x 3 image, got shape {arr.shape}")


def _magnitude_phase(transform: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    magnitude = np.abs(transform)
    phase = np.angle(transform)
    # np.angle returns -pi for (-x - 0j); fold it onto +pi so phase stays in (-pi, pi].
    phase = np.where(phase == -np.pi, np.pi, phase)
    return magnitude, phase


def fft_magnitude_phase(image: np.ndarray) -> FrequencySpectrum:
    """Magnitude and phase of the unnormalized forward 2-D DFT of a real grid."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"expected a 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite values")
    magnitude, phase = _magnitude_phase(np.fft.fft2(arr))
    return FrequencySpectrum(magnitude, phase)


def _check_tiling(height: int, width: int, patch_size: int) -> tuple[int, int]:
    if patch_size < 1:
        raise ConfigurationError(f"patch_size must be positive, got {patch_size}")
    if height % patch_size or width % patch_size:
        raise ConfigurationError(
            f"patch_size {patch_size} does not divide image dimensions "
            f"H={height}, W={width}"
        )
    return height // patch_size, width // patch_size


def tile_image(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Split an H x W grid into row-major p x p tiles, shape [P, p, p]."""
    arr = np.asarray(image)
    rows, cols = _check_tiling(arr.shape[0], arr.shape[1], patch_size)
    tiles = arr.reshape(rows, patch_size, cols, patch_size).swapaxes(1, 2)
    return tiles.reshape(rows * cols, patch_size, patch_size)


def reassemble_tiles(tiles: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`tile_image` for a (rows, cols) grid of tiles."""
    rows, cols = grid
    p = tiles.shape[-1]
    return (
        tiles.reshape(rows, cols, p, p).swapaxes(1, 2).reshape(rows * p, cols * p)
    )


def per_patch_spectra(image: np.ndarray, patch_size: int) -> PatchSpectra:
    """Apply :func:`fft_magnitude_phase` to every row-major tile of the image."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite values")
    rows, cols = _check_tiling(arr.shape[0], arr.shape[1], patch_size)
    tiles = tile_image(arr, patch_size)
    magnitude, phase = _magnitude_phase(np.fft.fft2(tiles, axes=(-2, -1)))
    return PatchSpectra(magnitude, phase, patch_size, (rows, cols))


def batch_magnitude_phase(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Whole-image spectra for a [B, H, W] stack; returns ([B,H,W], [B,H,W])."""
    arr = np.asarray(images, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image batch contains non-finite values")
    return _magnitude_phase(np.fft.fft2(arr, axes=(-2, -1)))


def batch_patch_magnitude_phase(
    images: np.ndarray, patch_size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch spectra for a [B, H, W] stack; returns ([B,P,p,p], [B,P,p,p])."""
    arr = np.asarray(images, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image batch contains non-finite values")
    batch, height, width = arr.shape
    rows, cols = _check_tiling(height, width, patch_size)
    tiles = (
        arr.reshape(batch, rows, patch_size, cols, patch_size)
        .swapaxes(2, 3)
        .reshape(batch, rows * cols, patch_size, patch_size)
    )
    return _magnitude_phase(np.fft.fft2(tiles, axes=(-2, -1)))
