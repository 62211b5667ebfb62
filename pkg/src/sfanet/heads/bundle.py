"""Model bundles: configuration, construction, and checkpoint files.

A checkpoint is a deterministic binary weights blob plus a JSON metadata
sidecar (``<blob>.meta.json``). The blob layout is::

    magic | 8-byte little-endian header length | header JSON | raw buffers

with tensors sorted by name, so saving the same weights always produces
byte-identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..errors import ConfigurationError, IngestionError, StateError
from .encoders import ConvFrequencyEncoder
from .extractors import build_extractor
from .models import BinaryClassifier, SFNet, SFPNet, SwinAttenNet, images_to_batch

MODEL_NAMES = ("sfnet", "sfpnet", "swinatten", "swinfusion", "facecrop_pair")

_MAGIC = b"SFANETCKPT1\n"


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild a model with the declared dimensions."""

    name: str
    resolution: tuple[int, int] = (256, 256)
    channels: int = 3
    extractor: str = "tiny_conv"
    extractor_args: dict = field(default_factory=dict)
    patch_size: Optional[int] = None
    fft_patch_size: Optional[int] = None
    spatial_dim: int = 8
    freq_dim: int = 4
    encoder_channels: tuple[int, int] = (8, 16)
    log_magnitude: bool = True
    head_hidden: Optional[int] = None
    dropout: float = 0.1
    agg_dim: Optional[int] = None
    agg_hidden: Optional[int] = None
    attention_heads: int = 1
    attention_scale: Optional[float] = None
    seed: int = 0

    @property
    def num_patches(self) -> Optional[int]:
        if self.patch_size is None:
            return None
        h, w = self.resolution
        return (h // self.patch_size) * (w // self.patch_size)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["resolution"] = list(self.resolution)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "resolution" in kwargs:
            kwargs["resolution"] = tuple(kwargs["resolution"])
        if "encoder_channels" in kwargs:
            kwargs["encoder_channels"] = tuple(kwargs["encoder_channels"])
        return cls(**kwargs)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ModelBundle:
    """A model module with its config and a loaded-weights flag."""

    config: ModelConfig
    module: torch.nn.Module
    weights_loaded: bool = True

    @property
    def name(self) -> str:
        return self.config.name

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            key: value.detach().cpu().numpy().copy()
            for key, value in self.module.state_dict().items()
        }

    def load_state_arrays(self, tensors: dict[str, np.ndarray]) -> None:
        state = self.module.state_dict()
        if set(tensors) != set(state):
            missing = sorted(set(state) - set(tensors))
            extra = sorted(set(tensors) - set(state))
            raise ConfigurationError(
                f"checkpoint tensors do not match module: missing={missing}, extra={extra}"
            )
        for key, value in state.items():
            arr = tensors[key]
            if tuple(arr.shape) != tuple(value.shape):
                raise ConfigurationError(
                    f"weight {key!r} has shape {tuple(arr.shape)}, "
                    f"config declares {tuple(value.shape)}"
                )
        with torch.no_grad():
            for key, value in state.items():
                value.copy_(torch.from_numpy(np.asarray(tensors[key]).copy(order="C")))
        self.weights_loaded = True

    def score_images(self, images: "np.ndarray | list") -> np.ndarray:
        """Score a stack of H x W x C uint8 images; returns [B] floats in (0, 1)."""
        if not self.weights_loaded:
            raise StateError(f"bundle {self.name!r} has no weights loaded")
        batch = images_to_batch(images)
        b, c, h, w = batch.shape
        if c != self.config.channels or (h, w) != tuple(self.config.resolution):
            raise ConfigurationError(
                f"bundle {self.name!r} expects {self.config.channels}x"
                f"{self.config.resolution[0]}x{self.config.resolution[1]} images, "
                f"got {c}x{h}x{w}"
            )
        self.module.eval()
        with torch.no_grad():
            probs = self.module(batch)
        return probs.cpu().numpy().astype(np.float64)


def build_bundle(config: ModelConfig) -> ModelBundle:
    """Construct a freshly initialized bundle for one of the known model names."""
    if config.name not in MODEL_NAMES:
        raise ConfigurationError(
            f"unknown model name {config.name!r}; known: {MODEL_NAMES}"
        )
    torch.manual_seed(config.seed)
    extractor = build_extractor(
        config.extractor,
        resolution=config.resolution,
        spatial_dim=config.spatial_dim,
        channels=config.channels,
        patch_size=config.patch_size,
        **config.extractor_args,
    )
    if config.name == "sfnet":
        encoder = ConvFrequencyEncoder(
            config.resolution,
            config.freq_dim,
            config.encoder_channels,
            config.log_magnitude,
        )
        module: torch.nn.Module = SFNet(
            extractor, encoder, head_hidden=config.head_hidden, dropout=config.dropout
        )
    elif config.name in ("sfpnet", "swinatten"):
        fft_patch = config.fft_patch_size or config.patch_size
        if fft_patch is None:
            raise ConfigurationError(f"{config.name} requires a patch_size")
        encoder = ConvFrequencyEncoder(
            (fft_patch, fft_patch),
            config.freq_dim,
            config.encoder_channels,
            config.log_magnitude,
        )
        if config.name == "sfpnet":
            module = SFPNet(
                extractor,
                encoder,
                agg_dim=config.agg_dim,
                agg_hidden=config.agg_hidden,
                head_hidden=config.head_hidden,
                dropout=config.dropout,
                fft_patch_size=fft_patch,
            )
        else:
            module = SwinAttenNet(
                extractor,
                encoder,
                num_heads=config.attention_heads,
                attention_scale=config.attention_scale,
                head_hidden=config.head_hidden,
                dropout=config.dropout,
                fft_patch_size=fft_patch,
            )
    else:  # swinfusion, facecrop_pair
        module = BinaryClassifier(
            extractor, head_hidden=config.head_hidden, dropout=config.dropout
        )
    return ModelBundle(config=config, module=module, weights_loaded=True)


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def save_checkpoint(path: "str | Path", tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write a deterministic weights blob plus its JSON metadata sidecar."""
    path = Path(path)
    entries = []
    buffers = []
    for name in sorted(tensors):
        # np.ascontiguousarray would promote 0-d arrays to 1-d; copy(order="C")
        # preserves scalar shapes.
        arr = np.asarray(tensors[name]).copy(order="C")
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "nbytes": len(raw),
            }
        )
        buffers.append(raw)
    header = json.dumps({"tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    payload = _MAGIC + struct.pack("<Q", len(header)) + header + b"".join(buffers)
    _atomic_write_bytes(path, payload)
    sidecar = json.dumps(meta, sort_keys=True, indent=2) + "\n"
    _atomic_write_bytes(Path(str(path) + ".meta.json"), sidecar.encode())


def load_checkpoint(path: "str | Path") -> tuple[dict[str, np.ndarray], dict]:
    """Read a weights blob and its sidecar; returns (tensors, meta)."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"checkpoint not found: {path}")
    payload = path.read_bytes()
    if not payload.startswith(_MAGIC):
        raise IngestionError(f"{path} is not a recognized checkpoint blob")
    offset = len(_MAGIC)
    (header_len,) = struct.unpack_from("<Q", payload, offset)
    offset += 8
    header = json.loads(payload[offset : offset + header_len].decode())
    offset += header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        raw = payload[offset : offset + entry["nbytes"]]
        offset += entry["nbytes"]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    sidecar = Path(str(path) + ".meta.json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return tensors, meta


def save_bundle(
    bundle: ModelBundle,
    path: "str | Path",
    extra_meta: Optional[dict] = None,
    optimizer_arrays: Optional[dict[str, np.ndarray]] = None,
) -> None:
    """Checkpoint a bundle's weights (and optionally optimizer state)."""
    tensors = {f"model.{k}": v for k, v in bundle.state_arrays().items()}
    if optimizer_arrays:
        tensors.update({f"optim.{k}": v for k, v in optimizer_arrays.items()})
    meta = {
        "model": bundle.config.to_dict(),
        "config_hash": bundle.config.config_hash(),
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, tensors, meta)


def split_checkpoint_tensors(
    tensors: dict[str, np.ndarray],
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Split raw checkpoint tensors into (model, optimizer) groups."""
    model = {k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")}
    optim = {k[len("optim.") :]: v for k, v in tensors.items() if k.startswith("optim.")}
    return model, optim


def load_bundle(path: "str | Path") -> ModelBundle:
    """Rebuild a bundle from a checkpoint: config from the sidecar, then weights."""
    tensors, meta = load_checkpoint(path)
    if "model" not in meta:
        raise IngestionError(f"checkpoint sidecar for {path} lacks a model config")
    config = ModelConfig.from_dict(meta["model"])
    bundle = build_bundle(config)
    model_tensors, _ = split_checkpoint_tensors(tensors)
    bundle.load_state_arrays(model_tensors)
    return bundle
