"""Dataset ingestion and data-engineering: manifests, attribute categories,
fake-data clustering into folds, and region-based crop extraction.

Manifest CSV schema (UTF-8, LF): header ``id,path,label,origin,category``;
label is ``real``, ``fake``, or empty for unlabeled samples; category is
empty or ``race_emotion``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .core import Category, EmotionGroup, ImageSample, Label, RaceGroup, ensure_pixels
from .errors import (
    ConfigurationError,
    ConsistencyError,
    IngestionError,
    InvalidInputError,
)
from .freqfeat import luminance

MANIFEST_HEADER = ("id", "path", "label", "origin", "category")


def _manifest_checksum(samples: Sequence[ImageSample]) -> str:
    digest = hashlib.sha256()
    for s in samples:
        label = s.label.value if s.label else ""
        category = s.category.name if s.category else ""
        line = f"{s.id},{s.path or ''},{label},{s.origin},{category}\n"
        digest.update(line.encode())
    return digest.hexdigest()


@dataclass(frozen=True)
class Manifest:
    """An ordered sample listing with verified per-label counts and a checksum."""

    samples: tuple[ImageSample, ...]
    counts: dict[str, int]
    checksum: str

    def __post_init__(self) -> None:
        recount = _count_labels(self.samples)
        if recount != self.counts:
            raise ConsistencyError(
                f"manifest counts {self.counts} disagree with samples {recount}"
            )

    @classmethod
    def from_samples(cls, samples: Sequence[ImageSample]) -> "Manifest":
        samples = tuple(samples)
        return cls(samples, _count_labels(samples), _manifest_checksum(samples))

    def __len__(self) -> int:
        return len(self.samples)

    def real_samples(self) -> tuple[ImageSample, ...]:
        return tuple(s for s in self.samples if s.label is Label.REAL)

    def fake_samples(self) -> tuple[ImageSample, ...]:
        return tuple(s for s in self.samples if s.label is Label.FAKE)


def _count_labels(samples: Sequence[ImageSample]) -> dict[str, int]:
    counts = {"real": 0, "fake": 0}
    for s in samples:
        if s.label is None:
            counts["unlabeled"] = counts.get("unlabeled", 0) + 1
        else:
            counts[s.label.value] += 1
    return counts


def load_manifest(path: "str | Path") -> Manifest:
    """Parse and verify a manifest CSV; errors name the offending row."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest not found: {path}")
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"empty manifest: {path}") from None
        if tuple(header) != MANIFEST_HEADER:
            raise IngestionError(
                f"{path}: expected header {','.join(MANIFEST_HEADER)}, "
                f"got {','.join(header)}"
            )
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_HEADER):
                raise IngestionError(
                    f"{path} row {row_no}: expected {len(MANIFEST_HEADER)} fields, "
                    f"got {len(row)}"
                )
            sample_id, sample_path, label_text, origin, category_text = row
            try:
                label = Label.parse(label_text) if label_text else None
                category = Category.parse(category_text) if category_text else None
            except InvalidInputError as exc:
                raise IngestionError(f"{path} row {row_no}: {exc}") from None
            samples.append(
                ImageSample(
                    id=sample_id,
                    path=Path(sample_path) if sample_path else None,
                    label=label,
                    origin=origin,
                    category=category,
                )
            )
    if not samples:
        raise IngestionError(f"empty manifest: {path}")
    return Manifest.from_samples(samples)


def save_manifest(manifest: Manifest, path: "str | Path") -> None:
    """Write a manifest CSV atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for s in manifest.samples:
            writer.writerow(
                [
                    s.id,
                    str(s.path) if s.path else "",
                    s.label.value if s.label else "",
                    s.origin,
                    s.category.name if s.category else "",
                ]
            )
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Attribute-based category segmentation
# ---------------------------------------------------------------------------

# Raw emotion -> coarse group. The raw vocabulary follows common face
# attribute models; similar emotions share a group so no class is starved.
EMOTION_GROUPS: dict[str, EmotionGroup] = {
    "happy": EmotionGroup.HAPPY,
    "neutral": EmotionGroup.NEUTRAL,
    "angry": EmotionGroup.NEGATIVE,
    "sad": EmotionGroup.NEGATIVE,
    "disgust": EmotionGroup.NEGATIVE,
    "fear": EmotionGroup.SCARED,
    "surprise": EmotionGroup.SCARED,
}


class AttributePredictor(Protocol):
    """External face-attribute model behind a minimal interface."""

    def predict(self, sample: ImageSample) -> tuple[str, str]:
        """Return (raw_race, raw_emotion) strings for one image."""
        ...


class MappingAttributePredictor:
    """Stub predictor reading attributes from a fixed id -> (race, emotion) map."""

    def __init__(
        self,
        attributes: dict[str, tuple[str, str]],
        default: Optional[tuple[str, str]] = None,
    ) -> None:
        self.attributes = dict(attributes)
        self.default = default

    def predict(self, sample: ImageSample) -> tuple[str, str]:
        if sample.id in self.attributes:
            return self.attributes[sample.id]
        if self.default is not None:
            return self.default
        raise KeyError(sample.id)


class HashAttributePredictor:
    """Stub predictor deriving deterministic pseudo-attributes from sample ids."""

    RACES = ("white", "black", "asian", "latino hispanic")
    EMOTIONS = tuple(EMOTION_GROUPS)

    def predict(self, sample: ImageSample) -> tuple[str, str]:
        digest = hashlib.sha256(sample.id.encode()).digest()
        return (
            self.RACES[digest[0] % len(self.RACES)],
            self.EMOTIONS[digest[1] % len(self.EMOTIONS)],
        )


class FailingAttributePredictor:
    """Stub predictor that always raises (simulates a model crash)."""

    def predict(self, sample: ImageSample) -> tuple[str, str]:
        raise RuntimeError("attribute model unavailable")


_ATTRIBUTE_PREDICTORS: dict[str, Callable[[], AttributePredictor]] = {
    "stub_hash": HashAttributePredictor,
}


def register_attribute_predictor(
    name: str, factory: Callable[[], AttributePredictor]
) -> None:
    """Register an attribute predictor (production adapters hook in here)."""
    _ATTRIBUTE_PREDICTORS[name] = factory


def build_attribute_predictor(name: str) -> AttributePredictor:
    if name not in _ATTRIBUTE_PREDICTORS:
        raise ConfigurationError(
            f"unknown attribute predictor {name!r}; "
            f"registered: {sorted(_ATTRIBUTE_PREDICTORS)}"
        )
    return _ATTRIBUTE_PREDICTORS[name]()


def categorize(
    predictor: AttributePredictor,
    sample: ImageSample,
    emotion_groups: Optional[dict[str, EmotionGroup]] = None,
) -> Optional[Category]:
    """Map a sample's raw attributes onto one of the 8 categories.

    Returns None (the uncategorized marker) when the predictor fails or
    emits an emotion outside the grouping table.
    """
    groups = emotion_groups or EMOTION_GROUPS
    try:
        raw_race, raw_emotion = predictor.predict(sample)
    except Exception:
        return None
    race = RaceGroup.WHITE if raw_race.strip().lower() == "white" else RaceGroup.OTHER
    emotion = groups.get(raw_emotion.strip().lower())
    if emotion is None:
        return None
    return Category(race, emotion)


@dataclass
class CategoryReport:
    """Per-category sample counts plus the number left uncategorized."""

    counts: dict[str, int]
    uncategorized: int

    def to_dict(self) -> dict:
        return {"counts": dict(sorted(self.counts.items())), "uncategorized": self.uncategorized}


def categorize_all(
    predictor: AttributePredictor,
    samples: Sequence[ImageSample],
    emotion_groups: Optional[dict[str, EmotionGroup]] = None,
) -> tuple[dict[str, Optional[Category]], CategoryReport]:
    """Categorize every sample; uncategorized samples are counted, not dropped."""
    assignment: dict[str, Optional[Category]] = {}
    counts: dict[str, int] = {}
    uncategorized = 0
    for sample in samples:
        category = categorize(predictor, sample, emotion_groups)
        assignment[sample.id] = category
        if category is None:
            uncategorized += 1
        else:
            counts[category.name] = counts.get(category.name, 0) + 1
    return assignment, CategoryReport(counts, uncategorized)


# ---------------------------------------------------------------------------
# Fake-data clustering and folds
# ---------------------------------------------------------------------------


class Embedder(Protocol):
    """External embedding model behind a minimal interface; fixed output dim."""

    def embed(self, sample: ImageSample) -> np.ndarray: ...


class PixelEmbedder:
    """Stub embedder: block-averaged luminance pixels, flattened to grid**2 dims."""

    def __init__(self, grid: int = 8) -> None:
        self.grid = grid

    def embed(self, sample: ImageSample) -> np.ndarray:
        gray = luminance(ensure_pixels(sample)) / 255.0
        h, w = gray.shape
        g = self.grid
        if h % g == 0 and w % g == 0:
            small = gray.reshape(g, h // g, g, w // g).mean(axis=(1, 3))
        else:
            from PIL import Image

            img = Image.fromarray(gray.astype(np.float32), mode="F").resize((g, g))
            small = np.asarray(img, dtype=np.float64)
        return small.reshape(-1)


class CompoundCnnEmbedder:
    """Production preset: a compound-scaled CNN's penultimate pooled vector.

    Backed by torchvision's EfficientNet-B7 feature stack (2560-dim pooled
    output). Weights are randomly initialized from ``seed`` unless
    ``weights_path`` supplies a state dict, so the embedder is deterministic
    per image either way.
    """

    DIM = 2560

    def __init__(self, seed: int = 0, weights_path: Optional[str] = None) -> None:
        import torch

        try:
            from torchvision import models as tv_models
        except ImportError as exc:
            raise ConfigurationError(
                "the efficientnet_b7 embedder requires torchvision"
            ) from exc
        torch.manual_seed(seed)
        backbone = tv_models.efficientnet_b7(weights=None)
        self.features = backbone.features
        self.pool = backbone.avgpool
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            backbone.load_state_dict(state)
        self.features.eval()

    def embed(self, sample: ImageSample) -> np.ndarray:
        import torch

        pixels = ensure_pixels(sample).astype(np.float32) / 255.0
        batch = torch.from_numpy(pixels).permute(2, 0, 1).unsqueeze(0)
        with torch.no_grad():
            pooled = self.pool(self.features(batch)).flatten(1)
        return pooled.squeeze(0).numpy().astype(np.float64)


_EMBEDDERS: dict[str, Callable[[], Embedder]] = {
    "stub_pixels": PixelEmbedder,
    "efficientnet_b7": CompoundCnnEmbedder,
}


def register_embedder(name: str, factory: Callable[[], Embedder]) -> None:
    """Register an embedding model (production backbones hook in here)."""
    _EMBEDDERS[name] = factory


def build_embedder(name: str) -> Embedder:
    if name not in _EMBEDDERS:
        raise ConfigurationError(
            f"unknown embedder {name!r}; registered: {sorted(_EMBEDDERS)}"
        )
    return _EMBEDDERS[name]()


@dataclass(frozen=True)
class ClusterAssignment:
    """A k-way partition of the fake set with its centroids and seed."""

    k: int
    assignment: dict[str, int]
    centroids: np.ndarray
    seed: int
    inertia: float
    inertia_history: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError(f"k must be positive, got {self.k}")
        bad = {i for i in self.assignment.values() if not 0 <= i < self.k}
        if bad:
            raise ConsistencyError(f"cluster indices outside [0, {self.k}): {sorted(bad)}")

    def members(self, cluster: int) -> tuple[str, ...]:
        return tuple(sid for sid, c in self.assignment.items() if c == cluster)

    def save(self, path: "str | Path", extra: Optional[dict] = None) -> None:
        payload = {
            "k": self.k,
            "seed": self.seed,
            "inertia": self.inertia,
            "assignment": self.assignment,
            "centroids": self.centroids.tolist(),
        }
        if extra:
            payload.update(extra)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: "str | Path") -> "ClusterAssignment":
        path = Path(path)
        if not path.exists():
            raise IngestionError(f"cluster assignment not found: {path}")
        payload = json.loads(path.read_text())
        return cls(
            k=payload["k"],
            assignment=dict(payload["assignment"]),
            centroids=np.asarray(payload["centroids"], dtype=np.float64),
            seed=payload["seed"],
            inertia=payload["inertia"],
        )


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape [n, k]."""
    p2 = (points**2).sum(axis=1)[:, None]
    c2 = (centroids**2).sum(axis=1)[None, :]
    return np.maximum(p2 + c2 - 2.0 * points @ centroids.T, 0.0)


def _kmeanspp_seeds(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    closest = _squared_distances(points, centroids[:1]).min(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # All remaining mass at distance zero (duplicate points): pick uniformly.
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centroids[i] = points[idx]
        closest = np.minimum(closest, _squared_distances(points, centroids[i : i + 1]).min(axis=1))
    return centroids


def cluster_fakes(
    embeddings: Sequence[tuple[str, np.ndarray]],
    k: int,
    seed: int,
    max_iter: int = 300,
) -> ClusterAssignment:
    """Lloyd's k-means with seeded k-means++ initialization.

    Deterministic for a fixed seed; converges when assignments stabilize;
    a cluster that empties is re-seeded from the point farthest from its
    assigned centroid.
    """
    if not embeddings:
        raise ConfigurationError("no embeddings to cluster")
    ids = [sid for sid, _ in embeddings]
    if len(set(ids)) != len(ids):
        raise ConsistencyError("duplicate sample ids in embeddings")
    points = np.asarray([vec for _, vec in embeddings], dtype=np.float64)
    if points.ndim != 2:
        raise ConfigurationError("embedding vectors must share one fixed dimension")
    if k < 1 or k > len(ids):
        raise ConfigurationError(f"k={k} must satisfy 1 <= k <= {len(ids)} samples")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_seeds(points, k, rng)
    assignment = np.full(len(ids), -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        dists = _squared_distances(points, centroids)
        new_assignment = dists.argmin(axis=1)
        for cluster in range(k):
            if not np.any(new_assignment == cluster):
                farthest = dists[np.arange(len(ids)), new_assignment].argmax()
                centroids[cluster] = points[farthest]
                dists = _squared_distances(points, centroids)
                new_assignment = dists.argmin(axis=1)
        history.append(float(dists[np.arange(len(ids)), new_assignment].sum()))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for cluster in range(k):
            centroids[cluster] = points[assignment == cluster].mean(axis=0)
    inertia = float(
        _squared_distances(points, centroids)[np.arange(len(ids)), assignment].sum()
    )
    return ClusterAssignment(
        k=k,
        assignment={sid: int(c) for sid, c in zip(ids, assignment)},
        centroids=centroids,
        seed=seed,
        inertia=inertia,
        inertia_history=tuple(history),
    )


@dataclass(frozen=True)
class Fold:
    """One training phase's dataset: every real sample plus one fake cluster."""

    index: int
    samples: tuple[ImageSample, ...]
    real_count: int

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def fake_count(self) -> int:
        return len(self.samples) - self.real_count


def build_folds(manifest: Manifest, assignment: ClusterAssignment) -> list[Fold]:
    """Pair the shared real set with each fake cluster, ordered by cluster index."""
    fakes = manifest.fake_samples()
    fake_ids = {s.id for s in fakes}
    assigned_ids = set(assignment.assignment)
    if fake_ids != assigned_ids:
        missing = sorted(fake_ids - assigned_ids)[:5]
        extra = sorted(assigned_ids - fake_ids)[:5]
        raise ConsistencyError(
            f"cluster assignment does not cover the manifest's fakes "
            f"(missing={missing}, extra={extra})"
        )
    reals = manifest.real_samples()
    folds = []
    for cluster in range(assignment.k):
        members = tuple(s for s in fakes if assignment.assignment[s.id] == cluster)
        folds.append(
            Fold(index=cluster, samples=reals + members, real_count=len(reals))
        )
    return folds


# ---------------------------------------------------------------------------
# Region-based crop extraction
# ---------------------------------------------------------------------------

EYE_REGION_PARTS = ("left_eyebrow", "right_eyebrow", "left_eye", "right_eye")
LIP_REGION_PARTS = ("upper_lip", "lower_lip")

# Padding added around each tight box, as a fraction of its height/width.
CROP_PAD_FRACTION = 0.1


class CropKind:
    DUAL_CROP = "dual_crop"
    FULL_IMAGE = "full_image"


@dataclass(frozen=True)
class CropResult:
    """Either both region crops or a marker that the full image must be used."""

    kind: str
    eyes_crop: Optional[np.ndarray] = None
    lips_crop: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind == CropKind.DUAL_CROP:
            if self.eyes_crop is None or self.lips_crop is None:
                raise ConsistencyError("dual_crop result requires both crops")
        elif self.kind == CropKind.FULL_IMAGE:
            if self.eyes_crop is not None or self.lips_crop is not None:
                raise ConsistencyError("full_image result must carry no crops")
        else:
            raise ConsistencyError(f"unknown crop kind {self.kind!r}")


def _tight_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows, cols = np.nonzero(mask)
    return int(rows.min()), int(rows.max()), int(cols.min()), int(cols.max())


def _pad_and_clamp(
    r0: int, r1: int, c0: int, c1: int, height: int, width: int
) -> tuple[int, int, int, int]:
    """Expand a box by CROP_PAD_FRACTION of its extent per side, inside bounds."""
    pad_r = CROP_PAD_FRACTION * (r1 - r0)
    pad_c = CROP_PAD_FRACTION * (c1 - c0)
    lo_r = max(0, math.ceil(r0 - pad_r))
    hi_r = min(height - 1, math.floor(r1 + pad_r))
    lo_c = max(0, math.ceil(c0 - pad_c))
    hi_c = min(width - 1, math.floor(c1 + pad_c))
    return lo_r, hi_r, lo_c, hi_c


def extract_crops(image: ImageSample, report) -> CropResult:
    """Cut the eyes+eyebrows and lips+chin regions when all six parts exist.

    The lips box is extended downward by its own height to take in the chin
    before padding. Any missing part yields a full-image result instead.
    """
    pixels = ensure_pixels(image)
    height, width = pixels.shape[:2]
    if not report.gate:
        return CropResult(kind=CropKind.FULL_IMAGE)
    if report.masks is None:
        raise ConsistencyError(
            f"report for {image.id!r} flags all parts present but carries no masks"
        )
    for part in EYE_REGION_PARTS + LIP_REGION_PARTS:
        mask = report.masks.get(part)
        if mask is None or not np.any(mask):
            raise ConsistencyError(f"report for {image.id!r} lacks a usable {part} mask")
        if mask.shape != (height, width):
            raise ConsistencyError(
                f"{part} mask shape {mask.shape} does not match image "
                f"{(height, width)} for {image.id!r}"
            )

    eye_union = np.zeros((height, width), dtype=bool)
    for part in EYE_REGION_PARTS:
        eye_union |= report.masks[part].astype(bool)
    r0, r1, c0, c1 = _tight_box(eye_union)
    er0, er1, ec0, ec1 = _pad_and_clamp(r0, r1, c0, c1, height, width)
    eyes_crop = pixels[er0 : er1 + 1, ec0 : ec1 + 1]

    lip_union = np.zeros((height, width), dtype=bool)
    for part in LIP_REGION_PARTS:
        lip_union |= report.masks[part].astype(bool)
    r0, r1, c0, c1 = _tight_box(lip_union)
    r1 = r1 + (r1 - r0)  # chin: extend downward by the box's own height
    lr0, lr1, lc0, lc1 = _pad_and_clamp(r0, r1, c0, c1, height, width)
    lips_crop = pixels[lr0 : lr1 + 1, lc0 : lc1 + 1]

    return CropResult(kind=CropKind.DUAL_CROP, eyes_crop=eyes_crop, lips_crop=lips_crop)
