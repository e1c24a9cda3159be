"""Procedural real/fake face corpus.

Real samples are smooth radial-gradient face templates with per-index jitter.
Fake samples start from the very same template and receive one localized,
caption-describable artifact in a fixed face region:

===============  ========  =========================================
artifact kind    region    perturbation
===============  ========  =========================================
blend_boundary   chin      soft-edged color seam across the jaw rows
eye_asymmetry    eyes      one eye patch rescaled and darkened
texture_noise    skin      bright speckle noise on both cheeks
mouth_warp       mouth     column-wise vertical warp of the mouth
===============  ========  =========================================

Every sample is a pure function of ``(seed, index, label, artifact_kind)``.
Pixels are quantized to multiples of 1/255 so a corpus reloaded from its PNG
files is bit-identical to the generated one.
"""

# Import built-in modules
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from enum import Enum
from enum import IntEnum
import hashlib
import json
from pathlib import Path
from typing import Any

# Import third-party modules
from PIL import Image
from loguru import logger
import numpy as np

# Import local modules
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode

DEFAULT_IMAGE_SIDE = 64
CORPUS_FILE = "corpus.json"
_SEED_MASK = (1 << 64) - 1


class Label(IntEnum):
    """Binary ground truth."""

    REAL = 0
    FAKE = 1

    @classmethod
    def parse(cls, value: "Label | int | str") -> "Label":
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise AuthGuardError(f"Unknown label '{value}'", ErrorCode.VALIDATION_ERROR) from None
        return cls(int(value))

    @property
    def word(self) -> str:
        return self.name.lower()


class ArtifactKind(str, Enum):
    """Injected manipulation of a fake sample."""

    BLEND_BOUNDARY = "blend_boundary"
    EYE_ASYMMETRY = "eye_asymmetry"
    TEXTURE_NOISE = "texture_noise"
    MOUTH_WARP = "mouth_warp"
    NONE = "none"


FAKE_KINDS: tuple[ArtifactKind, ...] = (
    ArtifactKind.BLEND_BOUNDARY,
    ArtifactKind.EYE_ASYMMETRY,
    ArtifactKind.TEXTURE_NOISE,
    ArtifactKind.MOUTH_WARP,
)

# Caption region described by each artifact kind
ARTIFACT_REGIONS: dict[ArtifactKind, str] = {
    ArtifactKind.BLEND_BOUNDARY: "chin",
    ArtifactKind.EYE_ASYMMETRY: "eyes",
    ArtifactKind.TEXTURE_NOISE: "skin",
    ArtifactKind.MOUTH_WARP: "mouth",
}


class Split(str, Enum):
    """Corpus partition."""

    TRAIN = "train"
    VAL = "val"
    TEST = "test"


def seam_rows(image_side: int) -> tuple[int, int]:
    """Half-open row range of the blend_boundary seam band."""
    return round(0.78 * image_side), round(0.86 * image_side)


def _box(image_side: int, top: float, bottom: float, left: float, right: float) -> tuple[slice, slice]:
    rows = slice(round(top * image_side), max(round(bottom * image_side), round(top * image_side) + 1))
    cols = slice(round(left * image_side), max(round(right * image_side), round(left * image_side) + 1))
    return rows, cols


def eye_box(image_side: int) -> tuple[slice, slice]:
    """Left-eye patch rescaled by eye_asymmetry."""
    return _box(image_side, 0.34, 0.50, 0.26, 0.48)


def mouth_box(image_side: int) -> tuple[slice, slice]:
    """Mouth patch warped by mouth_warp."""
    return _box(image_side, 0.60, 0.80, 0.30, 0.70)


def cheek_boxes(image_side: int) -> tuple[tuple[slice, slice], tuple[slice, slice]]:
    """Both cheek patches speckled by texture_noise."""
    return _box(image_side, 0.50, 0.66, 0.20, 0.36), _box(image_side, 0.50, 0.66, 0.64, 0.80)


@dataclass
class LabeledImage:
    """One synthetic face with its ground truth.

    Attributes:
        id: Stable identifier, unique within a corpus.
        index: Generation index.
        pixels: float32 array of shape (3, S, S) with values in [0, 1].
        label: Real or fake.
        artifact_kind: Injected artifact; ``none`` exactly for real samples.

    """

    id: str
    index: int
    pixels: np.ndarray
    label: Label
    artifact_kind: ArtifactKind = ArtifactKind.NONE

    def __post_init__(self) -> None:
        if (self.label == Label.REAL) != (self.artifact_kind == ArtifactKind.NONE):
            raise AuthGuardError(
                f"Sample {self.id}: label {self.label.word} is inconsistent with artifact_kind "
                f"{self.artifact_kind.value}",
                ErrorCode.VALIDATION_ERROR,
            )
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3 or self.pixels.shape[1] != self.pixels.shape[2]:
            raise AuthGuardError(
                f"Sample {self.id}: expected pixels of shape (3, S, S), got {self.pixels.shape}", ErrorCode.SHAPE_ERROR
            )

    @property
    def image_side(self) -> int:
        return int(self.pixels.shape[-1])


@dataclass
class SynthCorpus:
    """A generated corpus with its split assignment."""

    seed: int
    image_side: int
    samples: list[LabeledImage]
    split: dict[str, Split] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def by_split(self, split: Split | str) -> list[LabeledImage]:
        """Samples assigned to ``split``, in index order."""
        split = Split(split)
        return [sample for sample in self.samples if self.split.get(sample.id) == split]

    def get(self, image_id: str) -> LabeledImage:
        for sample in self.samples:
            if sample.id == image_id:
                return sample
        raise AuthGuardError(f"Image '{image_id}' is not part of the corpus", ErrorCode.VALIDATION_ERROR)

    def metadata(self) -> dict[str, Any]:
        """JSON-serializable description stored as ``corpus.json``."""
        return {
            "seed": self.seed,
            "image_side": self.image_side,
            "n": len(self.samples),
            "samples": [
                {
                    "id": sample.id,
                    "index": sample.index,
                    "label": sample.label.word,
                    "artifact_kind": sample.artifact_kind.value,
                    "split": self.split[sample.id].value,
                }
                for sample in self.samples
            ],
        }

    def save(self, directory: str | Path) -> Path:
        """Persist as ``corpus.json`` plus one lossless ``<id>.png`` per sample.

        Args:
            directory: Output directory, created if needed.

        Returns:
            Path: The corpus directory.

        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for sample in self.samples:
            to_png(sample.pixels).save(directory / f"{sample.id}.png", format="PNG")
        (directory / CORPUS_FILE).write_text(json.dumps(self.metadata(), indent=2, sort_keys=True), encoding="utf-8")
        logger.info(f"Saved corpus of {len(self.samples)} samples to {directory}")
        return directory


def to_png(pixels: np.ndarray) -> Image.Image:
    """Convert a (3, S, S) float array in [0, 1] to an 8-bit RGB image."""
    data = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    return Image.fromarray(np.ascontiguousarray(data.transpose(1, 2, 0)), mode="RGB")


def from_png(image: Image.Image) -> np.ndarray:
    """Convert an RGB image back to a (3, S, S) float32 array in [0, 1]."""
    data = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(data.transpose(2, 0, 1))


def load_corpus(directory: str | Path) -> SynthCorpus:
    """Load a corpus written by :meth:`SynthCorpus.save`.

    Args:
        directory: Corpus directory containing ``corpus.json``.

    Returns:
        SynthCorpus: The reloaded corpus.

    Raises:
        AuthGuardError: If metadata or an image file is missing.

    """
    directory = Path(directory)
    meta_path = directory / CORPUS_FILE
    if not meta_path.is_file():
        raise AuthGuardError(f"Corpus metadata not found: {meta_path}", ErrorCode.FILE_ERROR)
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    samples: list[LabeledImage] = []
    split: dict[str, Split] = {}
    for entry in meta["samples"]:
        image_path = directory / f"{entry['id']}.png"
        if not image_path.is_file():
            raise AuthGuardError(f"Image file not found: {image_path}", ErrorCode.FILE_ERROR)
        with Image.open(image_path) as image:
            pixels = from_png(image)
        samples.append(
            LabeledImage(
                id=entry["id"],
                index=int(entry["index"]),
                pixels=pixels,
                label=Label.parse(entry["label"]),
                artifact_kind=ArtifactKind(entry["artifact_kind"]),
            )
        )
        split[entry["id"]] = Split(entry["split"])
    logger.debug(f"Loaded corpus of {len(samples)} samples from {directory}")
    return SynthCorpus(seed=int(meta["seed"]), image_side=int(meta["image_side"]), samples=samples, split=split)


def _blob(u: np.ndarray, v: np.ndarray, cu: float, cv: float, ru: float, rv: float, sharpness: float) -> np.ndarray:
    """Soft elliptical mask in [0, 1]."""
    r = np.sqrt(((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2)
    return 1.0 / (1.0 + np.exp(sharpness * (r - 1.0)))


def _face_template(rng: np.random.Generator, image_side: int) -> np.ndarray:
    coords = (np.arange(image_side, dtype=np.float64) + 0.5) / image_side
    u, v = np.meshgrid(coords, coords)  # u: column, v: row
    dx, dy = rng.uniform(-0.02, 0.02, size=2)
    brightness = rng.uniform(0.95, 1.05)
    skin = np.array([0.85, 0.66, 0.56]) + rng.uniform(-0.03, 0.03, size=3)
    background = np.array([0.22, 0.26, 0.32]) + rng.uniform(-0.03, 0.03, size=3)

    image = background[:, None, None] * (0.85 + 0.3 * v)[None]

    cu, cv = 0.5 + dx, 0.53 + dy
    radial = np.sqrt(((u - cu) / 0.32) ** 2 + ((v - cv) / 0.40) ** 2)
    face = _blob(u, v, cu, cv, 0.32, 0.40, 18.0)
    shading = np.clip(1.0 - 0.35 * radial**2, 0.0, 1.0)
    image = image * (1 - face) + (skin[:, None, None] * shading[None]) * face

    hair = _blob(u, v, cu, cv - 0.2, 0.36, 0.24, 14.0) * (v < cv - 0.18)
    image = image * (1 - hair) + np.array([0.28, 0.17, 0.1])[:, None, None] * hair

    features = [
        ((cu - 0.13, cv - 0.11, 0.065, 0.035), np.array([0.12, 0.09, 0.08])),  # left eye
        ((cu + 0.13, cv - 0.11, 0.065, 0.035), np.array([0.12, 0.09, 0.08])),  # right eye
        ((cu, cv + 0.03, 0.03, 0.07), skin * 0.8),  # nose
        ((cu, cv + 0.17, 0.12, 0.03), np.array([0.62, 0.22, 0.26])),  # mouth
    ]
    for (fu, fv, ru, rv), color in features:
        mask = _blob(u, v, fu, fv, ru, rv, 10.0)
        image = image * (1 - mask) + color[:, None, None] * mask

    return np.clip(image * brightness, 0.0, 1.0)


def _apply_blend_boundary(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    side = image.shape[-1]
    top, bottom = seam_rows(side)
    height = bottom - top
    rows = np.arange(height, dtype=np.float64)
    weight = np.sin(np.pi * (rows + 0.5) / height)  # soft edges, peak in the middle row
    cols = slice(round(0.18 * side), round(0.82 * side))
    tint = np.array([1.35, 0.85, 0.7]) * rng.uniform(0.95, 1.05, size=3)
    band = image[:, top:bottom, cols]
    seam = np.clip(band * tint[:, None, None] + 0.08, 0.0, 1.0)
    alpha = 0.7 * weight[None, :, None]
    image[:, top:bottom, cols] = band * (1 - alpha) + seam * alpha
    return image


def _apply_eye_asymmetry(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    rows, cols = eye_box(image.shape[-1])
    patch = image[:, rows, cols].copy()
    height, width = patch.shape[1:]
    scale = rng.uniform(1.4, 1.6)
    ci, cj = (height - 1) / 2, (width - 1) / 2
    src_i = np.clip(np.rint(ci + (np.arange(height) - ci) / scale), 0, height - 1).astype(int)
    src_j = np.clip(np.rint(cj + (np.arange(width) - cj) / scale), 0, width - 1).astype(int)
    zoomed = patch[:, src_i][:, :, src_j]
    image[:, rows, cols] = zoomed * 0.8
    return image


def _apply_texture_noise(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    for rows, cols in cheek_boxes(image.shape[-1]):
        region = image[:, rows, cols]
        speckle = rng.uniform(0.1, 0.4, size=region.shape[1:]) * (rng.random(region.shape[1:]) < 0.6)
        image[:, rows, cols] = region + speckle[None]
    return image


def _apply_mouth_warp(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    side = image.shape[-1]
    rows, cols = mouth_box(side)
    patch = image[:, rows, cols].copy()
    width = patch.shape[2]
    amplitude = max(1.0, 0.05 * side)
    phase = rng.uniform(0, np.pi)
    for j in range(width):
        shift = int(np.rint(amplitude * np.sin(2 * np.pi * j / max(width, 1) + phase)))
        patch[:, :, j] = np.roll(patch[:, :, j], shift, axis=1)
    image[:, rows, cols] = patch * np.array([1.1, 0.8, 0.85])[:, None, None]
    return image


_ARTIFACTS = {
    ArtifactKind.BLEND_BOUNDARY: _apply_blend_boundary,
    ArtifactKind.EYE_ASYMMETRY: _apply_eye_asymmetry,
    ArtifactKind.TEXTURE_NOISE: _apply_texture_noise,
    ArtifactKind.MOUTH_WARP: _apply_mouth_warp,
}


def sample_id(index: int) -> str:
    """Identifier of the sample generated at ``index``."""
    return f"img-{index:06d}"


def make_sample(
    seed: int,
    index: int,
    label: Label | str,
    artifact_kind: ArtifactKind | str,
    image_side: int = DEFAULT_IMAGE_SIDE,
) -> LabeledImage:
    """Generate one sample deterministically.

    Args:
        seed: Corpus seed (64-bit).
        index: Sample index; the real template depends only on ``(seed, index)``.
        label: ``real`` or ``fake``.
        artifact_kind: ``none`` for real samples, one of :data:`FAKE_KINDS` otherwise.
        image_side: Square image side S.

    Returns:
        LabeledImage: The generated sample.

    Raises:
        AuthGuardError: If the label and artifact kind contradict each other.

    """
    label = Label.parse(label)
    artifact_kind = ArtifactKind(artifact_kind)
    if (label == Label.FAKE) == (artifact_kind == ArtifactKind.NONE):
        raise AuthGuardError(
            f"artifact_kind '{artifact_kind.value}' is not allowed for a {label.word} sample",
            ErrorCode.VALIDATION_ERROR,
        )
    base_seed = [seed & _SEED_MASK, index]
    image = _face_template(np.random.default_rng(base_seed), image_side)
    if artifact_kind != ArtifactKind.NONE:
        artifact_rng = np.random.default_rng([*base_seed, FAKE_KINDS.index(artifact_kind) + 1])
        image = _ARTIFACTS[artifact_kind](image, artifact_rng)
    pixels = (np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)
    return LabeledImage(id=sample_id(index), index=index, pixels=pixels, label=label, artifact_kind=artifact_kind)


def _plan(n: int) -> list[tuple[Label, ArtifactKind]]:
    plan = []
    for index in range(n):
        if index % 2 == 0:
            plan.append((Label.REAL, ArtifactKind.NONE))
        else:
            plan.append((Label.FAKE, FAKE_KINDS[(index // 2) % len(FAKE_KINDS)]))
    return plan


def assign_splits(seed: int, samples: list[LabeledImage]) -> dict[str, Split]:
    """Deterministic 80/10/10 split keyed on a hash of each id.

    Ids are ordered by ``sha256(seed:id)`` within each class, so the split is a
    hash split that keeps real and fake counts within one sample per partition.
    """
    split: dict[str, Split] = {}
    for label in Label:
        ids = sorted(
            (sample.id for sample in samples if sample.label == label),
            key=lambda image_id: hashlib.sha256(f"{seed}:{image_id}".encode()).hexdigest(),
        )
        count = len(ids)
        train_end, val_end = (8 * count) // 10, (9 * count) // 10
        for position, image_id in enumerate(ids):
            if position < train_end:
                split[image_id] = Split.TRAIN
            elif position < val_end:
                split[image_id] = Split.VAL
            else:
                split[image_id] = Split.TEST
    return split


def make_corpus(seed: int, n: int, image_side: int = DEFAULT_IMAGE_SIDE, workers: int | None = None) -> SynthCorpus:
    """Generate a balanced corpus.

    Even indices are real, odd indices fake with artifact kinds cycled uniformly.
    Samples are keyed by index, so parallel generation is order-independent.

    Args:
        seed: Corpus seed.
        n: Number of samples (at least 4).
        image_side: Square image side S.
        workers: Thread count for generation; None lets the executor decide.

    Returns:
        SynthCorpus: Samples plus split map.

    Raises:
        AuthGuardError: If ``n`` < 4.

    """
    if n < 4:
        raise AuthGuardError(f"Corpus size must be at least 4, got {n}", ErrorCode.VALIDATION_ERROR)
    plan = _plan(n)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        samples = list(
            pool.map(lambda item: make_sample(seed, item[0], item[1][0], item[1][1], image_side), enumerate(plan))
        )
    corpus = SynthCorpus(seed=seed, image_side=image_side, samples=samples, split=assign_splits(seed, samples))
    logger.info(f"Generated corpus seed={seed} n={n} side={image_side}")
    return corpus
