"""Synthetic multimodal video/text datasets, plus file ingest.

Each instance is a T x D_in frame-feature matrix with a short action
description. Classes are latent directions; within a class, instances come
in a handful of "object variant" modes with their own latent offsets, which
is what makes single-shot prototypes biased and text hints valuable: the
description's object noun names the variant (with probability
`text_informativeness`), while the verb phrase names the class.

Frame model, in a latent space of dimension `latent_dim` projected to D_in
through a fixed orthonormal map:

    frames[t] = P (z_class + u_variant) + noise_scale * (ramp[t] * drift + eps[t])

with ramp spanning [-1/2, 1/2] over T, a unit per-instance drift direction,
and eps[t] standard normal. noise_scale = 0 therefore collapses every
instance of a (class, variant) pair to identical frames.

The latent geometry is compositional over the word banks: every verb,
particle, and noun owns a fixed latent vector, z_class is built from the
class phrase's verb and particle, and u_variant is the (global) vector of
the variant's noun. Words therefore mean the same thing in every class,
so a map from text to latent content learned on one subset of classes
transfers to the rest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

_FORMAT_VERSION = 1

_VERBS = [
    "lift", "pour", "fold", "wipe", "push", "twist", "shake", "drop",
    "slide", "stack", "flip", "press", "spin", "tear", "scoop", "tap",
]
_PARTICLES = [
    "up", "down", "over", "aside", "together", "apart", "around", "away",
    "open", "closed", "forward", "backward",
]
# Kept small so every noun occurs in any reasonably sized class subset.
_NOUNS = [
    "plate", "bottle", "towel", "jar", "pan", "mug",
    "board", "knife", "bowl", "lid", "sponge", "glass",
]

_CLASS_SCALE = 1.0
_VARIANT_SCALE = 0.75


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MultimodalInstance:
    """One video (frame-feature matrix), its description, and its class."""

    instance_id: str
    class_id: str
    frames: np.ndarray  # (T, D_in) float64
    text: str

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise DatasetFormatError(
                f"instance {self.instance_id!r}: frames must be a T x D matrix with T,D >= 1"
            )
        if not np.all(np.isfinite(frames)):
            raise DatasetFormatError(f"instance {self.instance_id!r}: non-finite frame values")
        if not self.text:
            raise DatasetFormatError(f"instance {self.instance_id!r}: empty text")


@dataclass
class MultimodalDataset:
    instances: list[MultimodalInstance]
    frame_count: int | None = None  # inferred from instances when omitted
    frame_dim: int | None = None
    classes: frozenset = field(init=False)

    def __post_init__(self):
        if self.instances:
            t, d = self.instances[0].frames.shape
            if self.frame_count is None:
                self.frame_count = t
            if self.frame_dim is None:
                self.frame_dim = d
        elif self.frame_count is None or self.frame_dim is None:
            raise DatasetFormatError("an empty dataset needs explicit frame_count and frame_dim")
        seen_ids = set()
        by_class: dict[str, list[MultimodalInstance]] = {}
        for inst in self.instances:
            if inst.frames.shape != (self.frame_count, self.frame_dim):
                raise DatasetFormatError(
                    f"instance {inst.instance_id!r} has frames {inst.frames.shape}, "
                    f"expected {(self.frame_count, self.frame_dim)}"
                )
            if inst.instance_id in seen_ids:
                raise DatasetFormatError(f"duplicate instance id {inst.instance_id!r}")
            seen_ids.add(inst.instance_id)
            by_class.setdefault(inst.class_id, []).append(inst)
        self.classes = frozenset(by_class)
        self._by_class = by_class

    def instances_of(self, class_id: str) -> list[MultimodalInstance]:
        return self._by_class[class_id]

    def __eq__(self, other):
        if not isinstance(other, MultimodalDataset):
            return NotImplemented
        if len(self.instances) != len(other.instances):
            return False
        return all(
            a.instance_id == b.instance_id
            and a.class_id == b.class_id
            and a.text == b.text
            and np.array_equal(a.frames, b.frames)
            for a, b in zip(self.instances, other.instances)
        )


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 30
    instances_per_class: int = 30
    T: int = 8
    D_in: int = 16
    latent_dim: int = 8
    n_object_variants: int = 4
    noise_scale: float = 0.5
    text_informativeness: float = 1.0
    seed: int = 0

    def __post_init__(self):
        counts = {
            "n_classes": self.n_classes,
            "instances_per_class": self.instances_per_class,
            "T": self.T,
            "D_in": self.D_in,
            "latent_dim": self.latent_dim,
            "n_object_variants": self.n_object_variants,
        }
        for name, value in counts.items():
            if value < 1:
                raise DatasetFormatError(f"{name} must be positive, got {value}")
        # the latent -> observation projection is orthonormal, so it cannot
        # embed a latent space wider than the observation space
        if self.latent_dim > self.D_in:
            raise DatasetFormatError(
                f"latent_dim {self.latent_dim} must not exceed D_in {self.D_in}"
            )
        if self.noise_scale < 0:
            raise DatasetFormatError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if not 0.0 <= self.text_informativeness <= 1.0:
            raise DatasetFormatError(
                f"text_informativeness must lie in [0,1], got {self.text_informativeness}"
            )


def _class_word_indices(n_classes: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Assign each class a distinct (verb, particle) pair.

    The first lcm(|verbs|, |particles|) classes walk a shuffled diagonal, so
    every verb and every particle is in use once n_classes >= max bank size;
    remaining classes draw from the leftover pairs at random.
    """
    n_v, n_p = len(_VERBS), len(_PARTICLES)
    if n_classes > n_v * n_p:
        raise DatasetFormatError(
            f"at most {n_v * n_p} distinct classes supported, got {n_classes}"
        )
    verb_order = rng.permutation(n_v)
    particle_order = rng.permutation(n_p)
    diagonal = [
        (int(verb_order[i % n_v]), int(particle_order[i % n_p]))
        for i in range(np.lcm(n_v, n_p))
    ]
    leftover = [
        (v, p) for v in range(n_v) for p in range(n_p) if (v, p) not in set(diagonal)
    ]
    pool = diagonal + [leftover[i] for i in rng.permutation(len(leftover))]
    return pool[:n_classes]


def generate_dataset(spec: SyntheticSpec) -> MultimodalDataset:
    """Draw a synthetic dataset; bit-deterministic for a fixed spec."""
    rng = np.random.default_rng(spec.seed)
    if spec.n_object_variants > len(_NOUNS):
        raise DatasetFormatError(
            f"at most {len(_NOUNS)} object variants supported, got {spec.n_object_variants}"
        )

    # Fixed near-isometric projection latent -> observation space.
    raw = rng.normal(size=(spec.D_in, spec.latent_dim))
    proj, _ = np.linalg.qr(raw)

    # One latent vector per word; classes and variants compose them.
    verb_latents = rng.normal(size=(len(_VERBS), spec.latent_dim))
    particle_latents = rng.normal(size=(len(_PARTICLES), spec.latent_dim))
    noun_latents = rng.normal(size=(len(_NOUNS), spec.latent_dim))

    class_words = _class_word_indices(spec.n_classes, rng)
    phrases = [f"{_VERBS[v]} {_PARTICLES[p]}" for v, p in class_words]
    class_dirs = np.stack(
        [
            _CLASS_SCALE * (verb_latents[v] + particle_latents[p]) / np.sqrt(2.0)
            for v, p in class_words
        ]
    )
    variant_nouns = np.stack(
        [rng.choice(len(_NOUNS), size=spec.n_object_variants, replace=False)
         for _ in range(spec.n_classes)]
    )

    ramp = np.linspace(-0.5, 0.5, spec.T) if spec.T > 1 else np.zeros(1)
    instances = []
    for c in range(spec.n_classes):
        class_id = f"c{c:03d}"
        for j in range(spec.instances_per_class):
            variant = int(rng.integers(spec.n_object_variants))
            latent = class_dirs[c] + _VARIANT_SCALE * noun_latents[variant_nouns[c, variant]]
            base = proj @ latent
            drift = rng.normal(size=spec.D_in)
            drift /= np.linalg.norm(drift)
            eps = rng.normal(size=(spec.T, spec.D_in))
            frames = base[None, :] + spec.noise_scale * (ramp[:, None] * drift[None, :] + eps)
            if rng.random() < spec.text_informativeness:
                noun = _NOUNS[variant_nouns[c, variant]]
            else:
                noun = _NOUNS[int(rng.integers(len(_NOUNS)))]
            instances.append(
                MultimodalInstance(
                    instance_id=f"{class_id}-i{j:04d}",
                    class_id=class_id,
                    frames=frames,
                    text=f"{phrases[c]} {noun}",
                )
            )
    return MultimodalDataset(instances)


def save_dataset(dataset: MultimodalDataset, path) -> None:
    """Write line-delimited JSON: one header line, then one record per instance.

    Floats are serialized with repr precision, so load(save(d)) == d bit-exactly.
    """
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format_version": _FORMAT_VERSION,
            "T": dataset.frame_count,
            "D_in": dataset.frame_dim,
        }
        fh.write(json.dumps(header) + "\n")
        for inst in dataset.instances:
            record = {
                "instance_id": inst.instance_id,
                "class_id": inst.class_id,
                "text": inst.text,
                "frames": inst.frames.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def load_dataset(path) -> MultimodalDataset:
    """Read a dataset file written by save_dataset, validating as it goes."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: line 1: invalid JSON ({exc})") from exc
    for key in ("format_version", "T", "D_in"):
        if key not in header:
            raise DatasetFormatError(f"{path}: line 1: header missing {key!r}")
    if header["format_version"] != _FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported format_version {header['format_version']}"
        )
    t, d = header["T"], header["D_in"]

    instances = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: invalid JSON ({exc})") from exc
        missing = {"instance_id", "class_id", "text", "frames"} - rec.keys()
        if missing:
            raise DatasetFormatError(
                f"{path}: line {lineno}: record missing {sorted(missing)}"
            )
        frames = np.asarray(rec["frames"], dtype=np.float64)
        if frames.ndim != 2 or frames.shape != (t, d):
            raise DatasetFormatError(
                f"{path}: line {lineno}: instance {rec['instance_id']!r} has frames of "
                f"shape {frames.shape}, header declares {(t, d)}"
            )
        instances.append(
            MultimodalInstance(
                instance_id=rec["instance_id"],
                class_id=rec["class_id"],
                frames=frames,
                text=rec["text"],
            )
        )
    return MultimodalDataset(instances, frame_count=t, frame_dim=d)
