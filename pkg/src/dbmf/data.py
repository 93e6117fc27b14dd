"""
Embedding datasets: the in-memory model, JSONL I/O, the stratified 8:2 ID
split and seeded synthetic generators.

JSONL layout::

    {"dim": 16, "class_names": ["a", "b"]}
    {"id": "s0", "split": "train", "label": 0, "ood": false, "embedding": [...]}
    ...
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConfigError,
    InconsistentDim,
    LabelOutOfRange,
    ParseError,
    TooFewSamples,
)

SPLITS = ("train", "test")


@dataclass(frozen=True)
class LabeledEmbedding:
    id: str
    embedding: tuple
    label: int | None
    is_ood: bool
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.is_ood:
            if self.label is not None:
                raise ValueError(f"OOD sample {self.id!r} must not carry a label")
            if self.split != "test":
                raise ValueError(f"OOD sample {self.id!r} must be in the test split")
        elif self.label is None:
            raise ValueError(f"ID sample {self.id!r} needs a label")
        if not all(math.isfinite(x) for x in self.embedding):
            raise ValueError(f"sample {self.id!r} has a non-finite embedding")


@dataclass(frozen=True)
class Dataset:
    dim: int
    class_names: tuple
    samples: tuple = ()

    def __post_init__(self):
        if len(self.class_names) < 2:
            raise ConfigError("a dataset needs at least 2 ID classes")
        for s in self.samples:
            if len(s.embedding) != self.dim:
                raise InconsistentDim(
                    f"sample {s.id!r} has dim {len(s.embedding)}, expected {self.dim}")
            if s.label is not None and not 0 <= s.label < len(self.class_names):
                raise LabelOutOfRange(f"sample {s.id!r} label {s.label} out of range")

    @property
    def num_classes(self):
        return len(self.class_names)

    def subset(self, split=None, ood=None):
        keep = [s for s in self.samples
                if (split is None or s.split == split) and (ood is None or s.is_ood == ood)]
        return replace(self, samples=tuple(keep))

    def embeddings(self):
        if not self.samples:
            return np.zeros((0, self.dim))
        return np.array([s.embedding for s in self.samples], dtype=np.float64)

    def labels(self):
        """Integer labels; OOD samples get -1."""
        return np.array([-1 if s.label is None else s.label for s in self.samples], dtype=np.int64)

    def ood_flags(self):
        return np.array([s.is_ood for s in self.samples], dtype=bool)

    def ids(self):
        return [s.id for s in self.samples]


def _parse_record(obj, lineno, dim, k):
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", lineno)
    missing = {"id", "split", "label", "ood", "embedding"} - obj.keys()
    if missing:
        raise ParseError(f"missing fields {sorted(missing)}", lineno)
    emb = obj["embedding"]
    if not isinstance(emb, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in emb):
        raise ParseError("embedding must be a list of numbers", lineno)
    if len(emb) != dim:
        raise InconsistentDim(f"line {lineno}: embedding has dim {len(emb)}, expected {dim}")
    label = obj["label"]
    if label is not None and (not isinstance(label, int) or isinstance(label, bool)):
        raise ParseError("label must be an integer or null", lineno)
    if label is not None and not 0 <= label < k:
        raise LabelOutOfRange(f"line {lineno}: label {label} not in [0, {k})")
    if not isinstance(obj["ood"], bool):
        raise ParseError("ood must be a boolean", lineno)
    try:
        return LabeledEmbedding(
            id=str(obj["id"]),
            embedding=tuple(float(x) for x in emb),
            label=label,
            is_ood=obj["ood"],
            split=obj["split"],
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from exc


def load_jsonl(path):
    """Read a dataset written by :func:`save_jsonl` (or exported externally)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file: missing metadata line", 1)
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", 1) from exc
    if not isinstance(meta, dict) or "dim" not in meta or "class_names" not in meta:
        raise ParseError("metadata must be an object with dim and class_names", 1)
    dim, names = meta["dim"], meta["class_names"]
    if not isinstance(dim, int) or dim < 1:
        raise ParseError("dim must be a positive integer", 1)

    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
        samples.append(_parse_record(obj, lineno, dim, len(names)))
    return Dataset(dim=dim, class_names=tuple(str(n) for n in names), samples=tuple(samples))


def save_jsonl(dataset, path):
    # json emits shortest round-trip float reprs, so reloads are value-exact
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"dim": dataset.dim, "class_names": list(dataset.class_names)}))
        fh.write("\n")
        for s in dataset.samples:
            rec = {"id": s.id, "split": s.split, "label": s.label, "ood": s.is_ood,
                   "embedding": list(s.embedding)}
            fh.write(json.dumps(rec))
            fh.write("\n")


def split_id_8_2(dataset, seed, train_fraction=0.8):
    """Stratified random split of the ID samples, 80% to train per class.

    Every OOD sample lands in the test split.

    Returns:
        (train, test) datasets; their samples carry the new split tags.
    """
    rng = np.random.default_rng(seed)
    id_idx = {k: [] for k in range(dataset.num_classes)}
    for i, s in enumerate(dataset.samples):
        if not s.is_ood:
            id_idx[s.label].append(i)
    for k, idx in id_idx.items():
        if len(idx) < 5:
            raise TooFewSamples(
                f"class {dataset.class_names[k]!r} has {len(idx)} ID samples, need >= 5")

    train_set = set()
    for k in sorted(id_idx):
        idx = id_idx[k]
        n_train = math.floor(train_fraction * len(idx) + 0.5)
        perm = rng.permutation(len(idx))
        train_set.update(idx[j] for j in perm[:n_train])

    train, test = [], []
    for i, s in enumerate(dataset.samples):
        if i in train_set:
            train.append(replace(s, split="train"))
        else:
            test.append(replace(s, split="test"))
    return (replace(dataset, samples=tuple(train)), replace(dataset, samples=tuple(test)))


def minibatch_indices(rng, n, batch_size, steps):
    """Yield ``steps`` index batches, reshuffling whenever an epoch runs out."""
    bs = min(batch_size, n)
    order, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos + bs > n:
            order, pos = rng.permutation(n), 0
        yield order[pos:pos + bs]
        pos += bs


def merge_splits(train, test):
    return replace(train, samples=tuple(train.samples) + tuple(test.samples))


@dataclass(frozen=True)
class SynthConfig:
    """Seeded stand-in for pretrained-encoder embeddings.

    ID class means and OOD cluster means are random points on a sphere of
    radius ``mean_scale``. OOD means are rejected until they sit at least
    ``ood_margin * cluster_spread`` away from every ID mean.
    """

    dim: int = 16
    num_id_classes: int = 3
    samples_per_class: int = 50
    ood_clusters: int = 2
    ood_samples: int = 60
    cluster_spread: float = 0.1
    seed: int = 0
    mean_scale: float = 1.0
    ood_margin: float = 6.0

    def __post_init__(self):
        for name in ("dim", "num_id_classes", "samples_per_class", "ood_clusters", "ood_samples"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.num_id_classes < 2:
            raise ConfigError("num_id_classes must be >= 2")
        if not self.cluster_spread > 0:
            raise ConfigError("cluster_spread must be > 0")
        if not self.mean_scale > 0:
            raise ConfigError("mean_scale must be > 0")
        if self.ood_margin < 4.0:
            raise ConfigError("ood_margin must be >= 4 cluster spreads")


def _sphere_points(rng, n, dim, radius):
    v = rng.standard_normal((n, dim))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def _draw_means(rng, config):
    id_means = _sphere_points(rng, config.num_id_classes, config.dim, config.mean_scale)
    min_gap = config.ood_margin * config.cluster_spread

    ood_means = []
    for _ in range(config.ood_clusters):
        for _attempt in range(10_000):
            cand = _sphere_points(rng, 1, config.dim, config.mean_scale)[0]
            if np.min(np.linalg.norm(id_means - cand, axis=1)) >= min_gap:
                ood_means.append(cand)
                break
        else:
            raise ConfigError("could not place OOD clusters; increase mean_scale or dim")
    return id_means, np.array(ood_means)


def synthetic_means(config):
    """The (ID, OOD) cluster means that :func:`generate_synthetic` draws."""
    return _draw_means(np.random.default_rng(config.seed), config)


def generate_synthetic(config):
    rng = np.random.default_rng(config.seed)
    id_means, ood_means = _draw_means(rng, config)

    samples = []
    for k in range(config.num_id_classes):
        pts = id_means[k] + config.cluster_spread * rng.standard_normal(
            (config.samples_per_class, config.dim))
        samples.extend(
            LabeledEmbedding(f"id{k}_{i:04d}", tuple(p.tolist()), k, False, "train")
            for i, p in enumerate(pts))
    which = np.arange(config.ood_samples) % config.ood_clusters
    pts = ood_means[which] + config.cluster_spread * rng.standard_normal(
        (config.ood_samples, config.dim))
    samples.extend(
        LabeledEmbedding(f"ood_{i:04d}", tuple(p.tolist()), None, True, "test")
        for i, p in enumerate(pts))
    names = tuple(f"class_{k}" for k in range(config.num_id_classes))
    return Dataset(dim=config.dim, class_names=names, samples=tuple(samples))


@dataclass(frozen=True)
class ComplementaryConfig:
    """Scenario in which each branch sees only half of the OOD data.

    ID class ``k`` sits at ``radius * e_k``. OOD group A points lie between
    two class directions at the ID radius (direction-ambiguous, moderate
    Mahalanobis distance). OOD group B points are ID samples scaled
    radially by ``radial_scale`` (same direction, far in Mahalanobis terms).
    """

    dim: int = 8
    num_id_classes: int = 3
    samples_per_class: int = 60
    ood_per_group: int = 40
    spread: float = 0.25
    radius: float = 1.0
    radial_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.dim < self.num_id_classes:
            raise ConfigError("dim must be >= num_id_classes")


def generate_complementary(config):
    rng = np.random.default_rng(config.seed)
    k, d = config.num_id_classes, config.dim
    means = np.zeros((k, d))
    means[np.arange(k), np.arange(k)] = config.radius

    samples = []
    for c in range(k):
        pts = means[c] + config.spread * rng.standard_normal((config.samples_per_class, d))
        samples.extend(
            LabeledEmbedding(f"id{c}_{i:04d}", tuple(p.tolist()), c, False, "train")
            for i, p in enumerate(pts))

    # group A: unit mixtures of two class directions
    a = rng.integers(0, k, config.ood_per_group)
    b = (a + rng.integers(1, k, config.ood_per_group)) % k
    w = rng.uniform(0.4, 0.6, config.ood_per_group)
    mix = w[:, None] * means[a] + (1 - w[:, None]) * means[b]
    mix *= config.radius / np.linalg.norm(mix, axis=1, keepdims=True)
    pts = mix + config.spread * rng.standard_normal((config.ood_per_group, d))
    samples.extend(
        LabeledEmbedding(f"oodA_{i:04d}", tuple(p.tolist()), None, True, "test")
        for i, p in enumerate(pts))

    # group B: radially scaled ID-like samples
    c = rng.integers(0, k, config.ood_per_group)
    pts = config.radial_scale * (
        means[c] + config.spread * rng.standard_normal((config.ood_per_group, d)))
    samples.extend(
        LabeledEmbedding(f"oodB_{i:04d}", tuple(p.tolist()), None, True, "test")
        for i, p in enumerate(pts))
    names = tuple(f"class_{c}" for c in range(k))
    return Dataset(dim=d, class_names=names, samples=tuple(samples))
