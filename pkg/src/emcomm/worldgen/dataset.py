"""Dataset assembly: generate, extract, reduce, normalize, split.

Audio embeddings are PCA reductions (fit on the full feature matrix, as
an offline preprocessing pass) of concatenated per-frame log band
energies; image descriptors are already 128-d. Normalization subtracts
the train-split per-coordinate mean from every embedding. The
Dataset keeps its pipeline so new clips or images generated later (for
probing experiments) can be embedded identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParseError, UsageError
from ..fsio import atomic_write_text, write_json
from ..rng import derive
from .audio import AMP_RANGE, CLIP_SECONDS, FREQ_RANGE, NOISE_SIGMA, SAMPLE_RATE, generate_shape_audio
from .features import audio_feature_vector, extract_image_features
from .pca import PCAModel, apply_pca, fit_pca
from .shapes import CLASS_NAMES, generate_shape_image

EMB_DIM = 128
# train-split mean vector norm both modalities are standardized to; keeps
# candidate blocks at a scale the uniform fan-in inits train well under
EMB_NORM = 3.0


@dataclass
class Item:
    item_id: str
    class_id: int
    attributes: dict
    embedding: np.ndarray


@dataclass
class AudioPipeline:
    pca: PCAModel
    norm_mean: np.ndarray
    sample_rate: int = SAMPLE_RATE
    clip_seconds: float = CLIP_SECONDS
    noise_sigma: float = NOISE_SIGMA
    norm_scale: float = 1.0

    def embed_clip(self, clip) -> np.ndarray:
        return (apply_pca(self.pca, audio_feature_vector(clip)) - self.norm_mean) * self.norm_scale


@dataclass
class ImagePipeline:
    norm_mean: np.ndarray
    norm_scale: float = 1.0

    def embed_image(self, img) -> np.ndarray:
        return (extract_image_features(img) - self.norm_mean) * self.norm_scale


@dataclass
class Dataset:
    kind: str                      # "audio" | "image" | "external"
    class_names: tuple
    items: list
    train_idx: np.ndarray
    test_idx: np.ndarray
    pipeline: object = None
    meta: dict = field(default_factory=dict)
    _emb: np.ndarray = None
    _by_class: dict = None

    def embeddings(self) -> np.ndarray:
        if self._emb is None:
            self._emb = np.stack([it.embedding for it in self.items])
        return self._emb

    def class_ids(self) -> np.ndarray:
        return np.array([it.class_id for it in self.items], dtype=np.int64)

    def class_indices(self, class_id, split="all") -> np.ndarray:
        if self._by_class is None:
            self._by_class = {}
        key = (class_id, split)
        if key not in self._by_class:
            ids = self.class_ids()
            if split == "all":
                pool = np.arange(len(self.items))
            elif split == "train":
                pool = self.train_idx
            elif split == "test":
                pool = self.test_idx
            else:
                raise UsageError(f"unknown split {split!r}")
            self._by_class[key] = pool[ids[pool] == class_id]
        return self._by_class[key]

    def split_of(self, idx) -> str:
        return "train" if idx in set(self.train_idx.tolist()) else "test"

    def invalidate_cache(self):
        self._emb = None
        self._by_class = None


@dataclass
class DataConfig:
    images_per_class: int = 400
    clips_per_class: int = 200
    train_fraction: float = 0.8
    seed: int = 0
    sample_rate: int = SAMPLE_RATE
    clip_seconds: float = CLIP_SECONDS
    noise_sigma: float = NOISE_SIGMA
    freq_range: tuple = FREQ_RANGE
    amp_range: tuple = AMP_RANGE
    normalize: bool = True
    pca_k: int = EMB_DIM

    def validate(self):
        if self.images_per_class < 2 or self.clips_per_class < 2:
            raise UsageError("need at least 2 items per class")
        if not 0.0 < self.train_fraction < 1.0:
            raise UsageError("train_fraction must be in (0, 1)")
        return self


def _scale_to_norm(emb, target=EMB_NORM):
    mean_norm = float(np.linalg.norm(emb, axis=1).mean())
    return target / mean_norm if mean_norm > 1e-12 else 1.0


def _split_per_class(class_ids, train_fraction, rng):
    n = len(class_ids)
    train = []
    test = []
    for k in np.unique(class_ids):
        idx = np.nonzero(class_ids == k)[0]
        perm = idx[rng.permutation(len(idx))]
        n_train = int(round(train_fraction * len(idx)))
        n_train = min(max(n_train, 1), len(idx) - 1)
        train.extend(perm[:n_train].tolist())
        test.extend(perm[n_train:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


def build_audio_dataset(cfg: DataConfig) -> Dataset:
    cfg.validate()
    n_cls = len(CLASS_NAMES)
    clips, class_ids, attrs = [], [], []
    for k in range(n_cls):
        for i in range(cfg.clips_per_class):
            rng = derive(cfg.seed, "data", "audio", k, i)
            clip = generate_shape_audio(k, rng, sample_rate=cfg.sample_rate,
                                        duration=cfg.clip_seconds, noise_sigma=cfg.noise_sigma,
                                        freq_range=cfg.freq_range, amp_range=cfg.amp_range)
            clips.append(clip)
            class_ids.append(k)
            attrs.append(clip.attributes)
    feats = np.stack([audio_feature_vector(c) for c in clips])
    class_ids = np.array(class_ids, dtype=np.int64)

    pca = fit_pca(feats, cfg.pca_k)
    emb = apply_pca(pca, feats)
    train_idx, test_idx = _split_per_class(class_ids, cfg.train_fraction,
                                           derive(cfg.seed, "split", "audio"))
    norm_mean = emb[train_idx].mean(axis=0) if cfg.normalize else np.zeros(emb.shape[1])
    emb = emb - norm_mean
    norm_scale = _scale_to_norm(emb[train_idx]) if cfg.normalize else 1.0
    emb = emb * norm_scale

    items = [Item(item_id=f"audio-{CLASS_NAMES[k]}-{i:05d}", class_id=int(k),
                  attributes=attrs[i], embedding=emb[i])
             for i, k in enumerate(class_ids)]
    pipeline = AudioPipeline(pca=pca, norm_mean=norm_mean, sample_rate=cfg.sample_rate,
                             clip_seconds=cfg.clip_seconds, noise_sigma=cfg.noise_sigma,
                             norm_scale=norm_scale)
    return Dataset(kind="audio", class_names=CLASS_NAMES, items=items,
                   train_idx=train_idx, test_idx=test_idx, pipeline=pipeline,
                   meta={"seed": cfg.seed, "pca_rank_deficient": pca.rank_deficient})


def build_image_dataset(cfg: DataConfig) -> Dataset:
    cfg.validate()
    n_cls = len(CLASS_NAMES)
    feats, class_ids, attrs = [], [], []
    for k in range(n_cls):
        for i in range(cfg.images_per_class):
            rng = derive(cfg.seed, "data", "image", k, i)
            img = generate_shape_image(k, rng)
            feats.append(extract_image_features(img))
            class_ids.append(k)
            attrs.append(img.attributes)
    emb = np.stack(feats)
    class_ids = np.array(class_ids, dtype=np.int64)
    train_idx, test_idx = _split_per_class(class_ids, cfg.train_fraction,
                                           derive(cfg.seed, "split", "image"))
    norm_mean = emb[train_idx].mean(axis=0) if cfg.normalize else np.zeros(emb.shape[1])
    emb = emb - norm_mean
    norm_scale = _scale_to_norm(emb[train_idx]) if cfg.normalize else 1.0
    emb = emb * norm_scale

    items = [Item(item_id=f"image-{CLASS_NAMES[k]}-{i:05d}", class_id=int(k),
                  attributes=attrs[i], embedding=emb[i])
             for i, k in enumerate(class_ids)]
    return Dataset(kind="image", class_names=CLASS_NAMES, items=items,
                   train_idx=train_idx, test_idx=test_idx,
                   pipeline=ImagePipeline(norm_mean=norm_mean, norm_scale=norm_scale),
                   meta={"seed": cfg.seed})


def build_dataset(cfg: DataConfig):
    """Both sides of the world, aligned by class: (audio_ds, image_ds)."""
    return build_audio_dataset(cfg), build_image_dataset(cfg)


def normalize_embeddings(ds: Dataset) -> Dataset:
    """Center on the train-split mean and standardize the mean norm, in place."""
    emb = ds.embeddings()
    mean = emb[ds.train_idx].mean(axis=0)
    scale = _scale_to_norm(emb[ds.train_idx] - mean)
    for it in ds.items:
        it.embedding = (it.embedding - mean) * scale
    if isinstance(ds.pipeline, (AudioPipeline, ImagePipeline)):
        ds.pipeline.norm_mean = ds.pipeline.norm_mean + mean / ds.pipeline.norm_scale
        ds.pipeline.norm_scale = ds.pipeline.norm_scale * scale
    ds.invalidate_cache()
    return ds


# ------------------------------------------------------------ serialization

def save_embeddings(ds: Dataset, path) -> None:
    """One item per line: class<TAB>attributes-json<TAB>comma-floats (17 sig digits)."""
    lines = [f"# emcomm embeddings v1 kind={ds.kind} classes={','.join(ds.class_names)}"]
    for it in ds.items:
        vec = ",".join(f"{v:.17g}" for v in it.embedding)
        lines.append(f"{ds.class_names[it.class_id]}\t{json.dumps(it.attributes, sort_keys=True)}\t{vec}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_external_embeddings(path, class_names=CLASS_NAMES, expected_dim=EMB_DIM,
                             train_fraction=0.8, seed=0) -> Dataset:
    """Read the save_embeddings format; unknown labels or bad rows raise ParseError."""
    name_to_id = {n: i for i, n in enumerate(class_names)}
    items = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot open embeddings file {path}: {e}") from e
    with fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}: line {ln}: expected 3 tab-separated fields")
            label, attr_json, vec_text = parts
            if label not in name_to_id:
                raise ParseError(f"{path}: line {ln}: unknown class label {label!r}")
            try:
                attrs = json.loads(attr_json) if attr_json.strip() else {}
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}: line {ln}: bad attribute json: {e}") from e
            try:
                vec = np.array([float(v) for v in vec_text.split(",")])
            except ValueError as e:
                raise ParseError(f"{path}: line {ln}: bad embedding value: {e}") from e
            if vec.shape[0] != expected_dim:
                raise ParseError(f"{path}: line {ln}: dimension {vec.shape[0]} != {expected_dim}")
            items.append(Item(item_id=f"ext-{ln:06d}", class_id=name_to_id[label],
                              attributes=attrs, embedding=vec))
    if not items:
        raise ParseError(f"{path}: no embedding rows found")
    class_ids = np.array([it.class_id for it in items], dtype=np.int64)
    train_idx, test_idx = _split_per_class(class_ids, train_fraction,
                                           derive(seed, "split", "external"))
    return Dataset(kind="external", class_names=tuple(class_names), items=items,
                   train_idx=train_idx, test_idx=test_idx, pipeline=None,
                   meta={"source": str(path)})


def write_manifest(ds: Dataset, path) -> None:
    train = set(ds.train_idx.tolist())
    write_json(path, {
        "kind": ds.kind,
        "class_names": list(ds.class_names),
        "n_items": len(ds.items),
        "items": [
            {"item_id": it.item_id, "class": ds.class_names[it.class_id],
             "attributes": it.attributes,
             "split": "train" if i in train else "test"}
            for i, it in enumerate(ds.items)
        ],
    })
