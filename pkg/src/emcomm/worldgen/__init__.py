"""Synthetic world generation: shapes, audio, features, datasets."""

from .audio import AMP_RANGE, AudioClip, CLIP_SECONDS, FREQ_RANGE, NOISE_SIGMA, SAMPLE_RATE, generate_shape_audio
from .dataset import (
    AudioPipeline,
    DataConfig,
    Dataset,
    ImagePipeline,
    Item,
    build_audio_dataset,
    build_dataset,
    build_image_dataset,
    load_external_embeddings,
    normalize_embeddings,
    save_embeddings,
    write_manifest,
)
from .features import audio_feature_vector, band_edges, extract_audio_features, extract_image_features
from .pca import PCAModel, apply_pca, fit_pca
from .shapes import CANVAS, CLASS_NAMES, ShapeImage, generate_shape_image, shape_mask

__all__ = [
    "AMP_RANGE", "AudioClip", "CLIP_SECONDS", "FREQ_RANGE", "NOISE_SIGMA", "SAMPLE_RATE",
    "generate_shape_audio", "AudioPipeline", "DataConfig", "Dataset", "ImagePipeline", "Item",
    "build_audio_dataset", "build_dataset", "build_image_dataset", "load_external_embeddings",
    "normalize_embeddings", "save_embeddings", "write_manifest", "audio_feature_vector",
    "band_edges", "extract_audio_features", "extract_image_features", "PCAModel", "apply_pca",
    "fit_pca", "CANVAS", "CLASS_NAMES", "ShapeImage", "generate_shape_image", "shape_mask",
]
