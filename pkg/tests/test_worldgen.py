"""Synthetic world: shapes, audio, features, PCA, dataset pipeline."""

import numpy as np
import pytest

from emcomm.errors import ParseError, UsageError
from emcomm.rng import derive
from emcomm.worldgen import (
    DataConfig,
    apply_pca,
    audio_feature_vector,
    build_dataset,
    extract_audio_features,
    extract_image_features,
    fit_pca,
    generate_shape_audio,
    generate_shape_image,
    load_external_embeddings,
    normalize_embeddings,
    save_embeddings,
)
from emcomm.worldgen.audio import AudioClip, SAMPLE_RATE
from emcomm.worldgen.dataset import EMB_NORM
from emcomm.worldgen.features import FRAME_SECONDS, band_edges
from emcomm.worldgen.shapes import CANVAS, CLASS_NAMES, SIZE_RANGE


# ----------------------------------------------------------------- shapes

def test_shape_image_determinism_and_bounds():
    a = generate_shape_image(2, derive(5, "img"))
    b = generate_shape_image(2, derive(5, "img"))
    assert np.array_equal(a.pixels, b.pixels)
    for i in range(200):
        img = generate_shape_image(i % 6, derive(6, "img", i))
        size = img.attributes["size"]
        cx, cy = img.attributes["center"]
        assert SIZE_RANGE[0] <= size <= SIZE_RANGE[1]
        r = size / 2.0
        assert r <= cx <= CANVAS - 1 - r and r <= cy <= CANVAS - 1 - r
        # the drawn foreground stays inside the canvas by construction:
        # border pixels remain background white
        border = np.concatenate([img.pixels[0].reshape(-1, 3),
                                 img.pixels[-1].reshape(-1, 3),
                                 img.pixels[:, 0].reshape(-1, 3),
                                 img.pixels[:, -1].reshape(-1, 3)])
        assert np.all(border == 255)


def test_shape_image_invalid_class():
    with pytest.raises(UsageError):
        generate_shape_image(6, derive(0, "img"))
    with pytest.raises(UsageError):
        generate_shape_image(-1, derive(0, "img"))


# ------------------------------------------------------------------ audio

def test_audio_attribute_ranges():
    for i in range(300):
        clip = generate_shape_audio(i % 6, derive(7, "aud", i))
        assert 200.0 <= clip.attributes["frequency"] <= 800.0
        assert 0.3 <= clip.attributes["amplitude"] <= 0.9


def test_audio_band_constraint_dominant_peak():
    for i in range(12):
        clip = generate_shape_audio(i % 6, derive(8, "aud", i),
                                    freq_range=(400.0, 500.0))
        assert 400.0 <= clip.attributes["frequency"] <= 500.0
        spectrum = np.abs(np.fft.rfft(clip.samples))
        freqs = np.fft.rfftfreq(clip.samples.size, d=1.0 / clip.sample_rate)
        peak = freqs[np.argmax(spectrum)]
        assert 395.0 <= peak <= 505.0


def test_audio_fixed_amplitude_no_noise():
    clip = generate_shape_audio(3, derive(9, "aud"), noise_sigma=0.0, amplitude=0.6)
    peak = np.max(np.abs(clip.samples))
    assert abs(peak - 0.6) / 0.6 < 0.01


def test_audio_empty_band_rejected():
    with pytest.raises(UsageError):
        generate_shape_audio(0, derive(0, "aud"), freq_range=(500.0, 400.0))


# --------------------------------------------------------------- features

def test_pure_tone_concentrates_energy():
    sr = SAMPLE_RATE
    n = int(FRAME_SECONDS * sr)
    t = np.arange(n) / sr
    clip = AudioClip(samples=0.5 * np.sin(2 * np.pi * 440.0 * t),
                     sample_rate=sr, class_id=0)
    feats = extract_audio_features(clip)
    assert feats.shape == (1, 128)
    edges = band_edges(sr)
    tone_band = int(np.searchsorted(edges, 440.0, side="right") - 1)
    energies = np.exp(feats[0])
    far = [b for b in range(128) if abs(b - tone_band) >= 2]
    assert energies[tone_band] >= 5.0 * energies[far].max()


def test_silence_hits_log_floor():
    sr = SAMPLE_RATE
    clip = AudioClip(samples=np.zeros(int(FRAME_SECONDS * sr)),
                     sample_rate=sr, class_id=0)
    feats = extract_audio_features(clip)
    assert np.allclose(feats, feats.min())


def test_short_clip_rejected():
    clip = AudioClip(samples=np.zeros(100), sample_rate=SAMPLE_RATE, class_id=0)
    with pytest.raises(UsageError):
        extract_audio_features(clip)


def test_frame_shift_gives_same_frame_multiset():
    rng = derive(10, "frames")
    sr = SAMPLE_RATE
    frame = int(FRAME_SECONDS * sr)
    signal = rng.normal(size=2 * frame)
    a = AudioClip(samples=signal, sample_rate=sr, class_id=0)
    b = AudioClip(samples=np.roll(signal, frame), sample_rate=sr, class_id=0)
    fa = extract_audio_features(a)
    fb = extract_audio_features(b)
    assert np.allclose(np.sort(fa, axis=0), np.sort(fb, axis=0))


def test_image_descriptor_color_only_difference():
    red = np.zeros((32, 32, 3), dtype=np.uint8)
    red[:, :, 0] = 255
    blue = np.zeros((32, 32, 3), dtype=np.uint8)
    blue[:, :, 2] = 255
    from emcomm.worldgen.shapes import ShapeImage
    fr = extract_image_features(ShapeImage(pixels=red, class_id=0))
    fb = extract_image_features(ShapeImage(pixels=blue, class_id=0))
    assert fr.shape == (128,)
    diff = np.nonzero(fr != fb)[0]
    assert diff.size > 0 and np.all(diff < 64)  # histogram block only


# -------------------------------------------------------------------- PCA

def test_pca_identity_reconstruction():
    rng = derive(11, "pca")
    x = rng.normal(size=(40, 6))
    x = x - x.mean(axis=0)
    model = fit_pca(x, 6)
    proj = apply_pca(model, x)
    recon = proj @ model.components + model.mean
    assert np.max(np.abs(recon - x)) < 1e-8


def test_pca_line_degenerate():
    t = np.linspace(-1, 1, 30)
    x = np.stack([t, t], axis=1)
    model = fit_pca(x, 2)
    first = model.components[0]
    assert np.allclose(np.abs(first), 1 / np.sqrt(2), atol=1e-9)
    assert first[0] > 0 and first[1] > 0
    assert model.explained_variance[1] < 1e-12


def test_pca_orthonormal_and_sorted():
    rng = derive(12, "pca")
    x = rng.normal(size=(200, 256))
    model = fit_pca(x, 128)
    gram = model.components @ model.components.T
    assert np.max(np.abs(gram - np.eye(128))) < 1e-8
    ev = model.explained_variance
    assert np.all(np.diff(ev) <= 1e-12)
    assert not model.rank_deficient


def test_pca_rank_deficient_padding():
    rng = derive(13, "pca")
    base = rng.normal(size=(30, 2))
    x = np.concatenate([base, base @ rng.normal(size=(2, 3))], axis=1)
    model = fit_pca(x, 4)
    assert model.rank_deficient
    assert np.allclose(model.components[-1], 0.0) or model.explained_variance[-1] < 1e-18


def test_pca_needs_more_rows_than_k():
    with pytest.raises(UsageError):
        fit_pca(np.zeros((5, 8)), 5)


# ---------------------------------------------------------------- dataset

def test_dataset_counts_and_split(tiny_world):
    audio_ds, image_ds = tiny_world
    assert len(audio_ds.items) == 6 * 24
    assert len(image_ds.items) == 6 * 24
    assert audio_ds.class_names == image_ds.class_names == CLASS_NAMES
    for ds in tiny_world:
        train = set(ds.train_idx.tolist())
        test = set(ds.test_idx.tolist())
        assert not train & test
        assert len(train) + len(test) == len(ds.items)
        for k in range(6):
            n_tr = len(ds.class_indices(k, "train"))
            assert n_tr == round(0.8 * 24)
        assert ds.embeddings().shape[1] == 128


def test_dataset_normalization(tiny_world):
    for ds in tiny_world:
        emb = ds.embeddings()[ds.train_idx]
        assert np.max(np.abs(emb.mean(axis=0))) < 1e-9
        mean_norm = np.linalg.norm(emb, axis=1).mean()
        assert abs(mean_norm - EMB_NORM) < 1e-9


def test_normalize_idempotent(tiny_world):
    audio_ds, _ = tiny_world
    before = audio_ds.embeddings().copy()
    normalize_embeddings(audio_ds)
    assert np.max(np.abs(audio_ds.embeddings() - before)) < 1e-9
    # restore cache state for other tests (values unchanged)
    audio_ds.invalidate_cache()


def test_dataset_determinism():
    cfg = DataConfig(images_per_class=4, clips_per_class=4, seed=21, pca_k=8)
    a_audio, a_image = build_dataset(cfg)
    b_audio, b_image = build_dataset(cfg)
    assert np.array_equal(a_audio.embeddings(), b_audio.embeddings())
    assert np.array_equal(a_image.embeddings(), b_image.embeddings())
    assert np.array_equal(a_audio.train_idx, b_audio.train_idx)


def test_dataset_rejects_tiny_counts():
    with pytest.raises(UsageError):
        build_dataset(DataConfig(images_per_class=1, clips_per_class=4))


def test_pipeline_embeds_like_builder(tiny_world):
    # the stored pipeline reproduces a builder embedding from the raw clip
    audio_ds, _ = tiny_world
    cfg = DataConfig(images_per_class=24, clips_per_class=24, seed=0)
    clip = generate_shape_audio(2, derive(cfg.seed, "data", "audio", 2, 3),
                                sample_rate=cfg.sample_rate,
                                duration=cfg.clip_seconds,
                                noise_sigma=cfg.noise_sigma,
                                freq_range=cfg.freq_range, amp_range=cfg.amp_range)
    idx = audio_ds.class_indices(2)[3]
    emb = audio_ds.pipeline.embed_clip(clip)
    assert np.max(np.abs(emb - audio_ds.items[idx].embedding)) < 1e-9


def test_nearest_class_mean_on_held_out_images():
    audio_ds, image_ds = build_dataset(
        DataConfig(images_per_class=60, clips_per_class=30, seed=3))
    for ds in (image_ds, audio_ds):
        emb = ds.embeddings()
        means = np.stack([emb[ds.class_indices(k, "train")].mean(axis=0)
                          for k in range(6)])
        test = ds.test_idx
        d = ((emb[test][:, None, :] - means[None]) ** 2).sum(axis=2)
        pred = d.argmin(axis=1)
        acc = (pred == ds.class_ids()[test]).mean()
        assert acc >= 0.8, f"{ds.kind}: {acc}"


# ------------------------------------------------------- external formats

def test_embeddings_round_trip(tmp_path, tiny_audio):
    path = tmp_path / "emb.tsv"
    save_embeddings(tiny_audio, path)
    loaded = load_external_embeddings(path)
    assert len(loaded.items) == len(tiny_audio.items)
    orig = tiny_audio.embeddings()
    back = loaded.embeddings()
    assert np.max(np.abs(orig - back)) < 1e-12
    assert [it.class_id for it in loaded.items] == [it.class_id for it in tiny_audio.items]


def test_external_embeddings_errors(tmp_path):
    bad_dim = tmp_path / "bad_dim.tsv"
    vec = ",".join(["0.0"] * 127)
    bad_dim.write_text(f"circle\t{{}}\t{vec}\n")
    with pytest.raises(ParseError, match="line 1"):
        load_external_embeddings(bad_dim)

    bad_label = tmp_path / "bad_label.tsv"
    vec = ",".join(["0.0"] * 128)
    bad_label.write_text(f"blob\t{{}}\t{vec}\n")
    with pytest.raises(ParseError, match="blob"):
        load_external_embeddings(bad_label)

    with pytest.raises(UsageError):
        load_external_embeddings(tmp_path / "missing.tsv")


def test_external_small_file_two_classes(tmp_path):
    path = tmp_path / "two.tsv"
    vec = ",".join(["1.0"] * 128)
    rows = [f"{name}\t{{}}\t{vec}" for name in ["circle", "square"] * 6]
    path.write_text("\n".join(rows) + "\n")
    ds = load_external_embeddings(path)
    assert len(ds.items) == 12
    assert sorted({it.class_id for it in ds.items}) == [0, 1]
