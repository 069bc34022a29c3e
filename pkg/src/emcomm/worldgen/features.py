"""Handcrafted feature extractors standing in for pretrained encoders.

Audio: per 0.96 s frame, 128 log energies over geometrically spaced
frequency bands of the Hann-windowed spectrum, referenced to the frame's
peak band and floored 6 log units below it. Peak referencing makes the
features invariant to loudness and to the noise floor, so only spectral
shape survives; a silent frame sits entirely at the floor.

Images: a 128-d descriptor, exactly [64 whole-canvas color histogram
bins | 49 foreground occupancy cells | 15 shape statistics]. Foreground
is any non-white pixel, so two solid-color canvases differ only in the
histogram block. Blocks carry fixed scale constants chosen so Euclidean
distance weights stable shape cues (fill, radius profile, perimeter,
moment invariants) over color and position nuisance.
"""

from __future__ import annotations

import numpy as np

from ..errors import UsageError

N_BANDS = 128
FRAME_SECONDS = 0.96
BAND_LO = 100.0
LOG_FLOOR = -6.0

_GRID_WEIGHT = 0.5
# area, cx, cy, fill, r_mean, r_std, anisotropy, perimeter, hu1..hu7
_STATS_SCALE = np.array([8.0, 2.0, 2.0, 4.0, 8.0, 8.0, 4.0, 4.0,
                         1.0, 1.0, 0.6, 0.6, 0.4, 0.4, 0.4])


def band_edges(sample_rate, n_bands=N_BANDS):
    return np.geomspace(BAND_LO, sample_rate / 2.0, n_bands + 1)


def extract_audio_features(clip) -> np.ndarray:
    """(n_frames, 128) log band energies for consecutive non-overlapping frames."""
    x = np.asarray(clip.samples, dtype=np.float64)
    sr = clip.sample_rate
    frame_len = int(round(FRAME_SECONDS * sr))
    if x.ndim != 1 or x.size < frame_len:
        raise UsageError("clip must be a 1-d signal at least one frame long")
    n_frames = x.size // frame_len
    window = np.hanning(frame_len)
    freqs = np.fft.rfftfreq(frame_len, d=1.0 / sr)
    edges = band_edges(sr)
    keep = (freqs >= edges[0]) & (freqs <= edges[-1])
    band_of = np.clip(np.searchsorted(edges, freqs[keep], side="right") - 1, 0, N_BANDS - 1)

    out = np.empty((n_frames, N_BANDS))
    for i in range(n_frames):
        frame = x[i * frame_len:(i + 1) * frame_len]
        spec = np.abs(np.fft.rfft(frame * window)) ** 2
        energy = np.bincount(band_of, weights=spec[keep], minlength=N_BANDS)
        total = energy.sum()
        if total <= 1e-12:
            out[i] = LOG_FLOOR
            continue
        log_e = np.log(energy + total * 1e-12)
        out[i] = np.maximum(log_e - log_e.max(), LOG_FLOOR)
    return out


def audio_feature_vector(clip) -> np.ndarray:
    """Frames concatenated into one row (the PCA input)."""
    return extract_audio_features(clip).reshape(-1)


# ----------------------------------------------------------------- images

def _hu_moments(eta):
    e20, e11, e02, e30, e21, e12, e03 = eta
    a = e30 + e12
    b = e21 + e03
    h1 = e20 + e02
    h2 = (e20 - e02) ** 2 + 4 * e11 ** 2
    h3 = (e30 - 3 * e12) ** 2 + (3 * e21 - e03) ** 2
    h4 = a ** 2 + b ** 2
    h5 = (e30 - 3 * e12) * a * (a ** 2 - 3 * b ** 2) + (3 * e21 - e03) * b * (3 * a ** 2 - b ** 2)
    h6 = (e20 - e02) * (a ** 2 - b ** 2) + 4 * e11 * a * b
    h7 = (3 * e21 - e03) * a * (a ** 2 - 3 * b ** 2) - (e30 - 3 * e12) * b * (3 * a ** 2 - b ** 2)
    return np.array([h1, h2, h3, h4, h5, h6, h7])


def _signed_log(v):
    return np.sign(v) * np.log10(1.0 + np.abs(v) * 1e7)


def extract_image_features(img) -> np.ndarray:
    """128-d descriptor; see module docstring for the block layout."""
    px = np.asarray(img.pixels)
    if px.ndim != 3 or px.shape[2] != 3:
        raise UsageError("image must be (h, w, 3)")
    h, w = px.shape[:2]
    n_px = h * w

    # 64 color histogram bins over every pixel, 4 levels per channel
    q = (px.astype(np.int64) >> 6)
    idx = (q[:, :, 0] * 16 + q[:, :, 1] * 4 + q[:, :, 2]).reshape(-1)
    hist = np.bincount(idx, minlength=64) / n_px

    # 7x7 foreground occupancy grid
    fg = np.any(px != 255, axis=2)
    edges_y = np.linspace(0, h, 8).astype(int)
    edges_x = np.linspace(0, w, 8).astype(int)
    grid = np.empty(49)
    k = 0
    for i in range(7):
        for j in range(7):
            block = fg[edges_y[i]:edges_y[i + 1], edges_x[j]:edges_x[j + 1]]
            grid[k] = block.mean()
            k += 1

    stats = np.zeros(15)
    area = fg.sum()
    if area > 0:
        ys, xs = np.nonzero(fg)
        xs = xs.astype(np.float64)
        ys = ys.astype(np.float64)
        cx, cy = xs.mean(), ys.mean()
        dx, dy = xs - cx, ys - cy

        def mu(p, qq):
            return np.sum(dx ** p * dy ** qq)

        m00 = float(area)

        def eta(p, qq):
            return mu(p, qq) / m00 ** ((p + qq) / 2.0 + 1.0)

        e20, e11, e02 = eta(2, 0), eta(1, 1), eta(0, 2)
        e30, e21, e12, e03 = eta(3, 0), eta(2, 1), eta(1, 2), eta(0, 3)
        hu = _signed_log(_hu_moments((e20, e11, e02, e30, e21, e12, e03)))

        r = np.sqrt(dx * dx + dy * dy)
        r_max = max(r.max(), 0.5)
        fill = area / (np.pi * r_max * r_max)
        aniso = np.sqrt((e20 - e02) ** 2 + 4 * e11 ** 2) / (e20 + e02 + 1e-12)

        shifted = np.zeros_like(fg)
        boundary = np.zeros_like(fg)
        for axis, step in ((0, 1), (0, -1), (1, 1), (1, -1)):
            shifted[:] = False
            if axis == 0 and step == 1:
                shifted[1:, :] = fg[:-1, :]
            elif axis == 0:
                shifted[:-1, :] = fg[1:, :]
            elif step == 1:
                shifted[:, 1:] = fg[:, :-1]
            else:
                shifted[:, :-1] = fg[:, 1:]
            boundary |= fg & ~shifted
        perim = boundary.sum() / (2.0 * np.sqrt(np.pi * area))

        stats[0] = area / n_px
        stats[1] = cx / w
        stats[2] = cy / h
        stats[3] = fill
        stats[4] = r.mean() / r_max
        stats[5] = r.std() / r_max
        stats[6] = aniso
        stats[7] = perim
        stats[8:15] = hu
    return np.concatenate([hist, grid * _GRID_WEIGHT, stats * _STATS_SCALE])
