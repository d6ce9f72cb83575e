"""Image view of a load window: FFT features, fixed convolutions, resize, quantize."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fft import fft
from .tensor import ContractError

IMAGE_SIZE = 224
NEGATIVE_KINDS = ("patch_swap", "color_jitter")


@dataclass
class ConvStack:
    conv1d: np.ndarray  # (c1, c_in, k)
    conv2d_a: np.ndarray  # (c2, 1, k2, k2)
    conv2d_b: np.ndarray  # (1, c2, k2, k2)
    seed: int = 0
    trainable: bool = False


def make_conv_stack(n_channels: int, seed: int = 0, conv1d_channels: int = 8, kernel: int = 5,
                    conv2d_channels: int = 4, kernel2d: int = 3) -> ConvStack:
    """Seeded fixed kernels; input to the 1-D conv is series + FFT magnitudes."""
    rng = np.random.default_rng(seed)
    c_in = 2 * n_channels
    w1 = rng.normal(0, 1 / np.sqrt(c_in * kernel), (conv1d_channels, c_in, kernel))
    w2 = rng.normal(0, 1 / kernel2d, (conv2d_channels, 1, kernel2d, kernel2d))
    w3 = rng.normal(0, 1 / np.sqrt(conv2d_channels * kernel2d ** 2),
                    (1, conv2d_channels, kernel2d, kernel2d))
    return ConvStack(w1, w2, w3, seed)


def conv1d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """'Same' zero-padded cross-correlation: x (B, C, L), w (O, C, k) -> (B, O, L)."""
    k = w.shape[-1]
    left = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (left, k - 1 - left)))
    win = sliding_window_view(xp, k, axis=-1)  # (B, C, L, k)
    return np.einsum("bclk,ock->bol", win, w, optimize=True)


def conv2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """'Same' zero-padded cross-correlation: x (B, C, H, W), w (O, C, k, k)."""
    k = w.shape[-1]
    left = (k - 1) // 2
    pads = (left, k - 1 - left)
    xp = np.pad(x, ((0, 0), (0, 0), pads, pads))
    win = sliding_window_view(xp, (k, k), axis=(-2, -1))  # (B, C, H, W, k, k)
    return np.einsum("bchwij,ocij->bohw", win, w, optimize=True)


def near_square(n: int, min_side: int = 8) -> tuple[int, int] | None:
    """Factor ``n = a*b`` with ``a <= b`` and ``a`` as large as possible."""
    a = int(np.floor(np.sqrt(n)))
    while a >= 1 and n % a:
        a -= 1
    if a < min_side:
        return None
    return a, n // a


# --------------------------------------------------------------------------
# resize / quantize


def bilinear_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray]:
    """Align-corners sampling: lower neighbour index and fractional offset."""
    if src < 2:
        raise ContractError("bilinear resize needs at least 2 source samples per axis")
    if dst == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(dst) * (src - 1) / (dst - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), src - 2)
    return lo, pos - lo


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    lo, frac = bilinear_weights(src, dst)
    m = np.zeros((dst, src))
    rows = np.arange(dst)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def bilinear_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize the last two axes.  Each output pixel is the weighted sum of
    its four neighbours with weights ``(1-fy or fy) * (1-fx or fx)``."""
    img = np.asarray(img, dtype=np.float64)
    h0, w0 = img.shape[-2:]
    ry = _interp_matrix(h0, height)
    rx = _interp_matrix(w0, width)
    return ry @ img @ rx.T


def quantize(img: np.ndarray) -> np.ndarray:
    """Affine map of the image range onto [0, 255] with round-half-up.

    A constant image becomes all 128.  Leading axes beyond the last two are
    treated as independent images.
    """
    img = np.asarray(img, dtype=np.float64)
    lo = img.min(axis=(-2, -1), keepdims=True)
    hi = img.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    flat = span <= 1e-12 * np.maximum(1.0, np.abs(hi))
    scaled = np.floor((img - lo) / np.where(flat, 1.0, span) * 255.0 + 0.5)
    out = np.where(flat, 128.0, np.clip(scaled, 0, 255))
    return out.astype(np.uint8)


# --------------------------------------------------------------------------
# frames


@dataclass
class ImageStack:
    frames: np.ndarray  # (N, H, W) uint8
    is_negative: bool = False
    negative_kind: str = "none"
    params: dict = field(default_factory=dict)

    @property
    def group_size(self) -> int:
        return self.frames.shape[0]


def feature_maps(history: np.ndarray, conv: ConvStack, group_size: int) -> np.ndarray:
    """Pre-resize feature maps, one per sub-segment: (N, h0, w0)."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim == 1:
        history = history[:, None]
    l, d = history.shape
    if group_size < 1 or l % group_size:
        raise ContractError(f"group size {group_size} does not divide window length {l}")
    seg_len = l // group_size
    segs = history.reshape(group_size, seg_len, d).transpose(0, 2, 1)  # (N, d, L)
    mags = fft(segs).magnitudes
    feats = np.concatenate([segs, mags], axis=1)  # (N, 2d, L)
    if feats.shape[1] != conv.conv1d.shape[1]:
        raise ContractError("conv stack was built for a different channel count")
    maps = conv1d(feats, conv.conv1d)  # (N, c1, L)
    c1 = maps.shape[1]
    geom = near_square(c1 * seg_len) or (c1, seg_len)
    if min(geom) < 2:
        raise ContractError("feature map too small to resize")
    maps = maps.reshape(group_size, 1, *geom)
    maps = conv2d(maps, conv.conv2d_a)
    maps = conv2d(maps, conv.conv2d_b)
    return maps[:, 0]


def render_frames(history: np.ndarray, conv: ConvStack, group_size: int = 8,
                  size: int = IMAGE_SIZE) -> ImageStack:
    """Render a normalized history (l, d) into ``group_size`` grayscale frames."""
    maps = feature_maps(history, conv, group_size)
    return ImageStack(quantize(bilinear_resize(maps, size, size)))


# --------------------------------------------------------------------------
# negatives


def swap_quadrants(frame: np.ndarray, i: int, j: int) -> np.ndarray:
    h, w = frame.shape
    hh, hw = h // 2, w // 2
    corners = [(0, 0), (0, hw), (hh, 0), (hh, hw)]
    out = frame.copy()
    (ai, aj), (bi, bj) = corners[i], corners[j]
    out[ai:ai + hh, aj:aj + hw] = frame[bi:bi + hh, bj:bj + hw]
    out[bi:bi + hh, bj:bj + hw] = frame[ai:ai + hh, aj:aj + hw]
    return out


def jitter_frames(frames: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    """Scale contrast about the frame mean, then scale brightness; clamp."""
    x = frames.astype(np.float64)
    mu = x.mean(axis=(-2, -1), keepdims=True)
    y = ((x - mu) * contrast + mu) * brightness
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def make_image_negative(stack: ImageStack, kind: str, rng: np.random.Generator,
                        max_magnitude: float = 0.75) -> ImageStack:
    if stack.is_negative:
        raise ContractError("negatives are built from positive stacks")
    if kind == "patch_swap":
        frames = np.empty_like(stack.frames)
        pairs = []
        for n, frame in enumerate(stack.frames):
            i, j = rng.choice(4, size=2, replace=False)
            frames[n] = swap_quadrants(frame, int(i), int(j))
            pairs.append((int(i), int(j)))
        return ImageStack(frames, True, kind, {"pairs": pairs})
    if kind == "color_jitter":
        mb, mc = rng.uniform(0.0, max_magnitude, size=2)
        sb, sc = rng.choice([-1.0, 1.0], size=2)
        brightness, contrast = 1.0 + sb * mb, 1.0 + sc * mc
        return ImageStack(jitter_frames(stack.frames, brightness, contrast), True, kind,
                          {"brightness": brightness, "contrast": contrast})
    raise ContractError(f"unknown image negative kind {kind!r}")


def write_pgm(frame: np.ndarray, path) -> None:
    frame = np.asarray(frame, dtype=np.uint8)
    h, w = frame.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(frame.tobytes())


def read_pgm(path) -> np.ndarray:
    magic, dims, _maxval, payload = Path(path).read_bytes().split(b"\n", 3)
    if magic != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(payload, dtype=np.uint8, count=w * h).reshape(h, w)
