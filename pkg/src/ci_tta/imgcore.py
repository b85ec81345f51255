"""Dense image tensors and the sampling/convolution primitives behind all warps.

Images are numpy float64 arrays of shape (H, W, C), row-major (y, x, c). Raw
images live in [0, 1]; classifier normalization happens downstream, so nothing
here assumes a bounded range beyond finiteness. Boundary handling for both
convolution and sampling is clamp-to-edge: no synthetic black borders are ever
introduced.

Two file formats are supported:

* IMGF — magic bytes ``IMGF``, three unsigned 32-bit little-endian integers
  H, W, C, then H*W*C IEEE-754 float32 little-endian values, row-major.
* binary PPM (``P6``, maxval 255), mapped to [0, 1] by v/255.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CorruptImageError, InvalidArgumentError

IMGF_MAGIC = b"IMGF"


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check (H, W, C) shape and finiteness, returning a float64 view/copy."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise InvalidArgumentError(f"image must have shape (H, W, C), got {arr.shape}")
    if min(arr.shape) < 1:
        raise InvalidArgumentError(f"image dimensions must be >= 1, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidArgumentError("image contains non-finite values")
    return arr


@dataclass(frozen=True)
class Kernel1D:
    """Normalized, symmetric, odd-length convolution kernel."""

    taps: np.ndarray

    def __post_init__(self) -> None:
        taps = np.asarray(self.taps, dtype=np.float64)
        object.__setattr__(self, "taps", taps)
        if taps.ndim != 1 or taps.size % 2 == 0 or taps.size < 1:
            raise InvalidArgumentError(f"kernel must have odd length >= 1, got {taps.shape}")
        if (taps < 0).any():
            raise InvalidArgumentError("kernel taps must be nonnegative")
        if abs(float(taps.sum()) - 1.0) > 1e-9:
            raise InvalidArgumentError("kernel taps must sum to 1")
        if np.abs(taps - taps[::-1]).max() > 1e-12:
            raise InvalidArgumentError("kernel taps must be symmetric")

    @property
    def radius(self) -> int:
        return self.taps.size // 2


def gaussian_kernel(kappa: int, blur_std: float) -> Kernel1D:
    """Sampled Gaussian of ``kappa`` taps (odd), normalized to sum 1.

    tap[i] is proportional to exp(-(i - radius)^2 / (2 * blur_std^2)).
    """
    if kappa < 1 or kappa % 2 == 0:
        raise InvalidArgumentError(f"kernel size must be odd and >= 1, got {kappa}")
    if not blur_std > 0:
        raise InvalidArgumentError(f"blur_std must be > 0, got {blur_std}")
    radius = (kappa - 1) // 2
    offsets = np.arange(kappa, dtype=np.float64) - radius
    taps = np.exp(-(offsets**2) / (2.0 * blur_std * blur_std))
    return Kernel1D(taps / taps.sum())


def _convolve_rows(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    radius = taps.size // 2
    if radius == 0:
        return plane * taps[0]
    padded = np.pad(plane, ((0, 0), (radius, radius)), mode="edge")
    return sliding_window_view(padded, taps.size, axis=1) @ taps


def separable_blur(plane: np.ndarray, kernel: Kernel1D) -> np.ndarray:
    """Convolve a 2-D plane with ``kernel`` along x then y, clamping at edges.

    The kernel is symmetric, so correlation and convolution coincide.
    """
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise InvalidArgumentError(f"plane must be 2-D and nonempty, got {arr.shape}")
    out = _convolve_rows(arr, kernel.taps)
    return np.ascontiguousarray(_convolve_rows(out.T, kernel.taps).T)


def sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinearly sample an (H, W, C) image at float coordinates.

    Coordinates outside [0, W-1] x [0, H-1] are clamped to the border.
    ``xs`` and ``ys`` may have any common shape S; the result has shape S + (C,).
    Sampling at exact lattice points reproduces stored pixels bit for bit.
    """
    h, w = img.shape[0], img.shape[1]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise InvalidArgumentError("sample coordinates must be finite")
    xs = np.clip(xs, 0.0, float(w - 1))
    ys = np.clip(ys, 0.0, float(h - 1))
    x0 = np.minimum(np.floor(xs), max(w - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(ys), max(h - 2, 0)).astype(np.int64)
    tx = (xs - x0)[..., None]
    ty = (ys - y0)[..., None]
    # x0 <= w-2 and y0 <= h-2 after clamping, so neighbor offsets are constant
    step_x = 1 if w > 1 else 0
    step_y = w if h > 1 else 0
    flat = np.ascontiguousarray(img).reshape(-1, img.shape[2])
    base = y0 * w + x0
    top = (1.0 - tx) * flat[base] + tx * flat[base + step_x]
    bot = (1.0 - tx) * flat[base + step_y] + tx * flat[base + step_y + step_x]
    return (1.0 - ty) * top + ty * bot


def bilinear_sample(img: np.ndarray, x: float, y: float, c: int) -> float:
    """Sample one channel of an image at a single (x, y) point."""
    arr = validate_image(img)
    if not 0 <= c < arr.shape[2]:
        raise InvalidArgumentError(f"channel {c} out of range for C={arr.shape[2]}")
    return float(sample_bilinear(arr, np.float64(x), np.float64(y))[c])


def control_pixel_positions(n_points: int, length: int) -> np.ndarray:
    """Pixel positions of ``n_points`` control points spanning ``length`` pixels.

    Even spacing from 0 to length-1 inclusive, rounded to the nearest pixel so
    every control point sits exactly on the lattice. Requires length >= n_points
    so the rounded positions stay strictly increasing.
    """
    if n_points < 2:
        raise InvalidArgumentError(f"need at least 2 control points, got {n_points}")
    if length < n_points:
        raise InvalidArgumentError(
            f"cannot pin {n_points} control points in a {length}-pixel span"
        )
    return np.round(np.linspace(0.0, length - 1.0, n_points)).astype(np.int64)


def _catmull_rom_weights(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    t2 = t * t
    t3 = t2 * t
    w0 = 0.5 * (-t3 + 2.0 * t2 - t)
    w1 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w2 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w3 = 0.5 * (t3 - t2)
    return w0, w1, w2, w3


def _upsample_axis(values: np.ndarray, n_out: int) -> np.ndarray:
    """Catmull-Rom upsample along axis 0: (G, M) -> (n_out, M)."""
    g = values.shape[0]
    positions = control_pixel_positions(g, n_out)
    coords = np.interp(np.arange(n_out, dtype=np.float64), positions, np.arange(g, dtype=np.float64))
    j0 = np.minimum(np.floor(coords).astype(np.int64), g - 2)
    t = coords - j0
    w0, w1, w2, w3 = _catmull_rom_weights(t)
    jm1 = np.maximum(j0 - 1, 0)
    j1 = j0 + 1
    j2 = np.minimum(j0 + 2, g - 1)
    return (
        w0[:, None] * values[jm1]
        + w1[:, None] * values[j0]
        + w2[:, None] * values[j1]
        + w3[:, None] * values[j2]
    )


def bicubic_upsample_grid(control: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Upsample a control grid to a dense (out_h, out_w) plane.

    Control points are pinned at evenly spaced pixel positions spanning the
    plane including both borders (see ``control_pixel_positions``), and the
    dense plane is the separable Catmull-Rom (a = -0.5) interpolant of the
    control values, with edge rows/columns replicated for the cubic stencil.
    The interpolant passes through every control value exactly.
    """
    ctrl = np.asarray(control, dtype=np.float64)
    if ctrl.ndim != 2 or ctrl.shape[0] < 2 or ctrl.shape[1] < 2:
        raise InvalidArgumentError(f"control grid must be at least 2x2, got {ctrl.shape}")
    if not np.isfinite(ctrl).all():
        raise InvalidArgumentError("control grid contains non-finite values")
    wide = _upsample_axis(ctrl.T, out_w).T  # (G_y, out_w)
    return _upsample_axis(wide, out_h)  # (out_h, out_w)


def write_imgf(path: str | Path, img: np.ndarray) -> None:
    """Write an (H, W, C) array as an IMGF file (float32 payload)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise InvalidArgumentError(f"expected (H, W, C) array, got {arr.shape}")
    h, w, c = arr.shape
    payload = arr.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(IMGF_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(payload)


def _parse_imgf(data: bytes, origin: str) -> np.ndarray:
    if len(data) < 16:
        raise CorruptImageError(f"{origin}: truncated IMGF header")
    h, w, c = struct.unpack("<III", data[4:16])
    if min(h, w, c) < 1:
        raise CorruptImageError(f"{origin}: bad IMGF dimensions {h}x{w}x{c}")
    expected = 16 + 4 * h * w * c
    if len(data) != expected:
        raise CorruptImageError(f"{origin}: IMGF payload is {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f4", offset=16).astype(np.float64).reshape(h, w, c)
    if not np.isfinite(arr).all():
        raise CorruptImageError(f"{origin}: IMGF payload contains non-finite values")
    return arr


def _parse_ppm(data: bytes, origin: str) -> np.ndarray:
    pos = 2  # past "P6"
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise CorruptImageError(f"{origin}: bad PPM header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise CorruptImageError(f"{origin}: only maxval 255 PPM is supported, got {maxval}")
    if min(h, w) < 1:
        raise CorruptImageError(f"{origin}: bad PPM dimensions {w}x{h}")
    expected = 3 * h * w
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise CorruptImageError(f"{origin}: PPM payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64).reshape(h, w, 3)
    return arr / 255.0


def read_image(path: str | Path) -> np.ndarray:
    """Read an IMGF or binary PPM (P6) file into an (H, W, C) float64 array."""
    data = Path(path).read_bytes()
    if data[:4] == IMGF_MAGIC:
        return _parse_imgf(data, str(path))
    if data[:2] == b"P6":
        return _parse_ppm(data, str(path))
    raise CorruptImageError(f"{path}: unrecognized image format")
