"""Synthetic test surfaces, seeded Gaussian noise, quality metrics and PGM I/O."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

# Reconstructed test surfaces. Pixel (i, j) sits at x = i / (N - 1),
# y = j / (M - 1), so the four corners of the unit square are grid points.
PARABOLIC_CAPS = (
    # (cx, cy, radius, height)
    (0.0, 0.0, 1.0, 1.0),
    (1.0, 1.0, 1.0, 0.6),
)


class PgmError(ValueError):
    """Malformed or unsupported PGM data; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"noise sigma must be a finite value >= 0, got {self.sigma}")


@dataclass(frozen=True)
class MetricsReport:
    snr: float
    psnr: float
    mse: float

    def as_dict(self) -> dict:
        return {"snr": self.snr, "psnr": self.psnr, "mse": self.mse}


def unit_grid(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates ``x[i] = i/(n-1)`` (rows) and ``y[j] = j/(m-1)`` (columns)."""
    x = np.arange(n) / (n - 1)
    y = np.arange(m) / (m - 1)
    return np.meshgrid(x, y, indexing="ij")


def _check_size(n: int, m: int) -> None:
    if int(n) != n or int(m) != m or n < 8 or m < 8:
        raise ValueError(f"image size must be at least 8x8, got {n}x{m}")


def generate_saddle(n: int, m: int) -> np.ndarray:
    """Saddle ``((2x-1)(2y-1) + 1) / 2``; spans exactly [0, 1] at the corners."""
    _check_size(n, m)
    x, y = unit_grid(n, m)
    return ((2 * x - 1) * (2 * y - 1) + 1) / 2


def generate_parabolic(n: int, m: int) -> np.ndarray:
    """Two truncated paraboloid caps ``h * max(0, 1 - r^2/rho^2)``.

    The caps sit on the (0, 0) and (1, 1) corners. Each vanishes before the
    other's centre and their overlap stays below 0.86, so the maximum 1 is the
    (0, 0) corner and the minimum 0 is reached at the (1, 0) and (0, 1)
    corners: the range is exactly [0, 1] on every grid without rescaling.
    """
    _check_size(n, m)
    x, y = unit_grid(n, m)
    out = np.zeros((n, m))
    for cx, cy, rho, height in PARABOLIC_CAPS:
        r2 = (x - cx) ** 2 + (y - cy) ** 2
        out += height * np.maximum(0.0, 1.0 - r2 / rho**2)
    return out


GENERATORS = {"parabolic": generate_parabolic, "saddle": generate_saddle}


def gaussian_noise(shape, sigma: float, seed: int) -> np.ndarray:
    """I.i.d. ``N(0, sigma^2)`` samples from a portable, pinned stream.

    Philox-4x64 (numpy's counter-based bit generator, keyed by ``seed``)
    supplies raw 64-bit words. Consecutive pairs become uniforms
    ``((w >> 11) + 0.5) * 2**-53`` in (0, 1), and Box-Muller turns each pair
    ``(u1, u2)`` into ``r cos(t), r sin(t)`` with ``r = sqrt(-2 ln u1)``,
    ``t = 2 pi u2``. Samples fill the array in C order.
    """
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    bitgen = np.random.Philox(seed)
    raw = bitgen.random_raw(2 * pairs)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    t = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(t)
    z[1::2] = r * np.sin(t)
    return sigma * z[:count].reshape(shape)


def add_noise(u: np.ndarray, ns: NoiseSpec) -> np.ndarray:
    """Additive white Gaussian noise; the result is not clipped to [0, 1]."""
    u = np.asarray(u, dtype=float)
    if ns.sigma == 0:
        return u.copy()
    return u + gaussian_noise(u.shape, ns.sigma, ns.seed)


def _sq_err(u, u_star) -> float:
    u = np.asarray(u, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    if u.shape != u_star.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {u_star.shape}")
    return float(np.sum((u - u_star) ** 2))


def snr(u, u_star) -> float:
    """``10 log10(||u* - mean(u*)||^2 / ||u - u*||^2)``; ``inf`` for identical images."""
    err = _sq_err(u, u_star)
    u_star = np.asarray(u_star, dtype=float)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.sum((u_star - u_star.mean()) ** 2)) / err)


def psnr(u, u_star) -> float:
    """``10 log10(nx ny max(u*)^2 / ||u - u*||^2)``; the reference supplies the peak."""
    err = _sq_err(u, u_star)
    u_star = np.asarray(u_star, dtype=float)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(u_star.size * float(u_star.max()) ** 2 / err)


def metrics(u, u_star) -> MetricsReport:
    err = _sq_err(u, u_star)
    return MetricsReport(snr(u, u_star), psnr(u, u_star), err / np.asarray(u).size)


# -- PGM ---------------------------------------------------------------------

_WHITESPACE = b" \t\n\r\v\f"


def _header_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 2
    while len(tokens) < count:
        if pos >= len(data):
            raise PgmError("truncated header", pos)
        ch = data[pos : pos + 1]
        if ch in (b"",):
            raise PgmError("truncated header", pos)
        if ch[0] in _WHITESPACE:
            pos += 1
            continue
        if ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE and data[pos : pos + 1] != b"#":
            pos += 1
        word = data[start:pos]
        if not word.isdigit():
            raise PgmError(f"expected a decimal integer, got {word[:16]!r}", start)
        tokens.append(int(word))
    return tokens, pos


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode P2 or P5 bytes into an array scaled to [0, 1] by ``maxval``."""
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PgmError(f"unsupported magic {magic!r}", 0)
    (width, height, maxval), pos = _header_tokens(data, 3)
    if width < 1 or height < 1:
        raise PgmError(f"invalid dimensions {width}x{height}", pos)
    if not 1 <= maxval <= 65535:
        raise PgmError(f"maxval {maxval} out of range", pos)
    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        if pos >= len(data) or data[pos] not in _WHITESPACE:
            raise PgmError("missing whitespace after header", pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - pos < need:
            raise PgmError(f"truncated raster: need {need} bytes, have {len(data) - pos}", len(data))
        values = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    else:
        body = data[pos:]
        fields = body.split()
        if len(fields) < count:
            raise PgmError(f"truncated raster: need {count} samples, have {len(fields)}", len(data))
        try:
            values = np.array([int(f) for f in fields[:count]], dtype=np.float64)
        except ValueError as exc:
            raise PgmError(f"non-integer sample: {exc}", pos) from None
    if values.max(initial=0) > maxval:
        raise PgmError(f"sample exceeds maxval {maxval}", pos)
    return values.reshape(height, width) / maxval


def load_pgm(path) -> np.ndarray:
    """Read a PGM file; rows of the file become rows of the returned array."""
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def encode_pgm(u: np.ndarray, maxval: int = 255, binary: bool = True) -> bytes:
    """Clamp to [0, 1], scale by ``maxval`` and round half away from zero."""
    if maxval not in (255, 65535):
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    u = np.asarray(u, dtype=float)
    if u.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("image contains non-finite values")
    # values are non-negative after clamping, so floor(x + 0.5) rounds half away from zero
    q = np.floor(np.clip(u, 0.0, 1.0) * maxval + 0.5).astype(np.int64)
    height, width = u.shape
    header = f"P{5 if binary else 2}\n{width} {height}\n{maxval}\n".encode()
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        return header + q.astype(dtype).tobytes()
    lines = [" ".join(str(v) for v in row) for row in q]
    return header + ("\n".join(lines) + "\n").encode()


def save_pgm(path, u: np.ndarray, maxval: int = 255, binary: bool = True) -> None:
    data = encode_pgm(u, maxval, binary)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
