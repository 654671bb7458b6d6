"""Image intake: file loading, resizing, tiling, and patch embedding.

An image is a float64 array [H, W, C] with values in [0, 1] and C in
{1, 3}. Two file formats are read natively so the package needs no image
library:

* binary PPM (magic ``P6``, maxval 255), bytes scaled to [0, 1],
* a raw dump: one ASCII header line ``height width channels`` followed by
  height*width*channels little-endian float32 values in C-order.

A bundle is the model-facing unit: either the low-resolution view alone
(1 patch) or the low-resolution view plus a tiles x tiles grid cut from a
higher-resolution resize of the same image (1 + tiles^2 patches). Every
patch has the same square resolution, so each embeds to the same token
count and the positional table is shared across patches.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .tensorops import matmul


def _validate_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeError(f"image must be [H, W, C] with C in {{1, 3}}, got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"image has empty spatial extent: {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ShapeError("image contains non-finite values")
    return img


# ---------------------------------------------------------------------------
# file formats

def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6, 8-bit). Returns [H, W, 3] in [0, 1]."""
    data = Path(path).read_bytes()
    # header is ASCII tokens (magic, width, height, maxval) with '#' comments
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise ConfigError(f"{path}: truncated PPM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise ConfigError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise ConfigError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise ConfigError(f"{path}: raster holds {len(raster)} bytes, expected {need}")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return img.astype(np.float64) / 255.0


def write_ppm(path, img) -> None:
    img = _validate_image(img)
    if img.shape[2] != 3:
        raise ShapeError("PPM output requires 3 channels")
    raster = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.tobytes())


def read_raw(path) -> np.ndarray:
    """Raw float32 dump: 'height width channels\\n' header, then the values."""
    data = Path(path).read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise ConfigError(f"{path}: missing raw-dump header line")
    try:
        height, width, channels = (int(t) for t in data[:newline].split())
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed raw-dump header") from exc
    payload = data[newline + 1:]
    need = height * width * channels * 4
    if len(payload) != need:
        raise ConfigError(f"{path}: payload holds {len(payload)} bytes, expected {need}")
    img = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return _validate_image(img.reshape(height, width, channels))


def write_raw(path, img) -> None:
    img = _validate_image(img)
    header = f"{img.shape[0]} {img.shape[1]} {img.shape[2]}\n".encode("ascii")
    Path(path).write_bytes(header + img.astype("<f4").tobytes())


def load_image(path) -> np.ndarray:
    """Dispatch on the magic bytes: 'P6' means PPM, anything else raw dump."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P6":
        return read_ppm(path)
    return read_raw(path)


# ---------------------------------------------------------------------------
# geometry

def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize.

    Output pixel i maps to source coordinate i * (S - 1) / (out - 1), so the
    four image corners are sampled exactly. Interpolation uses the
    a + t * (b - a) form, which returns a bitwise unchanged when a == b;
    a constant image therefore stays exactly constant at any scale.
    """
    img = _validate_image(img)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be positive, got {out_h}x{out_w}")
    src_h, src_w = img.shape[:2]

    def axis_coords(src: int, out: int):
        if out == 1:
            coords = np.full(1, (src - 1) / 2.0)
        else:
            coords = np.arange(out, dtype=np.float64) * ((src - 1) / (out - 1))
        if src == 1:
            lo = np.zeros(out, dtype=np.intp)
        else:
            lo = np.minimum(np.floor(coords).astype(np.intp), src - 2)
        return lo, coords - lo

    y0, ty = axis_coords(src_h, out_h)
    x0, tx = axis_coords(src_w, out_w)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)

    a = img[y0][:, x0]
    b = img[y0][:, x1]
    c = img[y1][:, x0]
    d = img[y1][:, x1]
    tx = tx[None, :, None]
    ty = ty[:, None, None]
    top = a + tx * (b - a)
    bottom = c + tx * (d - c)
    return top + ty * (bottom - top)


def synthetic_image(resolution: int, rng: np.random.Generator,
                    channels: int = 3) -> np.ndarray:
    """Seeded smooth test pattern: per-channel gradient plus a sine ripple.

    Values are normalized into [0, 1]; the same rng state always produces
    the same image, which the CLI relies on for reproducible runs without
    an input file.
    """
    if resolution < 2:
        raise ConfigError(f"synthetic image needs resolution >= 2, got {resolution}")
    grid = np.linspace(0.0, 1.0, resolution)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    planes = []
    for _ in range(channels):
        gx, gy, amp = rng.uniform(-1.0, 1.0, size=3)
        fx, fy = rng.uniform(1.0, 4.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        plane = gx * xx + gy * yy + amp * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
        lo, hi = plane.min(), plane.max()
        planes.append((plane - lo) / (hi - lo + 1e-12))
    return np.stack(planes, axis=2)


# ---------------------------------------------------------------------------
# bundles

@dataclass(frozen=True)
class PatchBundle:
    """Square patches of identical resolution; entry 0 is the low-res view."""

    patches: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.patches:
            raise ShapeError("bundle must contain at least one patch")
        first = self.patches[0].shape
        for p in self.patches:
            if p.shape != first:
                raise ShapeError(f"mixed patch shapes in bundle: {p.shape} vs {first}")
        if first[0] != first[1]:
            raise ShapeError(f"patches must be square, got {first[0]}x{first[1]}")
        n = len(self.patches)
        if n != 1:
            tiles = int(round((n - 1) ** 0.5))
            if 1 + tiles * tiles != n or tiles < 2:
                raise ShapeError(
                    f"bundle size must be 1 or 1 + tiles^2 with tiles >= 2, got {n}"
                )

    @property
    def count(self) -> int:
        return len(self.patches)

    @property
    def resolution(self) -> int:
        return self.patches[0].shape[0]

    @property
    def low(self) -> np.ndarray:
        return self.patches[0]


def build_bundle(img, base_resolution: int, tiles: int = 2,
                 high_res: bool = True) -> PatchBundle:
    """Resize to the working views and cut the high-res view into tiles.

    The low-resolution view is always patch 0. With high_res, the image is
    also resized to tiles * base_resolution and split row-major into
    tiles x tiles non-overlapping squares, appended in reading order.
    """
    img = _validate_image(img)
    if img.shape[0] != img.shape[1]:
        raise ShapeError(f"input image must be square, got {img.shape[0]}x{img.shape[1]}")
    if base_resolution < 1:
        raise ConfigError(f"base_resolution must be positive, got {base_resolution}")
    patches = [resize_bilinear(img, base_resolution, base_resolution)]
    if high_res:
        if tiles < 2:
            raise ConfigError(f"high-res bundle needs tiles >= 2, got {tiles}")
        big = resize_bilinear(img, tiles * base_resolution, tiles * base_resolution)
        for r in range(tiles):
            for c in range(tiles):
                patches.append(big[r * base_resolution:(r + 1) * base_resolution,
                                   c * base_resolution:(c + 1) * base_resolution])
    return PatchBundle(patches=tuple(patches))


# ---------------------------------------------------------------------------
# embedding

@dataclass
class EmbedderWeights:
    """Linear patch projection plus a learned absolute positional table.

    projection is [(P*P*C), D]; each P x P block of a patch is flattened
    row, column, channel and projected. positional is [M, D] with M the
    token count of one patch; the same table is added to every patch in a
    bundle, since all patches share the same geometry.
    """

    projection: np.ndarray
    positional: np.ndarray
    patch: int
    channels: int

    @classmethod
    def initialize(cls, base_resolution: int, patch: int, channels: int,
                   dim: int, rng: np.random.Generator) -> "EmbedderWeights":
        if base_resolution % patch != 0:
            raise ConfigError(
                f"patch size {patch} does not divide resolution {base_resolution}"
            )
        fan_in = patch * patch * channels
        tokens = (base_resolution // patch) ** 2
        return cls(
            projection=rng.normal(0.0, fan_in ** -0.5, size=(fan_in, dim)),
            positional=rng.normal(0.0, dim ** -0.5, size=(tokens, dim)),
            patch=patch,
            channels=channels,
        )

    def named(self, prefix: str = "embedder") -> dict[str, np.ndarray]:
        return {f"{prefix}.projection": self.projection,
                f"{prefix}.positional": self.positional}


def patch_embed(patch_img, weights: EmbedderWeights) -> np.ndarray:
    """Embed one square patch into [M, D] tokens, positional included."""
    patch_img = _validate_image(patch_img)
    res = patch_img.shape[0]
    p = weights.patch
    if patch_img.shape[1] != res:
        raise ShapeError("patch must be square")
    if patch_img.shape[2] != weights.channels:
        raise ShapeError(
            f"patch has {patch_img.shape[2]} channels, embedder expects {weights.channels}"
        )
    if res % p != 0:
        raise ShapeError(f"patch size {p} does not divide resolution {res}")
    grid = res // p
    blocks = (patch_img.reshape(grid, p, grid, p, weights.channels)
              .transpose(0, 2, 1, 3, 4)
              .reshape(grid * grid, p * p * weights.channels))
    tokens = matmul(blocks, weights.projection)
    if tokens.shape[0] != weights.positional.shape[0]:
        raise ShapeError(
            f"patch yields {tokens.shape[0]} tokens but positional table has "
            f"{weights.positional.shape[0]} rows"
        )
    return tokens + weights.positional


def embed_bundle(bundle: PatchBundle, weights: EmbedderWeights) -> np.ndarray:
    """Embed every patch; returns [N, M, D] with patch 0 first."""
    return np.stack([patch_embed(p, weights) for p in bundle.patches])
