"""Dense filter/blob values and the convolution algebra built on them.

A Filter is a 4D kernel tensor (c_out, c_in, kh, kw) with odd spatial sizes;
a Blob is a 3D activation tensor (channels, h, w). Both are immutable after
construction and all operations are pure, so values can be shared freely.

The algebra: conv_blob applies a filter to a blob ("same" padding),
compose chains two filters into their serial equivalent, add_filters sums
filters after center-aligned zero padding to a common kernel, zero_pad
embeds a kernel in a larger one. Treating every filter as zero outside its
kernel makes all of these total on matching channel counts.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._kernels import conv2d_compose, conv2d_same

__all__ = [
    "Blob",
    "DimensionError",
    "Filter",
    "PaddingError",
    "add_filters",
    "compose",
    "conv_blob",
    "identity_filter",
    "random_filter",
    "read_blob",
    "read_filter",
    "read_mten",
    "write_mten",
    "zero_pad",
]


class DimensionError(ValueError):
    """Operand channel counts or shapes are incompatible."""


class PaddingError(ValueError):
    """Requested kernel padding shrinks the kernel or changes parity."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, order="C", copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Filter:
    """4D convolution kernel of shape (c_out, c_in, kh, kw), float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise DimensionError(f"filter must be 4D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"filter dimensions must be >= 1, got {arr.shape}")
        kh, kw = arr.shape[2], arr.shape[3]
        if kh % 2 == 0 or kw % 2 == 0:
            raise DimensionError(f"kernel sizes must be odd, got {kh}x{kw}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def c_out(self) -> int:
        return self.data.shape[0]

    @property
    def c_in(self) -> int:
        return self.data.shape[1]

    @property
    def kh(self) -> int:
        return self.data.shape[2]

    @property
    def kw(self) -> int:
        return self.data.shape[3]

    @property
    def kernel(self) -> tuple[int, int]:
        return (self.kh, self.kw)

    @property
    def size(self) -> int:
        """Number of kernel entries (free parameters)."""
        return self.data.size

    def norm(self) -> float:
        """Frobenius norm over all entries."""
        return float(np.linalg.norm(self.data))

    def support(self, rel_tol: float = 1e-12) -> tuple[int, int]:
        """Spatial bounding box of the non-negligible entries, (0, 0) if all
        zero. Entries below rel_tol times the largest magnitude count as
        zero, so round-off from solves does not inflate the box.

        A zero-padded filter keeps the support of the original; feasibility
        counting uses this rather than the nominal kernel size.
        """
        mags = np.abs(self.data)
        cutoff = mags.max() * rel_tol
        nz = np.nonzero(np.any(mags > cutoff, axis=(0, 1)))
        if nz[0].size == 0:
            return (0, 0)
        return (int(nz[0].max() - nz[0].min()) + 1, int(nz[1].max() - nz[1].min()) + 1)

    def allclose(self, other: "Filter", rtol: float = 1e-12, atol: float = 1e-12) -> bool:
        return self.data.shape == other.data.shape and bool(
            np.allclose(self.data, other.data, rtol=rtol, atol=atol)
        )

    @staticmethod
    def zeros(c_out: int, c_in: int, kh: int, kw: int) -> "Filter":
        return Filter(np.zeros((c_out, c_in, kh, kw)))


@dataclass(frozen=True)
class Blob:
    """3D activation tensor of shape (channels, h, w), float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise DimensionError(f"blob must be 3D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"blob dimensions must be >= 1, got {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def c(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]

    def allclose(self, other: "Blob", rtol: float = 1e-12, atol: float = 1e-12) -> bool:
        return self.data.shape == other.data.shape and bool(
            np.allclose(self.data, other.data, rtol=rtol, atol=atol)
        )


def conv_blob(f: Filter, b: Blob) -> Blob:
    """Apply a filter to a blob; output spatial size equals the input's."""
    if b.c != f.c_in:
        raise DimensionError(f"blob has {b.c} channels, filter expects {f.c_in}")
    return Blob(conv2d_same(f.data, b.data))


def compose(f2: Filter, f1: Filter) -> Filter:
    """Single filter equivalent to applying f1 then f2.

    Kernel grows to (f1.kh + f2.kh - 1, f1.kw + f2.kw - 1); applying the
    result with conv_blob matches the chained application on the blob
    interior (zero-padding effects stay within the combined kernel border).
    """
    if f2.c_in != f1.c_out:
        raise DimensionError(
            f"cannot compose: first filter yields {f1.c_out} channels, second expects {f2.c_in}"
        )
    return Filter(conv2d_compose(f2.data, f1.data))


def add_filters(f1: Filter, f2: Filter) -> Filter:
    """Sum of two filters acting between the same channel spaces.

    Kernels may differ; both operands are center-aligned into the
    elementwise-max kernel before adding.
    """
    if f1.c_out != f2.c_out or f1.c_in != f2.c_in:
        raise DimensionError(
            f"cannot add filters with channel shapes "
            f"{(f1.c_out, f1.c_in)} and {(f2.c_out, f2.c_in)}"
        )
    kh, kw = max(f1.kh, f2.kh), max(f1.kw, f2.kw)
    return Filter(zero_pad(f1, kh, kw).data + zero_pad(f2, kh, kw).data)


def zero_pad(f: Filter, kh: int, kw: int) -> Filter:
    """Center-embed the kernel into a (kh, kw) kernel, zeros elsewhere."""
    if kh < f.kh or kw < f.kw:
        raise PaddingError(f"cannot shrink kernel {f.kernel} to {(kh, kw)}")
    if (kh - f.kh) % 2 != 0 or (kw - f.kw) % 2 != 0:
        raise PaddingError(f"padding {f.kernel} to {(kh, kw)} breaks center alignment")
    if (kh, kw) == f.kernel:
        return f
    out = np.zeros((f.c_out, f.c_in, kh, kw))
    oy, ox = (kh - f.kh) // 2, (kw - f.kw) // 2
    out[:, :, oy : oy + f.kh, ox : ox + f.kw] = f.data
    return Filter(out)


def identity_filter(c: int, scale: float = 1.0) -> Filter:
    """1x1 filter whose channel matrix is scale times the identity."""
    if c < 1:
        raise DimensionError(f"channel count must be >= 1, got {c}")
    return Filter(scale * np.eye(c).reshape(c, c, 1, 1))


def random_filter(
    c_out: int,
    c_in: int,
    kh: int,
    kw: int,
    rng: np.random.Generator,
    init_scale: float | None = None,
) -> Filter:
    """Gaussian filter with std init_scale, default sqrt(2 / fan_in)."""
    if init_scale is None:
        init_scale = np.sqrt(2.0 / (c_in * kh * kw))
    return Filter(init_scale * rng.standard_normal((c_out, c_in, kh, kw)))


# Portable tensor file format ("MTEN"): little-endian magic "MTEN",
# u32 version=1, u32 rank, rank x u64 dims, then float64 values row-major.

MTEN_MAGIC = b"MTEN"
MTEN_VERSION = 1


class MtenError(ValueError):
    """Malformed MTEN file."""


def write_mten(path, array) -> None:
    """Write an ndarray, Filter, or Blob to an MTEN file."""
    if isinstance(array, (Filter, Blob)):
        array = array.data
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", MTEN_MAGIC, MTEN_VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def read_mten(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12:
            raise MtenError(f"{path}: truncated header")
        magic, version, rank = struct.unpack("<4sII", head)
        if magic != MTEN_MAGIC:
            raise MtenError(f"{path}: bad magic {magic!r}")
        if version != MTEN_VERSION:
            raise MtenError(f"{path}: unsupported version {version}")
        dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        payload = fh.read(8 * count)
        if len(payload) != 8 * count:
            raise MtenError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def read_filter(path) -> Filter:
    return Filter(read_mten(path))


def read_blob(path) -> Blob:
    return Blob(read_mten(path))
