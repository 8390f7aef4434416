"""Multi-echo ordered point clouds, label grids and the MEOC/MEL file formats.

A cloud is an ``H x W x Ne`` grid of echo records. Every echo of a cell comes
from the same emitted pulse, so the azimuth/elevation angles are stored once
per cell. Slot 0 always holds the strongest echo of the pulse.

Binary layout (little-endian)::

    magic "MEOC" | version u32 | H u32 | W u32 | Ne u32
    H*W*Ne records, row-major (h, w, e): x f32, y f32, z f32, intensity f32,
                                        valid u8, 3 pad bytes
    H*W (azimuth f32, elevation f32) pairs, row-major (h, w)

Label files (``.mel``) reuse the header and hold one u8 per cell-echo.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvariantError

MAGIC = b"MEOC"
VERSION = 1
HEADER = np.dtype([("magic", "S4"), ("version", "<u4"), ("h", "<u4"), ("w", "<u4"), ("ne", "<u4")])
RECORD = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "<f4"), ("valid", "u1"), ("pad", "V3")]
)
ANGLES = np.dtype([("azimuth", "<f4"), ("elevation", "<f4")])

# ground-truth label codes
EMPTY = 0
VALID_OBJECT = 1
NOISE_PARTICLE = 2
ARTIFACT = 3
LABEL_NAMES = {EMPTY: "empty", VALID_OBJECT: "valid_object", NOISE_PARTICLE: "noise_particle", ARTIFACT: "artifact"}


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype).copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MultiEchoOrderedCloud:
    """Ordered multi-echo scan.

    Arrays are copied and made read-only on construction; invariants are
    checked unless ``check=False``.
    """

    xyz: np.ndarray  # (H, W, Ne, 3) float32
    intensity: np.ndarray  # (H, W, Ne) float32
    valid: np.ndarray  # (H, W, Ne) bool
    azimuth: np.ndarray  # (H, W) float32
    elevation: np.ndarray  # (H, W) float32
    check: bool = True

    def __post_init__(self):
        object.__setattr__(self, "xyz", _frozen(self.xyz, np.float32))
        object.__setattr__(self, "intensity", _frozen(self.intensity, np.float32))
        object.__setattr__(self, "valid", _frozen(self.valid, bool))
        object.__setattr__(self, "azimuth", _frozen(self.azimuth, np.float32))
        object.__setattr__(self, "elevation", _frozen(self.elevation, np.float32))
        if self.check:
            validate(self)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.valid.shape

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def num_echoes(self) -> int:
        return self.valid.shape[2]

    def ranges(self) -> np.ndarray:
        """Per-echo range in meters (float64), 0 for invalid cells."""
        p = self.xyz.astype(np.float64)
        return np.sqrt(p[..., 0] * p[..., 0] + p[..., 1] * p[..., 1] + p[..., 2] * p[..., 2])

    def echo(self, e: int) -> "MultiEchoOrderedCloud":
        """Single-echo view holding only slot ``e``."""
        return MultiEchoOrderedCloud(
            self.xyz[:, :, e : e + 1], self.intensity[:, :, e : e + 1], self.valid[:, :, e : e + 1],
            self.azimuth, self.elevation, check=False,
        )

    def strongest(self) -> "MultiEchoOrderedCloud":
        return self.echo(0)

    def __eq__(self, other):
        if not isinstance(other, MultiEchoOrderedCloud):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.xyz.view(np.uint32), other.xyz.view(np.uint32))
            and np.array_equal(self.intensity.view(np.uint32), other.intensity.view(np.uint32))
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.azimuth.view(np.uint32), other.azimuth.view(np.uint32))
            and np.array_equal(self.elevation.view(np.uint32), other.elevation.view(np.uint32))
        )

    __hash__ = None


def validate(cloud: MultiEchoOrderedCloud) -> None:
    """Raise InvariantError if the cloud breaks any structural invariant."""
    h, w, ne = cloud.valid.shape
    if min(h, w, ne) < 1:
        raise InvariantError(f"cloud dimensions must be >= 1, got {(h, w, ne)}")
    if cloud.xyz.shape != (h, w, ne, 3) or cloud.intensity.shape != (h, w, ne):
        raise InvariantError("xyz/intensity shapes do not match the validity grid")
    if cloud.azimuth.shape != (h, w) or cloud.elevation.shape != (h, w):
        raise InvariantError("angle grids must be H x W")
    if not (np.isfinite(cloud.azimuth).all() and np.isfinite(cloud.elevation).all()):
        raise InvariantError("angles must be finite")

    valid = cloud.valid
    inv = ~valid
    if np.any(cloud.xyz[inv] != 0) or np.any(cloud.intensity[inv] != 0):
        raise InvariantError("invalid cells must store zeros")
    if not np.isfinite(cloud.xyz[valid]).all():
        raise InvariantError("valid echoes must have finite coordinates")
    if np.any(cloud.ranges()[valid] <= 0):
        raise InvariantError("valid echoes must have positive range")
    it = cloud.intensity[valid]
    if np.any(~(it >= 0) | ~(it <= 1)):
        raise InvariantError("intensity_raw must lie in [0, 1]")

    if ne > 1:
        if np.any(valid[:, :, 1:].any(axis=2) & ~valid[:, :, 0]):
            raise InvariantError("echo group has valid alternatives but an empty strongest slot")
        weaker = cloud.intensity[:, :, 1:] > cloud.intensity[:, :, :1]
        if np.any(weaker & valid[:, :, 1:]):
            raise InvariantError("strongest echo (slot 0) must have maximal intensity in its group")
        rec = np.concatenate([cloud.xyz, cloud.intensity[..., None]], axis=-1).view(np.uint32)
        for a in range(ne):
            for b in range(a + 1, ne):
                same = np.all(rec[:, :, a] == rec[:, :, b], axis=-1) & valid[:, :, a] & valid[:, :, b]
                if same.any():
                    raise InvariantError("duplicate echoes within a group")


def empty_cloud(azimuth: np.ndarray, elevation: np.ndarray, num_echoes: int) -> MultiEchoOrderedCloud:
    h, w = np.shape(azimuth)
    return MultiEchoOrderedCloud(
        np.zeros((h, w, num_echoes, 3)), np.zeros((h, w, num_echoes)), np.zeros((h, w, num_echoes), bool),
        azimuth, elevation,
    )


def range_of(cloud: MultiEchoOrderedCloud, h: int, w: int, e: int) -> float:
    """Euclidean norm of echo ``(h, w, e)``; 0.0 for invalid cells."""
    H, W, NE = cloud.shape
    if not (0 <= h < H and 0 <= w < W and 0 <= e < NE):
        raise IndexError(f"index {(h, w, e)} out of bounds for cloud of shape {(H, W, NE)}")
    if not cloud.valid[h, w, e]:
        return 0.0
    x, y, z = (float(v) for v in cloud.xyz[h, w, e])
    return float(np.sqrt(x * x + y * y + z * z))


# ---------------------------------------------------------------- file I/O


def _header(h, w, ne):
    hdr = np.zeros((), HEADER)
    hdr["magic"], hdr["version"], hdr["h"], hdr["w"], hdr["ne"] = MAGIC, VERSION, h, w, ne
    return hdr.tobytes()


def _parse_header(buf: bytes, path) -> tuple[int, int, int]:
    if len(buf) < HEADER.itemsize:
        raise FormatError(f"{path}: truncated header")
    hdr = np.frombuffer(buf, HEADER, count=1)[0]
    if bytes(hdr["magic"]) != MAGIC:
        raise FormatError(f"{path}: bad magic {bytes(hdr['magic'])!r}")
    if int(hdr["version"]) != VERSION:
        raise FormatError(f"{path}: unsupported version {int(hdr['version'])}")
    h, w, ne = int(hdr["h"]), int(hdr["w"]), int(hdr["ne"])
    if min(h, w, ne) < 1:
        raise FormatError(f"{path}: declared sizes must be >= 1, got {(h, w, ne)}")
    return h, w, ne


def cloud_file_size(h: int, w: int, ne: int) -> int:
    return HEADER.itemsize + h * w * ne * RECORD.itemsize + h * w * ANGLES.itemsize


def write_cloud(cloud: MultiEchoOrderedCloud, path) -> None:
    h, w, ne = cloud.shape
    rec = np.zeros((h, w, ne), RECORD)
    rec["x"], rec["y"], rec["z"] = cloud.xyz[..., 0], cloud.xyz[..., 1], cloud.xyz[..., 2]
    rec["intensity"] = cloud.intensity
    rec["valid"] = cloud.valid
    ang = np.zeros((h, w), ANGLES)
    ang["azimuth"], ang["elevation"] = cloud.azimuth, cloud.elevation
    with open(path, "wb") as f:
        f.write(_header(h, w, ne))
        f.write(rec.tobytes())
        f.write(ang.tobytes())


def read_cloud(path) -> MultiEchoOrderedCloud:
    buf = Path(path).read_bytes()
    h, w, ne = _parse_header(buf, path)
    if len(buf) != cloud_file_size(h, w, ne):
        raise FormatError(f"{path}: expected {cloud_file_size(h, w, ne)} bytes, found {len(buf)}")
    off = HEADER.itemsize
    rec = np.frombuffer(buf, RECORD, count=h * w * ne, offset=off).reshape(h, w, ne)
    ang = np.frombuffer(buf, ANGLES, count=h * w, offset=off + rec.nbytes).reshape(h, w)
    if np.any(rec["valid"] > 1):
        raise FormatError(f"{path}: validity flag must be 0 or 1")
    xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=-1)
    return MultiEchoOrderedCloud(xyz, rec["intensity"], rec["valid"].astype(bool), ang["azimuth"], ang["elevation"])


def write_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ValueError("label grid must be H x W x Ne")
    with open(path, "wb") as f:
        f.write(_header(*labels.shape))
        f.write(labels.astype(np.uint8).tobytes())


def read_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    h, w, ne = _parse_header(buf, path)
    if len(buf) != HEADER.itemsize + h * w * ne:
        raise FormatError(f"{path}: label payload size mismatch")
    return np.frombuffer(buf, np.uint8, offset=HEADER.itemsize).reshape(h, w, ne).copy()


def check_labels(labels: np.ndarray, cloud: MultiEchoOrderedCloud) -> None:
    """Labels must be aligned with the cloud and be empty exactly on invalid cells."""
    if labels.shape != cloud.shape:
        raise InvariantError(f"label shape {labels.shape} != cloud shape {cloud.shape}")
    if np.any((labels == EMPTY) != ~cloud.valid):
        raise InvariantError("label is empty iff the echo is invalid")
    if np.any(labels > ARTIFACT):
        raise InvariantError("unknown label code")
