"""On-disk tensor and checkpoint formats.

Both formats are little-endian and platform independent.

TNSR tensor file::

    magic "TNSR" | u32 version=1 | u32 dtype (0 = float32) | u32 ndims
    | ndims x u64 dims | row-major payload

CVXG checkpoint::

    magic "CVXG" | u32 version=1 | u32 entry_count
    | entry_count x (u16 name_len | UTF-8 name | tensor in TNSR layout)
    | trailing UTF-8 config echo ("key = value" lines)

The config echo records the architecture and RNG seed, so a checkpoint is
replayable and is validated against the requested architecture on load.
Checkpoints round-trip bit for bit.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import ArchConfig

TENSOR_MAGIC = b"TNSR"
CHECKPOINT_MAGIC = b"CVXG"
_MAX_DIM = 2 ** 48  # dims beyond this are treated as corruption

_DTYPES = {0: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype("float32"): 0}


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file "
                              f"(wanted {n} bytes at offset {self.off})")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def rest(self) -> bytes:
        out = self.data[self.off:]
        self.off = len(self.data)
        return out


def _tensor_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    if t.dtype != np.float32:
        raise FormatError(f"only float32 tensors are storable, got {t.dtype}")
    if t.ndim == 0:
        raise FormatError("zero-dimensional tensors are not storable")
    if any(d < 1 for d in t.shape):
        raise FormatError(f"dims must be positive, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise FormatError("tensor contains NaN or Inf")
    head = TENSOR_MAGIC + struct.pack("<III", 1, _DTYPE_CODES[t.dtype], t.ndim)
    dims = struct.pack(f"<{t.ndim}Q", *t.shape)
    payload = np.ascontiguousarray(t, dtype="<f4").tobytes()
    return head + dims + payload


def _read_tensor_from(r: _Reader) -> np.ndarray:
    magic = r.take(4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"{r.path}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    version = r.u32()
    if version != 1:
        raise FormatError(f"{r.path}: unsupported tensor version {version}")
    dtype_code = r.u32()
    if dtype_code not in _DTYPES:
        raise FormatError(f"{r.path}: unsupported dtype code {dtype_code}")
    ndims = r.u32()
    if ndims < 1:
        raise FormatError(f"{r.path}: empty dims rejected")
    if ndims > 32:
        raise FormatError(f"{r.path}: dim overflow ({ndims} dims)")
    dims = [r.u64() for _ in range(ndims)]
    count = 1
    for d in dims:
        if d < 1 or d > _MAX_DIM:
            raise FormatError(f"{r.path}: dim overflow in {dims}")
        count *= d
        if count > _MAX_DIM:
            raise FormatError(f"{r.path}: dim overflow in {dims}")
    payload = r.take(count * 4)
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return arr.astype(np.float32, copy=True)


def write_tensor(path, t: np.ndarray) -> None:
    Path(path).write_bytes(_tensor_bytes(t))


def read_tensor(path) -> np.ndarray:
    r = _Reader(Path(path).read_bytes(), path)
    arr = _read_tensor_from(r)
    if r.off != len(r.data):
        raise FormatError(f"{path}: trailing bytes after tensor payload")
    return arr


def _arch_echo(arch: ArchConfig, seed: int) -> str:
    lines = [
        f"arch.image_h = {arch.image_h}",
        f"arch.image_w = {arch.image_w}",
        f"arch.image_c = {arch.image_c}",
        f"arch.signal_len = {arch.signal_len}",
        f"arch.channels = {','.join(str(c) for c in arch.channels)}",
        f"arch.latent_dim = {arch.latent_dim}",
        f"arch.head_hidden = {arch.head_hidden}",
        f"arch.head_dropout = {arch.head_dropout!r}",
        f"seed = {seed}",
    ]
    return "\n".join(lines) + "\n"


def _parse_echo(text: str, path):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed config echo line {lineno}: {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    try:
        arch = ArchConfig(
            image_h=int(values["arch.image_h"]),
            image_w=int(values["arch.image_w"]),
            image_c=int(values["arch.image_c"]),
            signal_len=int(values["arch.signal_len"]),
            channels=tuple(int(c) for c in values["arch.channels"].split(",")),
            latent_dim=int(values["arch.latent_dim"]),
            head_hidden=int(values["arch.head_hidden"]),
            head_dropout=float(values["arch.head_dropout"]),
        )
        seed = int(values["seed"])
    except KeyError as exc:
        raise FormatError(f"{path}: config echo missing key {exc}") from None
    except ValueError as exc:
        raise FormatError(f"{path}: config echo malformed: {exc}") from None
    return arch, seed


def write_checkpoint(path, params, arch: ArchConfig, seed: int) -> None:
    """Write a named-tensor checkpoint; entries are sorted by name."""
    blobs = [CHECKPOINT_MAGIC, struct.pack("<II", 1, len(params))]
    for name in sorted(params):
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        blobs.append(struct.pack("<H", len(encoded)))
        blobs.append(encoded)
        blobs.append(_tensor_bytes(params[name]))
    blobs.append(_arch_echo(arch, seed).encode("utf-8"))
    Path(path).write_bytes(b"".join(blobs))


def read_checkpoint(path, expected_arch: ArchConfig | None = None):
    """Load a checkpoint; returns ``(params, arch, seed)``.

    When ``expected_arch`` is given, the embedded architecture must match
    exactly. Tensor shapes are checked against the embedded architecture
    by the callers that know which tensors they need.
    """
    r = _Reader(Path(path).read_bytes(), path)
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = r.u32()
    if version != 1:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    count = r.u32()
    params = {}
    for _ in range(count):
        name_len = r.u16()
        name = r.take(name_len).decode("utf-8")
        if name in params:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        params[name] = _read_tensor_from(r)
    arch, seed = _parse_echo(r.rest().decode("utf-8"), path)
    if expected_arch is not None and arch != expected_arch:
        raise FormatError(
            f"{path}: embedded architecture does not match the requested one")
    return params, arch, seed
