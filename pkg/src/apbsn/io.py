"""Binary PPM/PGM images, model checkpoints and run-config files."""

from __future__ import annotations

import json
import re
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bsn import BsnConfig, BsnModel, build_bsn
from .pipeline import InferConfig, TrainConfig


class ImageFormatError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# images

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_header(buf: bytes) -> tuple[bytes, int, int, int, int]:
    """Parse magic, width, height, maxval; return them and the payload offset."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise ImageFormatError(f"malformed header: expected 4 fields, got {len(tokens)}")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {magic!r}; only binary P5/P6 are read")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"malformed header fields {tokens[1:]!r}") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"invalid image size {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}; only 8-bit (255) images are supported")
    if pos >= len(buf) or buf[pos : pos + 1] not in b" \t\r\n":
        raise ImageFormatError(f"missing whitespace after header at byte {pos}")
    return magic, width, height, maxval, pos + 1


def decode_image(buf: bytes) -> np.ndarray:
    magic, width, height, maxval, offset = _read_header(buf)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    have = len(buf) - offset
    if have < need:
        raise ImageFormatError(
            f"truncated payload: expected {need} bytes from offset {offset}, "
            f"data ends at byte {len(buf)} ({have} available)"
        )
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset)
    img = data.reshape(height, width, channels).astype(np.float32) / maxval
    return img if channels == 3 else img[:, :, 0]


def encode_image(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot write image of shape {img.shape}; need (H, W) or (H, W, 3)")
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + q.tobytes()


def read_image(path: str | Path) -> np.ndarray:
    """(H, W, 3) for PPM, (H, W) for PGM, float32 in [0, 1]."""
    return decode_image(Path(path).read_bytes())


def write_image(img: np.ndarray, path: str | Path):
    Path(path).write_bytes(encode_image(img))


# ---------------------------------------------------------------------------
# checkpoints
#
# magic "APBSN1\0" | u32 config length | config JSON (utf-8)
# | u32 layer count | per tensor: u16 name length, name, u8 ndim, u32 dims...,
#   raw little-endian float32 values
# | u32 CRC-32 of the tensor section

MAGIC = b"APBSN1\0"
_MAGIC_PREFIX = b"APBSN"


def save_checkpoint(path: str | Path, model: BsnModel, train_cfg: TrainConfig | None = None,
                    seed: int | None = None, extra: dict | None = None):
    meta = {"format": 1, "bsn": model.config.to_dict(), "seed": seed}
    if train_cfg is not None:
        meta["train"] = asdict(train_cfg)
    if extra:
        meta["extra"] = extra
    blob = json.dumps(meta, sort_keys=True).encode()
    state = model.state_dict()
    body = bytearray(struct.pack("<I", len(state)))
    for name, arr in state.items():
        nb = name.encode()
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out = MAGIC + struct.pack("<I", len(blob)) + blob + bytes(body)
    out += struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(out)


@dataclass
class Checkpoint:
    config: BsnConfig
    state: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def build(self) -> BsnModel:
        model = build_bsn(self.config, seed=0)
        model.load_state_dict(self.state)
        return model

    @property
    def train_config(self) -> TrainConfig | None:
        t = self.meta.get("train")
        return TrainConfig(**t) if t else None


def read_checkpoint(path: str | Path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if not buf.startswith(_MAGIC_PREFIX):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if not buf.startswith(MAGIC):
        found = buf[: len(MAGIC)].rstrip(b"\0").decode(errors="replace")
        raise CheckpointError(f"{path}: checkpoint version {found!r} is not supported (expected APBSN1)")
    try:
        pos = len(MAGIC)
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        meta = json.loads(buf[pos : pos + n].decode())
        pos += n
        body_start = pos
        body_end = len(buf) - 4
        (crc,) = struct.unpack_from("<I", buf, body_end)
        if zlib.crc32(buf[body_start:body_end]) != crc:
            raise CheckpointError(f"{path}: checksum mismatch, weights are corrupted")
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        state = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + ln].decode()
            pos += ln
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 4
            if pos + size > body_end:
                raise CheckpointError(f"{path}: tensor {name!r} runs past the end of the file")
            state[name] = np.frombuffer(buf, "<f4", int(np.prod(shape)), pos).reshape(shape).astype(np.float32)
            pos += size
        if pos != body_end:
            raise CheckpointError(f"{path}: {body_end - pos} unexpected trailing bytes")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint ({e})") from None
    if meta.get("format") != 1:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return Checkpoint(BsnConfig.from_dict(meta["bsn"]), state, meta)


def load_checkpoint(path: str | Path, model: BsnModel | None = None) -> BsnModel:
    """Rebuild the stored model, or load the weights into ``model``."""
    ckpt = read_checkpoint(path)
    if model is None:
        return ckpt.build()
    model.load_state_dict(ckpt.state)
    return model


# ---------------------------------------------------------------------------
# run configuration: {"train": {...}, "infer": {...}, "noise": {...}, "bsn": {...}}


@dataclass
class NoiseConfig:
    sigma: float = 0.1
    kernel: str | list = "tent"  # "white", "tent", "boxN" or a list of rows
    seed: int = 0


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    bsn: BsnConfig = field(default_factory=BsnConfig)

    def to_dict(self) -> dict:
        return {
            "train": asdict(self.train),
            "infer": asdict(self.infer),
            "noise": asdict(self.noise),
            "bsn": self.bsn.to_dict(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {"train": TrainConfig, "infer": InferConfig, "noise": NoiseConfig, "bsn": BsnConfig}
        unknown = set(d) - set(sections)
        if unknown:
            raise ValueError(f"unknown config section(s): {sorted(unknown)}")
        kw = {}
        for name, typ in sections.items():
            sub = d.get(name, {})
            allowed = {f.name for f in fields(typ)}
            bad = set(sub) - allowed
            if bad:
                raise ValueError(f"unknown key(s) in [{name}]: {sorted(bad)}")
            kw[name] = typ(**sub)
        return cls(**kw)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path: str | Path):
        Path(path).write_text(self.dumps())
