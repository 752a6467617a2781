"""Binary persistence for feature banks and user models.

Layout (all integers little-endian)::

    magic   b"SGVM"
    version u16
    count   u32                      number of sections
    section tag[4] | length u64 | crc32 u32 | payload[length]

Array payloads are ``dtype u8 | ndim u8 | shape u64*ndim | raw LE data``;
metadata payloads are canonical JSON. Sections: CONF (run config), BANK
(bank metadata), WHIT (whitening mean, basis), WGTS (W1, b1, W2, b2),
TRCE (cost trace), USER (one per user model).
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CorruptFile, VersionMismatch
from .featurelearn.autoencoder import AutoencoderParams, Hyperparams
from .featurelearn.patches import WhiteningTransform
from .featurelearn.train import FeatureBank
from .verify import UserModel

MAGIC = b"SGVM"
VERSION = 1
_DTYPES = {1: "<f8", 2: "<i8"}
_CODES = {np.dtype("<f8"): 1, np.dtype("<i8"): 2}


def _pack_arrays(*arrays) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(arrays)))
    for a in arrays:
        a = np.asarray(a)
        a = a.astype("<f8") if a.dtype.kind == "f" else a.astype("<i8")
        if not np.all(np.isfinite(a)):
            raise ValueError("refusing to save non-finite values")
        buf.write(struct.pack("<BB", _CODES[a.dtype], a.ndim))
        buf.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        buf.write(np.ascontiguousarray(a).tobytes())
    return buf.getvalue()


def _unpack_arrays(payload: bytes) -> list:
    mv = memoryview(payload)
    (n,), off = struct.unpack_from("<I", mv, 0), 4
    out = []
    for _ in range(n):
        code, ndim = struct.unpack_from("<BB", mv, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}Q", mv, off)
        off += 8 * ndim
        dt = np.dtype(_DTYPES[code])
        size = int(np.prod(shape)) * dt.itemsize
        if off + size > len(mv):
            raise CorruptFile("array payload truncated")
        out.append(np.frombuffer(mv[off:off + size], dtype=dt).reshape(shape).astype(dt.newbyteorder("=")))
        off += size
    if off != len(mv):
        raise CorruptFile("trailing bytes in array payload")
    return out


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<QI", len(payload), zlib.crc32(payload)) + payload


def dump_model(bank: Optional[FeatureBank], models=(), config: Optional[dict] = None) -> bytes:
    sections = [_section(b"CONF", _json(config or {}))]
    if bank is not None:
        meta = {
            "hyper": {"rho": bank.hyper.rho, "beta": bank.hyper.beta, "lam": bank.hyper.lam,
                      "iterations": bank.hyper.iterations, "seed": bank.hyper.seed,
                      "hidden_size": bank.hyper.hidden_size,
                      "squared_activation": bank.hyper.squared_activation},
            "patch_h": bank.patch_h, "patch_w": bank.patch_w, "status": bank.status,
            "whitening": {"epsilon": bank.whitening.epsilon, "retained_k": bank.whitening.retained_k,
                          "variance_kept": bank.whitening.variance_kept, "mode": bank.whitening.mode},
        }
        p = bank.params
        sections += [
            _section(b"BANK", _json(meta)),
            _section(b"WHIT", _pack_arrays(bank.whitening.mean, bank.whitening.basis)),
            _section(b"WGTS", _pack_arrays(p.W1, p.b1, p.W2, p.b2)),
            _section(b"TRCE", _pack_arrays(np.asarray(bank.training_cost_trace, dtype=np.float64))),
        ]
    for m in models:
        if m.threshold is not None and not np.isfinite(m.threshold):
            raise ValueError("refusing to save a non-finite threshold")
        head = _json({"user_id": m.user_id, "reg": m.reg, "threshold": m.threshold,
                      "train_count": m.train_count})
        body = struct.pack("<I", len(head)) + head + _pack_arrays(m.mean, m.covariance_factor)
        sections.append(_section(b"USER", body))
    header = MAGIC + struct.pack("<HI", VERSION, len(sections))
    return header + b"".join(sections)


def parse_model(data: bytes):
    """Inverse of :func:`dump_model`: ``(bank or None, [UserModel], config dict)``."""
    if len(data) < 10 or data[:4] != MAGIC:
        raise CorruptFile("not a model file (bad magic)")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise VersionMismatch(f"model file version {version}, this build reads {VERSION}")
    off = 10
    found = []
    for _ in range(count):
        if off + 16 > len(data):
            raise CorruptFile("truncated section header")
        tag = data[off:off + 4]
        length, crc = struct.unpack_from("<QI", data, off + 4)
        off += 16
        payload = data[off:off + length]
        if len(payload) != length:
            raise CorruptFile(f"section {tag!r} truncated")
        if zlib.crc32(payload) != crc:
            raise CorruptFile(f"checksum mismatch in section {tag!r}")
        found.append((tag, payload))
        off += length
    if off != len(data):
        raise CorruptFile("trailing bytes after last section")

    try:
        return _decode(found)
    except (KeyError, ValueError, struct.error) as exc:
        raise CorruptFile(f"malformed section contents: {exc}") from exc


def _decode(found):
    config, bank_meta, whit, wgts, trace = {}, None, None, None, ()
    models = []
    for tag, payload in found:
        if tag == b"CONF":
            config = json.loads(payload)
        elif tag == b"BANK":
            bank_meta = json.loads(payload)
        elif tag == b"WHIT":
            whit = _unpack_arrays(payload)
        elif tag == b"WGTS":
            wgts = _unpack_arrays(payload)
        elif tag == b"TRCE":
            trace = tuple(float(v) for v in _unpack_arrays(payload)[0])
        elif tag == b"USER":
            (hl,) = struct.unpack_from("<I", payload, 0)
            head = json.loads(payload[4:4 + hl])
            mean, L = _unpack_arrays(payload[4 + hl:])
            models.append(UserModel(user_id=head["user_id"], mean=mean, covariance_factor=L,
                                    reg=head["reg"], threshold=head["threshold"],
                                    train_count=head["train_count"]))
        else:
            raise CorruptFile(f"unknown section {tag!r}")

    bank = None
    if bank_meta is not None:
        if whit is None or wgts is None:
            raise CorruptFile("bank metadata without weights")
        w = bank_meta["whitening"]
        tf = WhiteningTransform(mean=whit[0], basis=whit[1], epsilon=w["epsilon"],
                                retained_k=w["retained_k"], variance_kept=w["variance_kept"],
                                mode=w["mode"])
        W1, b1, W2, b2 = wgts
        bank = FeatureBank(AutoencoderParams(W1, b1, W2, b2), tf, Hyperparams(**bank_meta["hyper"]),
                           bank_meta["patch_h"], bank_meta["patch_w"], trace, bank_meta["status"])
    return bank, models, config


def save_model(bank: Optional[FeatureBank], models, path, config: Optional[dict] = None) -> None:
    Path(path).write_bytes(dump_model(bank, models, config))


def load_model(path):
    """Returns ``(bank or None, [UserModel], config dict)``."""
    return parse_model(Path(path).read_bytes())
