"""Binary model container.

Layout (little-endian)::

    magic    8 bytes  b"SWACDM01"
    version  u32
    length   u64      total file size including the trailing CRC
    sections repeated: u16 name length, name (UTF-8), u8 kind, u64 payload length, payload
    crc      u32      CRC-32 of every preceding byte

Section kinds are JSON (0) and float64 arrays (1).  An array payload is
u8 ndim, ndim x u64 dims, then the values in C order.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from swacdemod.classify import ConvGeometry, ConvNet, DenseNet
from swacdemod.dbn import DbnModel, NormStats, RbmLayer
from swacdemod.errors import (
    ArtifactFormatError,
    ChecksumError,
    TruncatedArtifactError,
    VersionMismatchError,
)
from swacdemod.pipeline import Demodulator, FeatureScaler
from swacdemod.sigproc import ModulationConfig

MAGIC = b"SWACDM01"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")
_SECTION = struct.Struct("<H")
_PAYLOAD = struct.Struct("<BQ")
_CRC = struct.Struct("<I")
JSON, ARRAY = 0, 1


@dataclass
class ModelArtifact:
    method: str
    order: int
    mod_cfg: ModulationConfig
    dbn: DbnModel
    scaler: FeatureScaler
    classifier: DenseNet | ConvNet
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_demodulator(cls, demod: Demodulator, mod_cfg: ModulationConfig, metadata=None) -> ModelArtifact:
        meta = dict(demod.meta)
        meta.update(metadata or {})
        return cls(demod.method, demod.order, mod_cfg, demod.dbn, demod.scaler, demod.classifier, meta)

    def to_demodulator(self) -> Demodulator:
        return Demodulator(self.method, self.order, self.dbn, self.scaler, self.classifier, None, dict(self.metadata))

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.dbn.layers):
            out[f"dbn.{i}.W"] = layer.weights
            out[f"dbn.{i}.b"] = layer.visible_bias
            out[f"dbn.{i}.c"] = layer.hidden_bias
        out["scaler.mean"] = self.scaler.mean
        out["scaler.std"] = self.scaler.std
        for i, p in enumerate(self.classifier.params):
            out[f"classifier.{i}"] = p
        return out


def _encode_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    dims = struct.pack(f"<B{a.ndim}Q", a.ndim, *a.shape)
    return dims + a.tobytes()


def _decode_array(buf: bytes) -> np.ndarray:
    ndim = buf[0]
    shape = struct.unpack_from(f"<{ndim}Q", buf, 1)
    offset = 1 + 8 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != offset + 8 * count:
        raise ArtifactFormatError("array section size does not match its shape")
    return np.frombuffer(buf, dtype="<f8", offset=offset).reshape(shape).astype(np.float64)


def _section(name: str, kind: int, payload: bytes) -> bytes:
    raw = name.encode()
    return _SECTION.pack(len(raw)) + raw + _PAYLOAD.pack(kind, len(payload)) + payload


def _classifier_meta(net) -> dict:
    if isinstance(net, DenseNet):
        return {"kind": "dense", "sizes": [int(s) for s in net.sizes]}
    g = net.geometry
    return {
        "kind": "conv",
        "geometry": {
            "n_classes": g.n_classes,
            "input_size": g.input_size,
            "padded_size": g.padded_size,
            "kernels": list(g.kernels),
            "maps": list(g.maps),
            "dense": list(g.dense),
            "pool": g.pool,
        },
    }


def to_bytes(art: ModelArtifact, version: int = FORMAT_VERSION) -> bytes:
    header = {
        "method": art.method,
        "order": art.order,
        "mod_cfg": {
            "carrier_hz": art.mod_cfg.carrier_hz,
            "sample_rate_hz": art.mod_cfg.sample_rate_hz,
            "samples_per_symbol": art.mod_cfg.samples_per_symbol,
        },
        "norm": None if art.dbn.norm is None else [art.dbn.norm.lo, art.dbn.norm.hi, art.dbn.norm.source_hash],
        "dbn_layers": len(art.dbn.layers),
        "classifier": _classifier_meta(art.classifier),
        "metadata": art.metadata,
    }
    body = _section("header", JSON, json.dumps(header, sort_keys=True).encode())
    for name, a in art.arrays().items():
        body += _section(name, ARRAY, _encode_array(a))
    total = _HEADER.size + len(body) + _CRC.size
    head = _HEADER.pack(MAGIC, version, total)
    return head + body + _CRC.pack(zlib.crc32(head + body))


def _parse_sections(buf: bytes) -> tuple[dict, dict]:
    pos = _HEADER.size
    end = len(buf) - _CRC.size
    header, arrays = None, {}
    while pos < end:
        try:
            (n,) = _SECTION.unpack_from(buf, pos)
            name = buf[pos + 2 : pos + 2 + n].decode()
            pos += 2 + n
            kind, size = _PAYLOAD.unpack_from(buf, pos)
        except (struct.error, UnicodeDecodeError) as exc:
            raise ArtifactFormatError(f"malformed section at byte {pos}") from exc
        pos += _PAYLOAD.size
        payload = buf[pos : pos + size]
        if len(payload) != size or pos + size > end:
            raise ArtifactFormatError(f"section {name!r} overruns the file")
        pos += size
        if kind == JSON and name == "header":
            header = json.loads(payload.decode())
        elif kind == ARRAY:
            arrays[name] = _decode_array(payload)
        else:
            raise ArtifactFormatError(f"unknown section {name!r} of kind {kind}")
    if header is None:
        raise ArtifactFormatError("artifact has no header section")
    return header, arrays


def from_bytes(buf: bytes) -> ModelArtifact:
    if len(buf) < _HEADER.size:
        raise TruncatedArtifactError(f"{len(buf)} bytes is shorter than the artifact header")
    magic, version, total = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ArtifactFormatError("not a model artifact (bad magic bytes)")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"artifact format version {version}, this build reads {FORMAT_VERSION}")
    if len(buf) < total:
        raise TruncatedArtifactError(f"artifact declares {total} bytes but only {len(buf)} are present")
    if len(buf) > total:
        raise ArtifactFormatError(f"{len(buf) - total} trailing bytes after the artifact")
    (stored,) = _CRC.unpack_from(buf, total - _CRC.size)
    if zlib.crc32(buf[: total - _CRC.size]) != stored:
        raise ChecksumError("CRC-32 mismatch: artifact is corrupted")
    header, arrays = _parse_sections(buf)
    try:
        return _assemble(header, arrays, version)
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactFormatError(f"inconsistent artifact contents: {exc}") from exc


def _assemble(header: dict, arrays: dict, version: int) -> ModelArtifact:
    norm = header["norm"]
    norm = None if norm is None else NormStats(norm[0], norm[1], norm[2])
    layers = tuple(
        RbmLayer(arrays[f"dbn.{i}.W"], arrays[f"dbn.{i}.b"], arrays[f"dbn.{i}.c"]) for i in range(header["dbn_layers"])
    )
    scaler = FeatureScaler(arrays["scaler.mean"], arrays["scaler.std"])
    params = []
    i = 0
    while f"classifier.{i}" in arrays:
        params.append(arrays[f"classifier.{i}"])
        i += 1
    spec = header["classifier"]
    if spec["kind"] == "dense":
        net = DenseNet(params[0::2], params[1::2])
    else:
        g = spec["geometry"]
        geometry = ConvGeometry(
            g["n_classes"], g["input_size"], g["padded_size"], tuple(g["kernels"]), tuple(g["maps"]), tuple(g["dense"]), g["pool"]
        )
        n_conv = len(geometry.kernels)
        conv, dense = params[: 2 * n_conv], params[2 * n_conv :]
        net = ConvNet(geometry, conv[0::2], conv[1::2], dense[0::2], dense[1::2])
    return ModelArtifact(
        header["method"],
        header["order"],
        ModulationConfig(**header["mod_cfg"]),
        DbnModel(layers, norm),
        scaler,
        net,
        header["metadata"],
        version,
    )


def save_model(art: ModelArtifact, path) -> None:
    Path(path).write_bytes(to_bytes(art))


def load_model(path) -> ModelArtifact:
    return from_bytes(Path(path).read_bytes())
