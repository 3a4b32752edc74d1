"""Model and dataset persistence.

Model files: magic ``EINM1``, a length-prefixed JSON header (structure,
family, replica assignment, layer plan, provenance, tensor manifest),
then one blob per tensor (u32 ndim, u32 dims, little-endian f64 payload)
in header order, closed by a CRC32 of the blob section.

Datasets: numeric CSV (one sample per row) or binary ``EIND1`` with
u32 sample count, u32 variable count, u8 dtype tag (0 = f32, 1 = u8) and a
row-major payload. Images are written as binary PGM/PPM only.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from . import engine
from .compiler import EinsumLayer, MixingLayer, compile_graph
from .expfam import ExponentialFamily
from .model import EinetModel
from .structures import RegionGraph

MODEL_MAGIC = b"EINM1"
DATA_MAGIC = b"EIND1"


class ModelFileError(ValueError):
    pass


class MagicError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class ShapeError(ModelFileError):
    pass


def _tensor_list(model: EinetModel):
    p = model.params
    out = [(f"einsum:{i}", p.einsum[i]) for i in sorted(p.einsum)]
    out += [(f"mixing:{i}", p.mixing[i]) for i in sorted(p.mixing)]
    out.append(("phi", p.phi))
    return out


def save_model(path, model: EinetModel):
    tensors = _tensor_list(model)
    header = {
        "format": 1,
        "region_graph": json.loads(model.circuit.rg.to_json()),
        "k": model.circuit.k,
        "k_root": model.circuit.k_root,
        "family": model.family.to_dict(),
        "replica": {
            "count": model.circuit.replicas.count,
            "assignment": {str(k): v for k, v
                           in sorted(model.circuit.replicas.replica_of.items())},
        },
        "layer_plan": json.loads(model.circuit.plan_json()),
        "provenance": model.provenance,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    hdr = json.dumps(header).encode("utf-8")
    blobs = bytearray()
    for _, t in tensors:
        blobs += struct.pack("<I", t.ndim)
        blobs += struct.pack(f"<{t.ndim}I", *t.shape)
        blobs += np.ascontiguousarray(t, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(hdr)))
        f.write(hdr)
        f.write(blobs)
        f.write(struct.pack("<I", zlib.crc32(bytes(blobs))))


def load_model(path) -> EinetModel:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:5] != MODEL_MAGIC:
        raise MagicError(f"{path}: not a model file (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, 5)
    header = json.loads(raw[9:9 + hlen].decode("utf-8"))
    blob = raw[9 + hlen:-4]
    if len(raw) < 9 + hlen + 4:
        raise ChecksumError(f"{path}: truncated file")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(blob) != crc:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated)")

    tensors = {}
    off = 0
    for spec in header["tensors"]:
        if off + 4 > len(blob):
            raise ShapeError(f"{path}: blob section ends inside {spec['name']}")
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        if list(shape) != list(spec["shape"]):
            raise ShapeError(
                f"{path}: tensor {spec['name']}: header shape {spec['shape']} "
                f"!= blob shape {list(shape)}")
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        off += 8 * n
        tensors[spec["name"]] = data.reshape(shape).astype(np.float64)

    rg = RegionGraph.from_json(json.dumps(header["region_graph"]))
    circuit = compile_graph(rg, k=header["k"], k_root=header["k_root"])
    family = ExponentialFamily.from_dict(header["family"])
    einsum, mixing = {}, {}
    for name, t in tensors.items():
        if name.startswith("einsum:"):
            einsum[int(name.split(":")[1])] = t
        elif name.startswith("mixing:"):
            mixing[int(name.split(":")[1])] = t
    for i, layer in enumerate(circuit.layers):
        if isinstance(layer, EinsumLayer) and i not in einsum:
            raise ShapeError(f"{path}: missing weights for einsum layer {i}")
        if isinstance(layer, MixingLayer) and i not in mixing:
            raise ShapeError(f"{path}: missing weights for mixing layer {i}")
    params = engine.Parameters(einsum=einsum, mixing=mixing, phi=tensors["phi"])
    return EinetModel(circuit=circuit, params=params, family=family,
                      provenance=header.get("provenance", {}))


def load_dataset(path, normalize=None) -> np.ndarray:
    """CSV or EIND1 binary; returns float64 (n, d).

    ``normalize`` divides by 255; default on for u8 payloads, off otherwise.
    """
    with open(path, "rb") as f:
        head = f.read(5)
    if head == DATA_MAGIC:
        with open(path, "rb") as f:
            raw = f.read()
        n, d = struct.unpack_from("<II", raw, 5)
        dtype_tag = raw[13]
        payload = raw[14:]
        if dtype_tag == 0:
            arr = np.frombuffer(payload, dtype="<f4", count=n * d)
            if normalize is None:
                normalize = False
        elif dtype_tag == 1:
            arr = np.frombuffer(payload, dtype=np.uint8, count=n * d)
            if normalize is None:
                normalize = True
        else:
            raise ValueError(f"{path}: unknown dtype tag {dtype_tag}")
        data = arr.astype(np.float64).reshape(n, d)
    else:
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))
        if normalize is None:
            normalize = False
    if normalize:
        data = data / 255.0
    if data.size == 0:
        raise ValueError(f"{path}: empty dataset")
    return data


def save_dataset(path, data, dtype="f32"):
    data = np.atleast_2d(np.asarray(data))
    n, d = data.shape
    with open(path, "wb") as f:
        f.write(DATA_MAGIC)
        f.write(struct.pack("<II", n, d))
        if dtype == "f32":
            f.write(bytes([0]))
            f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
        elif dtype == "u8":
            f.write(bytes([1]))
            f.write(np.ascontiguousarray(data, dtype=np.uint8).tobytes())
        else:
            raise ValueError(f"unknown dtype {dtype!r}")


def write_pgm(path, img):
    """Binary 8-bit PGM."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_ppm(path, img):
    """Binary 8-bit PPM, img shape (h, w, 3)."""
    img = np.asarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_pgm_grid(path, images, cols=None):
    """Tile (n, h, w) images into one PGM."""
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    cols = cols or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    grid = np.zeros((rows * h, cols * w), dtype=np.uint8)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = img
    write_pgm(path, grid)
