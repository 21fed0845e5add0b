"""
Artifact codecs.

Binary files are little-endian, start with a 4-byte magic, a u16 format version and the u64
config hash of the run that produced them, and end with a CRC32 of everything before it.

    MGMD  checkpoint    layer count u16, input ndim u8, extents u32[]; per layer kind u8,
                        tensor count u8, per tensor ndim u8, extents u32[], float32 data
    MGRS  reference set K u32, D u32, sampler kind u8, seed u64, input ndim u8, extents u32[],
                        K*D float32
    MGIF  fingerprint   model id hash u64, refset hash u64, baseline mode u8, K u32, S u32,
                        D u32, quadrature tag u8, scalarization u8, baseline seed u64,
                        K*S*D float32

Text artifacts (matrices, manifests, ROC points) start with a `# config_hash=<hex>` line.
"""

import csv
import io
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import FORMAT_VERSION
from app.exceptions import ArtifactFormatError
from app.gif_engine import BaselineMode, GiFCurveSet, QuadratureRule, Scalarization, make_baselines
from app.model_zoo import LineageKind, ZooEntry, ZooManifest
from app.reference_sampler import ReferenceSet, SamplerKind
from app.tensor_core import DiffModel, Layer, LayerKind
from app.utils import PathLike, atomic_write_bytes, atomic_write_text, format_hash, seal, stable_hash, unseal

HEADER = struct.Struct("<4sHQ")
LE_FLOAT = np.dtype("<f4")


class _Reader:
    def __init__(self, payload: bytes, what: str):
        self.payload = payload
        self.offset = 0
        self.what = what

    def unpack(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.payload):
            raise ArtifactFormatError(f"{self.what}: truncated header")
        values = struct.unpack_from(fmt, self.payload, self.offset)
        self.offset += size
        return values

    def shape(self) -> Tuple[int, ...]:
        (ndim,) = self.unpack("<B")
        return self.unpack(f"<{ndim}I") if ndim else ()

    def floats(self, count: int) -> np.ndarray:
        size = count * LE_FLOAT.itemsize
        if self.offset + size > len(self.payload):
            raise ArtifactFormatError(f"{self.what}: truncated payload")
        values = np.frombuffer(self.payload, dtype=LE_FLOAT, count=count, offset=self.offset)
        self.offset += size
        return values.astype(np.float32)

    def finish(self) -> None:
        if self.offset != len(self.payload):
            raise ArtifactFormatError(f"{self.what}: {len(self.payload) - self.offset} trailing bytes")


def _shape(shape: Sequence[int]) -> bytes:
    return struct.pack(f"<B{len(shape)}I", len(shape), *shape)


def _floats(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=LE_FLOAT).tobytes()


def _open(blob: bytes, magic: bytes, what: str) -> Tuple[_Reader, int]:
    reader = _Reader(unseal(blob, what), what)
    found, version, cfg_hash = reader.unpack(HEADER.format)
    if found != magic:
        raise ArtifactFormatError(f"{what}: bad magic {found!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise ArtifactFormatError(f"{what}: unsupported format version {version}")
    return reader, cfg_hash


# ==================== MGMD ====================

def encode_model(model: DiffModel, cfg_hash: int = 0) -> bytes:
    parts = [HEADER.pack(b"MGMD", FORMAT_VERSION, cfg_hash), struct.pack("<H", len(model.layers)),
             _shape(model.input_shape)]
    for layer in model.layers:
        parts.append(struct.pack("<BB", int(layer.kind), len(layer.params)))
        for param in layer.params:
            parts += [_shape(param.shape), _floats(param)]
    return seal(b"".join(parts))


def decode_model(blob: bytes) -> Tuple[DiffModel, int]:
    reader, cfg_hash = _open(blob, b"MGMD", "checkpoint")
    (count,) = reader.unpack("<H")
    input_shape = reader.shape()
    layers = []
    for _ in range(count):
        kind, tensors = reader.unpack("<BB")
        try:
            kind = LayerKind(kind)
        except ValueError:
            raise ArtifactFormatError(f"checkpoint: unknown layer kind {kind}") from None
        params = []
        for _ in range(tensors):
            shape = reader.shape()
            params.append(reader.floats(int(np.prod(shape))).reshape(shape))
        layers.append(Layer(kind, tuple(params)))
    reader.finish()
    return DiffModel(input_shape, tuple(layers)), cfg_hash


# ==================== MGRS ====================

def encode_refset(refset: ReferenceSet, cfg_hash: int = 0) -> bytes:
    header = HEADER.pack(b"MGRS", FORMAT_VERSION, cfg_hash)
    body = struct.pack("<IIBQ", refset.count, refset.dim, int(refset.kind), refset.seed)
    return seal(header + body + _shape(refset.input_shape) + _floats(refset.flat()))


def decode_refset(blob: bytes) -> Tuple[ReferenceSet, int]:
    reader, cfg_hash = _open(blob, b"MGRS", "reference set")
    count, dim, kind, seed = reader.unpack("<IIBQ")
    input_shape = reader.shape()
    if int(np.prod(input_shape)) != dim:
        raise ArtifactFormatError(f"reference set: input shape {input_shape} does not hold D={dim}")
    points = reader.floats(count * dim).reshape((count,) + tuple(input_shape))
    reader.finish()
    return ReferenceSet(points, SamplerKind(kind), seed), cfg_hash


# ==================== MGIF ====================

def encode_fingerprint(fp: GiFCurveSet, cfg_hash: int = 0) -> bytes:
    header = HEADER.pack(b"MGIF", FORMAT_VERSION, cfg_hash)
    body = struct.pack("<QQBIIIBBQ", stable_hash(fp.model_id), fp.refset_hash, int(fp.baseline_mode),
                       fp.count, fp.steps, fp.dim, int(fp.rule), int(fp.scalarization), fp.baseline_seed)
    return seal(header + body + _floats(fp.curves))


def decode_fingerprint(blob: bytes, model_id: str, refset: Optional[ReferenceSet] = None
                       ) -> Tuple[GiFCurveSet, int]:
    """Restores curves; baselines are regenerated from the stored mode and seed."""
    reader, cfg_hash = _open(blob, b"MGIF", "fingerprint")
    id_hash, refset_hash, mode, count, steps, dim, rule, scalarization, baseline_seed = reader.unpack("<QQBIIIBBQ")
    if id_hash != stable_hash(model_id):
        raise ArtifactFormatError(f"fingerprint: stored model id hash does not match {model_id!r}")
    curves = reader.floats(count * steps * dim).reshape(count, steps, dim).astype(np.float64)
    reader.finish()
    mode = BaselineMode(mode)
    endpoints = None
    if refset is not None and refset.refset_hash == refset_hash:
        endpoints = refset.flat()
        baselines = make_baselines(count, refset.input_shape, mode, baseline_seed)
    else:
        baselines = make_baselines(count, (dim,), mode, baseline_seed)
    return GiFCurveSet(model_id, curves, refset_hash, mode, baseline_seed, QuadratureRule(rule),
                       Scalarization(scalarization), baselines, endpoints), cfg_hash


# ==================== Text artifacts ====================

def _header(cfg_hash: int) -> str:
    return f"# config_hash={format_hash(cfg_hash)}\n"


def _split_header(text: str, what: str) -> Tuple[int, str]:
    first, _, rest = text.partition("\n")
    if not first.startswith("# config_hash="):
        raise ArtifactFormatError(f"{what}: missing config hash header")
    try:
        return int(first.split("=", 1)[1], 16), rest
    except ValueError:
        raise ArtifactFormatError(f"{what}: malformed config hash header {first!r}") from None


def encode_matrix(ids: Sequence[str], values: np.ndarray, cfg_hash: int = 0) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["model"] + list(ids))
    for model_id, row in zip(ids, values):
        writer.writerow([model_id] + [f"{v:.9g}" for v in row])
    return _header(cfg_hash) + buffer.getvalue()


def decode_matrix(text: str) -> Tuple[List[str], np.ndarray, int]:
    cfg_hash, body = _split_header(text, "matrix")
    rows = list(csv.reader(io.StringIO(body)))
    if not rows:
        raise ArtifactFormatError("matrix: empty file")
    ids = rows[0][1:]
    if [r[0] for r in rows[1:]] != ids:
        raise ArtifactFormatError("matrix: row labels do not match column labels")
    return ids, np.array([[float(v) for v in r[1:]] for r in rows[1:]]), cfg_hash


def encode_manifest(manifest: ZooManifest, cfg_hash: int = 0) -> str:
    lines = [f"id={e.model_id} kind={e.kind.value} parent={e.parent_id or '-'} seed={e.seed} "
             f"config_hash={format_hash(e.config_hash)}" for e in manifest]
    return _header(cfg_hash) + "\n".join(lines) + "\n"


def decode_manifest(text: str) -> Tuple[ZooManifest, int]:
    cfg_hash, body = _split_header(text, "manifest")
    manifest = ZooManifest()
    for number, line in enumerate(body.splitlines(), start=2):
        if not line.strip():
            continue
        try:
            fields: Dict[str, str] = dict(item.split("=", 1) for item in line.split())
            manifest.add(ZooEntry(fields["id"], LineageKind(fields["kind"]),
                                  None if fields["parent"] == "-" else fields["parent"],
                                  int(fields["seed"]), int(fields["config_hash"], 16)))
        except (KeyError, ValueError) as exc:
            raise ArtifactFormatError(f"manifest line {number}: {exc}") from None
    manifest.validate()
    return manifest, cfg_hash


def encode_roc(roc: Dict[str, List[Tuple[float, float]]], cfg_hash: int = 0) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["family", "fpr", "tpr"])
    for family, points in roc.items():
        writer.writerows([family, f"{fpr:.9g}", f"{tpr:.9g}"] for fpr, tpr in points)
    return _header(cfg_hash) + buffer.getvalue()


def encode_rows(header: Sequence[str], rows: Sequence[Sequence], cfg_hash: int = 0) -> str:
    """Generic CSV table; floats are written with 9 significant digits."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([f"{v:.9g}" if isinstance(v, float) else v for v in row] for row in rows)
    return _header(cfg_hash) + buffer.getvalue()


def read_config_hash(path: PathLike) -> int:
    """Config hash of any artifact, binary or text."""
    data = Path(path).read_bytes()
    if data[:4] in (b"MGMD", b"MGRS", b"MGIF"):
        if len(data) < HEADER.size:
            raise ArtifactFormatError(f"{path}: truncated header")
        return HEADER.unpack_from(data)[2]
    return _split_header(data.decode("utf-8"), str(path))[0]


# ==================== File helpers ====================

def save_model(path: PathLike, model: DiffModel, cfg_hash: int = 0) -> Path:
    return atomic_write_bytes(path, encode_model(model, cfg_hash))


def load_model(path: PathLike) -> Tuple[DiffModel, int]:
    return decode_model(Path(path).read_bytes())


def save_refset(path: PathLike, refset: ReferenceSet, cfg_hash: int = 0) -> Path:
    return atomic_write_bytes(path, encode_refset(refset, cfg_hash))


def load_refset(path: PathLike) -> Tuple[ReferenceSet, int]:
    return decode_refset(Path(path).read_bytes())


def save_fingerprint(path: PathLike, fp: GiFCurveSet, cfg_hash: int = 0) -> Path:
    return atomic_write_bytes(path, encode_fingerprint(fp, cfg_hash))


def load_fingerprint(path: PathLike, model_id: str, refset: Optional[ReferenceSet] = None
                     ) -> Tuple[GiFCurveSet, int]:
    return decode_fingerprint(Path(path).read_bytes(), model_id, refset)


def save_text(path: PathLike, text: str) -> Path:
    return atomic_write_text(path, text)
