# /cooking_vit/src/checkpoint_store.py

import json
import logging
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

# Local imports
from .tensor import Tensor
from .vit import HEAD_NAMES, ModelParams, ViTConfig, _truncated_normal, param_shapes

# Set up logging for this module
logger = logging.getLogger(__name__)

MAGIC = b'VITC'
VERSION = 1
# magic, format version, header byte length
_PREFIX = struct.Struct('<4sII')


class CheckpointFormatError(ValueError):
    """The file is not a readable VITC checkpoint."""


class CheckpointIntegrityError(ValueError):
    """Payload truncated or a tensor checksum does not match."""


class InventoryError(KeyError):
    """Tensor names or shapes disagree with the configured inventory."""

    def __str__(self):
        return str(self.args[0]) if self.args else ''


@dataclass(frozen=True)
class TensorEntry:
    name: str
    dtype: str
    shape: Tuple[int, ...]
    offset: int
    crc32: int

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * np.dtype(self.dtype).itemsize

    def header_line(self) -> str:
        shape = ','.join(str(d) for d in self.shape)
        return f"{self.name}\t{self.dtype}\t{shape}\t{self.offset}\t{self.crc32:08x}"

    @classmethod
    def parse(cls, line: str) -> 'TensorEntry':
        parts = line.split('\t')
        if len(parts) != 5:
            logger.error(f"Malformed tensor header line: {line!r}")
            raise CheckpointFormatError(f"Malformed tensor header line: {line!r}")
        name, dtype, shape, offset, crc = parts
        try:
            dims = tuple(int(d) for d in shape.split(',')) if shape else ()
            return cls(name, np.dtype(dtype).str, dims, int(offset), int(crc, 16))
        except (TypeError, ValueError) as e:
            logger.error(f"Malformed tensor header line: {line!r} ({e})")
            raise CheckpointFormatError(f"Malformed tensor header line: {line!r} ({e})") from e


@dataclass
class Checkpoint:
    config: ViTConfig
    params: ModelParams
    metadata: Dict[str, object] = field(default_factory=dict)
    version: int = VERSION


@dataclass
class _RawCheckpoint:
    config: dict
    metadata: dict
    entries: List[TensorEntry]
    arrays: Dict[str, np.ndarray]


def _little_endian(dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder('<')


def save(params: ModelParams, config: ViTConfig, metadata: Optional[dict], path: Path) -> Path:
    """
    Writes `params` as a VITC file.

    Tensors are stored little-endian in their own float width (float32 by
    default) in inventory order, each with a CRC32 of its bytes. The file is
    written to a temporary sibling and renamed into place.
    """
    if params.config != config:
        logger.error(f"Parameters were built for {params.config}, not {config}.")
        raise InventoryError(f"Parameters do not belong to the given config: {params.config} vs {config}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    blobs, lines, offset = [], [], 0
    lines.append('@config\t' + json.dumps(config.to_dict(), sort_keys=True))
    lines.append('@meta\t' + json.dumps(metadata or {}, sort_keys=True, default=str))
    for name, t in params.items():
        blob = memoryview(np.ascontiguousarray(t.data.astype(_little_endian(t.dtype), copy=False))).cast('B')
        entry = TensorEntry(name, _little_endian(t.dtype).str, t.shape, offset, zlib.crc32(blob))
        lines.append(entry.header_line())
        blobs.append(blob)
        offset += blob.nbytes
    header = ('\n'.join(lines) + '\n').encode('utf-8')

    fd, tmp_name = tempfile.mkstemp(prefix=f'.{path.name}.', suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
            f.write(header)
            for blob in blobs:
                f.write(blob)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    logger.info(f"Checkpoint with {len(blobs)} tensors ({offset:,} payload bytes) saved to {path}")
    return path


def _read(path: Path) -> _RawCheckpoint:
    path = Path(path)
    if not path.is_file():
        logger.error(f"Checkpoint not found at {path}")
        raise FileNotFoundError(f"Checkpoint not found at {path}")
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        logger.error(f"{path} is too short to be a VITC checkpoint")
        raise CheckpointFormatError(f"{path} is too short to be a VITC checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        logger.error(f"Bad magic bytes {magic!r} in {path}")
        raise CheckpointFormatError(f"Bad magic bytes {magic!r} in {path}; expected {MAGIC!r}")
    if version != VERSION:
        logger.error(f"Unsupported checkpoint version {version} in {path}")
        raise CheckpointFormatError(f"Unsupported checkpoint version {version}; this reader handles {VERSION}")
    start = _PREFIX.size + header_len
    if start > len(raw):
        logger.error(f"Header of {header_len} bytes runs past the end of {path}")
        raise CheckpointIntegrityError(f"Header of {header_len} bytes runs past the end of {path}")
    try:
        text = raw[_PREFIX.size:start].decode('utf-8')
    except UnicodeDecodeError as e:
        logger.error(f"Header of {path} is not UTF-8: {e}")
        raise CheckpointFormatError(f"Header of {path} is not UTF-8: {e}") from e

    config, metadata, entries = None, {}, []
    for line in text.splitlines():
        if not line:
            continue
        if line.startswith('@config\t'):
            config = json.loads(line.split('\t', 1)[1])
        elif line.startswith('@meta\t'):
            metadata = json.loads(line.split('\t', 1)[1])
        else:
            entries.append(TensorEntry.parse(line))
    if config is None:
        logger.error(f"{path} carries no @config header line")
        raise CheckpointFormatError(f"{path} carries no @config header line")

    payload = memoryview(raw)[start:]
    expected = sum(e.nbytes for e in entries)
    if len(payload) != expected:
        logger.error(f"Payload of {path} is {len(payload)} bytes, expected {expected}")
        raise CheckpointIntegrityError(
            f"Payload length mismatch in {path}: expected {expected} bytes, found {len(payload)}")

    arrays = {}
    for e in entries:
        blob = payload[e.offset:e.offset + e.nbytes]
        if e.offset + e.nbytes > len(payload) or zlib.crc32(blob) != e.crc32:
            logger.error(f"Checksum mismatch for tensor '{e.name}' in {path}")
            raise CheckpointIntegrityError(f"Checksum mismatch for tensor '{e.name}' in {path}")
        data = np.frombuffer(blob, dtype=e.dtype).reshape(e.shape)
        arrays[e.name] = data.astype(np.dtype(e.dtype).newbyteorder('='), copy=True)
    return _RawCheckpoint(config, metadata, entries, arrays)


def load(path: Path, strict: bool = True) -> Checkpoint:
    """
    Reads a VITC file written by `save`.

    Every inventory tensor must be present with its configured shape. Unknown
    tensor names are an error in strict mode and are dropped otherwise.
    """
    raw = _read(path)
    config = ViTConfig.from_dict(raw.config)
    expected = param_shapes(config)
    extra = [name for name in raw.arrays if name not in expected]
    if extra and strict:
        logger.error(f"Checkpoint {path} holds tensors outside the inventory: {extra}")
        raise InventoryError(f"Unexpected tensors in {path}: {extra}")
    if extra:
        logger.warning(f"Ignoring {len(extra)} unknown tensors in {path}: {extra}")
    _check_inventory(raw.arrays, expected, path)
    params = ModelParams(config, {name: Tensor(raw.arrays[name], dtype=raw.arrays[name].dtype) for name in expected})
    logger.info(f"Loaded checkpoint {path} ({params.num_values():,} values).")
    return Checkpoint(config, params, raw.metadata, VERSION)


def _check_inventory(arrays: Dict[str, np.ndarray], expected: Dict[str, Tuple[int, ...]], source,
                     skip: Tuple[str, ...] = ()):
    missing = [name for name in expected if name not in arrays and name not in skip]
    if missing:
        logger.error(f"Checkpoint {source} is missing tensors: {missing}")
        raise InventoryError(f"Missing tensors in {source}: {missing}")
    for name, shape in expected.items():
        if name in skip:
            continue
        if arrays[name].shape != shape:
            logger.error(f"Tensor '{name}' in {source} has shape {arrays[name].shape}, expected {shape}")
            raise InventoryError(f"Tensor '{name}' in {source} has shape {arrays[name].shape}, expected {shape}")


# Published big_vision ViT names -> internal inventory. `{i}` is the encoder
# block index. Kernels stored in their big_vision layouts are reshaped:
# [P,P,C,D] patch kernels, [D,H,dh] q/k/v kernels, [H,dh] q/k/v biases and
# [H,dh,D] output kernels all flatten row-major onto the internal matrices.
EXTERNAL_NAME_MAP: Dict[str, str] = {
    'embedding/kernel': 'patch_embed.weight',
    'embedding/bias': 'patch_embed.bias',
    'cls': 'cls_token',
    'Transformer/posembed_input/pos_embedding': 'pos_embed',
    'Transformer/encoderblock_{i}/LayerNorm_0/scale': 'encoder.{i}.ln1.gamma',
    'Transformer/encoderblock_{i}/LayerNorm_0/bias': 'encoder.{i}.ln1.beta',
    'Transformer/encoderblock_{i}/MultiHeadDotProductAttention_1/query/kernel': 'encoder.{i}.attn.wq',
    'Transformer/encoderblock_{i}/MultiHeadDotProductAttention_1/query/bias': 'encoder.{i}.attn.bq',
    'Transformer/encoderblock_{i}/MultiHeadDotProductAttention_1/key/kernel': 'encoder.{i}.attn.wk',
    'Transformer/encoderblock_{i}/MultiHeadDotProductAttention_1/key/bias': 'encoder.{i}.attn.bk',
    'Transformer/encoderblock_{i}/MultiHeadDotProductAttention_1/value/kernel': 'encoder.{i}.attn.wv',
    'Transformer/encoderblock_{i}/MultiHeadDotProductAttention_1/value/bias': 'encoder.{i}.attn.bv',
    'Transformer/encoderblock_{i}/MultiHeadDotProductAttention_1/out/kernel': 'encoder.{i}.attn.wo',
    'Transformer/encoderblock_{i}/MultiHeadDotProductAttention_1/out/bias': 'encoder.{i}.attn.bo',
    'Transformer/encoderblock_{i}/LayerNorm_2/scale': 'encoder.{i}.ln2.gamma',
    'Transformer/encoderblock_{i}/LayerNorm_2/bias': 'encoder.{i}.ln2.beta',
    'Transformer/encoderblock_{i}/MlpBlock_3/Dense_0/kernel': 'encoder.{i}.mlp1.weight',
    'Transformer/encoderblock_{i}/MlpBlock_3/Dense_0/bias': 'encoder.{i}.mlp1.bias',
    'Transformer/encoderblock_{i}/MlpBlock_3/Dense_1/kernel': 'encoder.{i}.mlp2.weight',
    'Transformer/encoderblock_{i}/MlpBlock_3/Dense_1/bias': 'encoder.{i}.mlp2.bias',
    'Transformer/encoder_norm/scale': 'final_norm.gamma',
    'Transformer/encoder_norm/bias': 'final_norm.beta',
    'head/kernel': 'head.weight',
    'head/bias': 'head.bias',
}


def external_names(layers: int) -> Dict[str, str]:
    """EXTERNAL_NAME_MAP expanded for `layers` encoder blocks."""
    names = {}
    for external, internal in EXTERNAL_NAME_MAP.items():
        if '{i}' in external:
            for i in range(layers):
                names[external.format(i=i)] = internal.format(i=i)
        else:
            names[external] = internal
    return names


def _external_layout(internal: str, config: ViTConfig) -> Optional[Tuple[int, ...]]:
    """The big_vision storage shape of an internal tensor, when it differs from ours."""
    d, heads, dh = config.hidden_d, config.heads, config.head_dim
    if internal == 'patch_embed.weight':
        return (config.patch_size, config.patch_size, config.channels, d)
    if internal == 'cls_token':
        return (1, 1, d)
    if internal == 'pos_embed':
        return (1, config.seq_len, d)
    if internal.endswith(('attn.wq', 'attn.wk', 'attn.wv')):
        return (d, heads, dh)
    if internal.endswith(('attn.bq', 'attn.bk', 'attn.bv')):
        return (heads, dh)
    if internal.endswith('attn.wo'):
        return (heads, dh, d)
    return None


def _rename(arrays: Dict[str, np.ndarray], config: ViTConfig, source) -> Dict[str, np.ndarray]:
    """
    Maps external names onto the inventory.

    Only tensors stored under an external name are reshaped, and only from
    their documented big_vision layout; any other shape is left as read so
    the inventory check rejects it by name.
    """
    expected = param_shapes(config)
    mapping = external_names(config.layers)
    out = {}
    for name, data in arrays.items():
        is_external = name not in expected
        internal = mapping.get(name) if is_external else name
        if internal is None:
            logger.warning(f"Ignoring tensor '{name}' from {source}: no internal counterpart.")
            continue
        if internal in HEAD_NAMES:
            # Head width is free; only the hidden dimension is fixed.
            if internal == 'head.weight' and data.ndim >= 2:
                data = data.reshape(-1, data.shape[-1])
            out[internal] = data
            continue
        shape = expected[internal]
        if internal == 'pos_embed' and data.size != np.prod(shape) and data.size % config.hidden_d == 0:
            seq = data.size // config.hidden_d
            logger.error(f"Positional embedding in {source} covers {seq} tokens, config needs {config.seq_len}.")
            raise InventoryError(
                f"Positional embedding sequence length {seq} in {source} does not match {config.seq_len} "
                f"(image_size={config.image_size}, patch_size={config.patch_size}); interpolation is not supported")
        if is_external and data.shape == _external_layout(internal, config):
            data = data.reshape(shape)
        out[internal] = data
    return out


def adapt_head(params: ModelParams, num_classes: int, seed: int = 0, init: str = 'zero') -> ModelParams:
    """
    Replaces the classification head with a fresh `num_classes` head.

    The default zero head makes every initial logit 0. `init='normal'` draws
    the weight from the truncated normal used by `init_params` instead.
    Every other tensor is carried over bitwise.
    """
    config = params.config.with_classes(num_classes)
    shapes = param_shapes(config)
    dtype = params['head.weight'].dtype
    tensors = {name: Tensor(t.data.copy(), dtype=t.dtype) for name, t in params.items() if name not in HEAD_NAMES}
    if init == 'zero':
        weight = np.zeros(shapes['head.weight'], dtype=dtype)
    elif init == 'normal':
        weight = _truncated_normal(np.random.default_rng(seed), shapes['head.weight'], 0.02, dtype)
    else:
        logger.error(f"Unknown head init '{init}'")
        raise ValueError(f"Unknown head init '{init}'")
    tensors['head.weight'] = Tensor(weight, dtype=dtype)
    tensors['head.bias'] = Tensor(np.zeros(shapes['head.bias'], dtype=dtype), dtype=dtype)
    logger.info(f"Head adapted from {params.config.num_classes} to {num_classes} classes ({init} init).")
    return ModelParams(config, tensors)


def import_external(path: Path, config: ViTConfig, seed: int = 0) -> ModelParams:
    """
    Loads pretrained weights into the inventory of `config`.

    Tensor names may be internal or big_vision-style (see EXTERNAL_NAME_MAP).
    Every non-head tensor must be present with a compatible shape. The file's
    head is kept when its class count matches, otherwise it is replaced by
    `adapt_head`.
    """
    raw = _read(path)
    arrays = _rename(raw.arrays, config, path)
    expected = param_shapes(config)
    _check_inventory(arrays, expected, path, skip=HEAD_NAMES)

    weight, bias = arrays.get('head.weight'), arrays.get('head.bias')
    file_classes = None
    if weight is not None and bias is not None and weight.ndim == 2 and weight.shape[0] == config.hidden_d \
            and bias.shape == (weight.shape[1],):
        file_classes = weight.shape[1]
    elif weight is not None or bias is not None:
        logger.warning(f"Head tensors in {path} have unusable shapes; a new head will be initialized.")

    source_config = config.with_classes(file_classes or config.num_classes)
    dtype = arrays[next(iter(expected))].dtype
    tensors = {name: Tensor(arrays[name], dtype=arrays[name].dtype) for name in expected if name not in HEAD_NAMES}
    if file_classes is not None:
        tensors['head.weight'] = Tensor(weight, dtype=weight.dtype)
        tensors['head.bias'] = Tensor(bias, dtype=bias.dtype)
    else:
        tensors['head.weight'] = Tensor(np.zeros((config.hidden_d, config.num_classes), dtype=dtype), dtype=dtype)
        tensors['head.bias'] = Tensor(np.zeros(config.num_classes, dtype=dtype), dtype=dtype)
    params = ModelParams(source_config, tensors)
    logger.info(f"Imported {len(tensors)} tensors from {path} (source: {raw.metadata.get('source', 'unknown')}).")
    if file_classes != config.num_classes:
        params = adapt_head(params, config.num_classes, seed)
    return params
