# /cooking_vit/src/vit.py

import logging
import math
from dataclasses import dataclass, asdict, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

# Local imports
from . import tensor as T
from .tensor import Tensor

# Set up logging for this module
logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Raised for inconsistent architecture or preprocessing settings."""


@dataclass(frozen=True)
class ViTConfig:
    """Architecture hyperparameters of a Vision Transformer."""
    image_size: int = 224
    patch_size: int = 16
    layers: int = 12
    hidden_d: int = 768
    mlp_size: int = 3072
    heads: int = 12
    num_classes: int = 7
    channels: int = 3
    dropout: float = 0.0
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.hidden_d % self.heads != 0:
            logger.error(f"hidden_d {self.hidden_d} is not divisible by heads {self.heads}")
            raise ConfigurationError(f"hidden_d {self.hidden_d} is not divisible by heads {self.heads}")
        if min(self.layers, self.hidden_d, self.mlp_size, self.heads, self.num_classes, self.channels) < 1:
            logger.error(f"All ViT dimensions must be positive: {self}")
            raise ConfigurationError(f"All ViT dimensions must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            logger.error(f"dropout must be in [0, 1), got {self.dropout}")
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size ** 2

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self) -> int:
        return self.hidden_d // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> 'ViTConfig':
        return cls(**values)

    def with_classes(self, num_classes: int) -> 'ViTConfig':
        return replace(self, num_classes=num_classes)


PRESETS: Dict[str, dict] = {
    'b16': dict(patch_size=16, layers=12, hidden_d=768, mlp_size=3072, heads=12),
    'l16': dict(patch_size=16, layers=24, hidden_d=1024, mlp_size=4096, heads=16),
    # Desk-scale model for smoke runs.
    'tiny': dict(image_size=32, patch_size=8, layers=2, hidden_d=32, mlp_size=64, heads=4),
}


def preset(name: str, num_classes: int = 7, **overrides) -> ViTConfig:
    key = name.lower().replace('-', '')
    if key not in PRESETS:
        logger.error(f"Unknown ViT preset '{name}'. Known presets: {sorted(PRESETS)}")
        raise ConfigurationError(f"Unknown ViT preset '{name}'")
    values = {'num_classes': num_classes, **PRESETS[key], **overrides}
    return ViTConfig(**values)


def param_shapes(config: ViTConfig) -> Dict[str, Tuple[int, ...]]:
    """The named weight inventory implied by a config, in canonical order."""
    d, m = config.hidden_d, config.mlp_size
    shapes = {
        'patch_embed.weight': (config.patch_dim, d),
        'patch_embed.bias': (d,),
        'cls_token': (1, d),
        'pos_embed': (config.seq_len, d),
    }
    for i in range(config.layers):
        p = f'encoder.{i}'
        shapes[f'{p}.ln1.gamma'] = (d,)
        shapes[f'{p}.ln1.beta'] = (d,)
        for proj in ('q', 'k', 'v', 'o'):
            shapes[f'{p}.attn.w{proj}'] = (d, d)
            shapes[f'{p}.attn.b{proj}'] = (d,)
        shapes[f'{p}.ln2.gamma'] = (d,)
        shapes[f'{p}.ln2.beta'] = (d,)
        shapes[f'{p}.mlp1.weight'] = (d, m)
        shapes[f'{p}.mlp1.bias'] = (m,)
        shapes[f'{p}.mlp2.weight'] = (m, d)
        shapes[f'{p}.mlp2.bias'] = (d,)
    shapes['final_norm.gamma'] = (d,)
    shapes['final_norm.beta'] = (d,)
    shapes['head.weight'] = (d, config.num_classes)
    shapes['head.bias'] = (config.num_classes,)
    return shapes


HEAD_NAMES = ('head.weight', 'head.bias')


def count_params(config: ViTConfig) -> int:
    return int(sum(math.prod(shape) for shape in param_shapes(config).values()))


def trace_shape(config: ViTConfig) -> Tuple[int, Tuple[int, int, int]]:
    """(layers, [heads, S, S]) of the attention captured by one forward pass."""
    return config.layers, (config.heads, config.seq_len, config.seq_len)


class ModelParams:
    """
    Named tensor collection for one ViTConfig.

    The key set is exactly `param_shapes(config)`; construction fails on any
    missing, extra or mis-shaped tensor.
    """

    def __init__(self, config: ViTConfig, tensors: Dict[str, Tensor]):
        self.config = config
        self.tensors = dict(tensors)
        self.validate()

    def validate(self):
        expected = param_shapes(self.config)
        missing = [name for name in expected if name not in self.tensors]
        extra = [name for name in self.tensors if name not in expected]
        if missing or extra:
            logger.error(f"Parameter inventory mismatch. Missing: {missing}; extra: {extra}")
            raise KeyError(f"Parameter inventory mismatch. Missing: {missing}; extra: {extra}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                logger.error(f"Tensor '{name}' has shape {self.tensors[name].shape}, expected {shape}")
                raise T.DimensionError(f"Tensor '{name}' has shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(param_shapes(self.config))

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return ((name, self.tensors[name]) for name in self)

    def names(self) -> List[str]:
        return list(self)

    def layer(self, index: int) -> Dict[str, Tensor]:
        prefix = f'encoder.{index}.'
        return {name[len(prefix):]: t for name, t in self.tensors.items() if name.startswith(prefix)}

    def copy(self) -> 'ModelParams':
        return ModelParams(self.config, {name: Tensor(t.data.copy(), dtype=t.dtype) for name, t in self.tensors.items()})

    def requires_grad_(self, names: Optional[List[str]] = None) -> 'ModelParams':
        selected = set(self.tensors if names is None else names)
        for name, t in self.tensors.items():
            t.requires_grad = name in selected
            t.grad = None
        return self

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def num_values(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


@dataclass
class AttentionTrace:
    """Post-softmax attention per layer, each [heads, S, S] (or [B, heads, S, S])."""
    per_layer: List[np.ndarray]

    def for_sample(self, index: int) -> 'AttentionTrace':
        return AttentionTrace([a[index] for a in self.per_layer])

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [a.shape for a in self.per_layer]


def _truncated_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float, dtype) -> np.ndarray:
    """Normal samples truncated at two standard deviations (resampled, not clipped)."""
    values = rng.standard_normal(shape, dtype=np.float32 if dtype == np.float32 else np.float64)
    outside = np.abs(values) > 2.0
    while np.any(outside):
        values[outside] = rng.standard_normal(int(outside.sum()), dtype=values.dtype)
        outside = np.abs(values) > 2.0
    return (values * std).astype(dtype, copy=False)


def init_params(config: ViTConfig, seed: int = 0, std: float = 0.02) -> ModelParams:
    """
    Deterministic initialization.

    Weight matrices ~ truncated normal (std 0.02); biases, class token and
    positional embedding are zero; layer-norm gamma=1, beta=0.
    """
    rng = np.random.default_rng(seed)
    dtype = T.get_default_dtype()
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith('.gamma'):
            data = np.ones(shape, dtype=dtype)
        elif len(shape) == 2 and name not in ('cls_token', 'pos_embed'):
            data = _truncated_normal(rng, shape, std, dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        tensors[name] = Tensor(data, dtype=dtype)
    logger.info(f"Initialized {count_params(config):,} parameters (seed={seed}).")
    return ModelParams(config, tensors)


# --- Model operations ---

def patchify(image, patch_size: int) -> Tensor:
    """
    Splits [..., H, W, C] into [..., N, P*P*C] non-overlapping patches.

    Patches are ordered row-major over the patch grid and each patch is
    flattened row-major over (row, column, channel).
    """
    image = T.as_tensor(image)
    *lead, h, w, c = image.shape
    if h % patch_size or w % patch_size:
        logger.error(f"Image {h}x{w} is not divisible into {patch_size}px patches.")
        raise ConfigurationError(f"Image {h}x{w} is not divisible into {patch_size}px patches")
    gh, gw = h // patch_size, w // patch_size
    k = len(lead)
    x = image.reshape(*lead, gh, patch_size, gw, patch_size, c)
    axes = list(range(k)) + [k, k + 2, k + 1, k + 3, k + 4]
    x = x.transpose(axes)
    return x.reshape(*lead, gh * gw, patch_size * patch_size * c)


def unpatchify(patches, patch_size: int, height: int, width: int, channels: int = 3) -> Tensor:
    """Inverse of `patchify`."""
    patches = T.as_tensor(patches)
    *lead, n, _ = patches.shape
    gh, gw = height // patch_size, width // patch_size
    if gh * gw != n:
        logger.error(f"{n} patches cannot tile a {height}x{width} image")
        raise ConfigurationError(f"{n} patches cannot tile a {height}x{width} image")
    k = len(lead)
    x = patches.reshape(*lead, gh, gw, patch_size, patch_size, channels)
    axes = list(range(k)) + [k, k + 2, k + 1, k + 3, k + 4]
    x = x.transpose(axes)
    return x.reshape(*lead, height, width, channels)


def embed(patches, params: ModelParams) -> Tensor:
    """Linear patch projection, class token at index 0, positional embedding added."""
    patches = T.as_tensor(patches)
    cfg = params.config
    if patches.shape[-2:] != (cfg.num_patches, cfg.patch_dim):
        logger.error(f"Patch tensor {patches.shape} does not match config ({cfg.num_patches}, {cfg.patch_dim})")
        raise T.DimensionError(f"Patch tensor {patches.shape} does not match config ({cfg.num_patches}, {cfg.patch_dim})")
    tokens = T.linear(patches, params['patch_embed.weight'], params['patch_embed.bias'])
    lead = patches.shape[:-2]
    cls = T.expand(params['cls_token'], lead) if lead else params['cls_token']
    x = T.concat([cls, tokens], axis=-2)
    return x + params['pos_embed']


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, s, d = x.shape
    k = len(lead)
    x = x.reshape(*lead, s, heads, d // heads)
    return x.transpose(list(range(k)) + [k + 1, k, k + 2])


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, s, dh = x.shape
    k = len(lead)
    x = x.transpose(list(range(k)) + [k + 1, k, k + 2])
    return x.reshape(*lead, s, h * dh)


def multi_head_attention(x, layer_params: Dict[str, Tensor], heads: int,
                         capture: bool = False) -> Tuple[Tensor, Optional[np.ndarray]]:
    """
    Scaled dot-product self-attention over [..., S, D].

    Per head: A_h = softmax(Q_h K_h^T / sqrt(d_h)); the head outputs A_h V_h are
    concatenated and projected by Wo. When `capture` is set the attention
    matrices are returned as [..., heads, S, S].
    """
    x = T.as_tensor(x)
    d = x.shape[-1]
    if d % heads:
        logger.error(f"Width {d} is not divisible by {heads} heads")
        raise ConfigurationError(f"Width {d} is not divisible by {heads} heads")
    q = _split_heads(T.linear(x, layer_params['attn.wq'], layer_params['attn.bq']), heads)
    k = _split_heads(T.linear(x, layer_params['attn.wk'], layer_params['attn.bk']), heads)
    v = _split_heads(T.linear(x, layer_params['attn.wv'], layer_params['attn.bv']), heads)
    scores = T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(d // heads))
    attn = T.softmax(scores, axis=-1)
    out = _merge_heads(T.matmul(attn, v))
    out = T.linear(out, layer_params['attn.wo'], layer_params['attn.bo'])
    return out, (attn.data.copy() if capture else None)


def mlp(x, layer_params: Dict[str, Tensor]) -> Tensor:
    hidden = T.gelu(T.linear(x, layer_params['mlp1.weight'], layer_params['mlp1.bias']))
    return T.linear(hidden, layer_params['mlp2.weight'], layer_params['mlp2.bias'])


def encoder_block(x, layer_params: Dict[str, Tensor], heads: int, capture: bool = False,
                  eps: float = 1e-6, dropout: float = 0.0,
                  rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Optional[np.ndarray]]:
    """Pre-norm block: x + MSA(LN(x)), then x + MLP(LN(x))."""
    x = T.as_tensor(x)
    normed = T.layer_norm(x, layer_params['ln1.gamma'], layer_params['ln1.beta'], eps)
    attn_out, attention = multi_head_attention(normed, layer_params, heads, capture)
    if dropout > 0.0 and rng is not None:
        attn_out = T.dropout(attn_out, dropout, rng)
    x = x + attn_out
    normed = T.layer_norm(x, layer_params['ln2.gamma'], layer_params['ln2.beta'], eps)
    mlp_out = mlp(normed, layer_params)
    if dropout > 0.0 and rng is not None:
        mlp_out = T.dropout(mlp_out, dropout, rng)
    return x + mlp_out, attention


def encode(images, params: ModelParams, capture: bool = False, train: bool = False,
           rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Optional[AttentionTrace]]:
    """Runs everything up to and including the final layer norm; returns the class-token row."""
    cfg = params.config
    images = T.as_tensor(images)
    if images.shape[-3:] != (cfg.image_size, cfg.image_size, cfg.channels):
        logger.error(f"Input of shape {images.shape} does not match image_size={cfg.image_size}, channels={cfg.channels}")
        raise ConfigurationError(
            f"Input of shape {images.shape} does not match image_size={cfg.image_size}; resize it first")
    dropout = cfg.dropout if train else 0.0
    x = embed(patchify(images, cfg.patch_size), params)
    trace = []
    for i in range(cfg.layers):
        x, attention = encoder_block(x, params.layer(i), cfg.heads, capture, cfg.ln_eps, dropout, rng)
        if capture:
            trace.append(attention)
    x = T.layer_norm(x, params['final_norm.gamma'], params['final_norm.beta'], cfg.ln_eps)
    cls_row = x[(slice(None),) * (x.ndim - 2) + (0, slice(None))]
    return cls_row, (AttentionTrace(trace) if capture else None)


def forward(images, params: ModelParams, capture: bool = False, train: bool = False,
            rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Optional[AttentionTrace]]:
    """
    Image [H, W, C] or batch [B, H, W, C] -> logits [K] or [B, K].

    patchify -> embed -> encoder blocks -> final layer norm -> head on the
    class-token row.
    """
    cls_row, trace = encode(images, params, capture, train, rng)
    if cls_row.ndim == 1:
        logits = T.linear(cls_row.reshape(1, -1), params['head.weight'], params['head.bias'])
        return logits.reshape(-1), trace
    return T.linear(cls_row, params['head.weight'], params['head.bias']), trace
