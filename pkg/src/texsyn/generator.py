"""Two-stream synthesis network.

The generator stream turns a noise vector crossed with a selection
embedding into 1x1 seed maps, expands them with a transposed convolution,
then repeatedly upsamples and convolves up to the output resolution.  The
selector stream projects the same embedding into a coarse spatial map and
refines it once per scale; its guidance maps are concatenated into the
generator before each scale's convolution, telling every scale which
texture is wanted.

Texture ids are 1-based everywhere: the one-hot selection for texture k
has bit k set, counting from 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as _rng
from . import serialize
from .autodiff import ShapeError, Tensor


@dataclass(frozen=True)
class SynthesisConfig:
    textures: int  # M, how many exemplars one network holds
    embed_dim: int = 8  # d
    noise_dim: int = 5  # n
    base_size: int = 4  # spatial size of the seed expansion
    scales: int = 3  # upsampling doublings; output = base_size * 2**scales
    widths: tuple = (32, 32, 24, 16)  # channels at base + each scale
    guidance_channels: int = 8

    def __post_init__(self):
        if self.textures < 1:
            raise ValueError(f"need at least one texture, got {self.textures}")
        if self.embed_dim < 1 or self.noise_dim < 1:
            raise ValueError("embed_dim and noise_dim must be >= 1")
        if len(self.widths) != self.scales + 1:
            raise ValueError(
                f"{self.scales} scales need {self.scales + 1} widths, "
                f"got {len(self.widths)}"
            )

    @property
    def output_size(self) -> int:
        return self.base_size * 2**self.scales


@dataclass
class SelectionUnit:
    """Nonnegative per-texture weights; one-hot during training."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ShapeError(f"selection must be 1-D, got shape {w.shape}")
        if np.any(w < 0):
            raise ValueError("selection weights must be nonnegative")
        self.weights = w


def one_hot(config: SynthesisConfig, texture_id: int) -> SelectionUnit:
    if not 1 <= texture_id <= config.textures:
        raise ValueError(
            f"texture id {texture_id} out of range 1..{config.textures}"
        )
    w = np.zeros(config.textures)
    w[texture_id - 1] = 1.0
    return SelectionUnit(w)


def interpolate_selection(config: SynthesisConfig, bits: list) -> SelectionUnit:
    """Sparse selection from (texture id, weight) pairs, ids 1-based."""
    w = np.zeros(config.textures)
    seen = set()
    for texture_id, weight in bits:
        if not 1 <= texture_id <= config.textures:
            raise ValueError(
                f"texture id {texture_id} out of range 1..{config.textures}"
            )
        if texture_id in seen:
            raise ValueError(f"texture id {texture_id} listed twice")
        if weight < 0:
            raise ValueError(f"negative weight {weight} for texture {texture_id}")
        seen.add(texture_id)
        w[texture_id - 1] = weight
    return SelectionUnit(w)


@dataclass
class GeneratorParams:
    """All learnable tensors, keyed by stable names for serialization."""

    config: SynthesisConfig
    tensors: dict = field(repr=False)  # name -> Tensor (requires_grad)

    def parameters(self) -> list:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def _param_shapes(config: SynthesisConfig) -> dict:
    c = config
    seed_channels = c.noise_dim * c.embed_dim
    gc = c.guidance_channels
    shapes = {
        "embedding": (c.textures, c.embed_dim),
        "seed.kernel": (seed_channels, c.widths[0], c.base_size, c.base_size),
        "selector.proj": (c.embed_dim, gc * c.base_size * c.base_size),
        "selector.proj_bias": (gc * c.base_size * c.base_size,),
    }
    for s in range(1, c.scales + 1):
        shapes[f"scale{s}.kernel"] = (c.widths[s], c.widths[s - 1] + gc, 3, 3)
        shapes[f"scale{s}.bias"] = (c.widths[s],)
        shapes[f"selector.scale{s}.kernel"] = (gc, gc, 3, 3)
        shapes[f"selector.scale{s}.bias"] = (gc,)
    shapes["rgb.kernel"] = (3, c.widths[c.scales], 3, 3)
    shapes["rgb.bias"] = (3,)
    return shapes


def init_params(config: SynthesisConfig, seed: int) -> GeneratorParams:
    """Fan-in scaled Gaussian kernels, zero biases, sigma 0.1 embedding."""
    gen = _rng.stream(seed, "generator-init")
    tensors = {}
    for name, shape in _param_shapes(config).items():
        if name == "embedding":
            data = gen.standard_normal(shape) * 0.1
        elif name.endswith("bias"):
            data = np.zeros(shape)
        elif name == "selector.proj":
            data = gen.standard_normal(shape) * np.sqrt(1.0 / shape[0])
        else:
            fan_in = int(np.prod(shape[1:])) if name == "seed.kernel" else int(
                np.prod((shape[1],) + shape[2:])
            )
            gain = 1.0 if name == "rgb.kernel" else 2.0
            data = gen.standard_normal(shape) * np.sqrt(gain / fan_in)
        tensors[name] = Tensor(data.astype(np.float32), requires_grad=True)
    return GeneratorParams(config=config, tensors=tensors)


def embed(params: GeneratorParams, selection: SelectionUnit) -> Tensor:
    """Project the selection onto the embedding rows: e = selection @ E."""
    m = params.config.textures
    if selection.weights.shape != (m,):
        raise ShapeError(
            f"selection has shape {selection.weights.shape}, expected ({m},)"
        )
    e_mat = params.tensors["embedding"]
    sel = Tensor(selection.weights.reshape(1, m), dtype=e_mat.dtype)
    return ad.reshape(ad.matmul(sel, e_mat), (params.config.embed_dim,))


def seed_maps(noise: Tensor, embedding: Tensor) -> Tensor:
    """Outer product of noise and embedding as n*d separate 1x1 maps."""
    out = ad.outer_product(noise, embedding)
    n, d = out.shape
    return ad.reshape(out, (1, n * d, 1, 1))


def _zero_guidance(config: SynthesisConfig, dtype) -> list:
    maps = []
    for s in range(1, config.scales + 1):
        size = config.base_size * 2**s
        maps.append(
            Tensor(np.zeros((1, config.guidance_channels, size, size)), dtype=dtype)
        )
    return maps


def selector_guidance(params: GeneratorParams, embedding: Tensor) -> list:
    """One guidance map per scale, sized to match the generator there."""
    c = params.config
    t = params.tensors
    x = ad.matmul(ad.reshape(embedding, (1, c.embed_dim)), t["selector.proj"])
    x = ad.add(x, ad.reshape(t["selector.proj_bias"], (1,) + t["selector.proj_bias"].shape))
    x = ad.leaky_relu(
        ad.reshape(x, (1, c.guidance_channels, c.base_size, c.base_size)), 0.2
    )
    maps = []
    for s in range(1, c.scales + 1):
        x = ad.upsample_nearest(x, 2)
        x = ad.leaky_relu(
            ad.conv2d(x, t[f"selector.scale{s}.kernel"], t[f"selector.scale{s}.bias"], pad=1),
            0.2,
        )
        maps.append(x)
    return maps


def generate(
    params: GeneratorParams,
    selection: SelectionUnit,
    noise,
    use_selector: bool = True,
) -> Tensor:
    """Synthesize one image [3,S,S] in [-1,1]; pure in all arguments.

    With ``use_selector`` off (an ablation) the guidance maps are zeros of
    the same shapes, so the generator stream runs unchanged but receives
    no texture information beyond the seed maps.
    """
    c = params.config
    t = params.tensors
    if not isinstance(noise, Tensor):
        noise = Tensor(np.asarray(noise), dtype=t["embedding"].dtype)
    if noise.shape != (c.noise_dim,):
        raise ShapeError(f"noise has shape {noise.shape}, expected ({c.noise_dim},)")
    e = embed(params, selection)
    x = ad.full_conv2d(seed_maps(noise, e), t["seed.kernel"])
    x = ad.leaky_relu(x, 0.2)
    guidance = (
        selector_guidance(params, e)
        if use_selector
        else _zero_guidance(c, noise.dtype)
    )
    for s in range(1, c.scales + 1):
        x = ad.upsample_nearest(x, 2)
        x = ad.concat_channels(x, guidance[s - 1])
        x = ad.leaky_relu(ad.conv2d(x, t[f"scale{s}.kernel"], t[f"scale{s}.bias"], pad=1), 0.2)
    x = ad.tanh(ad.conv2d(x, t["rgb.kernel"], t["rgb.bias"], pad=1))
    return ad.reshape(x, (3, c.output_size, c.output_size))


def sample_noise(config: SynthesisConfig, gen: np.random.Generator) -> np.ndarray:
    """Noise vectors are uniform in [-1, 1]."""
    return gen.uniform(-1.0, 1.0, size=config.noise_dim)


# ---------------------------------------------------------------------------
# model files: config header + weight tensors in the shared binary format

_CONFIG_KEY = "synthesis.config"


def _config_array(config: SynthesisConfig) -> np.ndarray:
    return np.array(
        [
            config.textures,
            config.embed_dim,
            config.noise_dim,
            config.base_size,
            config.scales,
            config.guidance_channels,
            *config.widths,
        ],
        dtype=np.float32,
    )


def _config_from_array(arr: np.ndarray) -> SynthesisConfig:
    vals = [int(v) for v in arr.tolist()]
    if len(vals) < 7 or any(float(v) != float(o) for v, o in zip(vals, arr.tolist())):
        raise serialize.WeightFormatError(f"malformed config header {arr.tolist()}")
    return SynthesisConfig(
        textures=vals[0],
        embed_dim=vals[1],
        noise_dim=vals[2],
        base_size=vals[3],
        scales=vals[4],
        guidance_channels=vals[5],
        widths=tuple(vals[6:]),
    )


def save_model(params: GeneratorParams, path: str) -> None:
    tensors = {_CONFIG_KEY: _config_array(params.config)}
    for name, t in params.tensors.items():
        tensors[name] = t.data.astype(np.float32, copy=False)
    serialize.save_tensors(path, tensors)


def load_model(path: str) -> GeneratorParams:
    tensors = serialize.load_tensors(path)
    if _CONFIG_KEY not in tensors:
        raise serialize.WeightFormatError("model file lacks a config header")
    config = _config_from_array(tensors.pop(_CONFIG_KEY))
    expected = _param_shapes(config)
    for name, shape in expected.items():
        if name not in tensors:
            raise serialize.WeightFormatError(
                f"missing tensor '{name}' (expected shape {shape})"
            )
        if tensors[name].shape != shape:
            raise serialize.WeightFormatError(
                f"tensor '{name}' has shape {tensors[name].shape}, expected {shape}"
            )
    extra = set(tensors) - set(expected)
    if extra:
        raise serialize.WeightFormatError(f"unexpected tensors {sorted(extra)}")
    return GeneratorParams(
        config=config,
        tensors={n: Tensor(tensors[n], requires_grad=True) for n in expected},
    )
