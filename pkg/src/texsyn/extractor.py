"""Fixed multi-scale feature extractor used by all losses.

Five stages of 3x3 convolutions with ReLU, average-pooled between stages,
mirroring a classic deep recognition topology at desk-scale widths.  The
weights are random but deterministic in a seed, and frozen: features act
as fixed multi-scale projections whose Gram statistics the losses compare.
Activations are tapped after named ReLUs, e.g. "conv4_2" is the second
convolution of stage 4.

Images enter in [-1, 1].  Spatial size must be divisible by 2**(stages-1)
so every pooling halving lands on an even size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as _rng
from . import serialize
from .autodiff import ShapeError, Tensor

DEFAULT_TAPS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1", "conv4_2")


@dataclass(frozen=True)
class ExtractorConfig:
    stage_channels: tuple = (8, 16, 32, 64, 64)
    convs_per_stage: tuple = (1, 1, 1, 2, 1)
    taps: tuple = DEFAULT_TAPS
    seed: int = 0
    weight_file: str | None = None

    def __post_init__(self):
        if len(self.stage_channels) != len(self.convs_per_stage):
            raise ValueError(
                f"{len(self.stage_channels)} stage widths but "
                f"{len(self.convs_per_stage)} conv counts"
            )
        if len(set(self.taps)) != len(self.taps):
            raise ValueError("duplicate tap names")
        for tap in self.taps:
            self.locate_tap(tap)

    @property
    def stages(self) -> int:
        return len(self.stage_channels)

    @property
    def size_divisor(self) -> int:
        return 2 ** (self.stages - 1)

    def locate_tap(self, name: str) -> tuple:
        """Map 'conv{s}_{i}' to zero-based (stage, conv) indices."""
        try:
            body = name.removeprefix("conv")
            stage_s, idx_s = body.split("_")
            stage, idx = int(stage_s) - 1, int(idx_s) - 1
        except (ValueError, AttributeError):
            raise ValueError(f"malformed tap name {name!r}") from None
        if not (0 <= stage < self.stages) or not (
            0 <= idx < self.convs_per_stage[stage]
        ):
            raise ValueError(f"tap {name!r} does not resolve to a layer")
        return stage, idx

    def tap_channels(self, name: str) -> int:
        stage, _ = self.locate_tap(name)
        return self.stage_channels[stage]


@dataclass
class Extractor:
    """Frozen weights plus the config that shaped them."""

    config: ExtractorConfig
    weights: dict = field(repr=False)  # name -> float32 ndarray

    def signature(self) -> bytes:
        """Digest of all weights, for frozen-ness assertions."""
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.weights):
            h.update(name.encode())
            h.update(self.weights[name].tobytes())
        return h.digest()


def _layer_names(config: ExtractorConfig):
    for stage in range(config.stages):
        for idx in range(config.convs_per_stage[stage]):
            yield stage, idx, f"conv{stage + 1}_{idx + 1}"


def _expected_shapes(config: ExtractorConfig) -> dict:
    shapes = {}
    in_ch = 3
    for stage, idx, name in _layer_names(config):
        out_ch = config.stage_channels[stage]
        shapes[f"{name}.kernel"] = (out_ch, in_ch, 3, 3)
        shapes[f"{name}.bias"] = (out_ch,)
        in_ch = out_ch
    return shapes


def build_extractor(config: ExtractorConfig = ExtractorConfig()) -> Extractor:
    """Construct the extractor, seeding weights or loading them from file."""
    expected = _expected_shapes(config)
    if config.weight_file is not None:
        weights = serialize.load_tensors(config.weight_file)
        for name, shape in expected.items():
            if name not in weights:
                raise serialize.WeightFormatError(
                    f"missing tensor '{name}' (expected shape {shape})"
                )
            if weights[name].shape != shape:
                raise serialize.WeightFormatError(
                    f"tensor '{name}' has shape {weights[name].shape}, "
                    f"expected {shape}"
                )
        extra = set(weights) - set(expected)
        if extra:
            raise serialize.WeightFormatError(f"unexpected tensors {sorted(extra)}")
    else:
        gen = _rng.stream(config.seed, "extractor-weights")
        weights = {}
        for name, shape in expected.items():
            if name.endswith(".kernel"):
                fan_in = shape[1] * shape[2] * shape[3]
                std = np.sqrt(2.0 / fan_in)
                weights[name] = (gen.standard_normal(shape) * std).astype(np.float32)
            else:
                weights[name] = np.zeros(shape, dtype=np.float32)
    return Extractor(config=config, weights=weights)


def save_extractor(extractor: Extractor, path: str) -> None:
    serialize.save_tensors(path, extractor.weights)


def extract(extractor: Extractor, image: Tensor, taps=None) -> dict:
    """Run the extractor and return {tap name: feature Tensor}.

    ``image`` is [3,H,W] for one image (taps come back [C,H,W]) or
    [N,3,H,W] for a batch (taps come back [N,C,H,W]).  Differentiable with
    respect to the image; the weights never receive gradients.  Stages past
    the deepest requested tap are skipped.
    """
    config = extractor.config
    if taps is None:
        taps = config.taps
    wanted = {}
    for tap in taps:
        if tap in wanted:
            raise ValueError(f"duplicate tap {tap!r}")
        wanted[tap] = config.locate_tap(tap)

    single = image.data.ndim == 3
    if single:
        if image.shape[0] != 3:
            raise ShapeError(f"extract: expected 3 channels, got shape {image.shape}")
        x = ad.reshape(image, (1,) + image.shape)
    elif image.data.ndim == 4:
        if image.shape[1] != 3:
            raise ShapeError(f"extract: expected 3 channels, got shape {image.shape}")
        x = image
    else:
        raise ShapeError(f"extract: expected rank 3 or 4, got shape {image.shape}")
    h, w = x.shape[2], x.shape[3]
    div = config.size_divisor
    if h % div or w % div:
        raise ShapeError(
            f"extract: spatial size {h}x{w} not divisible by {div}"
        )

    last_stage = max(stage for stage, _ in wanted.values())
    dtype = image.dtype
    out: dict[str, Tensor] = {}
    remaining = set(wanted)
    for stage, idx, name in _layer_names(config):
        if stage > last_stage or not remaining:
            break
        if idx == 0 and stage > 0:
            x = ad.avg_pool2(x)
        kernel = Tensor(extractor.weights[f"{name}.kernel"], dtype=dtype)
        bias = Tensor(extractor.weights[f"{name}.bias"], dtype=dtype)
        x = ad.relu(ad.conv2d(x, kernel, bias, pad=1))
        if name in remaining:
            out[name] = ad.reshape(x, x.shape[1:]) if single else x
            remaining.discard(name)
    return {tap: out[tap] for tap in taps}
