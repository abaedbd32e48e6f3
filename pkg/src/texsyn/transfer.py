"""Multi-style transfer: encode content, inject style noise maps, decode.

The network is a fully convolutional autoencoder.  Two stride-2
convolutions compress the content image; at the bottleneck, one 1-channel
noise map per style is concatenated.  Selecting a style means sampling
that style's map at random while every other map stays zero; blending
styles feeds a weighted sum of freshly sampled maps.  The decoder mirrors
the encoder with nearest-neighbor upsampling, so output size always
equals content size.

Training reuses the texture machinery: style loss is the centered-Gram
texture loss of the output against the style exemplar, diversity is the
same deranged feature distance, and a content term (L1 of deep features
against the content image) anchors structure.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as _rng
from . import serialize
from .autodiff import NonFiniteError, ShapeError, Tensor
from .extractor import Extractor, ExtractorConfig, build_extractor, extract
from .generator import SelectionUnit
from .losses import (
    DIVERSITY_TAP,
    TEXTURE_TAPS,
    diversity_loss,
    texture_loss,
    total_loss,
)
from .optim import Adam
from .trainer import Schedule, TrainingError, precompute_targets, schedule_texture


@dataclass(frozen=True)
class TransferNetConfig:
    styles: int  # M_s
    enc_widths: tuple = (16, 32)  # each entry is one stride-2 stage
    dec_widths: tuple = (32, 16, 16)  # bottleneck conv, then one per upsample
    noise_channels: int = 1  # per style, at the bottleneck grid

    def __post_init__(self):
        if self.styles < 1:
            raise ValueError(f"need at least one style, got {self.styles}")
        if len(self.dec_widths) != len(self.enc_widths) + 1:
            raise ValueError(
                "decoder needs one bottleneck conv plus one conv per encoder stage: "
                f"{len(self.enc_widths)} stages need {len(self.enc_widths) + 1} widths"
            )
        if self.noise_channels < 1:
            raise ValueError("noise_channels must be >= 1")

    @property
    def stride(self) -> int:
        return 2 ** len(self.enc_widths)


@dataclass
class TransferParams:
    config: TransferNetConfig
    tensors: dict = field(repr=False)

    def parameters(self) -> list:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def _param_shapes(config: TransferNetConfig) -> dict:
    shapes = {}
    in_ch = 3
    for i, width in enumerate(config.enc_widths, start=1):
        shapes[f"enc{i}.kernel"] = (width, in_ch, 3, 3)
        shapes[f"enc{i}.bias"] = (width,)
        in_ch = width
    in_ch += config.styles * config.noise_channels
    for i, width in enumerate(config.dec_widths, start=1):
        shapes[f"dec{i}.kernel"] = (width, in_ch, 3, 3)
        shapes[f"dec{i}.bias"] = (width,)
        in_ch = width
    shapes["rgb.kernel"] = (3, in_ch, 3, 3)
    shapes["rgb.bias"] = (3,)
    return shapes


def init_transfer_params(config: TransferNetConfig, seed: int) -> TransferParams:
    gen = _rng.stream(seed, "transfer-init")
    tensors = {}
    for name, shape in _param_shapes(config).items():
        if name.endswith("bias"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            gain = 1.0 if name == "rgb.kernel" else 2.0
            data = gen.standard_normal(shape) * np.sqrt(gain / fan_in)
        tensors[name] = Tensor(data.astype(np.float32), requires_grad=True)
    return TransferParams(config=config, tensors=tensors)


@dataclass
class NoiseMapSet:
    """Per-style bottleneck noise; zero wherever the style is unselected."""

    weights: np.ndarray  # [M_s]
    maps: np.ndarray  # [M_s * noise_channels, h, w], already weight-scaled

    def __post_init__(self):
        channels = self.maps.shape[0] // len(self.weights)
        for i, w in enumerate(self.weights):
            if w == 0.0 and np.any(self.maps[i * channels : (i + 1) * channels]):
                raise ValueError(f"style {i + 1} has weight 0 but a nonzero noise map")


def sample_noise_maps(
    config: TransferNetConfig, spatial: tuple, weights: np.ndarray, rng: np.random.Generator
) -> NoiseMapSet:
    """Draw weight * uniform[-1,1] maps for selected styles, zeros elsewhere.

    Styles are visited in index order and unselected styles consume no
    randomness, so a single (k, 1.0) selection reproduces the one-hot
    draw stream exactly.
    """
    h, w = spatial
    ch = config.noise_channels
    maps = np.zeros((config.styles * ch, h, w), dtype=np.float32)
    for i, weight in enumerate(weights):
        if weight != 0.0:
            draw = rng.uniform(-1.0, 1.0, size=(ch, h, w))
            maps[i * ch : (i + 1) * ch] = (weight * draw).astype(np.float32)
    return NoiseMapSet(weights=np.asarray(weights, dtype=np.float64), maps=maps)


def _check_content(config: TransferNetConfig, content: Tensor) -> None:
    if content.data.ndim != 3 or content.shape[0] != 3:
        raise ShapeError(f"content must be [3,H,W], got shape {content.shape}")
    h, w = content.shape[1], content.shape[2]
    s = config.stride
    if h % s or w % s:
        raise ShapeError(f"content size {h}x{w} not divisible by encoder stride {s}")


def transfer_with_maps(params: TransferParams, content: Tensor, noise: NoiseMapSet) -> Tensor:
    """Forward pass with explicit noise maps; differentiable in params."""
    c = params.config
    t = params.tensors
    _check_content(c, content)
    x = ad.reshape(content, (1,) + content.shape)
    for i in range(1, len(c.enc_widths) + 1):
        x = ad.leaky_relu(
            ad.conv2d(x, t[f"enc{i}.kernel"], t[f"enc{i}.bias"], stride=2, pad=1), 0.2
        )
    expected = (c.styles * c.noise_channels, x.shape[2], x.shape[3])
    if noise.maps.shape != expected:
        raise ShapeError(f"noise maps shaped {noise.maps.shape}, expected {expected}")
    x = ad.concat_channels(x, Tensor(noise.maps.reshape((1,) + expected), dtype=x.dtype))
    for i in range(1, len(c.dec_widths) + 1):
        if i > 1:
            x = ad.upsample_nearest(x, 2)
        x = ad.leaky_relu(
            ad.conv2d(x, t[f"dec{i}.kernel"], t[f"dec{i}.bias"], pad=1), 0.2
        )
    x = ad.tanh(ad.conv2d(x, t["rgb.kernel"], t["rgb.bias"], pad=1))
    return ad.reshape(x, (3,) + content.shape[1:])


def transfer(
    params: TransferParams,
    content: Tensor,
    selection: SelectionUnit,
    rng: np.random.Generator,
) -> Tensor:
    """Stylize content under the selection's weights; same spatial size out."""
    if selection.weights.shape != (params.config.styles,):
        raise ShapeError(
            f"selection has {selection.weights.shape[0]} weights, "
            f"model holds {params.config.styles} styles"
        )
    _check_content(params.config, content)
    s = params.config.stride
    spatial = (content.shape[1] // s, content.shape[2] // s)
    noise = sample_noise_maps(params.config, spatial, selection.weights, rng)
    return transfer_with_maps(params, content, noise)


def interpolate_styles(
    params: TransferParams, content: Tensor, pairs: list, rng: np.random.Generator
) -> Tensor:
    """Blend styles by feeding a weighted sum of their noise maps."""
    weights = np.zeros(params.config.styles)
    seen = set()
    for style_id, weight in pairs:
        if not 1 <= style_id <= params.config.styles:
            raise ValueError(
                f"style id {style_id} out of range 1..{params.config.styles}"
            )
        if style_id in seen:
            raise ValueError(f"style id {style_id} listed twice")
        if weight < 0:
            raise ValueError(f"negative weight {weight} for style {style_id}")
        seen.add(style_id)
        weights[style_id - 1] = weight
    return transfer(params, content, SelectionUnit(weights), rng)


def content_loss(output: Tensor, content: Tensor, extractor: Extractor, tap: str = DIVERSITY_TAP) -> Tensor:
    """L1 distance of deep features, normalized by feature element count."""
    if output.shape != content.shape:
        raise ShapeError(
            f"output {output.shape} and content {content.shape} sizes differ"
        )
    out_feat = extract(extractor, output, [tap])[tap]
    ref_feat = extract(extractor, content, [tap])[tap]
    diff = ad.l1_norm(ad.sub(out_feat, ref_feat))
    return ad.scale(diff, 1.0 / out_feat.size)


@dataclass
class TransferConfig:
    seed: int
    K: int = 100
    iterations: int | None = None
    batch_size: int = 4
    lr: float = 1e-3
    alpha: float = 1.0  # style-loss coefficient
    beta: float = -1.0  # diversity coefficient
    content_weight: float = 1.0
    style_taps: tuple = TEXTURE_TAPS
    diversity_tap: str = DIVERSITY_TAP
    mode: str = "incremental"
    diversity_normalize: bool = True

    def __post_init__(self):
        if self.beta != 0.0 and self.batch_size < 2:
            raise ValueError(
                f"batch size {self.batch_size} too small: "
                "the diversity term needs pairs (use beta=0 for batch of 1)"
            )
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def total_iterations(self, styles: int) -> int:
        return self.iterations if self.iterations is not None else 3 * styles * self.K


@dataclass
class TransferLossLog:
    """Per-iteration records with the content term appended."""

    rows: list = field(default_factory=list)

    HEADER = "iter,texture,l_texture,l_diversity,total,l_content"

    def append(self, iteration, style, l_style, l_diversity, total, l_content) -> None:
        if self.rows and iteration <= self.rows[-1][0]:
            raise ValueError(
                f"iteration {iteration} not after {self.rows[-1][0]}; log is append-only"
            )
        self.rows.append(
            (
                int(iteration),
                int(style),
                float(l_style),
                float(l_diversity),
                float(total),
                float(l_content),
            )
        )

    def save(self, path: str) -> None:
        lines = [self.HEADER]
        for it, st, ls, ld, tot, lc in self.rows:
            lines.append(f"{it},{st},{ls!r},{ld!r},{tot!r},{lc!r}")
        serialize.atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())

    @classmethod
    def load(cls, path: str) -> "TransferLossLog":
        log = cls()
        with open(path) as f:
            header = f.readline().strip()
            if header != cls.HEADER:
                raise ValueError(f"unexpected loss-log header {header!r}")
            for line in f:
                it, st, ls, ld, tot, lc = line.strip().split(",")
                log.append(int(it), int(st), float(ls), float(ld), float(tot), float(lc))
        return log


def train_transfer(
    styles: list,
    contents: list,
    config: TransferConfig,
    net_config: TransferNetConfig | None = None,
    extractor: Extractor | None = None,
    log_every: int = 0,
) -> tuple:
    """Train the transfer network; returns (params, TransferLossLog)."""
    if not styles or not contents:
        raise ValueError("need at least one style and one content image")
    m = len(styles)
    if net_config is None:
        net_config = TransferNetConfig(styles=m)
    if net_config.styles != m:
        raise ValueError(f"config expects {net_config.styles} styles, got {m}")
    if extractor is None:
        extractor = build_extractor(ExtractorConfig(seed=0))

    targets = precompute_targets(extractor, styles, taps=config.style_taps)
    content_arrays = [
        (c.data if isinstance(c, Tensor) else np.asarray(c)).astype(np.float32)
        for c in contents
    ]
    params = init_transfer_params(net_config, config.seed)
    optimizer = Adam(params.parameters(), lr=config.lr)
    schedule = Schedule(
        mode=config.mode, K=config.K, M=m, rng=_rng.stream(config.seed, "schedule")
    )
    noise_rng = _rng.stream(config.seed, "transfer-noise")
    derangement_rng = _rng.stream(config.seed, "derangement")
    content_rng = _rng.stream(config.seed, "transfer-content")

    taps = tuple(config.style_taps)
    if config.diversity_tap not in taps:
        taps = taps + (config.diversity_tap,)

    log = TransferLossLog()
    iterations = config.total_iterations(m)
    for iteration in range(iterations):
        style_id = schedule_texture(iteration, schedule)
        content = Tensor(content_arrays[int(content_rng.integers(len(content_arrays)))])
        selection = np.zeros(m)
        selection[style_id - 1] = 1.0
        try:
            record = _transfer_step(
                params,
                extractor,
                targets[style_id - 1],
                content,
                SelectionUnit(selection),
                config,
                optimizer,
                noise_rng,
                derangement_rng,
                taps,
            )
        except NonFiniteError as e:
            raise TrainingError(
                f"aborted at iteration {iteration} on style {style_id}: {e}"
            ) from e
        log.append(iteration, style_id, *record)
        if log_every and (iteration + 1) % log_every == 0:
            ls, ld, tot, lc = record
            print(
                f"iter {iteration + 1}/{iterations} style {style_id} "
                f"l_style {ls:.4f} l_diversity {ld:.4f} l_content {lc:.4f} "
                f"total {tot:.4f}",
                flush=True,
            )
    return params, log


def _transfer_step(
    params,
    extractor,
    target,
    content,
    selection,
    config,
    optimizer,
    noise_rng,
    derangement_rng,
    taps,
):
    n = config.batch_size
    content_feat = extract(extractor, content, [config.diversity_tap])[
        config.diversity_tap
    ].detach()
    style_sum = None
    content_sum = None
    div_feats = []
    for _ in range(n):
        out = transfer(params, content, selection, noise_rng)
        feats = extract(extractor, out, taps)
        term = texture_loss(target, {t: feats[t] for t in config.style_taps})
        style_sum = term if style_sum is None else ad.add(style_sum, term)
        out_deep = feats[config.diversity_tap]
        c_term = ad.scale(
            ad.l1_norm(ad.sub(out_deep, content_feat)), 1.0 / out_deep.size
        )
        content_sum = c_term if content_sum is None else ad.add(content_sum, c_term)
        if config.beta != 0.0:
            div_feats.append(out_deep)
    l_style = ad.scale(style_sum, 1.0 / n)
    l_content = ad.scale(content_sum, 1.0 / n)
    if config.beta != 0.0:
        l_diversity = diversity_loss(
            div_feats, derangement_rng, normalize=config.diversity_normalize
        )
    else:
        l_diversity = Tensor(np.zeros((), dtype=l_style.dtype))
    loss = ad.add(
        total_loss(l_style, l_diversity, config.alpha, config.beta),
        ad.scale(l_content, config.content_weight),
    )
    params.zero_grad()
    loss.backward()
    optimizer.step()
    return (
        float(l_style.data),
        float(l_diversity.data),
        float(loss.data),
        float(l_content.data),
    )


# ---------------------------------------------------------------------------
# model files

_CONFIG_KEY = "transfer.config"


def save_transfer_model(params: TransferParams, path: str) -> None:
    c = params.config
    header = np.array(
        [c.styles, c.noise_channels, len(c.enc_widths), *c.enc_widths, *c.dec_widths],
        dtype=np.float32,
    )
    tensors = {_CONFIG_KEY: header}
    for name, t in params.tensors.items():
        tensors[name] = t.data.astype(np.float32, copy=False)
    serialize.save_tensors(path, tensors)


def load_transfer_model(path: str) -> TransferParams:
    tensors = serialize.load_tensors(path)
    if _CONFIG_KEY not in tensors:
        raise serialize.WeightFormatError("model file lacks a transfer config header")
    header = [int(v) for v in tensors.pop(_CONFIG_KEY).tolist()]
    if len(header) < 3:
        raise serialize.WeightFormatError(f"malformed transfer config {header}")
    styles, noise_channels, n_enc = header[0], header[1], header[2]
    enc = tuple(header[3 : 3 + n_enc])
    dec = tuple(header[3 + n_enc :])
    config = TransferNetConfig(
        styles=styles, enc_widths=enc, dec_widths=dec, noise_channels=noise_channels
    )
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
    return TransferParams(
        config=config,
        tensors={n: Tensor(tensors[n], requires_grad=True) for n in expected},
    )
