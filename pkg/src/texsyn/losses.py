"""Texture statistics and training losses.

A texture is summarized by Gram matrices of extractor features.  The
centered variant subtracts the layer's scalar mean activation first, which
keeps the statistics bounded under constant activation shifts; the plain
sum-of-products Gram grows without bound under the same shift.

The training objective combines the texture loss (L1 between centered
Grams of output and exemplar) with a diversity term that rewards batch
members for differing from each other, measured as L1 distance between
deep features of each sample and a deranged partner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

DIVERSITY_TAP = "conv4_2"
TEXTURE_TAPS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1")


@dataclass
class GramMatrix:
    """Channel-by-channel feature covariance of one tap."""

    values: Tensor  # [C, C]
    layer: str | None
    normalization: float  # divisor applied: spatial position count H*W


@dataclass
class TextureTarget:
    """Precomputed centered Gram matrices of one exemplar image."""

    texture_id: int  # 1-based
    grams: dict  # tap name -> float ndarray [C, C]


def _flatten_spatial(features: Tensor) -> tuple:
    if features.data.ndim != 3:
        raise ShapeError(f"gram: expected rank-3 features, got shape {features.shape}")
    c, h, w = features.shape
    return ad.reshape(features, (c, h * w)), h * w


def gram(features: Tensor, layer: str | None = None) -> GramMatrix:
    """G[i,j] = (1/(H*W)) * sum_k F[i,k]*F[j,k] over spatial positions k."""
    flat, positions = _flatten_spatial(features)
    g = ad.scale(ad.matmul(flat, ad.transpose2d(flat)), 1.0 / positions)
    return GramMatrix(values=g, layer=layer, normalization=float(positions))


def centered_gram(features: Tensor, layer: str | None = None) -> GramMatrix:
    """Gram of features with the layer's scalar mean activation removed."""
    flat, positions = _flatten_spatial(features)
    centered = ad.sub(flat, ad.mean(flat))
    g = ad.scale(ad.matmul(centered, ad.transpose2d(centered)), 1.0 / positions)
    return GramMatrix(values=g, layer=layer, normalization=float(positions))


def texture_loss(target: TextureTarget, output_feats: dict, layer_weights=None) -> Tensor:
    """Weighted L1 distance between target and output centered Grams."""
    missing = [tap for tap in target.grams if tap not in output_feats]
    if missing:
        raise ValueError(f"output features missing taps {missing}")
    total = None
    for tap, goal in target.grams.items():
        weight = 1.0 if layer_weights is None else float(layer_weights[tap])
        out_gram = centered_gram(output_feats[tap], layer=tap)
        goal_t = Tensor(goal, dtype=out_gram.values.dtype)
        term = ad.l1_norm(ad.sub(out_gram.values, goal_t))
        if weight != 1.0:
            term = ad.scale(term, weight)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("target has no taps")
    return total


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """A uniformly random permutation of 0..n-1 with no fixed point."""
    if n < 2:
        raise ValueError(f"derangement undefined for n={n}; need n >= 2")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def diversity_loss(
    batch_feats: list, rng: np.random.Generator, normalize: bool = True
) -> Tensor:
    """Mean L1 distance between each sample's features and a deranged partner.

    With ``normalize`` (the default) each distance is divided by the spatial
    size of the tap map, the same divisor the Gram statistics use, so the
    term keeps its weight relative to the texture losses across image sizes.
    ``normalize=False`` gives the raw per-pair L1 sum.
    """
    n = len(batch_feats)
    if n < 2:
        raise ValueError(f"diversity loss needs a batch of >= 2, got {n}")
    shape = batch_feats[0].shape
    for f in batch_feats[1:]:
        if f.shape != shape:
            raise ShapeError(
                f"diversity loss: mixed feature shapes {shape} and {f.shape}"
            )
    sigma = derangement(n, rng)
    total = None
    for i in range(n):
        term = ad.l1_norm(ad.sub(batch_feats[i], batch_feats[sigma[i]]))
        total = term if total is None else ad.add(total, term)
    divisor = n * (int(np.prod(shape[1:])) if normalize else 1)
    return ad.scale(total, 1.0 / divisor)


def total_loss(texture: Tensor, diversity: Tensor, alpha: float = 1.0, beta: float = -1.0) -> Tensor:
    """alpha * texture + beta * diversity; beta < 0 rewards diversity."""
    if texture.size != 1 or diversity.size != 1:
        raise ShapeError(
            f"total loss expects scalars, got {texture.shape} and {diversity.shape}"
        )
    return ad.add(ad.scale(texture, alpha), ad.scale(diversity, beta))
