"""Training loop, curriculum schedule, and the pixel-space oracle.

The schedule introduces textures one at a time: during phase t (one phase
lasts K iterations) the ids 1..t are cycled round-robin, so a new texture
always trains alongside everything learned so far.  Once all M textures
are in, sampling switches to uniform random.  The trainer minimizes

    alpha * texture loss + beta * diversity loss

with one texture id per iteration shared by the whole batch.

pixel_optimize performs the same texture-loss minimization directly on
image pixels, with no generator involved.  It is the slow reference the
feed-forward path is measured against, and also synthesizes blends of two
targets' statistics.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as _rng
from .autodiff import NonFiniteError, Tensor
from .extractor import ExtractorConfig, Extractor, build_extractor, extract
from .generator import (
    GeneratorParams,
    SynthesisConfig,
    generate,
    init_params,
    one_hot,
    sample_noise,
    save_model,
)
from .losses import (
    DIVERSITY_TAP,
    TEXTURE_TAPS,
    TextureTarget,
    diversity_loss,
    texture_loss,
    total_loss,
)
from .optim import Adam


class TrainingError(RuntimeError):
    """Training aborted; the cause names the first non-finite tensor."""


@dataclass
class Schedule:
    mode: str  # "incremental" or "random"
    K: int  # iterations per curriculum phase
    M: int  # texture count
    rng: np.random.Generator  # consumed only by random draws

    def __post_init__(self):
        if self.mode not in ("incremental", "random"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.K < 1 or self.M < 1:
            raise ValueError(f"K and M must be >= 1, got K={self.K}, M={self.M}")


def schedule_texture(iteration: int, schedule: Schedule) -> int:
    """Texture id (1-based) to train at this iteration."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    k, m = schedule.K, schedule.M
    if schedule.mode == "incremental" and iteration < m * k:
        phase = iteration // k + 1  # textures 1..phase are in play
        return (iteration - (phase - 1) * k) % phase + 1
    return int(schedule.rng.integers(1, m + 1))


@dataclass
class TrainConfig:
    seed: int
    K: int = 100
    iterations: int | None = None  # default 3*M*K: curriculum plus random phase
    batch_size: int = 4
    lr: float = 1e-3
    alpha: float = 1.0
    beta: float = -1.0
    texture_taps: tuple = TEXTURE_TAPS
    diversity_tap: str = DIVERSITY_TAP
    mode: str = "incremental"
    diversity_normalize: bool = True
    use_selector: bool = True  # off = guidance-ablation training
    checkpoint_every: int = 0  # 0 disables checkpoints
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.beta != 0.0 and self.batch_size < 2:
            raise ValueError(
                f"batch size {self.batch_size} too small: "
                "the diversity term needs pairs (use beta=0 for batch of 1)"
            )
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ValueError("checkpoint_every set but no checkpoint_dir")

    def total_iterations(self, m: int) -> int:
        return self.iterations if self.iterations is not None else 3 * m * self.K


@dataclass
class LossLog:
    """Append-only per-iteration loss records."""

    rows: list = field(default_factory=list)

    HEADER = "iter,texture,l_texture,l_diversity,total"

    def append(self, iteration, texture, l_texture, l_diversity, total) -> None:
        if self.rows and iteration <= self.rows[-1][0]:
            raise ValueError(
                f"iteration {iteration} not after {self.rows[-1][0]}; log is append-only"
            )
        self.rows.append(
            (int(iteration), int(texture), float(l_texture), float(l_diversity), float(total))
        )

    def save(self, path: str) -> None:
        lines = [self.HEADER]
        for it, tex, lt, ld, tot in self.rows:
            lines.append(f"{it},{tex},{lt!r},{ld!r},{tot!r}")
        tmp = path + ".part"
        with open(tmp, "w") as f:
            f.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "LossLog":
        log = cls()
        with open(path) as f:
            header = f.readline().strip()
            if header != cls.HEADER:
                raise ValueError(f"unexpected loss-log header {header!r}")
            for line in f:
                it, tex, lt, ld, tot = line.strip().split(",")
                log.append(int(it), int(tex), float(lt), float(ld), float(tot))
        return log


def precompute_targets(extractor: Extractor, exemplars: list, taps=TEXTURE_TAPS, size=None) -> list:
    """Centered Grams of each exemplar at the texture taps, ids 1-based."""
    from .losses import centered_gram

    targets = []
    for k, image in enumerate(exemplars, start=1):
        arr = image.data if isinstance(image, Tensor) else np.asarray(image)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"exemplar {k} has shape {arr.shape}, expected (3,S,S)")
        if size is not None and arr.shape[1:] != (size, size):
            raise ValueError(
                f"exemplar {k} is {arr.shape[1]}x{arr.shape[2]}, expected {size}x{size}"
            )
        feats = extract(extractor, Tensor(arr), taps)
        grams = {tap: centered_gram(feats[tap], layer=tap).values.data for tap in taps}
        targets.append(TextureTarget(texture_id=k, grams=grams))
    return targets


def blend_targets(a: TextureTarget, b: TextureTarget, weight: float) -> TextureTarget:
    """Statistics of an in-between texture: weight*a + (1-weight)*b."""
    if set(a.grams) != set(b.grams):
        raise ValueError("targets cover different taps")
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"blend weight {weight} outside [0, 1]")
    grams = {
        tap: weight * a.grams[tap] + (1.0 - weight) * b.grams[tap] for tap in a.grams
    }
    return TextureTarget(texture_id=0, grams=grams)


def train_step(
    params: GeneratorParams,
    extractor: Extractor,
    targets: list,
    texture_id: int,
    config: TrainConfig,
    optimizer: Adam,
    noise_rng: np.random.Generator,
    derangement_rng: np.random.Generator,
) -> tuple:
    """One optimization step; mutates params in place, returns (params, record)."""
    selection = one_hot(params.config, texture_id)
    taps = tuple(config.texture_taps)
    if config.beta != 0.0 and config.diversity_tap not in taps:
        taps = taps + (config.diversity_tap,)
    n = config.batch_size
    target = targets[texture_id - 1]

    tex_sum = None
    div_feats = []
    for _ in range(n):
        noise = sample_noise(params.config, noise_rng)
        image = generate(params, selection, noise, use_selector=config.use_selector)
        feats = extract(extractor, image, taps)
        term = texture_loss(target, feats)
        tex_sum = term if tex_sum is None else ad.add(tex_sum, term)
        if config.beta != 0.0:
            div_feats.append(feats[config.diversity_tap])
    l_texture = ad.scale(tex_sum, 1.0 / n)
    if config.beta != 0.0:
        l_diversity = diversity_loss(
            div_feats, derangement_rng, normalize=config.diversity_normalize
        )
    else:
        l_diversity = Tensor(np.zeros((), dtype=l_texture.dtype))
    loss = total_loss(l_texture, l_diversity, config.alpha, config.beta)

    params.zero_grad()
    loss.backward()
    optimizer.step()
    record = (texture_id, float(l_texture.data), float(l_diversity.data), float(loss.data))
    return params, record


def train(
    exemplars: list,
    config: TrainConfig,
    synth_config: SynthesisConfig | None = None,
    extractor: Extractor | None = None,
    log_every: int = 0,
) -> tuple:
    """Full curriculum run over M exemplars; returns (params, LossLog)."""
    m = len(exemplars)
    if m < 1:
        raise ValueError("need at least one exemplar")
    if synth_config is None:
        synth_config = SynthesisConfig(textures=m)
    if synth_config.textures != m:
        raise ValueError(
            f"config expects {synth_config.textures} textures, got {m} exemplars"
        )
    if extractor is None:
        # the loss network is a fixture, not part of the experiment seed
        extractor = build_extractor(ExtractorConfig(seed=0))

    targets = precompute_targets(
        extractor, exemplars, taps=config.texture_taps, size=synth_config.output_size
    )
    params = init_params(synth_config, config.seed)
    optimizer = Adam(params.parameters(), lr=config.lr)
    schedule = Schedule(
        mode=config.mode, K=config.K, M=m, rng=_rng.stream(config.seed, "schedule")
    )
    noise_rng = _rng.stream(config.seed, "noise")
    derangement_rng = _rng.stream(config.seed, "derangement")

    log = LossLog()
    iterations = config.total_iterations(m)
    for iteration in range(iterations):
        texture_id = schedule_texture(iteration, schedule)
        try:
            _, record = train_step(
                params,
                extractor,
                targets,
                texture_id,
                config,
                optimizer,
                noise_rng,
                derangement_rng,
            )
        except NonFiniteError as e:
            raise TrainingError(
                f"aborted at iteration {iteration} on texture {texture_id}: {e}"
            ) from e
        log.append(iteration, *record)
        if log_every and (iteration + 1) % log_every == 0:
            tex, lt, ld, tot = record
            print(
                f"iter {iteration + 1}/{iterations} texture {tex} "
                f"l_texture {lt:.4f} l_diversity {ld:.4f} total {tot:.4f}",
                flush=True,
            )
        if config.checkpoint_every and (iteration + 1) % config.checkpoint_every == 0:
            path = os.path.join(config.checkpoint_dir, f"checkpoint_{iteration + 1}.model")
            save_model(params, path)
    return params, log


def pixel_optimize(
    extractor: Extractor,
    target: TextureTarget,
    init: np.ndarray,
    steps: int = 500,
    lr: float = 1e-2,
) -> tuple:
    """Minimize the texture loss over raw pixels; returns (image, losses).

    The losses list has steps+1 entries: the loss at init, then after each
    update.  An exemplar's own pixels are a fixed point: the loss gradient
    there is exactly zero, so optimization leaves them untouched.
    """
    arr = init.data if isinstance(init, Tensor) else np.asarray(init)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"init image has shape {arr.shape}, expected (3,S,S)")
    pixels = Tensor(arr.copy(), requires_grad=True)
    optimizer = Adam([pixels], lr=lr)
    taps = tuple(target.grams)
    losses = []
    for _ in range(steps):
        feats = extract(extractor, pixels, taps)
        loss = texture_loss(target, feats)
        losses.append(float(loss.data))
        pixels.zero_grad()
        loss.backward()
        optimizer.step()
    feats = extract(extractor, pixels, taps)
    losses.append(float(texture_loss(target, feats).data))
    return pixels.data.copy(), losses
