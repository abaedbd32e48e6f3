"""Plain-text run configuration: ``section.key = value`` lines.

One file configures a whole run.  Every key is registered with a parser,
a default, and a one-line description; unknown keys are rejected so a
typo can never silently fall back to a default.  ``#`` starts a comment,
blank lines are ignored, and later assignments override earlier ones.
Command-line ``--set section.key=value`` overrides go through the same
parser.
"""

from __future__ import annotations

from dataclasses import dataclass

from .extractor import DEFAULT_TAPS, ExtractorConfig
from .generator import SynthesisConfig
from .losses import DIVERSITY_TAP, TEXTURE_TAPS
from .trainer import TrainConfig
from .transfer import TransferConfig, TransferNetConfig


class ConfigError(ValueError):
    """A config file or override could not be parsed or validated."""


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected true/false, got {text!r}")


def _str(text: str) -> str:
    return text


def _opt_str(text: str):
    return None if text.lower() in ("", "none") else text


def _opt_int(text: str):
    return None if text.lower() in ("", "none", "auto") else _int(text)


def _ints(text: str) -> tuple:
    if not text.strip():
        raise ConfigError("expected a comma-separated list of integers")
    return tuple(_int(part.strip()) for part in text.split(","))


def _strs(text: str) -> tuple:
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    return parts


@dataclass(frozen=True)
class Setting:
    parse: object  # str -> typed value
    default: object
    doc: str


def _fmt_default(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


REGISTRY: dict = {
    "run.seed": Setting(_int, 0, "master seed; the --seed flag overrides it"),
    "synthesis.textures": Setting(
        _opt_int, None, "selection-unit width; 'auto' infers from the exemplar count"
    ),
    "synthesis.embed_dim": Setting(_int, 8, "texture embedding width"),
    "synthesis.noise_dim": Setting(_int, 5, "noise vector length"),
    "synthesis.base_size": Setting(_int, 4, "spatial size of the seed maps"),
    "synthesis.scales": Setting(_int, 3, "number of 2x upsampling stages"),
    "synthesis.widths": Setting(
        _ints, (32, 32, 24, 16), "channel widths: seed stage then one per scale"
    ),
    "synthesis.guidance_channels": Setting(
        _int, 8, "selector guidance channels injected at each scale"
    ),
    "extractor.stage_channels": Setting(
        _ints, (8, 16, 32, 64, 64), "feature channels per extractor stage"
    ),
    "extractor.convs_per_stage": Setting(
        _ints, (1, 1, 1, 2, 1), "conv layers in each extractor stage"
    ),
    "extractor.taps": Setting(_strs, DEFAULT_TAPS, "feature maps the extractor exposes"),
    "extractor.seed": Setting(_int, 0, "seed for the frozen random extractor weights"),
    "extractor.weight_file": Setting(
        _opt_str, None, "load extractor weights from this file instead of seeding"
    ),
    "train.K": Setting(_int, 100, "iterations per curriculum phase"),
    "train.iterations": Setting(
        _opt_int, None, "total iterations; 'auto' = 3 * textures * K"
    ),
    "train.batch_size": Setting(_int, 4, "samples per iteration (diversity pairs)"),
    "train.lr": Setting(_float, 1e-3, "Adam learning rate"),
    "train.alpha": Setting(_float, 1.0, "texture-loss coefficient"),
    "train.beta": Setting(_float, -1.0, "diversity-loss coefficient (negative rewards variety)"),
    "train.texture_taps": Setting(_strs, TEXTURE_TAPS, "taps entering the texture loss"),
    "train.diversity_tap": Setting(_str, DIVERSITY_TAP, "tap entering the diversity loss"),
    "train.mode": Setting(_str, "incremental", "schedule: 'incremental' or 'random'"),
    "train.diversity_normalize": Setting(
        _bool, True, "divide diversity distances by the tap's spatial size"
    ),
    "train.use_selector": Setting(
        _bool, True, "feed selector guidance maps (false = ablation)"
    ),
    "train.checkpoint_every": Setting(_int, 0, "checkpoint interval; 0 disables"),
    "train.checkpoint_dir": Setting(_opt_str, None, "directory for checkpoints"),
    "transfer.K": Setting(_int, 100, "iterations per style phase"),
    "transfer.iterations": Setting(
        _opt_int, None, "total iterations; 'auto' = 3 * styles * K"
    ),
    "transfer.batch_size": Setting(_int, 4, "stylizations per iteration"),
    "transfer.lr": Setting(_float, 1e-3, "Adam learning rate"),
    "transfer.alpha": Setting(_float, 1.0, "style-loss coefficient"),
    "transfer.beta": Setting(_float, -1.0, "diversity-loss coefficient"),
    "transfer.content_weight": Setting(_float, 1.0, "content-loss coefficient"),
    "transfer.style_taps": Setting(_strs, TEXTURE_TAPS, "taps entering the style loss"),
    "transfer.diversity_tap": Setting(
        _str, DIVERSITY_TAP, "tap for diversity and content losses"
    ),
    "transfer.mode": Setting(_str, "incremental", "schedule: 'incremental' or 'random'"),
    "transfer.diversity_normalize": Setting(_bool, True, "normalize diversity distances"),
    "transfer.enc_widths": Setting(_ints, (16, 32), "encoder widths, one per stride-2 stage"),
    "transfer.dec_widths": Setting(
        _ints, (32, 16, 16), "decoder widths: bottleneck conv then one per upsample"
    ),
    "transfer.noise_channels": Setting(_int, 1, "noise maps injected per style"),
    "paths.exemplars": Setting(_strs, (), "texture exemplar PNGs, one per texture id"),
    "paths.contents": Setting(_strs, (), "content PNGs for style transfer"),
    "paths.output_dir": Setting(_str, ".", "directory for generated images"),
    "paths.model": Setting(_str, "synthesis.model", "synthesis model file"),
    "paths.transfer_model": Setting(_str, "transfer.model", "transfer model file"),
    "paths.log": Setting(_str, "loss_log.csv", "loss-log CSV file"),
}


@dataclass
class RunConfig:
    """Fully-resolved settings: every registered key has a typed value."""

    values: dict

    def get(self, key: str):
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def set(self, key: str, text: str) -> None:
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            self.values[key] = REGISTRY[key].parse(text.strip())
        except ConfigError as e:
            raise ConfigError(f"{key}: {e}") from None


def default_config() -> RunConfig:
    return RunConfig(values={key: s.default for key, s in REGISTRY.items()})


def parse_config(text: str, source: str = "config") -> RunConfig:
    config = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source} line {lineno}: expected 'section.key = value', got {raw.strip()!r}"
            )
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            config.set(key, value)
        except ConfigError as e:
            raise ConfigError(f"{source} line {lineno}: {e}") from None
    return config


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, source=path)


def apply_overrides(config: RunConfig, overrides: list) -> None:
    """Apply ``section.key=value`` strings from the command line."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        key, value = item.split("=", 1)
        config.set(key.strip(), value)


def document_defaults() -> str:
    """Every key with its default and meaning, as config-file text."""
    lines = []
    section = None
    for key in REGISTRY:
        head = key.split(".", 1)[0]
        if head != section:
            if section is not None:
                lines.append("")
            section = head
        s = REGISTRY[key]
        lines.append(f"{key} = {_fmt_default(s.default)}  # {s.doc}")
    return "\n".join(lines) + "\n"


def synthesis_config(config: RunConfig, textures: int | None = None) -> SynthesisConfig:
    m = config.get("synthesis.textures") if textures is None else textures
    if m is None:
        raise ConfigError(
            "synthesis.textures is 'auto' but no exemplar count is available"
        )
    return SynthesisConfig(
        textures=m,
        embed_dim=config.get("synthesis.embed_dim"),
        noise_dim=config.get("synthesis.noise_dim"),
        base_size=config.get("synthesis.base_size"),
        scales=config.get("synthesis.scales"),
        widths=config.get("synthesis.widths"),
        guidance_channels=config.get("synthesis.guidance_channels"),
    )


def extractor_config(config: RunConfig) -> ExtractorConfig:
    return ExtractorConfig(
        stage_channels=config.get("extractor.stage_channels"),
        convs_per_stage=config.get("extractor.convs_per_stage"),
        taps=config.get("extractor.taps"),
        seed=config.get("extractor.seed"),
        weight_file=config.get("extractor.weight_file"),
    )


def train_config(config: RunConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        seed=seed,
        K=config.get("train.K"),
        iterations=config.get("train.iterations"),
        batch_size=config.get("train.batch_size"),
        lr=config.get("train.lr"),
        alpha=config.get("train.alpha"),
        beta=config.get("train.beta"),
        texture_taps=config.get("train.texture_taps"),
        diversity_tap=config.get("train.diversity_tap"),
        mode=config.get("train.mode"),
        diversity_normalize=config.get("train.diversity_normalize"),
        use_selector=config.get("train.use_selector"),
        checkpoint_every=config.get("train.checkpoint_every"),
        checkpoint_dir=config.get("train.checkpoint_dir"),
    )


def transfer_config(config: RunConfig, seed: int) -> TransferConfig:
    return TransferConfig(
        seed=seed,
        K=config.get("transfer.K"),
        iterations=config.get("transfer.iterations"),
        batch_size=config.get("transfer.batch_size"),
        lr=config.get("transfer.lr"),
        alpha=config.get("transfer.alpha"),
        beta=config.get("transfer.beta"),
        content_weight=config.get("transfer.content_weight"),
        style_taps=config.get("transfer.style_taps"),
        diversity_tap=config.get("transfer.diversity_tap"),
        mode=config.get("transfer.mode"),
        diversity_normalize=config.get("transfer.diversity_normalize"),
    )


def transfer_net_config(config: RunConfig, styles: int) -> TransferNetConfig:
    return TransferNetConfig(
        styles=styles,
        enc_widths=config.get("transfer.enc_widths"),
        dec_widths=config.get("transfer.dec_widths"),
        noise_channels=config.get("transfer.noise_channels"),
    )
