"""Configuration records and the plain-text ``key = value`` config format."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

VARIANTS = ("L1", "L2", "SL", "MSL", "WGAN-L2", "SSL", "SMGAN")

# CLI name -> (loss variant, two-dimensional generator)
CLI_VARIANTS = {
    "smgan3d": ("SMGAN", False),
    "smgan2d": ("SMGAN", True),
    "l1": ("L1", False),
    "l2": ("L2", False),
    "sl": ("SL", False),
    "msl": ("MSL", False),
    "wgan": ("WGAN-L2", False),
}


class ConfigError(ValueError):
    pass


@dataclass
class LossConfig:
    """Weights and SSIM settings selecting the training objective."""

    tau: float = 0.89
    beta: float = 1e-3
    lambda_gp: float = 10.0
    scales: int = 3
    c1: float = 0.01**2
    c2: float = 0.03**2
    window_kind: str = "gaussian"
    window_size: int = 11
    window_sigma: float = 1.5
    ssim_mode: str = "slice"  # "slice" or "volume"
    window_depth: int = 3
    variant: str = "SMGAN"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.beta < 0 or self.lambda_gp < 0:
            raise ConfigError("beta and lambda_gp must be non-negative")
        if int(self.scales) != self.scales or self.scales < 1:
            raise ConfigError(f"scales must be a positive integer, got {self.scales}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("c1 and c2 must be positive")
        if self.window_kind not in ("gaussian", "uniform"):
            raise ConfigError(f"unknown window kind {self.window_kind!r}")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ConfigError(f"window size must be odd, got {self.window_size}")
        if self.window_kind == "gaussian" and self.window_sigma <= 0:
            raise ConfigError("window sigma must be positive")
        if self.ssim_mode not in ("slice", "volume"):
            raise ConfigError(f"ssim_mode must be 'slice' or 'volume', got {self.ssim_mode!r}")
        if self.window_depth < 1 or self.window_depth % 2 == 0:
            raise ConfigError("window_depth must be odd")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def uses_critic(self) -> bool:
        return self.variant in ("WGAN-L2", "SMGAN") and self.beta > 0


@dataclass
class GeneratorSpec:
    filters: int = 32
    n_layers: int = 8
    in_channels: int = 1
    two_d: bool = False

    @property
    def kernel_shapes(self) -> list[tuple[int, int, int]]:
        # odd layers 1x3x3, even layers 3x3x3 (depth, height, width)
        return [(1, 3, 3) if (i % 2 == 0 or self.two_d) else (3, 3, 3) for i in range(self.n_layers)]

    @property
    def depth_margin(self) -> int:
        return sum(k[0] - 1 for k in self.kernel_shapes)

    @property
    def spatial_margin(self) -> int:
        return sum(k[1] - 1 for k in self.kernel_shapes)


@dataclass
class CriticSpec:
    filters: tuple[int, ...] = (64, 64, 128, 128, 256, 256)
    strides: tuple[int, ...] = (1, 2, 1, 2, 1, 2)
    dense_units: int = 1024
    alpha: float = 0.2
    padding: int = 0
    in_channels: int = 3
    input_hw: tuple[int, int] = (64, 64)

    def __post_init__(self):
        self.filters = tuple(int(f) for f in self.filters)
        self.strides = tuple(int(s) for s in self.strides)
        self.input_hw = tuple(int(n) for n in self.input_hw)
        if len(self.filters) != len(self.strides):
            raise ConfigError("critic filters and strides differ in length")
        if self.alpha < 0:
            raise ConfigError("leaky slope must be >= 0")

    def feature_trace(self) -> list[tuple[int, int]]:
        """Spatial extents after each conv layer, starting with the input."""
        h, w = self.input_hw
        trace = [(h, w)]
        for s in self.strides:
            h = (h + 2 * self.padding - 3) // s + 1
            w = (w + 2 * self.padding - 3) // s + 1
            if h < 1 or w < 1:
                raise ConfigError(
                    f"critic input {self.input_hw} collapses below one pixel with padding {self.padding}"
                )
            trace.append((h, w))
        return trace

    @property
    def flat_features(self) -> int:
        h, w = self.feature_trace()[-1]
        return self.filters[-1] * h * w


@dataclass
class TrainConfig:
    variant: str = "smgan3d"
    loss: LossConfig = field(default_factory=LossConfig)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    critic: CriticSpec = field(default_factory=CriticSpec)
    batch_size: int = 64
    lr: float = 1e-4
    critic_lr: float | None = None
    adam_b1: float = 0.5
    adam_b2: float = 0.9
    adam_eps: float = 1e-8
    n_critic: int = 5
    epochs: int = 10
    seed: int = 0
    checkpoint_every: int = 1
    patch_shape: tuple[int, int, int] = (11, 80, 80)
    hu_lo: float = -1024.0
    hu_hi: float = 3071.0
    patch_budget: int = 0
    patch_stride: tuple[int, int, int] = (1, 1, 1)
    val_fraction: float = 0.1

    def __post_init__(self):
        self.patch_shape = tuple(int(n) for n in self.patch_shape)
        self.patch_stride = tuple(int(n) for n in self.patch_stride)
        self.validate()

    def validate(self) -> None:
        if self.variant not in CLI_VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {sorted(CLI_VARIANTS)}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_critic < 1:
            raise ConfigError("n_critic must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        loss_variant, two_d = CLI_VARIANTS[self.variant]
        if self.loss.variant != loss_variant:
            self.loss = dataclasses.replace(self.loss, variant=loss_variant)
        if self.generator.two_d != two_d:
            self.generator = dataclasses.replace(self.generator, two_d=two_d)
        d, h, w = self.patch_shape
        out_d = d - self.generator.depth_margin
        out_h = h - self.generator.spatial_margin
        out_w = w - self.generator.spatial_margin
        if out_d < 1 or out_h < 1 or out_w < 1:
            raise ConfigError(f"patch {self.patch_shape} too small for the generator")
        if tuple(self.critic.input_hw) != (out_h, out_w):
            self.critic = dataclasses.replace(self.critic, input_hw=(out_h, out_w))

    @property
    def output_shape(self) -> tuple[int, int, int]:
        d, h, w = self.patch_shape
        return (
            d - self.generator.depth_margin,
            h - self.generator.spatial_margin,
            w - self.generator.spatial_margin,
        )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        d = dict(d)
        loss = LossConfig(**d.pop("loss", {}))
        gen = GeneratorSpec(**d.pop("generator", {}))
        crit = CriticSpec(**d.pop("critic", {}))
        return cls(loss=loss, generator=gen, critic=crit, **d)

    def architecture_hash(self) -> str:
        """Digest of everything that fixes parameter names and shapes."""
        arch = {
            "generator": dataclasses.asdict(self.generator),
            "critic": dataclasses.asdict(self.critic),
        }
        blob = json.dumps(arch, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_config(**overrides) -> TrainConfig:
    """Reduced settings that train on one CPU in minutes (40x40x11 patches)."""
    base = dict(
        patch_shape=(11, 40, 40),
        batch_size=8,
        lr=5e-4,
        n_critic=2,
        epochs=20,
        loss=LossConfig(scales=2),
        critic=CriticSpec(padding=1),
    )
    base.update(overrides)
    return TrainConfig(**base)


# -- key = value files -------------------------------------------------------------

_SECTIONS = {"loss": LossConfig, "generator": GeneratorSpec, "critic": CriticSpec}


def _flat_keys() -> dict[str, tuple[str | None, dataclasses.Field]]:
    keys: dict[str, tuple[str | None, dataclasses.Field]] = {}
    for f in fields(TrainConfig):
        if f.name in _SECTIONS:
            for sub in fields(_SECTIONS[f.name]):
                keys[f"{f.name}.{sub.name}"] = (f.name, sub)
        else:
            keys[f.name] = (None, f)
    return keys


def _coerce(text: str, template: Any, field_type: Any):
    text = text.strip()
    kind = str(field_type)
    if isinstance(template, bool) or kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(template, tuple):
        parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
        elem = type(template[0]) if template else int
        return tuple(elem(p.strip()) if elem is not float else float(p) for p in parts)
    if text.lower() in ("none", "") and "None" in kind:
        return None
    if isinstance(template, int) or kind == "int":
        return int(text)
    if isinstance(template, float) or "float" in kind:
        return float(text)
    return text


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_overrides(config: TrainConfig, values: Mapping[str, str]) -> TrainConfig:
    """Return a new config with string-valued ``values`` applied; unknown keys raise."""
    known = _flat_keys()
    data = config.to_dict()
    for key, text in values.items():
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        section, f = known[key]
        target = data[section] if section else data
        target[f.name] = _coerce(text, target[f.name], f.type)
    return TrainConfig.from_dict(data)


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    return apply_overrides(base or TrainConfig(), parse_kv(Path(path).read_text()))


def dump_kv(config: TrainConfig) -> str:
    lines = []
    data = config.to_dict()
    for key, (section, f) in _flat_keys().items():
        value = data[section][f.name] if section else data[f.name]
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
