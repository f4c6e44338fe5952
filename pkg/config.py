"""Configuration records for every part of the lab.

All models reject unknown keys and raise ``ConfigError`` (a ``ParameterError``) on any
invalid value, naming the offending field.
"""

import math
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError
from lab.report import DEFAULT_VOCAB

U64 = Field(default=0, ge=0, le=2**64 - 1)


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        loc = ".".join(str(p) for p in item.get("loc", ())) or "<root>"
        parts.append(f"{loc}: {item.get('msg')}")
    return f"invalid {error.title}: " + "; ".join(parts)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    def __init__(self, **data):
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise ConfigError(_describe(e)) from e

    @classmethod
    def model_validate(cls, obj, *args, **kwargs):
        try:
            return super().model_validate(obj, *args, **kwargs)
        except ValidationError as e:
            raise ConfigError(_describe(e)) from e

    def updated(self, **changes):
        """Copy with changes applied and re-validated."""
        return type(self).model_validate({**self.model_dump(), **changes})


# signal-core ----------------------------------------------------------------


class WaveAmplitudes(StrictModel):
    p: float = 0.15
    q: float = -0.1
    r: float = 1.0
    s: float = -0.2
    t: float = 0.3
    lead_i_scale: float = 0.6
    precordial_scales: Tuple[float, float, float, float, float, float] = (-0.6, -0.3, 0.4, 1.1, 1.0, 0.7)


class ClassRule(StrictModel):
    names: Tuple[str, str, str] = ("bradycardia", "normal", "tachycardia")
    brady_below: float = 60.0
    tachy_above: float = 100.0

    @model_validator(mode="after")
    def _ordered(self):
        if not self.brady_below <= self.tachy_above:
            raise ValueError("brady_below must not exceed tachy_above")
        return self

    @property
    def n_classes(self) -> int:
        return len(self.names)

    def label(self, heart_rate: float) -> int:
        if heart_rate < self.brady_below:
            return 0
        if heart_rate > self.tachy_above:
            return 2
        return 1


class SynthParams(StrictModel):
    heart_rate: float = Field(default=72.0, ge=20, le=300)
    fs: float = Field(default=500.0, ge=100)
    duration: float = Field(default=10.0, gt=0)
    wave_amplitudes: WaveAmplitudes = Field(default_factory=WaveAmplitudes)
    noise_sigma: float = Field(default=0.0, ge=0)
    baseline_wander: Tuple[float, float] = (0.0, 0.3)
    seed: int = U64
    class_rule: ClassRule = Field(default_factory=ClassRule)

    @field_validator("baseline_wander")
    @classmethod
    def _wander(cls, value):
        amplitude, frequency = value
        if amplitude < 0 or frequency <= 0:
            raise ValueError("baseline_wander needs amplitude >= 0 and frequency > 0")
        return value

    @property
    def n_samples(self) -> int:
        return int(round(self.fs * self.duration))


# lead-rules -----------------------------------------------------------------


class RuleWeights(StrictModel):
    w_E: float = Field(default=0.5, ge=0)
    w_G: float = Field(default=0.5, ge=0)


# ecg-render -----------------------------------------------------------------


class RenderConfig(StrictModel):
    px_per_mm: int = Field(default=8, ge=2, le=20)
    paper_speed: float = Field(default=25.0, gt=0)
    gain: float = Field(default=10.0, gt=0)
    margin_mm: int = Field(default=8, ge=0, le=50)
    row_height_mm: int = Field(default=30, ge=10, le=80)
    grid_style: Literal["fine-red", "coarse-gray", "none"] = "fine-red"
    show_labels: bool = True
    show_calibration_pulse: bool = False
    show_metadata: bool = False
    seed: int = U64

    @model_validator(mode="after")
    def _room_for_extras(self):
        if self.show_calibration_pulse and self.margin_mm < 6:
            raise ValueError("calibration pulse needs margin_mm >= 6")
        if self.show_metadata and self.margin_mm < 4:
            raise ValueError("metadata footer needs margin_mm >= 4")
        return self


AUGMENT_TRANSFORMS = ("rotate", "noise", "contrast", "brightness", "grid_jitter")


def _within(name, value, lo, hi):
    a, b = value
    if not (lo <= a <= b <= hi):
        raise ValueError(f"{name} range {value} must satisfy {lo} <= low <= high <= {hi}")
    return value


class AugmentConfig(StrictModel):
    rotation_deg: float = Field(default=3.0, ge=0, le=10)
    gauss_noise_sigma: Tuple[float, float] = (0.0, 0.02)
    contrast: Tuple[float, float] = (0.8, 1.2)
    brightness: Tuple[float, float] = (-0.1, 0.1)
    grid_color_jitter: bool = True
    apply_prob: Union[float, Dict[str, float]] = 0.5
    seed: int = U64

    @field_validator("gauss_noise_sigma")
    @classmethod
    def _noise(cls, value):
        return _within("gauss_noise_sigma", value, 0.0, 0.05)

    @field_validator("contrast")
    @classmethod
    def _contrast(cls, value):
        return _within("contrast", value, 0.8, 1.2)

    @field_validator("brightness")
    @classmethod
    def _brightness(cls, value):
        return _within("brightness", value, -0.1, 0.1)

    @field_validator("apply_prob")
    @classmethod
    def _prob(cls, value):
        probs = value if isinstance(value, dict) else {name: value for name in AUGMENT_TRANSFORMS}
        for name, p in probs.items():
            if name not in AUGMENT_TRANSFORMS:
                raise ValueError(f"unknown transform '{name}'")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"apply_prob for {name} must lie in [0, 1]")
        return value

    def prob(self, transform: str) -> float:
        if isinstance(self.apply_prob, dict):
            return float(self.apply_prob.get(transform, 0.5))
        return float(self.apply_prob)


# align-losses ---------------------------------------------------------------


class LossWeights(StrictModel):
    alpha: float = Field(default=0.1, ge=0)
    beta: float = Field(default=1.0, ge=0)
    theta: float = Field(default=0.05, ge=0)
    w_rule: float = Field(default=0.1, ge=0)
    w_E: float = Field(default=0.5, ge=0)
    w_G: float = Field(default=0.5, ge=0)
    epsilon_smooth: float = Field(default=0.1, ge=0, lt=1)
    det_floor: float = Field(default=1e-12, gt=0)
    tau_init: float = Field(default=1 / 0.07, ge=1, le=100)
    tau_min: float = Field(default=1.0, gt=0)
    tau_max: float = Field(default=100.0, gt=0)

    @model_validator(mode="after")
    def _tau_range(self):
        if not self.tau_min <= self.tau_init <= self.tau_max:
            raise ValueError("tau_init must lie inside [tau_min, tau_max]")
        return self


# toy-models -----------------------------------------------------------------


class DecoderConfig(StrictModel):
    layers: int = Field(default=2, ge=1)
    d: int = Field(default=64, ge=4)
    heads: int = Field(default=4, ge=1)
    patch: int = Field(default=8, ge=1)
    mask_ratio: float = Field(default=0.25, ge=0, lt=1)
    ffn_mult: int = Field(default=2, ge=1)
    pad: bool = True

    @model_validator(mode="after")
    def _heads_divide(self):
        if self.d % self.heads:
            raise ValueError(f"decoder d={self.d} is not divisible by heads={self.heads}")
        return self


class ModelConfig(StrictModel):
    d_img: int = Field(default=64, ge=2)
    d_sig: int = Field(default=32, ge=2)
    signal_length: int = Field(default=1000, ge=8)
    image_size: Tuple[int, int] = (128, 160)
    image_patch: int = Field(default=16, ge=2)
    image_hidden: int = Field(default=64, ge=2)
    signal_patch: int = Field(default=25, ge=1)
    signal_hidden: int = Field(default=64, ge=2)
    text_dim: int = Field(default=32, ge=2)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    vocab: List[str] = Field(default_factory=lambda: list(DEFAULT_VOCAB))
    seed: int = U64

    @model_validator(mode="after")
    def _shapes(self):
        h, w = self.image_size
        if h % self.image_patch or w % self.image_patch:
            raise ValueError(f"image_size {self.image_size} is not tiled by patch {self.image_patch}")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocab entries must be unique")
        return self

    @property
    def n_queries(self) -> int:
        return math.ceil(self.signal_length / self.decoder.patch)

    @classmethod
    def toy(cls, **changes):
        return cls(**changes)

    @classmethod
    def full_scale(cls, **changes):
        base = dict(
            d_img=1024,
            d_sig=768,
            signal_length=5000,
            decoder=dict(layers=12, d=768, heads=12, patch=8, mask_ratio=0.25, ffn_mult=4),
        )
        base.update(changes)
        return cls(**base)


# pipeline -------------------------------------------------------------------


class AdamWConfig(StrictModel):
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)


class TrainConfig(StrictModel):
    n_samples: int = Field(default=720, ge=10)
    val_fraction: float = Field(default=0.1, gt=0, lt=1)
    n_test: Optional[int] = Field(default=None, ge=0)
    class_mix: Tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    fs: float = Field(default=100.0, ge=100)
    duration: float = Field(default=10.0, ge=10)
    batch_size: int = Field(default=16, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    total_steps: int = Field(default=1000, ge=1)
    warmup_fraction: float = Field(default=0.10, gt=0, lt=1)
    eval_interval: int = Field(default=50, ge=1)
    optimizer: AdamWConfig = Field(default_factory=AdamWConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    teacher_steps: int = Field(default=500, ge=0)
    teacher_lr: float = Field(default=1e-3, gt=0)
    teacher_batch_size: int = Field(default=32, ge=2)
    render: RenderConfig = Field(default_factory=lambda: RenderConfig(px_per_mm=2))
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    probe_epochs: int = Field(default=100, ge=1)
    probe_lr: float = Field(default=1e-3, gt=0)
    probe_batch_size: int = Field(default=16, ge=1)
    workers: int = Field(default=1, ge=1)
    render_cache: int = Field(default=64, ge=0)
    seed: int = U64

    @field_validator("class_mix")
    @classmethod
    def _mix(cls, value):
        if any(p < 0 for p in value) or not math.isclose(sum(value), 1.0, abs_tol=1e-6):
            raise ValueError("class_mix must be non-negative and sum to 1")
        return value

    @property
    def test_count(self) -> int:
        return self.n_samples // 5 if self.n_test is None else self.n_test

    @classmethod
    def toy(cls, **changes):
        return cls(**changes)

    @classmethod
    def full_scale(cls, **changes):
        base = dict(batch_size=80, lr=5e-4, total_steps=50000, fs=500.0, render=dict(px_per_mm=8))
        base.update(changes)
        return cls(**base)


# cli --------------------------------------------------------------------------


class Paths(StrictModel):
    dataset: str = "data"
    out: str = "runs"
    checkpoint: Optional[str] = None


class CliConfig(StrictModel):
    seed: int = U64
    paths: Paths = Field(default_factory=Paths)
    synth: SynthParams = Field(default_factory=SynthParams)
    render: RenderConfig = Field(default_factory=RenderConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
