"""Pipeline configuration and its JSON file format."""

import dataclasses
import json
from dataclasses import dataclass, field

from .losses import LossConfig
from .lowres import MIN_INPUT_SIZE, BackboneConfig
from .refine import RefineConfig

LR_SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch: int = 4
    learning_rate: float = 3e-4
    refine_lr_scale: float = 1.0   # multiplier on learning_rate for the refinement network
    lr_schedule: str = "constant"  # or "cosine" (decays to zero at the last step)
    seed: int = 0
    resize: int = 896
    num_samples: int = 16        # synthetic samples when no data directory is given
    augment: bool = True
    log_every: int = 10
    checkpoint_every: int = 0    # 0 disables periodic checkpoints

    def validate(self):
        if self.resize < MIN_INPUT_SIZE:
            raise ValueError(f"resize must be at least {MIN_INPUT_SIZE}, got {self.resize}")
        if self.resize % 32:
            raise ValueError(f"resize must be a multiple of 32, got {self.resize}")
        if self.steps < 0 or self.batch < 1 or self.num_samples < 1:
            raise ValueError("steps must be >= 0, batch and num_samples >= 1")
        if self.learning_rate <= 0 or self.refine_lr_scale <= 0:
            raise ValueError("learning_rate and refine_lr_scale must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        return self


@dataclass
class IOConfig:
    data_dir: str = ""           # holds images/ and alphas/ (optional fg/, bg/); empty = synthetic
    checkpoint: str = "model.mtlt"
    checkpoint_dir: str = ""     # periodic checkpoints go here when set
    log_file: str = ""


_SECTIONS = {
    "backbone": BackboneConfig,
    "refine": RefineConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "io": IOConfig,
}


@dataclass
class PipelineConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def validate(self):
        self.backbone.validate()
        self.refine.validate()
        self.loss.validate()
        self.train.validate()
        return self

    def to_dict(self):
        out = {}
        for name in _SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        sections = {}
        for name, kind in _SECTIONS.items():
            values = data.get(name, {})
            allowed = {f.name for f in dataclasses.fields(kind)}
            extra = set(values) - allowed
            if extra:
                raise ValueError(f"unknown fields in {name!r}: {sorted(extra)}")
            sections[name] = kind(**values)
        return cls(**sections).validate()

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def override(self, dotted):
        """Apply ``{"train.steps": 10, ...}`` overrides and return a new validated config."""
        data = self.to_dict()
        for key, value in dotted.items():
            section, _, name = key.partition(".")
            if section not in data or name not in data[section]:
                raise ValueError(f"unknown config field {key!r}")
            data[section][name] = value
        return PipelineConfig.from_dict(data)


def tiny_config(**train):
    """Small model for tests and desk-scale experiments on 224x224 inputs."""
    cfg = PipelineConfig(
        backbone=BackboneConfig(embed_dim=32, depths=[2, 2], num_heads=[2, 4], decoder_dim=32),
        refine=RefineConfig(feat_dim=32, num_heads=4, k=8, s=4, enc_channels=(16, 32)),
        train=TrainConfig(**{"resize": 224, "num_samples": 4, "batch": 4, "augment": False, **train}),
    )
    return cfg.validate()
