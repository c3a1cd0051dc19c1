"""Two-stage portrait matting on numpy: a windowed-attention low-resolution
network predicts a coarse alpha and trimap, and a small refinement network
with cross-region attention fixes the uncertain 8x8 regions at full
resolution."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import PipelineConfig, TrainConfig, tiny_config
from .data import CompositeSample, augment, make_synthetic_samples, synthesize_sample
from .errors import MatteError
from .flops import count_flops
from .losses import LossConfig, make_pseudo_trimap, total_loss
from .lowres import BackboneConfig, LowResNet
from .metrics import MetricReport, evaluate_matte
from .pipeline import MattingModel, Trainer, evaluate, infer, train
from .refine import RefineConfig, RefineNet
from .tensor import Tensor, no_grad, precision

__version__ = "0.1.0"
