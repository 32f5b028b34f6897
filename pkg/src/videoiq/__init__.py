"""Adaptive per-frame precision selection for efficient video recognition."""
from .config import TrainConfig, load_config
from .cost import LayerSpec, model_cost_table, model_flops, resnet18_arch
from .data import SyntheticSpec, VideoDataset, generate_dataset, read_dataset, write_dataset
from .losses import LossWeights
from .policy import ActionSpace, PolicyNet, gumbel_sample, infer_action, temperature_at
from .recognizer import RecognitionNet, RecognizerConfig
from .tensor import Tensor, backward, finite_diff_check, no_grad

__version__ = "0.1.0"
