"""Multi-kernel convolutional text classifier with hand-written backpropagation."""

from .model import DESK_CONFIG, PAPER_CONFIG, ModelConfig, ModelParams, forward, init_params, predict, softmax
from .persistence import ModelBundle, load, save
from .text import LabelMap, Vocabulary, build_vocabulary, encode, load_dataset, tokenize
from .training import TrainConfig, backward, grad_check, sgd_momentum_step, train

__version__ = "0.1.0"
