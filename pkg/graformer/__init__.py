# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""GraFormer 2D-to-3D pose lifting: graph convolutions, graph attention, and a
small reverse-mode autodiff engine to train them.

"""

from graformer.version import __version__, __url__, version_info

from graformer.autodiff import Tensor, backward, grad_check, make_rng, no_grad
from graformer.data import Dataset, PoseSample, generate_synthetic, load_dataset, save_dataset
from graformer.exceptions import GraformerException
from graformer.graphops import (
    SkeletonGraph, graph_laplacian, normalized_adjacency, rescaled_laplacian, skeleton_preset,
)
from graformer.layers import (
    GraFormerModel, ModelConfig, count_parameters, load_checkpoint, save_checkpoint,
)
from graformer.training import TrainConfig, evaluate, mpjpe, mse_loss, train
