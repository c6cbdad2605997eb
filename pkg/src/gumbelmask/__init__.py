"""Subnetwork extraction from frozen networks via stochastic mask training."""

from .autodiff import (
    Tensor,
    backward,
    conv2d,
    matmul,
    maxpool2d,
    mul,
    relu,
    sigmoid,
    softmax_cross_entropy,
    straight_through,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    LabeledDataset,
    augment,
    load_cifar10,
    load_cifar100,
    make_synthetic_task,
)
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    GumbelMaskError,
    InputError,
    NumericalError,
)
from .estimator import SubnetworkClassifier
from .layers import Flatten, MaskedLayer, MaxPool2, Network, sample_topology
from .masks import (
    MaskParameters,
    SampledTopology,
    keep_probability,
    pruning_rate,
    sample_gumbel,
    seed_stream,
    stgs_sample,
    stgs_sample_sigmoid_param,
    threshold_mask,
)
from .models import build_conv_family, build_mlp, init_weights
from .rescale import RescaleState, apply_rescale, dwr_factor, signed_constant_transform
from .training import (
    MomentumSGD,
    RunConfig,
    TrainRecord,
    evaluate_averaging,
    evaluate_threshold,
    network_pruning_rate,
    train,
)
from .verification import (
    brute_force_subnetwork_forward,
    finite_diff_grad,
    monte_carlo_keep_rate,
    run_verification_suite,
)

__version__ = "0.1.0"
