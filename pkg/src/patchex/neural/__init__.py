from .autograd import Tensor
from .inputs import assemble_input, lbp_map
from .loss import FeatureExtractor, LossWeights, loss, total_loss
from .networks import (
    CheckpointError,
    NetworkParams,
    fg_network,
    forward,
    gated_conv,
    infer,
    init_network,
    load_checkpoint,
    near_network,
    save_checkpoint,
)
from .train import Adam, NumericError, Sample, TrainConfig, TrainResult, train


def forward_fg(params: NetworkParams, x):
    return forward(params, x)


def forward_near(params: NetworkParams, x):
    return forward(params, x)


gated_conv_forward = gated_conv
