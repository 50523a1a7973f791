"""Dense float tensors, layer kernels with backward passes, SGD and gradcheck."""
from .functional import (
    ConvSpec,
    RunningStats,
    ShapeError,
    Tensor,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    conv2d_spec,
    conv3d_backward,
    conv3d_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    linear_backward,
    linear_forward,
    max_pool3d_backward,
    max_pool3d_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
)
from .gradcheck import GradcheckReport, gradcheck, relative_error
from .layers import (
    BatchNorm,
    Conv2d,
    Conv3d,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    MaxPool3d,
    Module,
    ReLU,
    ResidualBlock,
    Sequential,
)
from .optim import ParamTensor, sgd_step
