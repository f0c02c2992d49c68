"""Small NCHW tensor toolkit with hand-written backward passes."""
from .checkpoint import load_arrays, save_arrays
from .functional import (
    activation,
    activation_backward,
    batchnorm2d,
    batchnorm2d_backward,
    bilinear_upsample,
    bilinear_upsample_backward,
    concat_channels,
    concat_channels_backward,
    conv2d,
    conv2d_backward,
    conv_transpose2d,
    conv_transpose2d_backward,
    softmax,
)
from .gradcheck import finite_diff_check, numerical_gradient
from .layers import BatchNorm2d, Conv2d, ConvBlock, ConvTranspose2d, Param
from .optim import SGD, Adam, optimizer_step
