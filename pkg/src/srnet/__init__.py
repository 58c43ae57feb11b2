"""Spectral reconstruction toolkit.

Rebuilds 31-band hyperspectral cubes from RGB images with a small
residual-dense-attention network, on top of a self-contained rank-4
autodiff core. See the README for the CLI walkthrough.
"""

from .data import (
    CameraResponse,
    DataError,
    FormatError,
    Manifest,
    SynthSpec,
    default_camera_response,
    generate_dataset,
    load_pairs,
    project_rgb,
    read_cube,
    read_manifest,
    read_rgb,
    synth_cube,
    write_cube,
    write_rgb,
)
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .metrics import (
    MetricReport,
    SsimParams,
    loss_total,
    mrae,
    rmse,
    ssim,
    ssim_map,
    ssim_value,
)
from .model import (
    ConfigError,
    ConvParams,
    Model,
    ModelConfig,
    RdabParams,
    build_network,
    channel_attention,
    coordconv_forward,
    count_params,
    dense_branch_forward,
    load_model,
    model_forward,
    param_breakdown,
    rdab_forward,
    save_model,
    spatial_attention,
)
from .tensor import (
    DimensionError,
    Precision,
    Tensor,
    backward,
    no_grad,
    use_precision,
)
from .training import (
    AdamState,
    EpochRecord,
    TrainConfig,
    TrainingError,
    adam_step,
    evaluate,
    lr_at,
    sample_patches,
    train,
)

__version__ = "0.1.0"
