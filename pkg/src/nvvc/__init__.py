"""nvvc: grid-factorized dynamic radiance field codec.

Frames are modeled as a coefficient grid Hadamard-fused with a multiscale
basis pyramid and decoded by a tiny MLP; the basis is updated across time by
additive residuals, training jointly optimizes distortion against a simulated
quantization + Laplace rate estimate, and the codec emits a range-coded GOF
bitstream that decodes back to renderable fields.
"""

__version__ = "0.1.0"

from .grids import (  # noqa: F401
    BasisPyramid, Grid3D, ResidualPyramid,
    apply_residual, basis_sample, fuse, l1_penalty, sawtooth_map, trilinear_sample,
)
from .mlp import TinyMlp, encode_direction, mlp_eval  # noqa: F401
from .rendering import (  # noqa: F401
    Camera, FieldSet, RayBatch, SampleBatch,
    composite, generate_rays, psnr, render_image, sample_points,
)
from .rate import LaplaceModel, RateTensor, laplace_cdf, pmf, rate_loss, simulate_quantize  # noqa: F401
from .codec import (  # noqa: F401
    FreqTable, GofBitstream, QuantizedGrid,
    build_freq_table, decode_sequence, dequantize, quantize,
    range_decode, range_encode, read_stream, write_stream,
)
from .training import TrainConfig, adam_step, encode_sequence, load_config, total_loss, train_iframe, train_pframe  # noqa: F401
from .scene import BlobScene, default_scene, hemisphere_rig, load_dataset, make_dataset, oracle_field, oracle_render  # noqa: F401
from .evaluation import RdCurve, RdPoint, ablation_run, allocation_report, bd_rate, eval_sequence  # noqa: F401
