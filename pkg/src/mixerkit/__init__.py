"""mixerkit: structured sequence-mixer families (dense, Toeplitz,
Vandermonde, Cauchy, low-rank, attention, quasiseparable) with fast apply
paths, dense-materialization oracles, semiseparable/quasiseparable scan
engines, a bidirectional gated-SSM encoder, hand-written gradients with
finite-difference verification, and a CLI harness."""

from .core import Rng, circular_conv_fft, flip_seq, matmul, numerical_rank, \
    rel_error, shift_right, softmax_rows
from .framework import MaterializedMixer, MixerConfig, Preprocessor, \
    apply_mixer, preprocess
from .families import FAMILIES, FAMILY_MODES, MixerSpec, UnsupportedFamilyError, \
    apply_family, build_mixer, family_rank_report, materialize_family
from .ssm import QuasiParams, SsmCoeffs, SsmHeadParams, check_quasi_rank, \
    check_semisep_rank, discretize, embed_addition_bidir_as_quasi, \
    embed_lowrank_as_quasi, init_quasi_params, init_ssm_head, qs_apply, \
    qs_materialize, quasi_matrix_from_coeffs, ss_materialize, ss_scan
from .sam import check_extendability, check_prefix_consistency
from .blocks import EncoderConfig, EncoderParams, SsmLayerParams, \
    encoder_forward, init_encoder, init_layer, layer_forward, load_checkpoint, \
    parameter_count_report, save_checkpoint
from .gradcheck import GradReport, backward_ss_scan, cross_entropy, \
    finite_difference_grad, sgd_step
from .report import CheckRecord, VerificationReport
from .toytask import ToyConfig, run_toy_task

__version__ = "0.1.0"
