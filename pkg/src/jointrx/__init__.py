"""Message-passing receivers for joint channel estimation and decoding.

A link-level simulation and inference library for the pointwise channel
``y = h * x + w``: exact complex Gaussian message algebra, a zero-tailed
convolutional code with log-domain soft decoding, Gray-labelled
constellations with soft demapping, correlated channel priors from power
delay profiles, four iterative receivers (moment-matched belief
propagation, expectation propagation, a belief-propagation/mean-field
hybrid, and its expectation-maximisation limit), and a reproducible
Monte Carlo harness.
"""

from . import _kernels
from .channel import (
    FrameLayout,
    PowerDelayProfile,
    build_frame,
    covariance_from_pdp,
    draw_channel,
    frequency_correlation,
    pilot_positions,
    transmit,
)
from .coding import (
    CodeConfig,
    InterleaverPermutation,
    decode_siso,
    deinterleave,
    encode,
    extrinsic_llrs,
    hard_decide,
    interleave,
    make_interleaver,
)
from .errors import (
    AllZeroLikelihood,
    BothFlat,
    DegenerateSymbolBelief,
    JointrxError,
    NonpositivePrecision,
    SingularMatrix,
    ZeroModulusSymbol,
)
from .gaussians import (
    GaussianMixture,
    JointGaussian,
    ScalarGaussian,
    divide,
    extrinsic_conditional,
    joint_extrinsics,
    mixture_moments,
    product,
)
from .mapping import (
    Constellation,
    bit_llrs_from_symbol_msg,
    gaussian_symbol_likelihoods,
    map_bits,
    qam16_gray,
    qpsk_gray,
    symbol_extrinsic,
)
from .receiver import (
    ALGORITHMS,
    IterationDiagnostic,
    ReceiverConfig,
    ReceiverState,
    channel_belief_combine,
    channel_smoothing,
    detector_inputs,
    ep_site_update,
    ga_channel_obs_message,
    mf_channel_obs_message,
    pilot_obs_message,
    run_receiver,
)
from .simulate import (
    ResultRecord,
    RunConfig,
    qpsk_ber_analytic,
    run_experiment,
    simulate_frame,
    snr_db_to_noise_precision,
    write_results,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
