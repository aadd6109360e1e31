"""prunekit: train, prune, factorize and evaluate small feedforward nets."""

from .nn import (
    DenseNet,
    ForwardTrace,
    FrameDataset,
    Layer,
    ShapeError,
    TrainConfig,
    TrainReport,
    cross_entropy,
    forward,
    forward_batch,
    frame_accuracy,
    loss_gradients,
    param_count,
    posteriors,
    train_sgd,
)
from .pruning import (
    FixedCount,
    HessianInfo,
    NumericalError,
    ProportionOfRemaining,
    PruneHistory,
    PruneMask,
    PruneRunConfig,
    SaliencyMap,
    Schedule,
    Threshold,
    ThresholdCapped,
    apply_pruning,
    dictionary_revise,
    obd_scores,
    obs_apply_update,
    obs_delta,
    obs_scores,
    prune_retrain_loop,
    saliency_affine,
    saliency_dictionary,
    saliency_magnitude,
    saliency_obd,
    saliency_obs,
    select_for_pruning,
)
from .sparse import CsrNetwork, csr_forward, to_csr
from .decomposition import (
    DecompTrainConfig,
    FactorPair,
    decompose_network,
    decompose_train,
    rank_for_remain_rate,
    splice_factors,
    svd_oracle,
)
from .kws import (
    DecodeConfig,
    Detection,
    KeywordFst,
    PosteriorStream,
    RocCurve,
    build_keyword_fst,
    decode,
    evaluate_roc,
    smooth_posteriors,
)
from .synth import KwsStreamSpec, SyntheticSpec, gen_frame_dataset, gen_kws_streams

__version__ = "0.1.0"
