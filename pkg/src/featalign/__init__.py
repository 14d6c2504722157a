"""featalign: training-maturity scoring for perception-module feature maps.

Feature maps and scene ground truth are projected into a shared 768-dim
representation space (a two-stage alignment autoencoder for features, text
embedding for GT); cosine similarity per training phase yields a maturity
series that is validated against detection-metric series with Pearson
correlation.
"""

from .autoencoder import (
    AEConfig,
    AEParams,
    TrainReport,
    TrainSample,
    config_digest,
    decode,
    default_ae_config,
    encode,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train_stage1,
    train_stage2,
    train_two_stage,
)
from .dataset import FeatureDataset
from .embed import (
    EMBED_DIM,
    Representation,
    embed_scene,
    hash_embed,
    load_external_embeddings,
    write_embeddings,
)
from .errors import FeatAlignError
from .gt import (
    Box2D,
    Box3D,
    GTScene,
    parse_gt_file,
    text_serialize_2d,
    text_serialize_3d,
    write_gt_file,
)
from .scoring import (
    MetricSeries,
    SeriesReport,
    SimilaritySeries,
    aggregate_phases,
    build_report,
    pearson,
    similarity_score,
)
from .synthetic import SynthConfig, gen_features, gen_metric_series, gen_scenes
from .tensor_ops import (
    ConvSpec,
    conv2d_backward,
    conv2d_forward,
    cosine_sim,
    cosine_sim_backward,
    deconv2d_backward,
    deconv2d_forward,
    grad_check,
    mse_loss,
    mse_loss_backward,
)

__version__ = "0.1.0"
