"""Road-network-constrained trajectory synthesis toolkit."""

from .roadnet import (
    Intersection,
    RoadNetwork,
    RoadSegment,
    generate_grid_network,
    gps_of_rntraj,
    interpolation_fractions,
    load_network,
    save_network,
)
from .trajsim import (
    Corpus,
    PathTrace,
    RNTraj,
    RNTrajPoint,
    encode_moving_ratios,
    load_corpus,
    save_corpus,
    simulate_corpus,
)
from .utgraph import (
    SegmentEmbeddingTable,
    UTGraph,
    build_utgraph,
    load_embeddings,
    pretrain_embeddings,
    save_embeddings,
)
from .codec import decode, vectorize
from .denoiser import Denoiser, DenoiserConfig, positional_encoding
from .diffusion import (
    NoiseSchedule,
    TrainConfig,
    estimate_x0,
    forward_diffuse,
    loss_l1,
    loss_l2,
    loss_l3,
    quadratic_schedule,
    reverse_step,
    sample,
    sample_corpus,
    train,
)
from .metrics import MetricReport, corpus_rsc, evaluate_corpora, jsd, rsc
from .baselines import markov_generate, rwrn_generate

__version__ = "0.1.0"
