"""Linear-time softmax and generalized-kernel attention via random features."""

from favor.attention import (
    FavorConfig,
    PrefixAccumulator,
    approx_attention_matrix,
    config_for_call,
    favor_attention,
    favor_bidirectional,
    favor_unidirectional,
    generalized_config,
    softmax_config,
)
from favor.errors import DegenerateAttentionError, DomainError
from favor.exact import (
    exact_bidirectional,
    exact_generalized,
    exact_unidirectional,
    softmax_matrix,
)
from favor.featuremap import (
    SOFTMAX_SCALERS,
    UNIT_SCALERS,
    FeatureMap,
    ScalerSpec,
    embed,
    make_generalized_map,
    make_softmax_map,
    redraw,
    scalers,
)
from favor.sampler import (
    Projection,
    apply_projection,
    materialize,
    sample_gorf,
    sample_horf,
    sample_iid,
    sample_rorf,
)

__version__ = "0.1.0"
