"""RSIR window attention on a small numpy autodiff engine."""

from .attention import (
    AttentionConfig,
    AttentionWeights,
    GroupProjection,
    dense_msa,
    ir_win_attention,
    rs_win_attention,
    rsir_win,
    window_msa,
)
from .backbone import (
    ModelConfig,
    RsirBlock,
    RsirTransformer,
    StageConfig,
    attention_flops,
    flops_breakdown,
    flops_count,
    forward,
    param_count,
)
from .permwin import (
    PermutationPlan,
    SampleMap,
    SampleOrigin,
    WindowLayout,
    importance_sample_map,
    plan_from_map,
    restore,
    shuffle,
    uniform_sample_map,
    window_partition,
    window_reverse,
)
from .tensor import Parameter, Tensor, count_macs, no_grad, precision

__version__ = "0.1.0"
