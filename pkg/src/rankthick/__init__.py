"""rankthick: explanation-ranking robustness toolkit.

Train small feed-forward classifiers with ranking-thickness regularizers,
attack their saliency-map rankings, and measure thickness, top-k robustness,
and explanation faithfulness.
"""

from .attack import (
    AttackConfig,
    AttackTrace,
    er_attack,
    lagrangian_value,
    mse_attack,
    multiplier_step,
    qp_weights,
)
from .data import Dataset, load_csv, split, standardize, synth_gaussian
from .evaluate import (
    auc,
    comp,
    correlation,
    dffot,
    manipulation_epoch,
    precision_at_k,
    sensitivity,
    suff,
)
from .explain import SaliencyMap, integrated_grad, simple_grad, smooth_grad, top_k
from .net import (
    Mlp,
    WeightGrad,
    hvp_fd,
    load_checkpoint,
    mlp_new,
    save_checkpoint,
    spectral_norm,
)
from .thickness import (
    NeighborhoodSpec,
    ThicknessReport,
    empirical_risks,
    gap,
    model_thickness,
    pairwise_thickness_indicator,
    pairwise_thickness_relaxed,
    thickness_bounds,
    topk_thickness,
)
from .train import (
    TrainSpec,
    TrainedModel,
    fast_at_step,
    linearized_worst_case,
    regularizer_value,
    regularizer_weight_grad,
    select_pairs,
    train,
)
from .trustregion import criticality, merit_value, tr_moo_attack, tr_subproblem

__version__ = "0.1.0"
