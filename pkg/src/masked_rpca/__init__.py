"""Sparse and low-rank video decomposition under the overlaying model.

``X = (1 - W) o L + W o S``: each pixel shows either the low-rank background
``L`` or the foreground, selected by the mask ``W``.
"""

__version__ = "0.1.0"

from .baseline import MaskThresholdRule, RpcaConfig, mask_from_sparse, otsu_threshold, solve_pcp
from .emrpca import EmrpcaConfig, solve_emrpca
from .estimators import ExtendedMaskedRPCA, MaskedRPCA, RobustPCA
from .mrpca import MrpcaConfig, solve_mrpca
from .trace import IterationTrace

__all__ = [
    "MaskedRPCA",
    "ExtendedMaskedRPCA",
    "RobustPCA",
    "MrpcaConfig",
    "EmrpcaConfig",
    "RpcaConfig",
    "MaskThresholdRule",
    "solve_mrpca",
    "solve_emrpca",
    "solve_pcp",
    "otsu_threshold",
    "mask_from_sparse",
    "IterationTrace",
]
