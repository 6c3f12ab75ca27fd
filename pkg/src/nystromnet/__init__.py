"""Adaptive Nystrom layers, random-feature baselines and a small numpy
training core."""

from .kernels import KernelSpec, bandwidth_heuristic, gram, kernel_eval
from .linalg import fwht, inv_sqrt_psd, sym_eig
from .features import (LandmarkSet, FastfoodBlock, RksProjection, fastfood_features,
                       make_fastfood, make_rks, nystrom_features, rks_features,
                       sample_landmarks_stratified)
from .nn import (Adam, AdaptiveNystromLayer, DenseLayer, FastfoodLayer, LayerStack,
                 MultiKernelLayer, loss_softmax_xent, param_count)

__version__ = "0.1.0"
