"""Density models for discrete data built on differentiable Voronoi
tessellations: exact invertible maps between a cell and the whole space,
coupling flows, dequantization, and disjoint mixtures."""

import os as _os

# VF_THREADS caps BLAS parallelism; it must be exported before numpy first
# loads, so this block runs ahead of every other import in the package.
_cap = _os.environ.get("VF_THREADS")
if _cap:
    for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
               "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ.setdefault(_v, _cap)

from . import errors
from .autodiff import Binding, Gradients, Param, Tape, Var, grad_check
from .tessellation import (
    HalfSpace,
    HalfSpaceKind,
    Tessellation,
    cell_constraints,
    contains,
    contains_many,
    locate,
    locate_many,
    new_tessellation,
)
from .cell_map import (
    MapResult,
    RayExit,
    dense_jacobian_reference,
    forward,
    inverse,
    ray_exit,
    squash,
    squash_deriv,
    squash_inv,
)
from .flows import (
    AffineCoupling,
    CouplingChain,
    DiagonalGaussian,
    FlowStack,
    coupling_masks,
)
from .optim import Adam, TrainReport, fit
from .data import (
    DiscreteTable,
    Split,
    binary_toy,
    gaussian_mixture_2d,
    load_csv_discrete,
    make_nursery,
    split,
    synth_continuous_2d,
    synth_quantized_2d,
)
from .dequant import (
    DequantModel,
    JointDensity,
    dequantize,
    elbo,
    iw_log_evidence,
    nll_bound,
    nll_bound_rows,
    quantize,
    train_dequant,
)
from .mixture import MixtureModel, mixture_logprob, mixture_sample, train_mixture

__version__ = "0.1.0"
