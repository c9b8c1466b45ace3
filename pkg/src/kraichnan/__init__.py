"""Numerical toolkit for the Kraichnan passive-scalar operators M_n.

Symbols and their degeneration set live in :mod:`kraichnan.symbol`, the
diffusion engine in :mod:`kraichnan.diffusion`, Monte Carlo estimators in
:mod:`kraichnan.estimators`, the 2n-point recursion in :mod:`kraichnan.hopf`
and the inequality checks in :mod:`kraichnan.verify`.
"""
from .symbol import (SymbolParams, Configuration, DirectionVector, SymbolMatrix, SymmetryMap,
                     SymbolError, SingularityError, ToleranceError, CapacityError,
                     eval_d, eval_d_grad, fourier_normalization, cross_block, gamma_subset,
                     assemble_symbol, translation_reduce, lift, permutation_map, symmetries,
                     min_eigenvalue, rank_at, degeneration_distance, metric_surrogate,
                     upper_bound_constant)
from .forcing import ForcingSpec
from .diffusion import (SdeConfig, Observable, BinnedObservable, PathEnsemble, EngineError,
                        CacheCorruptionError, drift, noise_factor, adaptive_dt,
                        simulate_ensemble, exit_tail_probability, config_hash)
from .estimators import (MCValue, GridSpec, DensityGrid, GreenSample, InsufficientDataError,
                         DivergenceWarning, box_grid, heat_kernel_density, semigroup_apply,
                         green_apply, green_density, RadialRegion, radial_f2_oracle,
                         bootstrap_stderr, estimate_E, estimate_En, envelope_E)
from .hopf import pairings, pair_bound, pair_bound_terms, f2_at, f4_at, f2n_recursive, DepthError

__version__ = "0.1.0"
