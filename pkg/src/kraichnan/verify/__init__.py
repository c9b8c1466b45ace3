"""Sampled and quadrature checks of the symbol and kernel inequalities."""
from .report import CheckReport, FitResult, FitError, fit_exponent, fit_linear
from .checks import (check_degeneration, check_symmetry, check_cross_lemma, check_structure,
                     check_weight, check_envelope, DEFAULT_SEED, LEMMAS, SamplerError)
from .quadrature import check_bai, check_prc, QuadratureError
