"""Matrix-weighted Triebel-Lizorkin analysis on a periodic grid."""

__version__ = "0.1.0"

from .grid import (SampledField, TorusGrid, band_limited_field, fft_forward, fft_inverse,
                   pure_frequency, read_field_binary, read_field_csv, write_field_binary,
                   write_field_csv)
from .matrix_core import NotPositiveDefinite, matrix_power, operator_norm
from .weights import (ApCharacteristic, MatrixWeightField, WeightSpec, ap_characteristic,
                      doubling_exponent, generate_weight, random_smooth_weight,
                      scalar_ap_characteristic)
from .reducing import (ReducingFamily, ReducingOperators, build_reducing, mvee_centered,
                       verify_reducing)
from .littlewood_paley import (AnalysisProfile, LittlewoodPaley, calderon_check, lp_piece,
                               lp_pieces, make_pair, make_profile)
from .norms import (NORM_KINDS, SpaceParams, TriebelLizorkinNorm, equivalence_report,
                    hl_maximal, norm_F, norm_F_AQ, norm_gstar, norm_gstar_AQ, norm_square,
                    norm_star, norm_star_AQ, norm_starstar_AQ)
from .multiplier import (FourierMultiplier, MultiplierSymbol, apply_multiplier,
                         boundedness_report, hormander_constants)

__all__ = [
    "NotPositiveDefinite", "matrix_power", "operator_norm",
    "SampledField", "TorusGrid", "band_limited_field", "fft_forward", "fft_inverse",
    "pure_frequency", "read_field_binary", "read_field_csv", "write_field_binary",
    "write_field_csv", "ApCharacteristic", "MatrixWeightField", "WeightSpec",
    "ap_characteristic", "doubling_exponent", "generate_weight", "random_smooth_weight",
    "scalar_ap_characteristic", "ReducingFamily", "ReducingOperators", "build_reducing",
    "mvee_centered", "verify_reducing", "AnalysisProfile", "LittlewoodPaley", "calderon_check",
    "lp_piece", "lp_pieces", "make_pair", "make_profile", "NORM_KINDS", "SpaceParams",
    "TriebelLizorkinNorm", "equivalence_report", "hl_maximal", "norm_F", "norm_F_AQ",
    "norm_gstar", "norm_gstar_AQ", "norm_square", "norm_star", "norm_star_AQ",
    "norm_starstar_AQ", "FourierMultiplier", "MultiplierSymbol", "apply_multiplier",
    "boundedness_report", "hormander_constants",
]
