"""Data informativity for control under data perturbations described by QMIs."""

from .datagen import (DataRecord, LinearSystem, SigmaSet, SingleModel, StructuredModel, make_rng,
                      sample_sigma, sigma_contains)
from .informativity import (SynthesisResult, build_n, build_outer_phi_lmi, synth_ar, synth_h2,
                            synth_h2_optimal, synth_hinf, synth_qstab, synth_qstab_stable,
                            synth_structured_codesign, synth_structured_twostep)
from .qmi import QmiSet, contains, explicit_param, find_slem_certificate, is_matrix_ellipsoid
from .verify import VerificationReport, brute_inclusion, verify_performance, verify_stabilization

__version__ = "0.1.0"

__all__ = [
    "DataRecord", "LinearSystem", "SigmaSet", "SingleModel", "StructuredModel", "make_rng",
    "sample_sigma", "sigma_contains", "SynthesisResult", "build_n", "build_outer_phi_lmi",
    "synth_ar", "synth_h2", "synth_h2_optimal", "synth_hinf", "synth_qstab", "synth_qstab_stable",
    "synth_structured_codesign", "synth_structured_twostep", "QmiSet", "contains", "explicit_param",
    "find_slem_certificate", "is_matrix_ellipsoid", "VerificationReport", "brute_inclusion",
    "verify_performance", "verify_stabilization",
]
