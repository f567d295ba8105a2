"""Joint beamforming and power allocation for multicell networks with low-resolution ADCs/DACs."""

from .baseline import PercellOptions, PercellSolution, achieved_sinr_report, percell_solve
from .downlink import (JointSolution, build_sigma, dl_sinr, dl_sinrs, solve_qicomp, solve_tau,
                       tau_iterative)
from .quantizer import (QuantizerModel, codebook, dl_quant_cov, empirical_beta, lloyd_max,
                        quantizer_model, ul_quant_cov)
from .scenario import NetworkConfig, NetworkScenario, generate_channels
from .uplink import (SolverOptions, UplinkStatus, fixed_point_solve, mmse_combiner,
                     mmse_combiners, ul_sinr, ul_sinrs, update_map)

__version__ = "0.1.0"

__all__ = [
    "PercellOptions", "PercellSolution", "achieved_sinr_report", "percell_solve",
    "JointSolution", "build_sigma", "dl_sinr", "dl_sinrs", "solve_qicomp", "solve_tau",
    "tau_iterative", "QuantizerModel", "codebook", "dl_quant_cov", "empirical_beta",
    "lloyd_max", "quantizer_model", "ul_quant_cov", "NetworkConfig", "NetworkScenario",
    "generate_channels", "SolverOptions", "UplinkStatus", "fixed_point_solve", "mmse_combiner",
    "mmse_combiners", "ul_sinr", "ul_sinrs", "update_map",
]
