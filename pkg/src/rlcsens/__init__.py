"""Eigen-sensitivity, yield and modal analysis of lumped RLC networks."""
from .config import AnalysisConfig, data_path, load_config, parse_config
from .eigen import EigenSolution, modal_transfer, resolvent, solve_pencil
from .modal import (
    ResidueExpansion,
    ZeroSet,
    eigvec_derivs,
    find_zeros,
    natural_response,
    residue_derivs,
    residues,
    zero_derivs,
)
from .netlist import Circuit, NetlistError, parse_netlist, to_netlist, validate_circuit
from .sensitivity import (
    ResponseSpec,
    SensitivityMatrix,
    assemble_sensitivity,
    compare_to_fd,
    dH_dh,
    dH_ds,
    eig_derivs,
    fd_oracle,
    on_res_deriv,
    repeated_eig_derivs,
    scattering_differential,
    to_scattering,
)
from .statespace import StateSpaceModel, build_stamps, build_state_space, direct_transfer, mna_ac_oracle
from .stats import (
    ParameterDistribution,
    Spec,
    SpecSet,
    YieldReport,
    evaluate_specs,
    full_resolve_mc_oracle,
    local_density,
    propagate_covariance,
    sample_omega,
    venn_regions,
)

__version__ = "0.1.0"
