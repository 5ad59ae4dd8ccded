"""Random walks on random graphs with planted community structure.

Subpackages:

- ``graphgen``  — configuration-model samplers with community structure
- ``chainkit``  — exact dense analysis of small Markov chains
- ``treesim``   — multi-type branching-tree local limits and walk statistics
- ``walklab``   — sparse walk evolution, spectra and geometry on graphs
- ``xplab``     — scripted experiments and report export
"""

__version__ = "0.1.0"

from .chainkit import ChainError, FiniteChain
from .graphgen import (
    CommunityGraph,
    CommunitySpec,
    GraphError,
    SpecError,
    derive_Q,
    gen_configuration_model,
    gen_m_community,
    gen_two_community,
    m_community_spec,
    rewire_within_community,
    single_community_spec,
    two_community_spec,
)
from .walklab import (
    MixingCurve,
    RelaxationResult,
    SpectralReport,
    WalkError,
    bipartite_defect,
    cheeger_sweep,
    community_occupation,
    components,
    dirichlet_eigenvalue,
    evolve_distribution,
    hit_kroot_time,
    is_K_root,
    kroot_flags,
    mixing_profile,
    nbrw_matrix,
    relaxation,
    small_set_expansion,
    spectral_profile,
    spectral_report,
    start_family,
    stationary_law,
    tmix_from_curve,
    transition_matrix,
)
from .xplab import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    Report,
    classify_regime,
    export_report,
    nbrw_entropy_rate,
    read_report,
    resolve_rung,
    run_chain_properties,
    run_dichotomy,
    run_entropic_prediction,
    run_nbrw_comparison,
    run_trel_scaling,
)
from .treesim import (
    EntropyEstimate,
    Interval,
    RegenRecord,
    SpeedEstimate,
    TreeBatch,
    TreeError,
    TypedTree,
    TypesChainEstimate,
    WalkTrace,
    detect_regenerations,
    estimate_entropy,
    estimate_speed,
    estimate_types_chain,
    expand,
    grow_tree,
    harmonic_edge_measure,
    loop_erase,
    regen_records_csv,
    regeneration_variance_scan,
    return_probability,
    type_stationarity_test,
    walk_batch,
    walk_on_tree,
)

__all__ = [
    "ChainError",
    "CommunityGraph",
    "CommunitySpec",
    "ConfigError",
    "EXPERIMENTS",
    "EntropyEstimate",
    "ExperimentConfig",
    "FiniteChain",
    "GraphError",
    "Interval",
    "MixingCurve",
    "RegenRecord",
    "RelaxationResult",
    "Report",
    "SpecError",
    "SpectralReport",
    "SpeedEstimate",
    "TreeBatch",
    "TreeError",
    "TypedTree",
    "TypesChainEstimate",
    "WalkError",
    "WalkTrace",
    "bipartite_defect",
    "cheeger_sweep",
    "classify_regime",
    "community_occupation",
    "components",
    "derive_Q",
    "detect_regenerations",
    "dirichlet_eigenvalue",
    "estimate_entropy",
    "estimate_speed",
    "estimate_types_chain",
    "evolve_distribution",
    "expand",
    "export_report",
    "gen_configuration_model",
    "gen_m_community",
    "gen_two_community",
    "grow_tree",
    "harmonic_edge_measure",
    "hit_kroot_time",
    "is_K_root",
    "kroot_flags",
    "loop_erase",
    "m_community_spec",
    "mixing_profile",
    "nbrw_entropy_rate",
    "nbrw_matrix",
    "read_report",
    "regen_records_csv",
    "regeneration_variance_scan",
    "relaxation",
    "resolve_rung",
    "return_probability",
    "rewire_within_community",
    "run_chain_properties",
    "run_dichotomy",
    "run_entropic_prediction",
    "run_nbrw_comparison",
    "run_trel_scaling",
    "single_community_spec",
    "small_set_expansion",
    "spectral_profile",
    "spectral_report",
    "start_family",
    "stationary_law",
    "tmix_from_curve",
    "transition_matrix",
    "two_community_spec",
    "type_stationarity_test",
    "walk_batch",
    "walk_on_tree",
]
