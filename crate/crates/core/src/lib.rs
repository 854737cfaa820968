//! Maslov indices and Morse index identities for Morse–Sturm and
//! symplectic differential systems at desk scale.
//!
//! The crate integrates linear symplectic flows, tracks the induced curve
//! of Lagrangian planes, detects and classifies focal instants, assembles
//! Galerkin discretizations of the associated index forms, and checks the
//! integer identities tying the Maslov index to the inertia of those forms
//! on a natural splitting of the variation space.

pub mod bilinear;
pub mod builtins;
pub mod config;
pub mod error;
pub mod fem;
pub mod flow;
pub mod interp;
pub mod lagrangian;
pub mod report;
pub mod spectral_flow;
pub mod systems;

pub use bilinear::{check_g_symmetric, Inertia, Subspace, SymForm};
pub use error::{Error, Result};
pub use fem::{
    assemble_index_form, build_k_subspace, build_s_subspace, index_profile, index_terms,
    sharp_decomposition_check, variable_endpoint_terms, DiscreteSpace, EndCondition, FemOptions,
    IndexReport, Mesh,
};
pub use flow::{
    focal_index, focal_instants, integrate, maslov_index_of_system, FlowCurve, FlowOptions,
    FocalInstant, FundamentalSolution,
};
pub use lagrangian::{
    chart, find_common_complement, graph_lagrangian, iota_matrix, maslov_index,
    verify_tech_lemma, CrossingRecord, LagrangianCurve, LagrangianFrame, MaslovOptions,
    SymplecticSpace,
};
pub use spectral_flow::{jump_forward, jump_two_sided, FormCurve, SubspaceFamily};
pub use systems::{
    alpha_of, alt_reduced_system, apply_isomorphism, criterion_semidefinite, reduced_system,
    CoefficientPath, Distribution, InitialData, L0Isomorphism, MorseSturm, SystemData,
};
