//! Penalized dynamic weighted ordinary least squares (pdWOLS) with
//! strong-heredity variable selection for estimating dynamic treatment
//! regimes.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the common double-precision case.

pub mod data;
pub mod dtr;
pub mod error;
pub mod io;
pub mod linalg;
pub mod propensity;
pub mod scalar;
pub mod selection;
pub mod solver;
pub mod term;

pub use data::{
    build_design, encode_treatment, standardize, weighted_center, CenteringMode, Coefficients, DesignBlocks,
    ModelSpec, StageDataset, StageHistory, Trial,
};
pub use dtr::{
    backward_fit, backward_fit_pair, blip_value, fit_stage, optimal_action, pseudo_outcome, q_pseudo_outcome, regret,
    BackwardFit, BlipModel, EstimatorConfig, EstimatorTag, Method, Penalty, PseudoOutcome, Regime, StageFit, Tuning,
    Weighting,
};
pub use error::{Error, ErrorKind, Result};
pub use linalg::Columns;
pub use propensity::{
    dwols_weights, fit_logistic, null_weights, predict_propensity, PropensityModel, WeightSource, WeightVector,
};
pub use scalar::Scalar;
pub use selection::{
    adaptive_factors, assign_folds, kfold_cv, kfold_cv_with_folds, refit, AdaptiveFactors, CvOptions, CvResult,
    FactorSource, Pilot, PilotKind, SelectionRule, Support,
};
pub use solver::{
    cd_fit, default_min_ratio, fit_lambdas, fit_path, kkt_check, lambda_grid, lambda_max, objective, soft_threshold, HeredityFit,
    LambdaPath, Mode, PenaltyFactors, PenaltySpec, Problem, Screening, SolverOptions,
};
pub use term::Term;

pub type HeredityFit64 = HeredityFit<f64>;
pub type Problem64 = Problem<f64>;
pub type StageHistory64 = StageHistory<f64>;
pub type DesignBlocks64 = DesignBlocks<f64>;
pub type Coefficients64 = Coefficients<f64>;
pub type Regime64 = Regime<f64>;
pub type StageFit64 = StageFit<f64>;
pub type CvResult64 = CvResult<f64>;
