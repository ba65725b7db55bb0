//! Time binning, the discrete survival likelihood and the evaluation
//! statistics used on out-of-fold predictions.

mod bins;
mod concordance;
mod gamma;
mod km;
mod logrank;
mod nll;
mod stratify;

pub use bins::{assign_bins, BinBoundaries};
pub use concordance::{concordance_counts, concordance_index, ConcordanceCounts, RiskPrediction};
pub use gamma::{chi_square_sf, ln_gamma, regularized_gamma_q};
pub use km::{kaplan_meier, km_svg, write_km_csv, KaplanMeier, KmStep, Observation};
pub use logrank::{logrank_test, LogrankResult};
pub use nll::survival_nll;
pub use stratify::{stratify_by_median, Stratification};
