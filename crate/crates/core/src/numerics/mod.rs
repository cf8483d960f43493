//! Numerical building blocks: special functions, Gauss rules, root
//! finding and a symmetric eigensolver. All functions are pure.

mod bessel;
mod eigen;
mod normal;
mod quadrature;
mod root;

pub use bessel::{bessel_k, bessel_k_scaled, ln_bessel_k, ln_bessel_k_scaled};
pub use eigen::{sym_eigen, SymEigen};
pub use normal::{ln_std_normal_cdf, mills_ratio, std_normal_cdf, std_normal_interval, std_normal_pdf};
pub use quadrature::{
    gauss_hermite_scaled, gauss_laguerre, gauss_legendre, integrate_adaptive, AdaptiveTol,
    QuadratureRule, RuleKind,
};
pub use root::bracketed_root;

pub use statrs::function::gamma::{gamma, ln_gamma};
