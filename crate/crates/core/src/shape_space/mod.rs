//! Linear PCA shape space, KDE sampling in score space, and thin-plate-spline
//! image warping for offline augmentation.

pub mod augment;
pub mod kde;
pub mod pca;
pub mod tps;

pub use augment::{augment_cohort, kde_augment, AugmentConfig, Augmentation};
pub use kde::{fit_kde, sample_kde, KdeModel};
pub use pca::{fit_pca, reconstruct_correspondences, PcaModel};
pub use tps::{tps_warp, tps_warp_bounded, warp_points, Tps, WarpField};
