//! Supervised contrastive learning: the loss and its gradients, augmented
//! view batches, and the temperature gradient-curve simulator.

mod augment;
mod batch;
mod loss;
mod simulate;

pub use augment::{augment, AugmentPolicy};
pub use batch::{augmented_views, build_contrastive_batch, embed_normalized};
pub use loss::{
    supcon_gradients_raw, supcon_loss, supcon_loss_from_similarities, supcon_loss_raw,
    supcon_pair_gradients, AnchorSets, ContrastiveBatch, PairGradient, PairKind, SupConGradients,
    Temperature,
};
pub use simulate::{
    curves_to_csv, simulate_gradient_curves, GradientCurve, ReferencePopulation, SimRange,
    DEFAULT_GRID_POINTS, DEFAULT_TAUS,
};
