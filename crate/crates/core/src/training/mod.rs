//! Supervised training of the descriptor network.
//!
//! Each step samples positive and negative correspondences from dense ground
//! truth, evaluates the hinge (or InfoNCE) loss on the descriptors and the
//! distinctiveness regression on a detached branch, and applies one Adam
//! update.

mod adam;
pub mod checks;
mod config;
mod losses;
mod sampling;
mod trainer;

pub use adam::Adam;
pub use config::{LossKind, TrainConfig};
pub use losses::{
    confusion_counts, descriptor_distance, distinctiveness_loss, distinctiveness_loss_values, distinctiveness_target,
    hardest_negative_term, hardest_negatives, hinge_from_distances, hinge_loss, hinge_loss_values, infonce_from_scores,
    infonce_loss, infonce_values, HingeNodes,
};
pub use sampling::{chebyshev, sample_correspondences, CorrespondenceField, Pixel, SampledCorrespondences};
pub use trainer::{batch_indices, derive_seed, train_step, StepLosses, Trainer, TrainingPair};
