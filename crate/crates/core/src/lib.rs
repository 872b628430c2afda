//! Hierarchical multi-label classification with hierarchically constrained
//! losses and class-based curriculum selection.
//!
//! The crate is organised bottom-up:
//!
//! - [`taxonomy`]: the class tree, levels, LCA and node heights
//! - [`losses`]: base losses and the hierarchical constraint transform
//! - [`curriculum`]: the curriculum objective, class selection and its
//!   exhaustive oracle
//! - [`nn`]: a small MLP with manual backpropagation
//! - [`train`]: the training loop over the supported loss modes
//! - [`metrics`]: Hit@1, MRR and hierarchical distance
//! - [`data`]: ARFF and native readers, splits, synthetic data
//! - [`config`], [`experiment`]: run configuration and persisted runs
//! - [`verify`]: randomized property checks of the loss construction

pub mod config;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod taxonomy;
pub mod train;
pub mod verify;

pub use curriculum::{
    aggregate_class_losses, brute_force_select, curriculum_objective, hcl_loss, select_classes,
    ClassLossAggregate, HclConfig, SelectionRule, SelectionVector,
};
pub use data::{Dataset, SplitTag, SynthConfig};
pub use error::{Error, Result};
pub use losses::{hier_transform, hier_transform_backward, BaseLoss, GradRouting, Scope};
pub use matrix::{LabelMatrix, LossSurface, ScoreMatrix};
pub use metrics::{EvalReport, RankScope};
pub use nn::{Checkpoint, MlpParams};
pub use taxonomy::{ClassId, Node, Taxonomy};
pub use train::{LossMode, TrainConfig};
