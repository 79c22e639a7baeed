//! Combined out-of-distribution (COOD) scoring over precomputed image features
//! and logits.
//!
//! The crate is `no_std` and only needs `alloc`. It holds every algorithm of
//! the toolkit: the weighted class taxonomy, PCA and nearest-neighbour
//! indexes, the nineteen individual OOD measures, the random-forest combiner
//! with sampled Shapley attribution, and the ROC based evaluation grid. File
//! formats, parallel drivers and the command line live in the `cood` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod forest;
pub mod knn;
pub mod math;
pub mod measures;
pub mod pca;
pub mod seed;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::data::{FeatureStore, SampleRecord, SourceTag, Split, OOD_LABEL};
    pub use crate::error::{Error, Result};
    pub use crate::eval::{
        assign_categories, enumerate_settings, roc, tpr_at_fpr, ClassifierDefinition,
        IdCategory, ReferenceSetting, RocCurve, RocTruth, ScoreVariant,
    };
    pub use crate::forest::{predict_proba, train_forest, RandomForestModel, TrainConfig};
    pub use crate::knn::{IndexKind, KnnIndex, NeighborSet};
    pub use crate::math::Matrix;
    pub use crate::measures::{Measure, MeasureConfig, MeasureContext, MeasureVector};
    pub use crate::pca::PcaModel;
    pub use crate::synth::{generate_synthetic, SyntheticConfig};
    pub use crate::taxonomy::TaxonTree;
}
