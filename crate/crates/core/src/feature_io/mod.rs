//! On-disk features, manifests, and assembly of utterance-level views.

mod format;
mod manifest;
mod views;

pub use format::{read_feature_file, write_feature_file, FeatureTensor, DTYPE_F32, FORMAT_VERSION, MAGIC};
pub use manifest::{Manifest, UtteranceEntry, TRANSCRIPT_KEY};
pub use views::{align_views, intersect_views, load_layer_stacks, load_view, load_view_aggregated, pool_time, DatasetViews, Pooling, ViewMatrix};
