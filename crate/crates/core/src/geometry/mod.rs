//! Mesh I/O, normalization, augmentation, query sampling, occupancy labels
//! and dataset shards.

pub mod augment;
pub mod batch;
pub mod mesh;
pub mod occupancy;
pub mod primitives;
pub mod sampling;
pub mod shape;
pub mod shard;

pub use augment::{apply_augmentation, AugmentationParams};
pub use batch::{balanced_query_batch, QueryBatch, QueryPool, ShortfallReport};
pub use mesh::{Point3, TriangleMesh};
pub use occupancy::{occupancy_label, OccupancyLabels, OccupancyOracle};
pub use sampling::{sample_near_points, sample_volume_points};
pub use shape::{preprocess_mesh, Point3f, PreprocessConfig, PreprocessReport, SampledShape};
pub use shard::{read_shard, write_shard};
