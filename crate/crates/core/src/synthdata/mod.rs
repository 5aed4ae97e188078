//! Deterministic paired multimodal datasets with controllable complementary structure.

mod dataset;
mod format;
mod recipe;

pub use dataset::{batch_indices, generate, iterate_batches, Dataset, GeneratedData, MultimodalBatch};
pub use format::{export_csv, load_dataset, read_modality_csv, save_dataset, write_modality_csv};
pub use recipe::SyntheticRecipe;
