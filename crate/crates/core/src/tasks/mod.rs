//! Synthetic segmentation tasks, overlap metrics, and retraining of decoded
//! architectures.

pub mod data;
pub mod metrics;
pub mod net;
pub mod train;

pub use data::{gen_synthetic, load_dataset, save_dataset, SegDataset, SegSample, SynthConfig};
pub use metrics::{dsc, kfold_split, miou, ClassScores, Metrics, MetricsAccumulator};
pub use net::{decoded_cell_forward, DecodedCellWeights, DecodedNet};
pub use train::{argmax_labels, evaluate_predictions, fit, train_decoded, CrossValReport, FoldResult, TrainConfig, TrainedNet, WEIGHTS_MAGIC, WEIGHTS_VERSION};
