//! Router training: step-wise denoising training with the image-error proxy
//! objective, the learning-to-cache paradigm baseline, teacher pretraining on
//! synthetic data, and the AdamW optimizer they share.

mod config;
mod data;
mod log;
mod optim;
mod pretrain;
mod proxy;
mod step;
mod train;

pub use config::{LtcSampling, Objective, Paradigm, ProxyMetric, TrainConfig};
pub use data::SyntheticDataset;
pub use log::{log_csv, LogRow, LOG_HEADER};
pub use optim::{AdamConfig, AdamState};
pub use pretrain::{pretrain_teacher, PretrainConfig, PretrainReport};
pub use proxy::{gen_proxy, proxy_metric, ProxyVector, KL_FLOOR};
pub use step::{router_row_step, RowUpdate};
pub use train::{
    cond_stream, initial_router, ltc_train, ltc_train_from, sdt_train, sdt_train_from, train_router, TrainOutcome,
};
