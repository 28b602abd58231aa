//! Core library for exploring how KV-cache quantization, chunked prefill, and
//! 4-bit weight quantization jointly trade total inference memory against task
//! accuracy on toy transformer models.
//!
//! Modules:
//! - [`tensor`]: dense f32 tensors, matmul, softmax, masked attention
//! - [`quant`]: round-to-nearest quantization and key smoothing
//! - [`kvcache`]: append-only quantize-on-write K/V store
//! - [`model`]: toy decoder-only transformer and the induction-head build
//! - [`weights`]: weight structs and their binary container
//! - [`weightquant`]: 4-bit weight-only quantization with activation-aware scales
//! - [`memmodel`]: analytic total-memory accounting
//! - [`evaltasks`]: synthetic retrieval tasks and fidelity metrics
//! - [`pareto`]: configuration sweeps and frontier extraction

pub mod error;
pub mod evaltasks;
pub mod kvcache;
pub mod memmodel;
pub mod model;
pub mod pareto;
pub mod quant;
pub mod tensor;
pub mod weightquant;
pub mod weights;

pub use error::{Error, Result};
pub use kvcache::{KVCache, KVCacheConfig};
pub use memmodel::{ArchSpec, MemQuery, MemoryProfile};
pub use model::{ChunkMode, ModelConfig, RunConfig, WeightMode};
pub use quant::{BitWidth, Granularity, QuantSpec, QuantizedBlock};
pub use tensor::{AttentionMask, Tensor};
pub use weights::Weights;
