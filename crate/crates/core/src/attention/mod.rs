//! Attention kernels: full and multi-head, ProbSparse, LSH, auto-correlation,
//! exponential smoothing and frequency attention.
//!
//! Kernels with a discrete selection step (Top-u queries, hash buckets,
//! delays, frequency bins) expose it separately so the differentiable part
//! can be evaluated with the selection held fixed.

mod autocorr;
mod ets;
mod full;
mod lsh;
mod prob_sparse;
mod select;

pub use autocorr::{
    auto_correlation_attention, auto_correlation_with_delays, delay_count, fit_length, lag_correlation,
    select_delays, AutoCorrelationConfig, AutoCorrelationLayer, LagCorrelation,
};
pub use ets::{
    esa_weights, exponential_smoothing_attention, frequency_attention, frequency_attention_with_bins,
    frequency_select, holt_winters_forecast, EsaMatrix, EtsAttentionConfig, HoltWintersInit,
    SpectralExtrapolate,
};
pub use full::{
    causal_mask, multi_head_attention, scaled_dot_attention, AttentionConfig, AttentionKernel,
    MultiHeadAttention,
};
pub use lsh::{bucket_order, lsh_attention, lsh_attention_bucketed, lsh_hash, LshAttention, LshConfig, KEY_NORM_EPS};
pub use prob_sparse::{
    log_count, prob_sparse_attention, prob_sparse_select, prob_sparse_with_selection, sparsity_measurement,
    CumulativeMean, ProbSparseConfig, ProbSparseSelection,
};
pub use select::{top_k_indices, TIE_RTOL};
