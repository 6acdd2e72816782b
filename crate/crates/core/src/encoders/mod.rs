//! Contextual sentence encoders: word embedding lookup, a bidirectional
//! LSTM and a single transformer encoder block.

mod lstm;
mod transformer;

pub use lstm::{bilstm_encode, BiLstmParams, LstmParams};
pub use transformer::{
    multi_head_attention, positional_encoding, scaled_dot_attention, transformer_encode,
    HeadParams, TransformerParams, TransformerShape,
};

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::Result;

/// Rows of the embedding table for `token_ids`, as an `n × d_w` node.
pub fn embed_sequence(g: &mut Graph, table: ParamId, token_ids: &[usize]) -> Result<Var> {
    g.gather_rows(table, token_ids)
}

/// Encoder outputs for one sentence.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `n × 2d_h`
    pub h_lstm: Var,
    /// `n × d_model`
    pub z_out: Var,
}
