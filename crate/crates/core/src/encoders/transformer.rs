use rand::Rng;

use crate::autodiff::{Axis, Decay, Graph, ParamId, ParameterStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Sinusoidal position table: `P[pos][2i] = sin(pos / 10000^(2i/d))`,
/// `P[pos][2i+1] = cos(same)`.
pub fn positional_encoding(n: usize, d_model: usize) -> Result<Matrix> {
    if d_model % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even model width, got {d_model}"
        )));
    }
    let mut p = Matrix::zeros(n, d_model);
    for pos in 0..n {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            p[(pos, 2 * i)] = angle.sin();
            p[(pos, 2 * i + 1)] = angle.cos();
        }
    }
    Ok(p)
}

/// `softmax(Q Kᵀ / √d_k) V`. Returns the output and the attention weights.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (g.shape(q), g.shape(k), g.shape(v));
    if qs.1 != ks.1 || ks.0 != vs.0 || qs.1 == 0 {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("Q {qs:?}, K {ks:?}, V {vs:?}"),
        ));
    }
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (qs.1 as f64).sqrt());
    let weights = g.softmax(scores, Axis::Cols);
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct TransformerShape {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub layer_norm_eps: f64,
}

/// One post-norm encoder block.
#[derive(Debug, Clone)]
pub struct TransformerParams {
    pub heads: Vec<HeadParams>,
    pub w_o: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_shift: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_shift: ParamId,
    pub shape: TransformerShape,
}

impl TransformerParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        shape: TransformerShape,
        rng: &mut R,
    ) -> Result<Self> {
        let TransformerShape {
            d_model,
            heads,
            ffn_width,
            ..
        } = shape;
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d_model} is not divisible into {heads} heads"
            )));
        }
        let d_k = d_model / heads;
        let mut weight = |store: &mut ParameterStore, name: String, rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            store.register(name, Matrix::uniform(rows, cols, bound, rng), Decay::Weight)
        };
        let mut head_params = Vec::with_capacity(heads);
        for h in 0..heads {
            head_params.push(HeadParams {
                w_q: weight(store, format!("{prefix}.head{h}.w_q"), d_model, d_k)?,
                w_k: weight(store, format!("{prefix}.head{h}.w_k"), d_model, d_k)?,
                w_v: weight(store, format!("{prefix}.head{h}.w_v"), d_model, d_k)?,
            });
        }
        let w_o = weight(store, format!("{prefix}.w_o"), d_model, d_model)?;
        let ffn_w1 = weight(store, format!("{prefix}.ffn.w1"), d_model, ffn_width)?;
        let ffn_w2 = weight(store, format!("{prefix}.ffn.w2"), ffn_width, d_model)?;
        let mut exempt = |name: String, cols: usize, value: f64| {
            store.register(name, Matrix::filled(1, cols, value), Decay::Exempt)
        };
        Ok(TransformerParams {
            heads: head_params,
            w_o,
            ln1_gain: exempt(format!("{prefix}.ln1.gain"), d_model, 1.0)?,
            ln1_shift: exempt(format!("{prefix}.ln1.shift"), d_model, 0.0)?,
            ffn_w1,
            ffn_b1: exempt(format!("{prefix}.ffn.b1"), ffn_width, 0.0)?,
            ffn_w2,
            ffn_b2: exempt(format!("{prefix}.ffn.b2"), d_model, 0.0)?,
            ln2_gain: exempt(format!("{prefix}.ln2.gain"), d_model, 1.0)?,
            ln2_shift: exempt(format!("{prefix}.ln2.shift"), d_model, 0.0)?,
            shape,
        })
    }
}

/// `[head_1, …, head_h] W_o` with `head_i = Attention(X W_Q, X W_K, X W_V)`.
pub fn multi_head_attention(g: &mut Graph, x: Var, params: &TransformerParams) -> Result<Var> {
    let mut outs = Vec::with_capacity(params.heads.len());
    for h in &params.heads {
        let wq = g.param(h.w_q);
        let wk = g.param(h.w_k);
        let wv = g.param(h.w_v);
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        outs.push(scaled_dot_attention(g, q, k, v)?.0);
    }
    let cat = g.concat_cols(&outs)?;
    let w_o = g.param(params.w_o);
    g.matmul(cat, w_o)
}

/// Encodes `x` (`n × d_model`). With `add_positions` the sinusoidal table
/// is added to the input first.
pub fn transformer_encode(
    g: &mut Graph,
    x: Var,
    params: &TransformerParams,
    add_positions: bool,
) -> Result<Var> {
    let (n, d) = g.shape(x);
    if d != params.shape.d_model {
        return Err(Error::shape(
            "transformer_encode",
            format!("input width {d}, model width {}", params.shape.d_model),
        ));
    }
    let input = if add_positions {
        let pe = g.constant(positional_encoding(n, d)?);
        g.add(x, pe)?
    } else {
        x
    };
    let eps = params.shape.layer_norm_eps;

    let attn = multi_head_attention(g, input, params)?;
    let res1 = g.add(input, attn)?;
    let (g1, s1) = (g.param(params.ln1_gain), g.param(params.ln1_shift));
    let norm1 = g.layer_norm(res1, g1, s1, eps)?;

    let (w1, b1) = (g.param(params.ffn_w1), g.param(params.ffn_b1));
    let hidden = g.linear(norm1, w1, b1)?;
    let hidden = g.relu(hidden);
    let (w2, b2) = (g.param(params.ffn_w2), g.param(params.ffn_b2));
    let ffn = g.linear(hidden, w2, b2)?;
    let res2 = g.add(norm1, ffn)?;
    let (g2, s2) = (g.param(params.ln2_gain), g.param(params.ln2_shift));
    g.layer_norm(res2, g2, s2, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_inputs, check_parameters};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> TransformerShape {
        TransformerShape {
            d_model: 8,
            heads: 2,
            ffn_width: 12,
            layer_norm_eps: 1e-12,
        }
    }

    fn setup() -> (ParameterStore, TransformerParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParameterStore::new();
        let p = TransformerParams::init(&mut store, "tf", shape(), &mut rng).unwrap();
        (store, p)
    }

    #[test]
    fn positional_row_zero_and_closed_form() {
        let p = positional_encoding(5, 10).unwrap();
        for i in 0..5 {
            assert_eq!(p[(0, 2 * i)], 0.0);
            assert_eq!(p[(0, 2 * i + 1)], 1.0);
        }
        assert!((p[(3, 0)] - 0.141_120_008_059_867_2).abs() < 1e-12);
        assert!((p[(3, 1)] + 0.989_992_496_600_445_4).abs() < 1e-12);
    }

    #[test]
    fn odd_width_is_rejected() {
        assert!(positional_encoding(3, 7).is_err());
    }

    #[test]
    fn attention_single_position_returns_value_row() {
        let mut g = Graph::new();
        let q = g.input(Matrix::row_vector(&[0.3, -2.0]));
        let k = g.input(Matrix::row_vector(&[1.5, 0.1]));
        let v = g.input(Matrix::row_vector(&[4.0, 5.0, 6.0]));
        let (out, _) = scaled_dot_attention(&mut g, q, k, v).unwrap();
        assert_eq!(g.value(out).as_slice(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut g = Graph::new();
        let q = g.input(Matrix::row_vector(&[1.0, 1.0]));
        let k = g.input(Matrix::from_rows(&[vec![0.2, 0.4], vec![0.2, 0.4]]));
        let v = g.input(Matrix::from_rows(&[vec![1.0, 3.0], vec![5.0, -1.0]]));
        let (out, w) = scaled_dot_attention(&mut g, q, k, v).unwrap();
        assert_eq!(g.value(w).as_slice(), &[0.5, 0.5]);
        assert_eq!(g.value(out).as_slice(), &[3.0, 1.0]);
    }

    #[test]
    fn attention_shape_mismatch() {
        let mut g = Graph::new();
        let q = g.input(Matrix::zeros(2, 3));
        let k = g.input(Matrix::zeros(2, 4));
        let v = g.input(Matrix::zeros(2, 4));
        assert!(scaled_dot_attention(&mut g, q, k, v).is_err());
    }

    #[test]
    fn attention_weights_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let q = g.input(Matrix::uniform(4, 3, 2.0, &mut rng));
        let k = g.input(Matrix::uniform(5, 3, 2.0, &mut rng));
        let v = g.input(Matrix::uniform(5, 2, 2.0, &mut rng));
        let (_, w) = scaled_dot_attention(&mut g, q, k, v).unwrap();
        for r in 0..4 {
            assert!((g.value(w).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_heads_error() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = TransformerShape {
            heads: 3,
            ..shape()
        };
        assert!(TransformerParams::init(&mut store, "tf", bad, &mut rng).is_err());
    }

    #[test]
    fn output_rows_are_normalised() {
        let (store, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::with_params(&store);
        let x = g.constant(Matrix::uniform(5, 8, 1.0, &mut rng));
        let z = transformer_encode(&mut g, x, &p, true).unwrap();
        let z = g.value(z);
        assert_eq!(z.shape(), (5, 8));
        for r in 0..5 {
            let mean = z.row(r).iter().sum::<f64>() / 8.0;
            let var = z.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-10, "{mean}");
            assert!((var - 1.0).abs() < 1e-10, "{var}");
        }
    }

    #[test]
    fn permutation_equivariant_without_positions() {
        let (store, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::uniform(5, 8, 1.0, &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let run = |m: Matrix| {
            let mut g = Graph::with_params(&store);
            let xv = g.constant(m);
            let z = transformer_encode(&mut g, xv, &p, false).unwrap();
            g.value(z).clone()
        };
        let z = run(x.clone());
        let zp = run(x.permute_rows(&perm));
        assert!(zp.max_abs_diff(&z.permute_rows(&perm)) < 1e-12);
    }

    #[test]
    fn block_gradient_check() {
        let (store, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::uniform(5, 8, 1.0, &mut rng);
        let weights = Matrix::uniform(5, 8, 1.0, &mut rng);
        let loss = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let xv = v[0];
            let z = transformer_encode(g, xv, &p, true)?;
            let w = g.constant(weights.clone());
            let zw = g.mul(z, w)?;
            Ok(g.sum_all(zw))
        };
        let report = check_parameters(
            &store,
            |g| {
                let xv = g.constant(x.clone());
                loss(g, &[xv])
            },
            1e-5,
            |_| true,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        let report = check_inputs(&store, loss, &[x], 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
