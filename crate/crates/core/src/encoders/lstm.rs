use rand::Rng;

use crate::autodiff::{Decay, Graph, ParamId, ParameterStore, Var};
use crate::error::Result;
use crate::tensor::Matrix;

/// One LSTM direction. Gates are packed `[input | forget | cell | output]`
/// along the columns of `w_x` (`d_in × 4d_h`), `w_h` (`d_h × 4d_h`) and
/// `b` (`1 × 4d_h`).
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (d_h as f64).sqrt();
        Ok(LstmParams {
            w_x: store.register(
                format!("{prefix}.w_x"),
                Matrix::uniform(d_in, 4 * d_h, bound, rng),
                Decay::Weight,
            )?,
            w_h: store.register(
                format!("{prefix}.w_h"),
                Matrix::uniform(d_h, 4 * d_h, bound, rng),
                Decay::Weight,
            )?,
            b: store.register(
                format!("{prefix}.b"),
                Matrix::uniform(1, 4 * d_h, bound, rng),
                Decay::Exempt,
            )?,
            hidden: d_h,
        })
    }

    /// Runs the recurrence over the rows of `x` in `order`, starting from
    /// zero state. Returns hidden states indexed by row position.
    fn run(&self, g: &mut Graph, x: Var, order: impl Iterator<Item = usize>) -> Result<Vec<Option<Var>>> {
        let n = g.shape(x).0;
        let (w_x, w_h, b) = (g.param(self.w_x), g.param(self.w_h), g.param(self.b));
        let projected = g.linear(x, w_x, b)?;
        let d = self.hidden;
        let mut out = vec![None; n];
        let mut state: Option<(Var, Var)> = None;
        for t in order {
            let mut pre = g.slice_rows(projected, t, 1)?;
            if let Some((h, _)) = state {
                let rec = g.matmul(h, w_h)?;
                pre = g.add(pre, rec)?;
            }
            let i = g.slice_cols(pre, 0, d)?;
            let i = g.sigmoid(i);
            let f = g.slice_cols(pre, d, d)?;
            let f = g.sigmoid(f);
            let c_hat = g.slice_cols(pre, 2 * d, d)?;
            let c_hat = g.tanh(c_hat);
            let o = g.slice_cols(pre, 3 * d, d)?;
            let o = g.sigmoid(o);
            let mut c = g.mul(i, c_hat)?;
            if let Some((_, c_prev)) = state {
                let keep = g.mul(f, c_prev)?;
                c = g.add(c, keep)?;
            }
            let tc = g.tanh(c);
            let h = g.mul(o, tc)?;
            out[t] = Some(h);
            state = Some((h, c));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BiLstmParams {
            forward: LstmParams::init(store, &format!("{prefix}.fwd"), d_in, d_h, rng)?,
            backward: LstmParams::init(store, &format!("{prefix}.bwd"), d_in, d_h, rng)?,
        })
    }

    pub fn output_width(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }
}

/// `n × 2d_h`: columns `[0, d_h)` from the left-to-right pass, the rest
/// from the right-to-left pass.
pub fn bilstm_encode(g: &mut Graph, x: Var, params: &BiLstmParams) -> Result<Var> {
    let n = g.shape(x).0;
    let fwd = params.forward.run(g, x, 0..n)?;
    let bwd = params.backward.run(g, x, (0..n).rev())?;
    let fwd: Vec<Var> = fwd.into_iter().flatten().collect();
    let bwd: Vec<Var> = bwd.into_iter().flatten().collect();
    let fwd = g.concat_rows(&fwd)?;
    let bwd = g.concat_rows(&bwd)?;
    g.concat_cols(&[fwd, bwd])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_parameters, sigmoid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d_in: usize, d_h: usize) -> (ParameterStore, BiLstmParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParameterStore::new();
        let p = BiLstmParams::init(&mut store, "lstm", d_in, d_h, &mut rng).unwrap();
        (store, p)
    }

    fn encode(store: &ParameterStore, p: &BiLstmParams, x: &Matrix) -> Matrix {
        let mut g = Graph::with_params(store);
        let xv = g.constant(x.clone());
        let h = bilstm_encode(&mut g, xv, p).unwrap();
        g.value(h).clone()
    }

    /// Single LSTM step from zero state, written out by hand.
    fn one_step(store: &ParameterStore, p: &LstmParams, x: &[f64]) -> Vec<f64> {
        let d = p.hidden;
        let pre = Matrix::row_vector(x).matmul(store.value(p.w_x));
        let b = store.value(p.b);
        (0..d)
            .map(|k| {
                let gate = |j: usize| pre[(0, j * d + k)] + b[(0, j * d + k)];
                let c = sigmoid(gate(0)) * gate(2).tanh();
                sigmoid(gate(3)) * c.tanh()
            })
            .collect()
    }

    #[test]
    fn single_token_matches_hand_step() {
        let (store, p) = setup(3, 4);
        let x = Matrix::row_vector(&[0.5, -0.3, 0.8]);
        let h = encode(&store, &p, &x);
        assert_eq!(h.shape(), (1, 8));
        let f = one_step(&store, &p.forward, x.row(0));
        let b = one_step(&store, &p.backward, x.row(0));
        for k in 0..4 {
            assert!((h[(0, k)] - f[k]).abs() < 1e-14);
            assert!((h[(0, 4 + k)] - b[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn reversal_swaps_directions() {
        let (store, p) = setup(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::uniform(5, 3, 1.0, &mut rng);
        let h = encode(&store, &p, &x);
        let swapped = BiLstmParams {
            forward: p.backward,
            backward: p.forward,
        };
        let hr = encode(&store, &swapped, &x.reverse_rows()).reverse_rows();
        assert_eq!(hr.columns(0, 4), h.columns(4, 4));
        assert_eq!(hr.columns(4, 4), h.columns(0, 4));
    }

    #[test]
    fn causality() {
        let (store, p) = setup(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Matrix::uniform(6, 3, 1.0, &mut rng);
        let h = encode(&store, &p, &x);
        let probe = 3;
        let mut x2 = x.clone();
        x2[(probe, 1)] += 0.7;
        let h2 = encode(&store, &p, &x2);
        for t in 0..6 {
            let fwd_same = h.row(t)[..4] == h2.row(t)[..4];
            let bwd_same = h.row(t)[4..] == h2.row(t)[4..];
            assert_eq!(fwd_same, t < probe, "forward half row {t}");
            assert_eq!(bwd_same, t > probe, "backward half row {t}");
        }
    }

    #[test]
    fn gate_gradients_match_finite_differences() {
        let (store, p) = setup(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Matrix::uniform(4, 3, 1.0, &mut rng);
        let report = check_parameters(
            &store,
            |g| {
                let xv = g.constant(x.clone());
                let h = bilstm_encode(g, xv, &p)?;
                Ok(g.sum_all(h))
            },
            1e-5,
            |_| true,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.checked, store.num_scalars());
    }
}
