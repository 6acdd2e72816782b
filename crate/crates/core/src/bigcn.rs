//! Bidirectional graph convolution over a directed, edge-weighted
//! dependency adjacency.
//!
//! For each layer, with `A` the weighted adjacency (head → dependent):
//!
//! ```text
//! fwd  = A  · H W_fwd
//! bwd  = Aᵀ · H W_bwd
//! H'   = ReLU( diag(1 / (d_i + 1)) · [fwd | bwd] · W_out + b_out )
//! ```
//!
//! `d_i` is the number of arcs leaving token `i` in the binary adjacency.
//! With the backward direction disabled the concatenation is replaced by
//! `fwd` alone and `W_out` is square.

use rand::Rng;

use crate::autodiff::{Decay, Graph, ParamId, ParameterStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy)]
pub struct GcnLayerParams {
    pub w_fwd: ParamId,
    /// `None` when the reverse-direction path is ablated.
    pub w_bwd: Option<ParamId>,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl GcnLayerParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bidirectional: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound_in = 1.0 / (d_in as f64).sqrt();
        let w_fwd = store.register(
            format!("{prefix}.w_fwd"),
            Matrix::uniform(d_in, d_out, bound_in, rng),
            Decay::Weight,
        )?;
        let w_bwd = if bidirectional {
            Some(store.register(
                format!("{prefix}.w_bwd"),
                Matrix::uniform(d_in, d_out, bound_in, rng),
                Decay::Weight,
            )?)
        } else {
            None
        };
        let cat = if bidirectional { 2 * d_out } else { d_out };
        let bound_cat = 1.0 / (cat as f64).sqrt();
        Ok(GcnLayerParams {
            w_fwd,
            w_bwd,
            w_out: store.register(
                format!("{prefix}.w_out"),
                Matrix::uniform(cat, d_out, bound_cat, rng),
                Decay::Weight,
            )?,
            b_out: store.register(
                format!("{prefix}.b_out"),
                Matrix::uniform(1, d_out, bound_cat, rng),
                Decay::Exempt,
            )?,
            d_in,
            d_out,
        })
    }

    pub fn is_bidirectional(&self) -> bool {
        self.w_bwd.is_some()
    }
}

/// Counts how often the `Aᵀ` path was evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GcnStats {
    pub transpose_path_evals: usize,
}

pub fn bigcn_layer(
    g: &mut Graph,
    h_prev: Var,
    adjacency: &Matrix,
    degrees: &[f64],
    params: &GcnLayerParams,
    stats: &mut GcnStats,
) -> Result<Var> {
    let (n, d_in) = g.shape(h_prev);
    if d_in != params.d_in || adjacency.shape() != (n, n) || degrees.len() != n {
        return Err(Error::shape(
            "bigcn_layer",
            format!(
                "H {:?} (layer expects width {}), A {:?}, {} degrees",
                (n, d_in),
                params.d_in,
                adjacency.shape(),
                degrees.len()
            ),
        ));
    }
    let a = g.constant(adjacency.clone());
    let w_fwd = g.param(params.w_fwd);
    let hw = g.matmul(h_prev, w_fwd)?;
    let fwd = g.matmul(a, hw)?;
    let combined = match params.w_bwd {
        Some(w_bwd) => {
            stats.transpose_path_evals += 1;
            let a_t = g.constant(adjacency.transpose());
            let w_bwd = g.param(w_bwd);
            let hw = g.matmul(h_prev, w_bwd)?;
            let bwd = g.matmul(a_t, hw)?;
            g.concat_cols(&[fwd, bwd])?
        }
        None => fwd,
    };
    let inv: Vec<f64> = degrees.iter().map(|d| 1.0 / (d + 1.0)).collect();
    let scaled = g.scale_rows(combined, &inv)?;
    let (w_out, b_out) = (g.param(params.w_out), g.param(params.b_out));
    let out = g.linear(scaled, w_out, b_out)?;
    Ok(g.relu(out))
}

pub fn bigcn_stack(
    g: &mut Graph,
    h0: Var,
    adjacency: &Matrix,
    degrees: &[f64],
    layers: &[GcnLayerParams],
    stats: &mut GcnStats,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Config("graph convolution needs at least one layer".into()));
    }
    if let Some(w) = layers.windows(2).find(|w| w[0].d_out != w[1].d_in) {
        return Err(Error::shape(
            "bigcn_stack",
            format!("layer output width {} feeds input width {}", w[0].d_out, w[1].d_in),
        ));
    }
    let mut h = h0;
    for layer in layers {
        h = bigcn_layer(g, h, adjacency, degrees, layer, stats)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_parameters;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(store: &mut ParameterStore, name: &str, d_in: usize, d_out: usize, seed: u64) -> GcnLayerParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GcnLayerParams::init(store, name, d_in, d_out, true, &mut rng).unwrap()
    }

    fn run(
        store: &ParameterStore,
        h: &Matrix,
        a: &Matrix,
        deg: &[f64],
        layers: &[GcnLayerParams],
    ) -> (Matrix, GcnStats) {
        let mut g = Graph::with_params(store);
        let mut stats = GcnStats::default();
        let hv = g.constant(h.clone());
        let out = bigcn_stack(&mut g, hv, a, deg, layers, &mut stats).unwrap();
        (g.value(out).clone(), stats)
    }

    /// Element-by-element evaluation of one layer, independent of the graph.
    fn dense_oracle(store: &ParameterStore, p: &GcnLayerParams, h: &Matrix, a: &Matrix, deg: &[f64]) -> Matrix {
        let n = h.rows();
        let d = p.d_out;
        let wf = store.value(p.w_fwd);
        let wb = store.value(p.w_bwd.unwrap());
        let wo = store.value(p.w_out);
        let bo = store.value(p.b_out);
        let proj = |w: &Matrix, j: usize, k: usize| -> f64 {
            (0..h.cols()).map(|c| h[(j, c)] * w[(c, k)]).sum()
        };
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let mut cat = vec![0.0; 2 * d];
            for k in 0..d {
                for j in 0..n {
                    cat[k] += a[(i, j)] * proj(wf, j, k);
                    cat[d + k] += a[(j, i)] * proj(wb, j, k);
                }
            }
            for k in 0..d {
                let mut v = bo[(0, k)];
                for (c, x) in cat.iter().enumerate() {
                    v += x / (deg[i] + 1.0) * wo[(c, k)];
                }
                out[(i, k)] = v.max(0.0);
            }
        }
        out
    }

    #[test]
    fn single_node_closed_form() {
        let mut store = ParameterStore::new();
        let p = layer(&mut store, "gcn", 3, 2, 1);
        let h = Matrix::row_vector(&[0.4, -0.7, 1.1]);
        let (out, _) = run(&store, &h, &Matrix::identity(1), &[0.0], &[p]);
        let f = h.matmul(store.value(p.w_fwd));
        let b = h.matmul(store.value(p.w_bwd.unwrap()));
        let cat = Matrix::row_vector(&[f.as_slice(), b.as_slice()].concat());
        let mut expected = cat.matmul(store.value(p.w_out));
        expected.add_assign(store.value(p.b_out));
        let expected = expected.map(|v| v.max(0.0));
        assert!(out.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut store = ParameterStore::new();
        let p = layer(&mut store, "gcn", 3, 2, 1);
        for param in store.iter_mut() {
            param.tensor.value.fill(0.0);
        }
        let h = Matrix::filled(2, 3, 0.9);
        let a = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]);
        let (out, _) = run(&store, &h, &a, &[1.0, 0.0], &[p]);
        assert_eq!(out, Matrix::zeros(2, 2));
    }

    #[test]
    fn chain_matches_dense_oracle() {
        let mut store = ParameterStore::new();
        let p = layer(&mut store, "gcn", 4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Matrix::uniform(3, 4, 1.0, &mut rng);
        let a = Matrix::from_rows(&[
            vec![1.0, 0.4, 0.0],
            vec![0.0, 1.0, 0.25],
            vec![0.0, 0.0, 1.0],
        ]);
        let deg = [1.0, 1.0, 0.0];
        let (out, stats) = run(&store, &h, &a, &deg, &[p]);
        assert_eq!(stats.transpose_path_evals, 1);
        assert!(out.max_abs_diff(&dense_oracle(&store, &p, &h, &a, &deg)) < 1e-13);
    }

    #[test]
    fn stack_of_three_on_five_tokens() {
        let mut store = ParameterStore::new();
        let layers = [
            layer(&mut store, "l0", 6, 6, 1),
            layer(&mut store, "l1", 6, 6, 2),
            layer(&mut store, "l2", 6, 6, 3),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = Matrix::uniform(5, 6, 1.0, &mut rng);
        let mut a = Matrix::identity(5);
        for i in 0..4 {
            a[(i, i + 1)] = 0.3;
        }
        let (out, stats) = run(&store, &h, &a, &[1.0, 1.0, 1.0, 1.0, 0.0], &layers);
        assert_eq!(out.shape(), (5, 6));
        assert!(out.is_finite());
        assert_eq!(stats.transpose_path_evals, 3);
    }

    #[test]
    fn inconsistent_widths_error() {
        let mut store = ParameterStore::new();
        let layers = [layer(&mut store, "l0", 4, 3, 1), layer(&mut store, "l1", 4, 3, 2)];
        let mut g = Graph::with_params(&store);
        let h = g.constant(Matrix::zeros(2, 4));
        let err = bigcn_stack(
            &mut g,
            h,
            &Matrix::identity(2),
            &[0.0, 0.0],
            &layers,
            &mut GcnStats::default(),
        );
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn two_layer_gradient_check() {
        let mut store = ParameterStore::new();
        let layers = [layer(&mut store, "l0", 4, 3, 5), layer(&mut store, "l1", 3, 3, 6)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = Matrix::uniform(4, 4, 1.0, &mut rng);
        let mut a = Matrix::identity(4);
        a[(0, 1)] = 0.5;
        a[(0, 2)] = 0.25;
        a[(2, 3)] = 0.25;
        let deg = [2.0, 0.0, 1.0, 0.0];
        let report = check_parameters(
            &store,
            |g| {
                let hv = g.constant(h.clone());
                let out = bigcn_stack(g, hv, &a, &deg, &layers, &mut GcnStats::default())?;
                Ok(g.sum_all(out))
            },
            1e-5,
            |_| true,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    fn path_graph(n: usize) -> (Matrix, Vec<f64>) {
        let mut a = Matrix::identity(n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 0.5;
        }
        let mut deg = vec![1.0; n];
        deg[n - 1] = 0.0;
        (a, deg)
    }

    #[test]
    fn receptive_field_is_bounded_by_depth() {
        let mut store = ParameterStore::new();
        let layers = [layer(&mut store, "l0", 3, 3, 1), layer(&mut store, "l1", 3, 3, 2)];
        let n = 7;
        let (a, deg) = path_graph(n);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Matrix::uniform(n, 3, 1.0, &mut rng).map(|v| v + 1.5);
        let (base, _) = run(&store, &h, &a, &deg, &layers);
        let probe = 3;
        let mut h2 = h.clone();
        h2.row_mut(probe).iter_mut().for_each(|v| *v += 0.8);
        let (moved, _) = run(&store, &h2, &a, &deg, &layers);
        for i in 0..n {
            if i.abs_diff(probe) > layers.len() {
                assert_eq!(base.row(i), moved.row(i), "node {i} outside receptive field");
            }
        }
        assert_ne!(base.row(probe), moved.row(probe));
    }

    #[test]
    fn identity_adjacency_is_rowwise() {
        let mut store = ParameterStore::new();
        let layers = [layer(&mut store, "l0", 3, 3, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = Matrix::uniform(4, 3, 1.0, &mut rng);
        let a = Matrix::identity(4);
        let deg = [0.0; 4];
        let (base, _) = run(&store, &h, &a, &deg, &layers);
        let mut h2 = h.clone();
        h2[(2, 0)] += 1.0;
        let (moved, _) = run(&store, &h2, &a, &deg, &layers);
        for i in [0, 1, 3] {
            assert_eq!(base.row(i), moved.row(i));
        }
    }

    #[test]
    fn isolated_zero_row_yields_relu_bias() {
        let mut store = ParameterStore::new();
        let p = layer(&mut store, "gcn", 3, 4, 12);
        let mut h = Matrix::filled(3, 3, 0.6);
        h.row_mut(2).fill(0.0);
        let mut a = Matrix::identity(3);
        a[(0, 1)] = 0.5;
        let (out, _) = run(&store, &h, &a, &[1.0, 0.0, 0.0], &[p]);
        let expected: Vec<f64> = store.value(p.b_out).as_slice().iter().map(|b| b.max(0.0)).collect();
        assert_eq!(out.row(2), expected.as_slice());
    }

    #[test]
    fn forward_only_layer_skips_transpose() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GcnLayerParams::init(&mut store, "uni", 3, 3, false, &mut rng).unwrap();
        assert_eq!(store.value(p.w_out).shape(), (3, 3));
        let (out, stats) = run(&store, &Matrix::filled(2, 3, 0.1), &Matrix::identity(2), &[0.0, 0.0], &[p]);
        assert_eq!(out.shape(), (2, 3));
        assert_eq!(stats.transpose_path_evals, 0);
    }
}
