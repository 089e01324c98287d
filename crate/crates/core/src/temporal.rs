//! Bidirectional GRU over per-frame features.
//!
//! Gate order in the packed matrices is (update z, reset r, candidate n):
//!
//! ```text
//! z  = sigmoid(W_z x + U_z h + b_z)
//! r  = sigmoid(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r * h) + b_n)
//! h' = (1 - z) * h + z * n
//! ```

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, uniform, Module, Param};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GruConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub bidirectional: bool,
}

impl Default for GruConfig {
    fn default() -> Self {
        GruConfig {
            input_dim: 256,
            hidden_dim: 128,
            layers: 1,
            bidirectional: true,
        }
    }
}

impl GruConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::Config(format!(
                "GRU sizes must be positive (input {}, hidden {}, layers {})",
                self.input_dim, self.hidden_dim, self.layers
            )));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn output_dim(&self) -> usize {
        self.hidden_dim * self.directions()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One GRU cell: `w_x` is `3H x D`, `w_h` is `3H x H`, `b` is `3H`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_x: Param,
    pub w_h: Param,
    pub b: Param,
}

#[derive(Clone, Debug)]
pub struct GruStepCache {
    x: Array2<f64>,
    h: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
}

impl GruCell {
    pub fn new(rng: &mut ChaCha8Rng, input_dim: usize, hidden_dim: usize) -> Self {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        GruCell {
            input_dim,
            hidden_dim,
            w_x: uniform(rng, &[3 * hidden_dim, input_dim], k),
            w_h: uniform(rng, &[3 * hidden_dim, hidden_dim], k),
            b: uniform(rng, &[3 * hidden_dim], k),
        }
    }

    fn wx(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((3 * self.hidden_dim, self.input_dim), &self.w_x.value).expect("w_x shape")
    }

    fn wh(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((3 * self.hidden_dim, self.hidden_dim), &self.w_h.value).expect("w_h shape")
    }

    /// Batched step: `x` is `N x D`, `h` is `N x H`.
    pub fn step(&self, x: &Array2<f64>, h: &Array2<f64>) -> (Array2<f64>, GruStepCache) {
        let hd = self.hidden_dim;
        let wh = self.wh();
        let mut gx = x.dot(&self.wx().t());
        for mut row in gx.outer_iter_mut() {
            row.iter_mut().zip(&self.b.value).for_each(|(g, b)| *g += b);
        }
        let gh = h.dot(&wh.slice(s![..2 * hd, ..]).t());
        let z = (&gx.slice(s![.., ..hd]) + &gh.slice(s![.., ..hd])).mapv(sigmoid);
        let r = (&gx.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..])).mapv(sigmoid);
        let rh = &r * h;
        let n = (&gx.slice(s![.., 2 * hd..]) + &rh.dot(&wh.slice(s![2 * hd.., ..]).t())).mapv(f64::tanh);
        let h_new = &(1.0 - &z) * h + &z * &n;
        (
            h_new,
            GruStepCache {
                x: x.clone(),
                h: h.clone(),
                z,
                r,
                n,
            },
        )
    }

    /// Returns `(dx, dh)` and accumulates parameter gradients.
    pub fn step_backward(&mut self, cache: &GruStepCache, dh_new: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let hd = self.hidden_dim;
        let GruStepCache { x, h, z, r, n } = cache;
        let dz = dh_new * &(n - h);
        let dn = dh_new * z;
        let mut dh = dh_new * &(1.0 - z);
        let an = &dn * &(1.0 - &(n * n));
        let wh = ArrayView2::from_shape((3 * hd, hd), &self.w_h.value).expect("w_h shape").to_owned();
        let d_rh = an.dot(&wh.slice(s![2 * hd.., ..]));
        let dr = &d_rh * h;
        dh += &(&d_rh * r);
        let az = &dz * &(z * &(1.0 - z));
        let ar = &dr * &(r * &(1.0 - r));
        let a = concatenate(Axis(1), &[az.view(), ar.view(), an.view()]).expect("gate grads");
        let a_zr = a.slice(s![.., ..2 * hd]);
        dh += &a_zr.dot(&wh.slice(s![..2 * hd, ..]));

        let dwx = a.t().dot(x);
        self.w_x.grad.iter_mut().zip(dwx.iter()).for_each(|(g, d)| *g += d);
        let dwh_zr = a_zr.t().dot(h);
        let dwh_n = an.t().dot(&(r * h));
        let split = 2 * hd * hd;
        self.w_h.grad[..split].iter_mut().zip(dwh_zr.iter()).for_each(|(g, d)| *g += d);
        self.w_h.grad[split..].iter_mut().zip(dwh_n.iter()).for_each(|(g, d)| *g += d);
        let db = a.sum_axis(Axis(0));
        self.b.grad.iter_mut().zip(db.iter()).for_each(|(g, d)| *g += d);

        let dx = a.dot(&self.wx());
        (dx, dh)
    }
}

impl Module for GruCell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "w_x"), &self.w_x);
        f(&join(prefix, "w_h"), &self.w_h);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w_x"), &mut self.w_x);
        f(&join(prefix, "w_h"), &mut self.w_h);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Single-vector GRU update.
pub fn gru_cell(x: &[f64], h: &[f64], cell: &GruCell) -> Result<Vec<f64>> {
    if x.len() != cell.input_dim || h.len() != cell.hidden_dim {
        return Err(Error::ShapeMismatch(format!(
            "gru cell expects x[{}], h[{}], got x[{}], h[{}]",
            cell.input_dim,
            cell.hidden_dim,
            x.len(),
            h.len()
        )));
    }
    let xa = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
    let ha = Array2::from_shape_vec((1, h.len()), h.to_vec()).expect("row");
    Ok(cell.step(&xa, &ha).0.into_raw_vec_and_offset().0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFeature {
    /// `T x output_dim`.
    pub per_frame: Array2<f64>,
    pub last: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct TemporalEncoder {
    pub config: GruConfig,
    /// `layers[l][d]`, direction 0 runs forward in time.
    pub layers: Vec<Vec<GruCell>>,
}

#[derive(Clone, Debug)]
pub struct TemporalCache {
    /// `steps[l][d][t]` indexed by processing order.
    steps: Vec<Vec<Vec<GruStepCache>>>,
    len: usize,
}

impl TemporalEncoder {
    pub fn new(config: GruConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.layers);
        let mut input = config.input_dim;
        for _ in 0..config.layers {
            layers.push(
                (0..config.directions())
                    .map(|_| GruCell::new(&mut rng, input, config.hidden_dim))
                    .collect(),
            );
            input = config.output_dim();
        }
        Ok(TemporalEncoder { config, layers })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Batched sequences: `xs[t]` is `N x input_dim`; returns `T` outputs of
    /// `N x output_dim`.
    pub fn forward(&self, xs: &[Array2<f64>]) -> Result<(Vec<Array2<f64>>, TemporalCache)> {
        let t_len = xs.len();
        if t_len == 0 {
            return Err(Error::InvalidInput("empty sequence".into()));
        }
        let n = xs[0].nrows();
        if let Some(bad) = xs.iter().find(|x| x.dim() != (n, self.config.input_dim)) {
            return Err(Error::ShapeMismatch(format!(
                "frame features are {:?}, expected ({n}, {})",
                bad.dim(),
                self.config.input_dim
            )));
        }
        let hd = self.config.hidden_dim;
        let mut input: Vec<Array2<f64>> = xs.to_vec();
        let mut steps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut outs: Vec<Vec<Array2<f64>>> = Vec::with_capacity(layer.len());
            let mut layer_steps = Vec::with_capacity(layer.len());
            for (d, cell) in layer.iter().enumerate() {
                let mut h = Array2::zeros((n, hd));
                let mut out = vec![Array2::zeros((0, 0)); t_len];
                let mut caches = Vec::with_capacity(t_len);
                for k in 0..t_len {
                    let t = if d == 0 { k } else { t_len - 1 - k };
                    let (h_new, c) = cell.step(&input[t], &h);
                    caches.push(c);
                    out[t] = h_new.clone();
                    h = h_new;
                }
                outs.push(out);
                layer_steps.push(caches);
            }
            input = (0..t_len)
                .map(|t| {
                    let views: Vec<_> = outs.iter().map(|o| o[t].view()).collect();
                    concatenate(Axis(1), &views).expect("same batch")
                })
                .collect();
            steps.push(layer_steps);
        }
        Ok((input, TemporalCache { steps, len: t_len }))
    }

    /// Backpropagates per-frame output gradients; returns input gradients.
    pub fn backward(&mut self, cache: &TemporalCache, d_out: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let t_len = cache.len;
        let hd = self.config.hidden_dim;
        let mut grad: Vec<Array2<f64>> = d_out.to_vec();
        for (layer, layer_steps) in self.layers.iter_mut().zip(&cache.steps).rev() {
            let in_dim = layer[0].input_dim;
            let n = grad[0].nrows();
            let mut d_in = vec![Array2::<f64>::zeros((n, in_dim)); t_len];
            for (d, (cell, caches)) in layer.iter_mut().zip(layer_steps).enumerate() {
                let mut dh = Array2::<f64>::zeros((n, hd));
                for k in (0..t_len).rev() {
                    let t = if d == 0 { k } else { t_len - 1 - k };
                    dh += &grad[t].slice(s![.., d * hd..(d + 1) * hd]);
                    let (dx, dh_prev) = cell.step_backward(&caches[k], &dh);
                    d_in[t] += &dx;
                    dh = dh_prev;
                }
            }
            grad = d_in;
        }
        grad
    }

    /// Encodes one `T x input_dim` sequence.
    pub fn encode_sequence(&self, features: &Array2<f64>) -> Result<SequenceFeature> {
        let xs: Vec<Array2<f64>> = features
            .outer_iter()
            .map(|row| row.to_owned().insert_axis(Axis(0)))
            .collect();
        let (out, _) = self.forward(&xs)?;
        let views: Vec<_> = out.iter().map(|o| o.view()).collect();
        let per_frame = concatenate(Axis(0), &views).expect("rows");
        let last = per_frame.row(per_frame.nrows() - 1).to_owned();
        Ok(SequenceFeature { per_frame, last })
    }
}

impl Module for TemporalEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (l, layer) in self.layers.iter().enumerate() {
            for (d, cell) in layer.iter().enumerate() {
                let dir = if d == 0 { "forward" } else { "backward" };
                cell.visit(&join(prefix, &format!("layer{l}/{dir}")), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (d, cell) in layer.iter_mut().enumerate() {
                let dir = if d == 0 { "forward" } else { "backward" };
                cell.visit_mut(&join(prefix, &format!("layer{l}/{dir}")), f);
            }
        }
    }
}
