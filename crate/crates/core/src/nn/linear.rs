use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::{join, kaiming_normal, normal, Module, Param};

/// Fully connected layer `y = x W^T + b` on row-major batches.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weight: kaiming_normal(rng, &[out_features, in_features], in_features),
            bias: Param::zeros(&[out_features]),
        }
    }

    /// Small-gain initialization for output layers that should start near zero.
    pub fn new_scaled<R: Rng>(rng: &mut R, in_features: usize, out_features: usize, std: f64) -> Self {
        Linear {
            in_features,
            out_features,
            weight: normal(rng, &[out_features, in_features], std),
            bias: Param::zeros(&[out_features]),
        }
    }

    pub fn weight_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.out_features, self.in_features), &self.weight.value)
            .expect("weight shape")
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.in_features, "linear input width");
        let mut y = x.dot(&self.weight_view().t());
        for mut row in y.outer_iter_mut() {
            row.iter_mut()
                .zip(&self.bias.value)
                .for_each(|(v, b)| *v += b);
        }
        y
    }

    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let dw = dy.t().dot(x);
        let mut gw = ArrayViewMut2::from_shape((self.out_features, self.in_features), &mut self.weight.grad)
            .expect("grad shape");
        gw += &dw;
        let db = dy.sum_axis(Axis(0));
        self.bias.grad.iter_mut().zip(db.iter()).for_each(|(g, d)| *g += d);
        dy.dot(&self.weight_view())
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
