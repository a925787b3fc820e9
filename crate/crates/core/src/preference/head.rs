//! Projection of pooled text vectors into the collaborative embedding space.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

/// Affine map `W t + b`, or with `hidden` set, `W2 relu(W1 t + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    /// Output-side weights, `d × fan_in` where fan_in is the text dimension
    /// or the hidden width.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub hidden: Option<HiddenLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    /// `h × d_t`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub hidden: Option<(Array2<f64>, Array1<f64>)>,
}

fn uniform<R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

impl ProjectionHead {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(text_dim: usize, dim: usize, hidden: Option<usize>, rng: &mut R) -> Self {
        match hidden {
            None => Self {
                weight: uniform(dim, text_dim, (6.0 / (text_dim + dim) as f64).sqrt(), rng),
                bias: Array1::zeros(dim),
                hidden: None,
            },
            Some(h) => {
                let first = uniform(h, text_dim, (6.0 / (text_dim + h) as f64).sqrt(), rng);
                Self {
                    weight: uniform(dim, h, (6.0 / (h + dim) as f64).sqrt(), rng),
                    bias: Array1::zeros(dim),
                    hidden: Some(HiddenLayer {
                        weight: first,
                        bias: Array1::zeros(h),
                    }),
                }
            }
        }
    }

    pub fn zeros(text_dim: usize, dim: usize) -> Self {
        Self {
            weight: Array2::zeros((dim, text_dim)),
            bias: Array1::zeros(dim),
            hidden: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weight.ncols(),
            None => self.weight.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn hidden_pre(&self, text: ArrayView2<f64>) -> Option<Array2<f64>> {
        self.hidden.as_ref().map(|h| text.dot(&h.weight.t()) + &h.bias)
    }

    /// Rows of `text` (n × d_t) mapped to n × d.
    pub fn forward(&self, text: ArrayView2<f64>) -> Array2<f64> {
        match self.hidden_pre(text) {
            None => text.dot(&self.weight.t()) + &self.bias,
            Some(pre) => pre.mapv(relu).dot(&self.weight.t()) + &self.bias,
        }
    }

    /// Parameter gradient given `d_out = ∂L/∂forward(text)`.
    pub fn backward(&self, text: ArrayView2<f64>, d_out: ArrayView2<f64>) -> HeadGrad {
        let bias = d_out.sum_axis(Axis(0));
        match (&self.hidden, self.hidden_pre(text)) {
            (Some(_), Some(pre)) => {
                let act = pre.mapv(relu);
                let weight = d_out.t().dot(&act);
                let mut d_pre = d_out.dot(&self.weight);
                d_pre.zip_mut_with(&pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0
                    }
                });
                let w1 = d_pre.t().dot(&text);
                let b1 = d_pre.sum_axis(Axis(0));
                HeadGrad {
                    weight,
                    bias,
                    hidden: Some((w1, b1)),
                }
            }
            _ => HeadGrad {
                weight: d_out.t().dot(&text),
                bias,
                hidden: None,
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
            && self
                .hidden
                .as_ref()
                .is_none_or(|h| h.weight.iter().chain(h.bias.iter()).all(|v| v.is_finite()))
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}
