use alloc::format;

use super::Session;
use crate::error::{dim_err, Result};
use crate::numcore::{Tensor, Var};
use crate::rng::{normal_tensor, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

/// `h_out = f(W h_in + c)` applied per frame. `w` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardLayer {
    pub w: Tensor,
    pub c: Tensor,
    pub activation: Activation,
}

impl FeedforwardLayer {
    pub fn new(rng: &mut SeededRng, m_in: usize, m_out: usize, activation: Activation) -> Self {
        FeedforwardLayer {
            w: normal_tensor(rng, &[m_out, m_in], 1.0 / libm::sqrt(m_in as f64)),
            c: Tensor::zeros(&[m_out]),
            activation,
        }
    }

    pub fn m_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn m_out(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&format!("{prefix}.w"), &self.w);
        f(&format!("{prefix}.c"), &self.c);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.c"), &mut self.c);
    }

    /// Plain layer without speaker components.
    pub fn forward(&self, s: &mut Session, prefix: &str, h: Var) -> Result<Var> {
        sa_ff_forward(self, s, prefix, h, None, None)
    }
}

/// Speaker-adaptive feedforward layer: `f(scale * (W h) + c + bias)` per frame.
///
/// `None` components are skipped entirely, which makes the neutral case
/// (`scale = 1`, `bias = 0`) identical to the plain layer.
pub fn sa_ff_forward(
    layer: &FeedforwardLayer,
    s: &mut Session,
    prefix: &str,
    h: Var,
    scale: Option<Var>,
    bias: Option<Var>,
) -> Result<Var> {
    let in_shape = s.graph.value(h).shape().to_vec();
    if in_shape.len() != 2 || in_shape[1] != layer.m_in() {
        return Err(dim_err("feedforward input", &in_shape, layer.w.shape()));
    }
    let w = s.param(&format!("{prefix}.w"), &layer.w);
    let c = s.param(&format!("{prefix}.c"), &layer.c);
    let mut pre = s.graph.matmul_bt(h, w)?;
    if let Some(a) = scale {
        pre = s.graph.mul(pre, a)?;
    }
    pre = s.graph.add(pre, c)?;
    if let Some(b) = bias {
        pre = s.graph.add(pre, b)?;
    }
    Ok(match layer.activation {
        Activation::Tanh => s.graph.tanh(pre),
        Activation::Linear => pre,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use alloc::vec;

    fn two_unit_layer() -> FeedforwardLayer {
        FeedforwardLayer {
            w: Tensor::from_rows(&[&[0.5, -0.25, 1.0], &[0.1, 0.2, -0.3]]).unwrap(),
            c: Tensor::vector(vec![0.05, -0.1]),
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn neutral_components_match_plain_layer_bit_exact() {
        let mut rng = seeded(3);
        let layer = FeedforwardLayer::new(&mut rng, 5, 4, Activation::Tanh);
        let x = normal_tensor(&mut rng, &[7, 5], 1.0);
        let mut s = Session::inference();
        let h = s.input(x);
        let plain = layer.forward(&mut s, "l", h).unwrap();
        let one = s.input(Tensor::ones(&[4]));
        let zero = s.input(Tensor::zeros(&[4]));
        let neutral = sa_ff_forward(&layer, &mut s, "l", h, Some(one), Some(zero)).unwrap();
        assert_eq!(s.graph.value(plain), s.graph.value(neutral));
    }

    #[test]
    fn zero_scale_linear_gives_bias_only() {
        let mut layer = two_unit_layer();
        layer.activation = Activation::Linear;
        let mut s = Session::inference();
        let h = s.input(Tensor::new(vec![3, 3], (0..9).map(f64::from).collect()).unwrap());
        let a = s.input(Tensor::zeros(&[2]));
        let b = s.input(Tensor::vector(vec![1.0, 2.0]));
        let y = sa_ff_forward(&layer, &mut s, "l", h, Some(a), Some(b)).unwrap();
        for r in 0..3 {
            assert_eq!(s.graph.value(y).row(r), &[1.05, 1.9]);
        }
    }

    #[test]
    fn matches_hand_evaluation() {
        let layer = two_unit_layer();
        let x = [0.3, -0.7, 1.1];
        let scale = [1.5, 0.8];
        let bias = [-0.2, 0.4];
        let mut s = Session::inference();
        let h = s.input(Tensor::new(vec![1, 3], x.to_vec()).unwrap());
        let a = s.input(Tensor::vector(scale.to_vec()));
        let b = s.input(Tensor::vector(bias.to_vec()));
        let y = sa_ff_forward(&layer, &mut s, "l", h, Some(a), Some(b)).unwrap();
        for u in 0..2 {
            let wx: f64 = (0..3).map(|i| layer.w.at2(u, i) * x[i]).sum();
            let want = libm::tanh(scale[u] * wx + layer.c.data()[u] + bias[u]);
            assert!((s.graph.value(y).data()[u] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn input_width_mismatch_is_dimension_error() {
        let layer = two_unit_layer();
        let mut s = Session::inference();
        let h = s.input(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            layer.forward(&mut s, "l", h),
            Err(crate::Error::Dimension { .. })
        ));
    }
}
