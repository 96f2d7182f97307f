use alloc::format;

use super::Session;
use crate::error::{dim_err, Error, Result};
use crate::numcore::{Tensor, Var};
use crate::rng::{normal_tensor, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    /// Residual and skip outputs, each with its own projection.
    ResidualSkip,
    /// Residual output only.
    ResidualOnly,
}

/// Dilated gated convolution unit: `tanh(conv_f(h)) * sigmoid(conv_g(h))`,
/// projected and added back onto its input.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedConvLayer {
    /// Filter taps, `3 x m x m`.
    pub wf: Tensor,
    /// Gate taps, `3 x m x m`.
    pub wg: Tensor,
    pub cf: Tensor,
    pub cg: Tensor,
    /// Residual projection, `m x m` (out x in).
    pub res: Tensor,
    /// Skip projection, `m x m`; present only for [`UnitKind::ResidualSkip`].
    pub skip: Option<Tensor>,
    pub dilation: usize,
    pub kind: UnitKind,
}

/// Per-speaker modulation of a gated layer. `None` means neutral.
#[derive(Debug, Clone, Copy, Default)]
pub struct GateModulation {
    pub scale_f: Option<Var>,
    pub scale_g: Option<Var>,
    pub bias_f: Option<Var>,
    pub bias_g: Option<Var>,
}

impl GatedConvLayer {
    pub fn new(rng: &mut SeededRng, m: usize, dilation: usize, kind: UnitKind) -> Self {
        let conv_std = 1.0 / libm::sqrt(3.0 * m as f64);
        let proj_std = 0.5 / libm::sqrt(m as f64);
        GatedConvLayer {
            wf: normal_tensor(rng, &[3, m, m], conv_std),
            wg: normal_tensor(rng, &[3, m, m], conv_std),
            cf: Tensor::zeros(&[m]),
            cg: Tensor::zeros(&[m]),
            res: normal_tensor(rng, &[m, m], proj_std),
            skip: match kind {
                UnitKind::ResidualSkip => Some(normal_tensor(rng, &[m, m], proj_std)),
                UnitKind::ResidualOnly => None,
            },
            dilation,
            kind,
        }
    }

    pub fn width(&self) -> usize {
        self.wf.shape()[1]
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&format!("{prefix}.wf"), &self.wf);
        f(&format!("{prefix}.wg"), &self.wg);
        f(&format!("{prefix}.cf"), &self.cf);
        f(&format!("{prefix}.cg"), &self.cg);
        f(&format!("{prefix}.res"), &self.res);
        if let Some(s) = &self.skip {
            f(&format!("{prefix}.skip"), s);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.wf"), &mut self.wf);
        f(&format!("{prefix}.wg"), &mut self.wg);
        f(&format!("{prefix}.cf"), &mut self.cf);
        f(&format!("{prefix}.cg"), &mut self.cg);
        f(&format!("{prefix}.res"), &mut self.res);
        if let Some(s) = &mut self.skip {
            f(&format!("{prefix}.skip"), s);
        }
    }
}

/// Runs one gated unit. Returns the residual output and, for
/// [`UnitKind::ResidualSkip`], the skip output.
pub fn gated_conv_forward(
    layer: &GatedConvLayer,
    s: &mut Session,
    prefix: &str,
    h: Var,
    m: GateModulation,
) -> Result<(Var, Option<Var>)> {
    match (layer.kind, &layer.skip) {
        (UnitKind::ResidualSkip, None) => {
            return Err(Error::Contract(format!(
                "{prefix}: residual+skip unit has no skip projection"
            )))
        }
        (UnitKind::ResidualOnly, Some(_)) => {
            return Err(Error::Contract(format!(
                "{prefix}: residual-only unit carries a skip projection"
            )))
        }
        _ => {}
    }
    let width = layer.width();
    let in_shape = s.graph.value(h).shape().to_vec();
    if in_shape.len() != 2 || in_shape[1] != width || layer.wf.shape()[2] != width {
        return Err(dim_err("gated conv input", &in_shape, layer.wf.shape()));
    }

    let wf = s.param(&format!("{prefix}.wf"), &layer.wf);
    let wg = s.param(&format!("{prefix}.wg"), &layer.wg);
    let cf = s.param(&format!("{prefix}.cf"), &layer.cf);
    let cg = s.param(&format!("{prefix}.cg"), &layer.cg);

    let filter = modulated_conv(s, h, wf, cf, layer.dilation, m.scale_f, m.bias_f)?;
    let filter = s.graph.tanh(filter);
    let gate = modulated_conv(s, h, wg, cg, layer.dilation, m.scale_g, m.bias_g)?;
    let gate = s.graph.sigmoid(gate);
    let gated = s.graph.mul(filter, gate)?;

    let res_w = s.param(&format!("{prefix}.res"), &layer.res);
    let proj = s.graph.matmul_bt(gated, res_w)?;
    let residual = s.graph.add(h, proj)?;
    let skip = match &layer.skip {
        Some(w) => {
            let skip_w = s.param(&format!("{prefix}.skip"), w);
            Some(s.graph.matmul_bt(gated, skip_w)?)
        }
        None => None,
    };
    Ok((residual, skip))
}

fn modulated_conv(
    s: &mut Session,
    h: Var,
    w: Var,
    c: Var,
    dilation: usize,
    scale: Option<Var>,
    bias: Option<Var>,
) -> Result<Var> {
    let mut pre = s.graph.dilated_conv1d(h, w, dilation)?;
    if let Some(a) = scale {
        pre = s.graph.mul(pre, a)?;
    }
    pre = s.graph.add(pre, c)?;
    if let Some(b) = bias {
        pre = s.graph.add(pre, b)?;
    }
    Ok(pre)
}
