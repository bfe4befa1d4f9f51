//! Affine coupling flow with a standard-normal base.

use std::f64::consts::PI;

use rand::Rng;
use serde_json::Value;

use crate::error::{invalid, Error, Result};
use crate::nn::{Architecture, Graph, Network, Tensor, Var};

/// Bound on the log-scale: `s = S_MAX · tanh(raw)`.
pub const S_MAX: f64 = 3.0;
pub const LOG_PROB_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    /// `true` for coordinates passed through unchanged (and fed to the conditioner).
    pub mask: Vec<bool>,
    /// `D → hidden → hidden → 2D`, producing raw log-scale and shift.
    pub conditioner: Network,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingFlow {
    dim: usize,
    layers: Vec<CouplingLayer>,
}

fn mask_row(mask: &[bool], keep: bool) -> Tensor {
    Tensor::raw(1, mask.len(), mask.iter().map(|&m| if m == keep { 1.0 } else { 0.0 }).collect())
}

impl CouplingFlow {
    /// `depth` layers alternating even/odd masks. Conditioner output layers
    /// start at zero, so the initial flow is the identity.
    pub fn new<R: Rng + ?Sized>(dim: usize, depth: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("a coupling flow needs at least 2 dimensions"));
        }
        if depth == 0 || hidden == 0 {
            return Err(invalid("flow depth and conditioner width must be positive"));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let mask = (0..dim).map(|j| j % 2 == l % 2).collect();
            let mut net = Network::new(&Architecture::mlp(dim, &[hidden, hidden], 2 * dim), rng)?;
            let last = net.layers_mut().last_mut().expect("three layers");
            last.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            last.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
            layers.push(CouplingLayer { mask, conditioner: net });
        }
        Ok(Self { dim, layers })
    }

    pub fn from_layers(dim: usize, layers: Vec<CouplingLayer>) -> Result<Self> {
        for l in &layers {
            if l.mask.len() != dim || l.conditioner.input_dim() != dim || l.conditioner.output_dim() != 2 * dim {
                return Err(Error::Shape("coupling layer does not match flow dimension".into()));
            }
        }
        Ok(Self { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer] {
        &mut self.layers
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.conditioner.parameters()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.conditioner.parameters_mut()).collect()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::Shape(format!("input width {} but flow dimension {}", x.cols(), self.dim)));
        }
        Ok(())
    }

    /// Records `x → z` and returns `(z, log|det ∂z/∂x|)` with the log-det `N×1`.
    pub fn to_latent_on(&self, g: &mut Graph, params: &[Var], x: Var) -> (Var, Var) {
        let n = g.value(x).rows();
        let mut h = x;
        let mut logdet = g.constant(Tensor::zeros(vec![n, 1]));
        let per = 6;
        for (l, layer) in self.layers.iter().enumerate() {
            let p = &params[l * per..(l + 1) * per];
            let keep = g.constant(mask_row(&layer.mask, true));
            let free = g.constant(mask_row(&layer.mask, false));
            let xa = g.mul_row(h, keep);
            let out = layer.conditioner.forward_on(g, p, xa, None);
            let raw = g.slice_cols(out, 0, self.dim);
            let t = g.slice_cols(out, self.dim, 2 * self.dim);
            let s = g.tanh(raw);
            let s = g.scale(s, S_MAX);
            let s = g.mul_row(s, free);
            let t = g.mul_row(t, free);
            let es = g.exp(s);
            let scaled = g.mul(h, es);
            h = g.add(scaled, t);
            let ld = g.row_sum(s);
            logdet = g.add(logdet, ld);
        }
        (h, logdet)
    }

    /// Records `log p(x)` per row, `N×1`.
    pub fn log_prob_on(&self, g: &mut Graph, params: &[Var], x: Var) -> Var {
        let (z, logdet) = self.to_latent_on(g, params, x);
        let sq = g.square(z);
        let ss = g.row_sum(sq);
        let base = g.scale(ss, -0.5);
        let base = g.offset(base, -0.5 * self.dim as f64 * (2.0 * PI).ln());
        g.add(base, logdet)
    }

    pub fn to_latent(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check(x)?;
        let mut g = Graph::new();
        let p = crate::nn::bind(&mut g, &self.parameters(), false);
        let xv = g.constant(x.clone());
        let (z, ld) = self.to_latent_on(&mut g, &p, xv);
        Ok((g.checked_value(z)?.clone(), g.checked_value(ld)?.data().to_vec()))
    }

    /// Inverse map `z → x`.
    pub fn to_data(&self, z: &Tensor) -> Result<Tensor> {
        self.check(z)?;
        let mut y = z.as_matrix();
        let d = self.dim;
        for layer in self.layers.iter().rev() {
            let keep = mask_row(&layer.mask, true);
            let mut xa = y.clone();
            for row in 0..xa.rows() {
                for (j, v) in xa.row_mut(row).iter_mut().enumerate() {
                    *v *= keep.data()[j];
                }
            }
            let out = layer.conditioner.logits(&xa)?;
            for row in 0..y.rows() {
                let o = out.row(row).to_vec();
                let r = y.row_mut(row);
                for j in 0..d {
                    if !layer.mask[j] {
                        let s = S_MAX * o[j].tanh();
                        r[j] = (r[j] - o[d + j]) * (-s).exp();
                    }
                }
            }
        }
        if !y.is_finite() {
            return Err(Error::NonFinite("flow inverse".into()));
        }
        Ok(y)
    }

    /// Evaluated in blocks of [`LOG_PROB_CHUNK`] rows.
    pub fn log_prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check(x)?;
        let params = self.parameters();
        let mut out = Vec::with_capacity(x.rows());
        for start in (0..x.rows()).step_by(LOG_PROB_CHUNK) {
            let mut g = Graph::new();
            let p = crate::nn::bind(&mut g, &params, false);
            let xv = g.constant(x.slice_rows(start, (start + LOG_PROB_CHUNK).min(x.rows())));
            let lp = self.log_prob_on(&mut g, &p, xv);
            out.extend_from_slice(g.checked_value(lp)?.data());
        }
        Ok(out)
    }

    pub fn to_parts(&self) -> (Value, Vec<Tensor>) {
        let layers: Vec<Value> = self
            .layers
            .iter()
            .map(|l| serde_json::json!({ "mask": l.mask, "conditioner": l.conditioner.to_parts().0 }))
            .collect();
        let arrays = self.parameters().into_iter().cloned().collect();
        (serde_json::json!({ "dim": self.dim, "layers": layers }), arrays)
    }

    pub fn from_parts(meta: &Value, arrays: &[Tensor]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let dim = meta.get("dim").and_then(Value::as_u64).ok_or_else(|| bad("flow dimension"))? as usize;
        let layers_meta = meta.get("layers").and_then(Value::as_array).ok_or_else(|| bad("flow layers"))?;
        let mut layers = Vec::with_capacity(layers_meta.len());
        let mut offset = 0;
        for lm in layers_meta {
            let mask: Vec<bool> =
                serde_json::from_value(lm.get("mask").cloned().ok_or_else(|| bad("mask"))?).map_err(|e| bad(&e.to_string()))?;
            let layout = lm.get("conditioner").ok_or_else(|| bad("conditioner"))?;
            let count = layout.get("activations").and_then(Value::as_array).map_or(0, |a| a.len()) * 2;
            if offset + count > arrays.len() {
                return Err(bad("flow arrays truncated"));
            }
            let conditioner = Network::from_parts(layout, &arrays[offset..offset + count])?;
            offset += count;
            layers.push(CouplingLayer { mask, conditioner });
        }
        if offset != arrays.len() {
            return Err(bad("unused flow arrays"));
        }
        Self::from_layers(dim, layers)
    }
}

/// `−mean log p(x)`.
pub fn flow_nll_loss(g: &mut Graph, params: &[Var], flow: &CouplingFlow, batch: &Tensor) -> Result<Var> {
    flow.check(batch)?;
    let x = g.constant(batch.clone());
    let lp = flow.log_prob_on(g, params, x);
    let m = g.mean(lp);
    Ok(g.neg(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomize(flow: &mut CouplingFlow, rng: &mut ChaCha8Rng) {
        for p in flow.parameters_mut() {
            for v in p.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }

    #[test]
    fn identity_flow_is_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let flow = CouplingFlow::new(2, 4, 16, &mut rng).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let lp = flow.log_prob(&x).unwrap();
        for (i, row) in x.iter_rows().enumerate() {
            let want = -0.5 * (row[0] * row[0] + row[1] * row[1]) - (2.0 * PI).ln();
            assert!((lp[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut flow = CouplingFlow::new(3, 5, 16, &mut rng).unwrap();
        randomize(&mut flow, &mut rng);
        let x = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin() * 2.0).collect()).unwrap();
        let (z, _) = flow.to_latent(&x).unwrap();
        let back = flow.to_data(&z).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn log_det_is_sum_of_log_scales() {
        // One layer: compare against the finite-difference Jacobian determinant.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut flow = CouplingFlow::new(2, 1, 8, &mut rng).unwrap();
        randomize(&mut flow, &mut rng);
        let x = [0.4, -0.9];
        let (_, ld) = flow.to_latent(&Tensor::matrix(1, 2, x.to_vec()).unwrap()).unwrap();
        let h = 1e-6;
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut p = x;
            let mut m = x;
            p[j] += h;
            m[j] -= h;
            let zp = flow.to_latent(&Tensor::matrix(1, 2, p.to_vec()).unwrap()).unwrap().0;
            let zm = flow.to_latent(&Tensor::matrix(1, 2, m.to_vec()).unwrap()).unwrap().0;
            for i in 0..2 {
                jac[i][j] = (zp.data()[i] - zm.data()[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        assert!((det.abs().ln() - ld[0]).abs() < 1e-6);
    }

    #[test]
    fn parts_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut flow = CouplingFlow::new(2, 3, 8, &mut rng).unwrap();
        randomize(&mut flow, &mut rng);
        let (meta, arrays) = flow.to_parts();
        assert_eq!(CouplingFlow::from_parts(&meta, &arrays).unwrap(), flow);
    }
}
