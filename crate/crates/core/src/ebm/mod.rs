//! Energy functions, Langevin sampling and energy-based training objectives.

mod buffer;
mod losses;
mod sgld;

pub use buffer::{BaseSampler, BufferDraw, ReplayBuffer};
pub use losses::{
    cd_loss, cd_loss_with_negatives, cnce_loss, cnce_loss_with_noise, energy_margin_loss, max_entropy_penalty,
    predictive_entropy_graph, ssm_loss, CdOutput, ENERGY_LIMIT,
};
pub use sgld::{entropy_sgld, predictive_entropy, sgld_sample, SgldConfig};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{logsumexp, Graph, Network, Tensor, Var};
use crate::par::{row_chunks, Exec};

/// Anything that assigns a scalar energy to each input row.
pub trait EnergyModel: Sync {
    fn input_dim(&self) -> usize;

    fn parameters(&self) -> Vec<&Tensor>;

    /// Records `E(x)` for every row of `x` (`N×D`) on `g`, returning `N×1`.
    /// `params` are the graph leaves for [`EnergyModel::parameters`].
    fn energy_on(&self, g: &mut Graph, params: &[Var], x: Var) -> Var;

    fn energies(&self, x: &Tensor) -> Result<Vec<f64>> {
        check_width(self.input_dim(), x)?;
        let mut g = Graph::new();
        let p = crate::nn::bind(&mut g, &self.parameters(), false);
        let xv = g.constant(x.clone());
        let e = self.energy_on(&mut g, &p, xv);
        Ok(g.checked_value(e)?.data().to_vec())
    }
}

pub(crate) fn check_width(d: usize, x: &Tensor) -> Result<()> {
    if x.cols() != d {
        return Err(Error::Shape(format!("input width {} but model expects {d}", x.cols())));
    }
    Ok(())
}

/// Energies and `∇ₓE` for every row, with parameters held fixed.
pub fn energy_input_grad<E: EnergyModel + ?Sized>(e: &E, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    check_width(e.input_dim(), x)?;
    let mut g = Graph::new();
    let p = crate::nn::bind(&mut g, &e.parameters(), false);
    let xv = g.param(x.clone());
    let en = e.energy_on(&mut g, &p, xv);
    let energies = g.checked_value(en)?.data().to_vec();
    if !g.requires_grad(en) {
        return Ok((energies, Tensor::zeros(vec![x.rows(), x.cols()])));
    }
    let total = g.sum(en);
    let grads = g.backward(total)?;
    Ok((energies, grads.get_or_zeros(xv, x)))
}

/// [`energy_input_grad`] over row chunks, run under `exec`.
pub fn energy_input_grad_chunked<E: EnergyModel + ?Sized>(
    e: &E,
    x: &Tensor,
    chunk: usize,
    exec: Exec,
) -> Result<(Vec<f64>, Tensor)> {
    let chunks = row_chunks(x.rows(), chunk);
    let parts = exec.map(&chunks, |&(s, t)| energy_input_grad(e, &x.slice_rows(s, t)));
    let mut energies = Vec::with_capacity(x.rows());
    let mut grad = Vec::with_capacity(x.len());
    for part in parts {
        let (en, gr) = part?;
        energies.extend(en);
        grad.extend(gr.into_data());
    }
    Ok((energies, Tensor::matrix(x.rows(), x.cols(), grad)?))
}

/// `−logsumexp(f)`; the unnormalized density is `exp(−E)`.
pub fn marginal_energy(logits: &[f64]) -> Result<f64> {
    Ok(-logsumexp(logits)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    /// Single output `o`, energy `−o`.
    Scalar,
    /// Energy `−logsumexp(f)` over all logits.
    Marginal,
}

/// A [`Network`] viewed as an energy function.
#[derive(Clone, Copy, Debug)]
pub struct EnergyFn<'a> {
    pub net: &'a Network,
    pub mode: EnergyMode,
}

impl<'a> EnergyFn<'a> {
    pub fn new(net: &'a Network, mode: EnergyMode) -> Result<Self> {
        if mode == EnergyMode::Scalar && net.output_dim() != 1 {
            return Err(invalid(format!("scalar energy needs one output, network has {}", net.output_dim())));
        }
        Ok(Self { net, mode })
    }

    pub fn marginal(net: &'a Network) -> Self {
        Self { net, mode: EnergyMode::Marginal }
    }
}

/// Energy from precomputed logits (`N×C`) on the graph.
pub fn energy_from_logits(g: &mut Graph, logits: Var, mode: EnergyMode) -> Var {
    match mode {
        EnergyMode::Scalar => g.neg(logits),
        EnergyMode::Marginal => {
            let l = g.row_logsumexp(logits);
            g.neg(l)
        }
    }
}

impl EnergyModel for EnergyFn<'_> {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    fn energy_on(&self, g: &mut Graph, params: &[Var], x: Var) -> Var {
        let f = self.net.forward_on(g, params, x, None);
        energy_from_logits(g, f, self.mode)
    }
}

/// `(β, E(βx))` for each scale in `betas`.
pub fn energy_along_ray<E: EnergyModel + ?Sized>(e: &E, x: &[f64], betas: &[f64]) -> Result<Vec<(f64, f64)>> {
    if x.iter().all(|&v| v == 0.0) {
        return Err(invalid("ray direction is the zero vector"));
    }
    if betas.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
        return Err(invalid("ray scales must be positive"));
    }
    if betas.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("ray scales must be ascending"));
    }
    let rows: Vec<f64> = betas.iter().flat_map(|&b| x.iter().map(move |v| b * v)).collect();
    let batch = Tensor::matrix(betas.len(), x.len(), rows)?;
    let e = e.energies(&batch)?;
    Ok(betas.iter().copied().zip(e).collect())
}


#[cfg(test)]
mod tests {
    use super::test_energies::*;
    use super::*;
    use crate::nn::{Architecture, FinalLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn marginal_energy_cases() {
        assert!((marginal_energy(&[0.0, 0.0]).unwrap() + 2f64.ln()).abs() < 1e-15);
        let e = marginal_energy(&[1f64.ln(), 2f64.ln()]).unwrap();
        assert!((e + 3f64.ln()).abs() < 1e-15);
        assert!(((-e).exp() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn input_gradient_of_quadratic_is_x() {
        let q = Quadratic::isotropic(3);
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0]).unwrap();
        let (e, g) = energy_input_grad(&q, &x).unwrap();
        assert_eq!(g, x);
        assert!((e[0] - 0.5 * (1.0 + 4.0 + 0.25)).abs() < 1e-15);
        let (e2, g2) = energy_input_grad_chunked(&q, &x, 1, Exec::Parallel).unwrap();
        assert_eq!((e2, g2), (e, g));
    }

    #[test]
    fn ray_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut arch = Architecture::mlp(2, &[16, 16], 3);
        arch.final_layer = FinalLayer::NegativeExp;
        let net = Network::new(&arch, &mut rng).unwrap();
        let e = EnergyFn::marginal(&net);
        let x = [0.3, -0.7];
        let ray = energy_along_ray(&e, &x, &[1.0, 10.0, 100.0]).unwrap();
        let direct = e.energies(&Tensor::matrix(1, 2, x.to_vec()).unwrap()).unwrap()[0];
        assert_eq!(ray[0].1, direct);
        assert!(ray[2].1 > ray[1].1);
        assert!(energy_along_ray(&e, &[0.0, 0.0], &[1.0]).is_err());

        let flat = Linear { a: Tensor::zeros(vec![2, 1]), c: 1.5 };
        let ray = energy_along_ray(&flat, &x, &[1.0, 2.0, 4.0]).unwrap();
        assert!(ray.iter().all(|&(_, e)| e == 1.5));
    }
}
