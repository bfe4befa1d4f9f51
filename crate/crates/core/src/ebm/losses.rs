use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{check_width, sgld_sample, EnergyModel, ReplayBuffer, SgldConfig};
use crate::error::{invalid, Error, Result};
use crate::nn::{Graph, Network, Tensor, Var};
use crate::par::Exec;

/// Energies beyond this magnitude abort training.
pub const ENERGY_LIMIT: f64 = 1e8;

fn check_energies(g: &Graph, e: Var, what: &str) -> Result<f64> {
    let v = g.checked_value(e)?;
    let worst = v.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if worst > ENERGY_LIMIT {
        return Err(Error::Divergence { step: 0, reason: format!("{what} energy magnitude {worst:.3e}") });
    }
    Ok(v.sum() / v.len() as f64)
}

/// Contrastive-divergence loss with its two energy means.
#[derive(Clone, Copy, Debug)]
pub struct CdOutput {
    pub loss: Var,
    pub energy_pos: f64,
    pub energy_neg: f64,
}

/// `mean E(x⁺) − mean E(x⁻)` with `x⁺ = data + N(0, data_noise_var)` and
/// `x⁻` drawn by persistent SGLD chains from `buffer`. Negatives enter the
/// graph as constants, so the gradient is the contrastive-divergence
/// estimator.
#[allow(clippy::too_many_arguments)]
pub fn cd_loss<E: EnergyModel + ?Sized, R: Rng + ?Sized>(
    g: &mut Graph,
    params: &[Var],
    e: &E,
    data: &Tensor,
    buffer: &mut ReplayBuffer,
    cfg: &SgldConfig,
    data_noise_var: f64,
    rng: &mut R,
    exec: Exec,
) -> Result<CdOutput> {
    if data.rows() == 0 {
        return Err(invalid("contrastive divergence on an empty batch"));
    }
    check_width(e.input_dim(), data)?;
    if data_noise_var < 0.0 {
        return Err(invalid("data noise variance must be non-negative"));
    }
    let draw = buffer.draw(data.rows(), rng)?;
    let neg = sgld_sample(e, &draw.x, cfg, rng, exec)?;
    buffer.write_back(&draw, &neg)?;
    let pos = if data_noise_var > 0.0 {
        let sd = data_noise_var.sqrt();
        let mut x = data.as_matrix();
        for v in x.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * z;
        }
        x
    } else {
        data.as_matrix()
    };
    cd_loss_with_negatives(g, params, e, &pos, &neg)
}

/// `mean E(pos) − mean E(neg)` for given negatives.
pub fn cd_loss_with_negatives<E: EnergyModel + ?Sized>(
    g: &mut Graph,
    params: &[Var],
    e: &E,
    pos: &Tensor,
    neg: &Tensor,
) -> Result<CdOutput> {
    let xp = g.constant(pos.clone());
    let xn = g.constant(neg.clone());
    let ep = e.energy_on(g, params, xp);
    let en = e.energy_on(g, params, xn);
    let energy_pos = check_energies(g, ep, "positive")?;
    let energy_neg = check_energies(g, en, "negative")?;
    let mp = g.mean(ep);
    let mn = g.mean(en);
    Ok(CdOutput { loss: g.sub(mp, mn), energy_pos, energy_neg })
}

/// Sliced score matching with finite-difference scores.
///
/// Per sample, `ψ = −∇ₓE` comes from central differences along the
/// coordinate axes, `vᵀ(∇ₓψ)v` from the second difference of `E` along
/// Rademacher directions `v`, and the term is `vᵀ(∇ₓψ)v + ½‖ψ‖²`
/// averaged over projections.
pub fn ssm_loss<E: EnergyModel + ?Sized, R: Rng + ?Sized>(
    g: &mut Graph,
    params: &[Var],
    e: &E,
    data: &Tensor,
    n_projections: usize,
    eps: f64,
    rng: &mut R,
) -> Result<Var> {
    if data.rows() == 0 {
        return Err(invalid("score matching on an empty batch"));
    }
    if n_projections == 0 {
        return Err(invalid("score matching needs at least one projection"));
    }
    if !(eps > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    check_width(e.input_dim(), data)?;
    let (n, d) = data.dims2();
    let vs: Vec<Vec<Vec<f64>>> = (0..n_projections)
        .map(|_| (0..n).map(|_| (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()).collect())
        .collect();
    // blocks of n rows: x, then ±eps along each axis, then ±eps along each v
    let mut rows: Vec<f64> = Vec::with_capacity(n * d * (1 + 2 * d + 2 * n_projections));
    rows.extend_from_slice(data.as_matrix().data());
    for j in 0..d {
        for sign in [1.0, -1.0] {
            for x in data.iter_rows() {
                rows.extend(x.iter().enumerate().map(|(k, &v)| if k == j { v + sign * eps } else { v }));
            }
        }
    }
    for v in &vs {
        for sign in [1.0, -1.0] {
            for (x, vi) in data.iter_rows().zip(v) {
                rows.extend(x.iter().zip(vi).map(|(&a, &b)| a + sign * eps * b));
            }
        }
    }
    let blocks = 1 + 2 * d + 2 * n_projections;
    let batch = g.constant(Tensor::matrix(n * blocks, d, rows)?);
    let en = e.energy_on(g, params, batch);
    g.checked_value(en)?;
    let block = |g: &mut Graph, b: usize| g.slice_rows(en, b * n, (b + 1) * n);
    let e0 = block(g, 0);

    let mut half_norm: Option<Var> = None;
    for j in 0..d {
        let ep = block(g, 1 + 2 * j);
        let em = block(g, 2 + 2 * j);
        let diff = g.sub(em, ep);
        let psi = g.scale(diff, 1.0 / (2.0 * eps));
        let sq = g.square(psi);
        half_norm = Some(match half_norm {
            Some(acc) => g.add(acc, sq),
            None => sq,
        });
    }
    let half_norm = g.scale(half_norm.expect("d ≥ 1"), 0.5);

    let mut curv: Option<Var> = None;
    for p in 0..n_projections {
        let ep = block(g, 1 + 2 * d + 2 * p);
        let em = block(g, 2 + 2 * d + 2 * p);
        let s = g.add(ep, em);
        let two_e0 = g.scale(e0, 2.0);
        let second = g.sub(s, two_e0);
        curv = Some(match curv {
            Some(acc) => g.add(acc, second),
            None => second,
        });
    }
    let hvp = g.scale(curv.expect("n_projections ≥ 1"), -1.0 / (eps * eps * n_projections as f64));
    let per_sample = g.add(hvp, half_norm);
    let loss = g.mean(per_sample);
    g.checked_value(loss).map_err(|_| Error::NonFinite("score matching loss".into()))?;
    Ok(loss)
}

/// `mean max(0, E_id − m_in)² + mean max(0, m_out − E_ood)²`.
pub fn energy_margin_loss(g: &mut Graph, e_id: Var, e_ood: Var, m_in: f64, m_out: f64) -> Var {
    let a = g.offset(e_id, -m_in);
    let a = g.relu(a);
    let a = g.square(a);
    let a = g.mean(a);
    let b = g.neg(e_ood);
    let b = g.offset(b, m_out);
    let b = g.relu(b);
    let b = g.square(b);
    let b = g.mean(b);
    g.add(a, b)
}

/// Conditional NCE: `mean softplus(E(x) − E(y))` with `y ~ N(x, σ²I)`,
/// one noise sample per data point.
pub fn cnce_loss<E: EnergyModel + ?Sized, R: Rng + ?Sized>(
    g: &mut Graph,
    params: &[Var],
    e: &E,
    data: &Tensor,
    sigma: f64,
    rng: &mut R,
) -> Result<Var> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("cNCE noise scale {sigma} must be positive")));
    }
    check_width(e.input_dim(), data)?;
    let noise = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let mut y = data.as_matrix();
    for v in y.data_mut() {
        *v += noise.sample(rng);
    }
    cnce_loss_with_noise(g, params, e, data, &y)
}

/// [`cnce_loss`] with the noisy partners supplied.
pub fn cnce_loss_with_noise<E: EnergyModel + ?Sized>(
    g: &mut Graph,
    params: &[Var],
    e: &E,
    data: &Tensor,
    noisy: &Tensor,
) -> Result<Var> {
    let n = data.rows();
    let batch = g.constant(Tensor::vstack(&[data, noisy])?);
    let en = e.energy_on(g, params, batch);
    g.checked_value(en)?;
    let ex = g.slice_rows(en, 0, n);
    let ey = g.slice_rows(en, n, 2 * n);
    let d = g.sub(ex, ey);
    let s = g.softplus(d);
    Ok(g.mean(s))
}

/// Row-wise Shannon entropy of `softmax(logits)`, `N×C → N×1`.
pub fn predictive_entropy_graph(g: &mut Graph, logits: Var) -> Var {
    let ls = g.row_log_softmax(logits);
    let p = g.exp(ls);
    let pl = g.mul(p, ls);
    let s = g.row_sum(pl);
    g.neg(s)
}

/// `−mean H(p(y|x))` over `samples`; minimizing it maximizes entropy.
pub fn max_entropy_penalty(g: &mut Graph, params: &[Var], net: &Network, samples: &Tensor) -> Result<Var> {
    if samples.rows() == 0 {
        return Err(invalid("entropy penalty on an empty batch"));
    }
    check_width(net.input_dim(), samples)?;
    let x = g.constant(samples.clone());
    let f = net.forward_on(g, params, x, None);
    let h = predictive_entropy_graph(g, f);
    let m = g.mean(h);
    Ok(g.neg(m))
}
