use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::LabeledDataset;
use crate::error::{invalid, Result};
use crate::nn::Tensor;

pub const THREE_GAUSSIAN_MEANS: [[f64; 2]; 3] = [[0.0, 2.0], [1.732_050_807_568_877_2, -1.0], [-1.732_050_807_568_877_2, -1.0]];
pub const THREE_GAUSSIAN_SIGMA: f64 = 0.2;

/// Three isotropic 2-D Gaussians, `n_per_class` rows each, in class order.
/// `overlap` halves the distance of every mean from the origin.
pub fn gen_three_gaussians<R: Rng + ?Sized>(n_per_class: usize, overlap: bool, rng: &mut R) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(invalid("n_per_class must be positive"));
    }
    let k = if overlap { 0.5 } else { 1.0 };
    let mut data = Vec::with_capacity(6 * n_per_class);
    let mut labels = Vec::with_capacity(3 * n_per_class);
    for (c, mu) in THREE_GAUSSIAN_MEANS.iter().enumerate() {
        for _ in 0..n_per_class {
            for m in mu {
                let z: f64 = StandardNormal.sample(rng);
                data.push(k * m + THREE_GAUSSIAN_SIGMA * z);
            }
            labels.push(c);
        }
    }
    let name = if overlap { "three_gaussians_overlap" } else { "three_gaussians" };
    LabeledDataset::new(name, Tensor::matrix(3 * n_per_class, 2, data)?, labels, 3)
}

/// Two interleaved half circles with Gaussian jitter `noise`.
pub fn gen_two_moons<R: Rng + ?Sized>(n: usize, noise: f64, rng: &mut R) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(invalid("two moons needs at least 2 samples"));
    }
    if !(noise >= 0.0) {
        return Err(invalid("noise must be non-negative"));
    }
    let angle = Uniform::new(0.0, std::f64::consts::PI).expect("valid range");
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let t: f64 = angle.sample(rng);
        let (x, y) = if c == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        let zx: f64 = StandardNormal.sample(rng);
        let zy: f64 = StandardNormal.sample(rng);
        data.push(x + noise * zx);
        data.push(y + noise * zy);
        labels.push(c);
    }
    LabeledDataset::new("two_moons", Tensor::matrix(n, 2, data)?, labels, 2)
}

/// Like [`gen_noise_ood`], also returning which rows are Gaussian.
pub fn gen_noise_ood_labeled<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<(Tensor, Vec<bool>)> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let n_gauss = n.div_ceil(2);
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let mut rows: Vec<(Vec<f64>, bool)> = Vec::with_capacity(n);
    for i in 0..n {
        let gauss = i < n_gauss;
        let row = (0..d)
            .map(|_| if gauss { StandardNormal.sample(rng) } else { unit.sample(rng) })
            .collect();
        rows.push((row, gauss));
    }
    rows.shuffle(rng);
    let kinds = rows.iter().map(|r| r.1).collect();
    let data = rows.into_iter().flat_map(|r| r.0).collect();
    Ok((Tensor::matrix(n, d, data)?, kinds))
}

/// Half `N(0, 1)`, half `U(−1, 1)` rows, shuffled. An odd `n` gives the extra row to the Gaussian half.
pub fn gen_noise_ood<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Tensor> {
    Ok(gen_noise_ood_labeled(n, d, rng)?.0)
}

/// Rows filled with a single `U(−1, 1)` value each.
pub fn gen_constant_ood<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Tensor> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let data = (0..n).flat_map(|_| std::iter::repeat_n(unit.sample(rng), d)).collect();
    Tensor::matrix(n, d, data)
}

/// In-distribution rows in raw units multiplied by `scale`.
pub fn gen_oodomain(id_raw: &Tensor, scale: f64) -> Result<Tensor> {
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(invalid(format!("OODomain scale {scale} must be at least 1")));
    }
    Ok(id_raw.scale(scale))
}

/// Adds `N(0, (0.05·level)²)` noise to every feature; level 0 is the identity.
pub fn severity_shift<R: Rng + ?Sized>(x: &Tensor, level: u32, rng: &mut R) -> Result<Tensor> {
    if level > 5 {
        return Err(invalid(format!("severity level {level} outside 0..=5")));
    }
    let mut out = x.as_matrix();
    if level == 0 {
        return Ok(out);
    }
    let sd = 0.05 * level as f64;
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sd * z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_gaussians_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = gen_three_gaussians(1500, false, &mut rng).unwrap();
        assert_eq!(ds.len(), 4500);
        let bound = 3.0 * THREE_GAUSSIAN_SIGMA / (1500f64).sqrt();
        for (c, mu) in THREE_GAUSSIAN_MEANS.iter().enumerate() {
            let rows: Vec<&[f64]> = ds.features.iter_rows().zip(&ds.labels).filter(|(_, &y)| y == c).map(|(r, _)| r).collect();
            for j in 0..2 {
                let m = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
                assert!((m - mu[j]).abs() < bound, "class {c} coord {j}: {m}");
            }
        }
        let again = gen_three_gaussians(1500, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn overlap_halves_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = gen_three_gaussians(4000, true, &mut rng).unwrap();
        let m: f64 = ds.features.iter_rows().zip(&ds.labels).filter(|(_, &y)| y == 0).map(|(r, _)| r[1]).sum::<f64>() / 4000.0;
        assert!((m - 1.0).abs() < 0.02);
    }

    #[test]
    fn noise_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, gauss) = gen_noise_ood_labeled(20_000, 1, &mut rng).unwrap();
        let g: Vec<f64> = x.data().iter().zip(&gauss).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
        let u: Vec<f64> = x.data().iter().zip(&gauss).filter(|(_, &k)| !k).map(|(v, _)| *v).collect();
        assert_eq!(g.len(), 10_000);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / g.len() as f64;
        assert!((var - 1.0).abs() < 0.05);
        assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
        let (_, k) = gen_noise_ood_labeled(2, 1, &mut rng).unwrap();
        assert_eq!(k.iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn constant_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gen_constant_ood(100, 5, &mut rng).unwrap();
        for r in x.iter_rows() {
            assert!(r.iter().all(|&v| v == r[0] && (-1.0..=1.0).contains(&v)));
        }
        assert_eq!(gen_constant_ood(100, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap(), x);
    }

    #[test]
    fn oodomain_scaling() {
        let x = Tensor::matrix(2, 2, vec![-1.0, 1.0, 0.5, -0.25]).unwrap();
        let y = gen_oodomain(&x, 255.0).unwrap();
        assert!(y.data().iter().all(|v| v.abs() <= 255.0));
        assert_eq!(y.data()[0], -255.0);
        assert_eq!(gen_oodomain(&x, 1.0).unwrap(), x);
        assert!(gen_oodomain(&x, 0.5).is_err());
        let norm = |t: &Tensor, i: usize| t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm(&y, 1) - 255.0 * norm(&x, 1)).abs() < 1e-12);
    }

    #[test]
    fn severity_noise_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::zeros(vec![10_000, 1]);
        assert_eq!(severity_shift(&x, 0, &mut rng).unwrap(), x);
        for level in 1..=5 {
            let y = severity_shift(&x, level, &mut rng).unwrap();
            let sd = (y.data().iter().map(|v| v * v).sum::<f64>() / 10_000.0).sqrt();
            assert!((sd / (0.05 * level as f64) - 1.0).abs() < 0.05);
        }
        assert!(severity_shift(&x, 6, &mut rng).is_err());
    }
}
