//! Synthetic instances: Gaussian-mixture point clouds (dense, sparse and
//! shared-support variants) and discretized 1-D Gaussians.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_support::init_supports_kmeans;
use crate::model::{BarycenterInstance, DiscreteDistribution};

pub const MIXTURE_MEANS: [f64; 5] = [-20.0, -10.0, 0.0, 10.0, 20.0];
pub const MIXTURE_VARIANCE: f64 = 5.0;

/// Grid interval of the Gaussian pair instance.
pub const GAUSSIAN_GRID: (f64, f64) = (-4.0, 5.0);

/// Distributions plus barycenter supports, before cost matrices are formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub distributions: Vec<DiscreteDistribution>,
    pub barycenter_supports: Vec<Vec<f64>>,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
}

impl Dataset {
    pub fn instance(&self) -> Result<BarycenterInstance> {
        BarycenterInstance::from_distributions(
            &self.distributions,
            self.barycenter_supports.clone(),
            self.p,
            self.gammas.clone(),
        )
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Coordinates drawn i.i.d. from a five-component 1-D mixture whose component
/// weights are random per dataset.
struct Mixture {
    pick: WeightedIndex<f64>,
    comps: Vec<Normal<f64>>,
}

impl Mixture {
    fn new(rng: &mut impl Rng) -> Self {
        let w: Vec<f64> = (0..MIXTURE_MEANS.len()).map(|_| positive_uniform(rng)).collect();
        let sd = MIXTURE_VARIANCE.sqrt();
        Self {
            pick: WeightedIndex::new(&w).expect("positive weights"),
            comps: MIXTURE_MEANS.iter().map(|&mu| Normal::new(mu, sd).expect("finite sd")).collect(),
        }
    }

    fn point(&self, d: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..d).map(|_| self.comps[self.pick.sample(rng)].sample(rng)).collect()
    }

    fn points(&self, n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.point(d, rng)).collect()
    }
}

/// Uniform on `(0, 1]`.
fn positive_uniform(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

fn check_sizes(n: usize, m: usize, m_prime: usize, d: usize) -> Result<()> {
    if n == 0 || m == 0 || m_prime == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "sizes must be positive (N = {n}, m = {m}, m' = {m_prime}, d = {d})"
        )));
    }
    Ok(())
}

/// `m` k-means centres of the pooled positive-weight support points.
pub fn kmeans_supports(dists: &[DiscreteDistribution], m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let pool: Vec<Vec<f64>> = dists
        .iter()
        .flat_map(|d| d.weights.iter().zip(&d.supports).filter(|(w, _)| **w > 0.0).map(|(_, x)| x.clone()))
        .collect();
    init_supports_kmeans(&pool, m, seed)
}

/// `N` dense distributions with `m'` points each; barycenter supports are
/// `m` k-means centres of the pooled points.
pub fn case1_data(n: usize, m: usize, m_prime: usize, d: usize, seed: u64) -> Result<Dataset> {
    check_sizes(n, m, m_prime, d)?;
    let mut rng = rng(seed);
    let mix = Mixture::new(&mut rng);
    let distributions = (0..n)
        .map(|_| {
            let supports = mix.points(m_prime, d, &mut rng);
            let w = (0..m_prime).map(|_| positive_uniform(&mut rng)).collect();
            DiscreteDistribution::normalized(w, supports)
        })
        .collect::<Result<Vec<_>>>()?;
    let barycenter_supports = kmeans_supports(&distributions, m, seed)?;
    Ok(Dataset {
        distributions,
        barycenter_supports,
        p: 2.0,
        gammas: None,
    })
}

/// Nonzeros per weight vector for sparsity ratio `sr`: `⌊m'·sr⌋`.
pub fn sparsity_count(m_prime: usize, sr: f64) -> Result<usize> {
    if !(sr > 0.0 && sr <= 1.0) {
        return Err(Error::InvalidInput(format!("sparsity ratio {sr} must lie in (0, 1]")));
    }
    let s = (m_prime as f64 * sr).floor() as usize;
    if s == 0 {
        return Err(Error::InvalidInput(format!("m' = {m_prime} with ratio {sr} leaves no nonzero weight")));
    }
    Ok(s)
}

/// Like [`case1_data`], but each weight vector has `⌊m'·sr⌋` nonzeros at random positions.
pub fn case2_data(n: usize, m: usize, m_prime: usize, sr: f64, d: usize, seed: u64) -> Result<Dataset> {
    check_sizes(n, m, m_prime, d)?;
    let s = sparsity_count(m_prime, sr)?;
    let mut rng = rng(seed);
    let mix = Mixture::new(&mut rng);
    let distributions = (0..n)
        .map(|_| {
            let supports = mix.points(m_prime, d, &mut rng);
            let mut w = vec![0.0; m_prime];
            for j in sample(&mut rng, m_prime, s) {
                w[j] = positive_uniform(&mut rng);
            }
            DiscreteDistribution::normalized(w, supports)
        })
        .collect::<Result<Vec<_>>>()?;
    let barycenter_supports = kmeans_supports(&distributions, m, seed)?;
    Ok(Dataset {
        distributions,
        barycenter_supports,
        p: 2.0,
        gammas: None,
    })
}

/// `N` distributions on one common set of `m` points, which is also the barycenter support.
pub fn case3_data(n: usize, m: usize, d: usize, seed: u64) -> Result<Dataset> {
    check_sizes(n, m, m, d)?;
    let mut rng = rng(seed);
    let mix = Mixture::new(&mut rng);
    let points = mix.points(m, d, &mut rng);
    let distributions = (0..n)
        .map(|_| {
            let w = (0..m).map(|_| positive_uniform(&mut rng)).collect();
            DiscreteDistribution::normalized(w, points.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        distributions,
        barycenter_supports: points,
        p: 2.0,
        gammas: None,
    })
}

pub fn gen_case1(n: usize, m: usize, m_prime: usize, d: usize, seed: u64) -> Result<BarycenterInstance> {
    case1_data(n, m, m_prime, d, seed)?.instance()
}

pub fn gen_case2(n: usize, m: usize, m_prime: usize, sr: f64, d: usize, seed: u64) -> Result<BarycenterInstance> {
    case2_data(n, m, m_prime, sr, d, seed)?.instance()
}

pub fn gen_case3(n: usize, m: usize, d: usize, seed: u64) -> Result<BarycenterInstance> {
    case3_data(n, m, d, seed)?.instance()
}

/// `n` equally spaced points of `[lo, hi]`, endpoints included.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { hi } else { lo + h * i as f64 }).collect()
        }
    }
}

/// `N(μ, σ²)` restricted to an `n`-point grid on `[lo, hi]`, weights proportional to the density.
pub fn discretize_gaussian(mu: f64, sigma: f64, lo: f64, hi: f64, n: usize) -> Result<DiscreteDistribution> {
    if !(sigma > 0.0 && sigma.is_finite()) || !(lo < hi) || n < 2 || !mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bad Gaussian discretization (mu = {mu}, sigma = {sigma}, [{lo}, {hi}], n = {n})"
        )));
    }
    let xs = grid(lo, hi, n);
    let dens: Vec<f64> = xs.iter().map(|x| (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = dens.iter().sum();
    if !(s > 0.0) {
        return Err(Error::InvalidInput("Gaussian has no mass on the grid".into()));
    }
    DiscreteDistribution::new(
        dens.into_iter().map(|x| x / s).collect(),
        xs.into_iter().map(|x| vec![x]).collect(),
    )
}

/// Two discretized Gaussians `N(−2, (1/4)²)` and `N(2, 1)` on a shared `n`-point grid,
/// with `p = 2` and equal weights, plus the discretized true barycenter
/// `N(0, (5/8)²)` on the same grid.
pub fn gaussian_pair_data(n: usize) -> Result<(Dataset, Vec<f64>)> {
    let (lo, hi) = GAUSSIAN_GRID;
    let d1 = discretize_gaussian(-2.0, 0.25, lo, hi, n)?;
    let d2 = discretize_gaussian(2.0, 1.0, lo, hi, n)?;
    let truth = discretize_gaussian(0.0, 0.625, lo, hi, n)?;
    let barycenter_supports = d1.supports.clone();
    let data = Dataset {
        distributions: vec![d1, d2],
        barycenter_supports,
        p: 2.0,
        gammas: Some(vec![0.5, 0.5]),
    };
    Ok((data, truth.weights))
}

/// [`gaussian_pair_data`] as an instance.
pub fn gaussian_pair_instance(n: usize) -> Result<(BarycenterInstance, Vec<f64>)> {
    let (data, truth) = gaussian_pair_data(n)?;
    Ok((data.instance()?, truth))
}
