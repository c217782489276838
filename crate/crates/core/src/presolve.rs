//! Removal of zero-weight support points before a solve, and re-expansion
//! of the reduced plans afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::model::{BarycenterInstance, PrimalSolution};

/// Marginal entries at or below this are structural zeros.
pub const ZERO_WEIGHT: f64 = 1e-15;

/// Retained column indices per distribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionMap {
    /// Strictly increasing positions of the retained entries of each `a⁽ᵗ⁾`.
    pub kept: Vec<Vec<usize>>,
    pub original_sizes: Vec<usize>,
}

impl ReductionMap {
    pub fn reduced_sizes(&self) -> Vec<usize> {
        self.kept.iter().map(Vec::len).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.kept.iter().zip(&self.original_sizes).all(|(k, &n)| k.len() == n)
    }
}

/// Drops the columns of every `D⁽ᵗ⁾` and entries of `a⁽ᵗ⁾` whose weight is zero.
pub fn reduce(instance: &BarycenterInstance) -> Result<(BarycenterInstance, ReductionMap)> {
    let mut kept = Vec::with_capacity(instance.n());
    let mut costs = Vec::with_capacity(instance.n());
    let mut marginals = Vec::with_capacity(instance.n());
    for t in 0..instance.n() {
        let a = instance.marginal(t);
        let idx: Vec<usize> = (0..a.len()).filter(|&j| a[j] > ZERO_WEIGHT).collect();
        if idx.is_empty() {
            return Err(Error::InvalidInput(format!("marginal {t} has no positive entry")));
        }
        let sub: Vec<f64> = idx.iter().map(|&j| a[j]).collect();
        let s: f64 = sub.iter().sum();
        marginals.push(sub.into_iter().map(|x| x / s).collect());
        costs.push(instance.cost(t).select_cols(&idx));
        kept.push(idx);
    }
    let reduced = BarycenterInstance::from_parts_unchecked(
        costs,
        marginals,
        instance.gammas().to_vec(),
        instance.barycenter_supports().map(<[_]>::to_vec),
    );
    Ok((
        reduced,
        ReductionMap {
            kept,
            original_sizes: instance.sizes(),
        },
    ))
}

/// Scatters reduced plans back to full width, with zero columns for dropped entries.
pub fn expand(reduced: &PrimalSolution, map: &ReductionMap) -> Result<PrimalSolution> {
    if reduced.plans.len() != map.kept.len() {
        return Err(Error::Dimension(format!(
            "{} plans for {} distributions",
            reduced.plans.len(),
            map.kept.len()
        )));
    }
    let m = reduced.w.len();
    let mut plans = Vec::with_capacity(map.kept.len());
    for (t, (p, idx)) in reduced.plans.iter().zip(&map.kept).enumerate() {
        if p.shape() != (m, idx.len()) {
            return Err(Error::Dimension(format!(
                "reduced plan {t} is {:?}, expected {:?}",
                p.shape(),
                (m, idx.len())
            )));
        }
        let mut full = Mat::zeros(m, map.original_sizes[t]);
        for i in 0..m {
            for (k, &j) in idx.iter().enumerate() {
                full.set(i, j, p.get(i, k));
            }
        }
        plans.push(full);
    }
    Ok(PrimalSolution {
        w: reduced.w.clone(),
        plans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::primal_objective;
    use proptest::prelude::*;

    fn example() -> BarycenterInstance {
        BarycenterInstance::new(
            vec![Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap()],
            vec![vec![0.5, 0.0, 0.5]],
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn drops_zero_columns() {
        let (r, map) = reduce(&example()).unwrap();
        assert_eq!(map.kept, vec![vec![0, 2]]);
        assert_eq!(r.marginal(0), &[0.5, 0.5]);
        assert_eq!(r.cost(0).to_rows(), vec![vec![1.0, 3.0], vec![4.0, 6.0]]);
        assert!(!map.is_identity());

        let sol = PrimalSolution {
            w: vec![0.5, 0.5],
            plans: vec![Mat::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap()],
        };
        let full = expand(&sol, &map).unwrap();
        assert_eq!(full.plans[0].to_rows(), vec![vec![0.5, 0.0, 0.0], vec![0.0, 0.0, 0.5]]);
    }

    #[test]
    fn dense_marginals_are_untouched() {
        let inst = BarycenterInstance::new(vec![Mat::filled(2, 2, 1.0)], vec![vec![0.3, 0.7]], vec![1.0]).unwrap();
        let (r, map) = reduce(&inst).unwrap();
        assert!(map.is_identity());
        assert_eq!(r.cost(0), inst.cost(0));
        let sol = PrimalSolution::product(&r, vec![0.4, 0.6]);
        assert_eq!(expand(&sol, &map).unwrap(), sol);
    }

    #[test]
    fn shape_mismatch() {
        let (_, map) = reduce(&example()).unwrap();
        let bad = PrimalSolution {
            w: vec![0.5, 0.5],
            plans: vec![Mat::zeros(2, 3)],
        };
        assert!(expand(&bad, &map).is_err());
    }

    proptest! {
        #[test]
        fn expansion_preserves_objective(vals in prop::collection::vec(0.0f64..1.0, 6), mask in prop::collection::vec(any::<bool>(), 3)) {
            let mut a: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            a[0] = 1.0;
            let s: f64 = a.iter().sum();
            a.iter_mut().for_each(|x| *x /= s);
            let inst = BarycenterInstance::new(vec![Mat::from_vec(2, 3, vals.clone())], vec![a], vec![1.0]).unwrap();
            let (r, map) = reduce(&inst).unwrap();
            let k = r.m_t(0);
            let plan = Mat::from_fn(2, k, |i, j| vals[i * 3 + j] * 0.5);
            let sol = PrimalSolution { w: vec![0.5, 0.5], plans: vec![plan] };
            let full = expand(&sol, &map).unwrap();
            prop_assert_eq!(primal_objective(&r, &sol).unwrap(), primal_objective(&inst, &full).unwrap());
        }
    }
}
