//! Euclidean projection onto the probability simplex and the proximal map
//! of its support function.

use crate::error::{Error, Result};

/// Projects `v` onto `{w ≥ 0, Σw = 1}` with Condat's linear-time scan.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    check(v)?;
    let tau = condat_threshold(v);
    Ok(finish(v, tau))
}

/// Sort-and-threshold projection. Same contract as [`project_simplex`].
pub fn project_simplex_reference(v: &[f64]) -> Result<Vec<f64>> {
    check(v)?;
    let mut s = v.to_vec();
    s.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cs = 0.0;
    let mut tau = s[0] - 1.0;
    for (k, &x) in s.iter().enumerate() {
        cs += x;
        let t = (cs - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    Ok(finish(v, tau))
}

/// `y − β⁻¹ Pr_Δ(β y)`: the proximal map of `β⁻¹ δ*_Δ` at `y`.
pub fn prox_support_function(y: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta = {beta} must be positive")));
    }
    let scaled: Vec<f64> = y.iter().map(|x| beta * x).collect();
    let p = project_simplex(&scaled)?;
    Ok(y.iter().zip(&p).map(|(yi, pi)| yi - pi / beta).collect())
}

/// Support function of the simplex, `max_i v_i`.
pub fn support_function(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("simplex projection input"));
    }
    Ok(())
}

fn condat_threshold(y: &[f64]) -> f64 {
    let mut active: Vec<f64> = Vec::with_capacity(y.len());
    let mut waiting: Vec<f64> = Vec::new();
    active.push(y[0]);
    let mut rho = y[0] - 1.0;
    for &yn in &y[1..] {
        if yn > rho {
            rho += (yn - rho) / (active.len() + 1) as f64;
            if rho > yn - 1.0 {
                active.push(yn);
            } else {
                waiting.append(&mut active);
                active.push(yn);
                rho = yn - 1.0;
            }
        }
    }
    for &yn in &waiting {
        if yn > rho {
            active.push(yn);
            rho += (yn - rho) / active.len() as f64;
        }
    }
    loop {
        let before = active.len();
        let mut k = 0;
        while k < active.len() {
            let yn = active[k];
            if yn <= rho {
                active.swap_remove(k);
                rho += (rho - yn) / active.len() as f64;
            } else {
                k += 1;
            }
        }
        if active.len() == before {
            break;
        }
    }
    rho
}

/// Thresholds at `tau` and removes the leftover sum error from the active set.
fn finish(v: &[f64], tau: f64) -> Vec<f64> {
    let mut w: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    let active = w.iter().filter(|&&x| x > 0.0).count();
    if active > 0 {
        let excess = (w.iter().sum::<f64>() - 1.0) / active as f64;
        for x in w.iter_mut().filter(|x| **x > 0.0) {
            *x = (*x - excess).max(0.0);
        }
    }
    w
}
