//! Derivative-free minimization (Nelder–Mead) and bracketed root finding (Brent).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Stop once every vertex lies within `x_tol` (max-norm) of the best vertex...
    pub x_tol: f64,
    /// ...and every vertex value lies within `f_tol` of the best value.
    pub f_tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            x_tol: 1e-10,
            f_tol: 1e-12,
            max_evals: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` from `x0`, building the initial simplex from per-coordinate `steps`.
///
/// Non-finite objective values are treated as `+∞`, so infeasible regions can
/// be expressed by returning `f64::INFINITY` (or NaN). Uses the dimension-adaptive
/// coefficients of Gao & Han, which reduce to the classic (1, 2, ½, ½) in 2-D.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n, "one step per coordinate");
    let nf = n as f64;
    let (reflect, expand) = (1.0, 1.0 + 2.0 / nf);
    let contract = 0.75 - 1.0 / (2.0 * nf);
    let shrink = 1.0 - 1.0 / nf.max(2.0);

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if steps[i] != 0.0 { steps[i] } else { 2.5e-4 };
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let f_spread = simplex[1..]
            .iter()
            .map(|v| (v.1 - best.1).abs())
            .fold(0.0, f64::max);
        let x_spread = simplex[1..]
            .iter()
            .map(|v| {
                v.0.iter()
                    .zip(&best.0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if best.1.is_finite() && x_spread <= opts.x_tol && (f_spread <= opts.f_tol || f_spread.is_nan()) {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(&v.0) {
                *c += xi / nf;
            }
        }
        let worst_f = simplex[n].1;
        let second_worst_f = simplex[n - 1].1;
        let best_f = simplex[0].1;

        for j in 0..n {
            trial[j] = centroid[j] + reflect * (centroid[j] - simplex[n].0[j]);
        }
        let fr = eval(&trial, &mut evals);

        if fr < best_f {
            for j in 0..n {
                trial2[j] = centroid[j] + expand * (trial[j] - centroid[j]);
            }
            let fe = eval(&trial2, &mut evals);
            if fe < fr {
                simplex[n].0.copy_from_slice(&trial2);
                simplex[n].1 = fe;
            } else {
                simplex[n].0.copy_from_slice(&trial);
                simplex[n].1 = fr;
            }
            continue;
        }
        if fr < second_worst_f {
            simplex[n].0.copy_from_slice(&trial);
            simplex[n].1 = fr;
            continue;
        }
        let (fc, accepted) = if fr < worst_f {
            // outside contraction
            for j in 0..n {
                trial2[j] = centroid[j] + contract * (trial[j] - centroid[j]);
            }
            let fc = eval(&trial2, &mut evals);
            (fc, fc <= fr)
        } else {
            for j in 0..n {
                trial2[j] = centroid[j] + contract * (simplex[n].0[j] - centroid[j]);
            }
            let fc = eval(&trial2, &mut evals);
            (fc, fc < worst_f)
        };
        if accepted {
            simplex[n].0.copy_from_slice(&trial2);
            simplex[n].1 = fc;
            continue;
        }
        let (head, tail) = simplex.split_at_mut(1);
        let best_x = &head[0].0;
        for v in tail.iter_mut() {
            for (vj, bj) in v.0.iter_mut().zip(best_x) {
                *vj = bj + shrink * (*vj - bj);
            }
            v.1 = eval(&v.0, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        f: fx,
        evals,
        converged,
    }
}

/// Brent's method for a root of `f` in `[a, b]`; requires a sign change.
pub fn brent_root<F>(mut f: F, a: f64, b: f64, x_tol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::Numerical(format!(
            "root not bracketed: f({a}) = {fa}, f({b}) = {fb}"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * x_tol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Err(Error::Numerical(format!(
        "Brent root finding did not converge in {max_iter} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.1, 0.1],
            &NelderMeadOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn quadratic_six_dims() {
        let target = [1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let r = nelder_mead(
            |x| x.iter().zip(&target).enumerate().map(|(i, (a, b))| (i as f64 + 1.0) * (a - b).powi(2)).sum(),
            &[0.0; 6],
            &[0.5; 6],
            &NelderMeadOptions { max_evals: 20_000, ..Default::default() },
        );
        assert!(r.converged);
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn infeasible_region_avoided() {
        let r = nelder_mead(
            |x| if x[0] < 0.5 { f64::NAN } else { (x[0] - 0.2).powi(2) },
            &[2.0],
            &[0.3],
            &NelderMeadOptions::default(),
        );
        assert!(r.x[0] >= 0.5 && (r.x[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn brent_finds_roots() {
        let r = brent_root(|x| x * x - 2.0, 0.0, 2.0, 1e-14, 100).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        let r = brent_root(|x| x.cos() - x, 0.0, 1.0, 1e-14, 100).unwrap();
        assert!((r.cos() - r).abs() < 1e-13);
        assert!(brent_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 100).is_err());
    }
}
