//! Weighted natural cubic smoothing spline.
//!
//! Minimises `sum w_i (y_i - f(x_i))^2 + lambda * integral f''(x)^2 dx` with
//! the Reinsch algorithm: for sorted distinct knots the interior second
//! derivatives `gamma` solve the pentadiagonal system
//! `(R + lambda Q' W^-1 Q) gamma = Q' y`, after which `f = y - lambda W^-1 Q gamma`.
//! Generalised cross-validation uses the central band of the inverse, which
//! the Hutchinson-de Hoog recursion gives in linear time.

use super::PreprocessError;

/// Fitted spline in value/second-derivative form.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFit {
    pub knots: Vec<f64>,
    /// Fitted values at the knots.
    pub values: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    pub gamma: Vec<f64>,
    pub lambda: f64,
    /// Root mean square residual over all fitted observations.
    pub residual_rms: f64,
}

impl SplineFit {
    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        let n = k.len();
        let (f, g) = (&self.values, &self.gamma);
        if x <= k[0] {
            let h = k[1] - k[0];
            let slope = (f[1] - f[0]) / h - h * g[1] / 6.0;
            return f[0] + (x - k[0]) * slope;
        }
        if x >= k[n - 1] {
            let h = k[n - 1] - k[n - 2];
            let slope = (f[n - 1] - f[n - 2]) / h + h * g[n - 2] / 6.0;
            return f[n - 1] + (x - k[n - 1]) * slope;
        }
        let i = k.partition_point(|&v| v <= x) - 1;
        let h = k[i + 1] - k[i];
        let (a, b) = (x - k[i], k[i + 1] - x);
        (a * f[i + 1] + b * f[i]) / h - a * b / 6.0 * ((1.0 + a / h) * g[i + 1] + (1.0 + b / h) * g[i])
    }

    /// Evaluations on the uniform grid `k / len`, `k = 0..len`.
    pub fn resample(&self, len: usize) -> Vec<(f64, f64)> {
        (0..len)
            .map(|k| {
                let x = k as f64 / len as f64;
                (x, self.eval(x))
            })
            .collect()
    }
}

/// How the smoothing parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    Gcv,
}

/// Sorted, tie-merged observations.
struct Data {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    /// Residual sum of squares inside tie groups; constant in lambda.
    within: f64,
    total_weight: f64,
}

fn merge_ties(points: &[(f64, f64)]) -> Data {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut x: Vec<f64> = Vec::with_capacity(p.len());
    let mut sums: Vec<(f64, f64, f64)> = Vec::with_capacity(p.len());
    for &(xi, yi) in &p {
        match x.last() {
            Some(&last) if last == xi => {
                let s = sums.last_mut().expect("parallel");
                s.0 += yi;
                s.1 += yi * yi;
                s.2 += 1.0;
            }
            _ => {
                x.push(xi);
                sums.push((yi, yi * yi, 1.0));
            }
        }
    }
    let y: Vec<f64> = sums.iter().map(|s| s.0 / s.2).collect();
    let w: Vec<f64> = sums.iter().map(|s| s.2).collect();
    let within = sums.iter().map(|s| (s.1 - s.0 * s.0 / s.2).max(0.0)).sum();
    Data {
        x,
        y,
        w,
        within,
        total_weight: p.len() as f64,
    }
}

/// Banded pieces shared by every lambda on one data set.
struct System {
    /// Knot spacings.
    h: Vec<f64>,
    /// `Q' y`, length n-2.
    qty: Vec<f64>,
    /// Band of R: diagonal and first super-diagonal.
    r0: Vec<f64>,
    r1: Vec<f64>,
    /// Band of Q' W^-1 Q: diagonal, first and second super-diagonals.
    b0: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

impl System {
    fn new(d: &Data) -> Self {
        let n = d.x.len();
        let m = n - 2;
        let h: Vec<f64> = d.x.windows(2).map(|w| w[1] - w[0]).collect();
        // Column j of Q (0-based interior index, knot j+1) has entries at rows j, j+1, j+2.
        let q = |j: usize| {
            let (a, b) = (1.0 / h[j], 1.0 / h[j + 1]);
            [a, -a - b, b]
        };
        let mut qty = vec![0.0; m];
        let (mut r0, mut r1) = (vec![0.0; m], vec![0.0; m]);
        let (mut b0, mut b1, mut b2) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for j in 0..m {
            let cj = q(j);
            qty[j] = cj[0] * d.y[j] + cj[1] * d.y[j + 1] + cj[2] * d.y[j + 2];
            r0[j] = (h[j] + h[j + 1]) / 3.0;
            b0[j] = cj[0] * cj[0] / d.w[j] + cj[1] * cj[1] / d.w[j + 1] + cj[2] * cj[2] / d.w[j + 2];
            if j + 1 < m {
                let ck = q(j + 1);
                r1[j] = h[j + 1] / 6.0;
                b1[j] = cj[1] * ck[0] / d.w[j + 1] + cj[2] * ck[1] / d.w[j + 2];
            }
            if j + 2 < m {
                let ck = q(j + 2);
                b2[j] = cj[2] * ck[0] / d.w[j + 2];
            }
        }
        Self {
            h,
            qty,
            r0,
            r1,
            b0,
            b1,
            b2,
        }
    }
}

/// `L D L'` factor of a symmetric pentadiagonal matrix; `l1[i] = L[i+1][i]`, `l2[i] = L[i+2][i]`.
struct Ldl {
    d: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

fn factor(a0: &[f64], a1: &[f64], a2: &[f64]) -> Option<Ldl> {
    let m = a0.len();
    let (mut d, mut l1, mut l2) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let scale = a0.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for i in 0..m {
        let mut di = a0[i];
        if i >= 1 {
            di -= l1[i - 1] * l1[i - 1] * d[i - 1];
        }
        if i >= 2 {
            di -= l2[i - 2] * l2[i - 2] * d[i - 2];
        }
        if !(di > scale * 1e-14) {
            return None;
        }
        d[i] = di;
        if i + 1 < m {
            let mut v = a1[i];
            if i >= 1 {
                v -= l1[i - 1] * l2[i - 1] * d[i - 1];
            }
            l1[i] = v / di;
        }
        if i + 2 < m {
            l2[i] = a2[i] / di;
        }
    }
    Some(Ldl { d, l1, l2 })
}

impl Ldl {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = b.len();
        let mut z = b.to_vec();
        for i in 0..m {
            if i >= 1 {
                z[i] -= self.l1[i - 1] * z[i - 1];
            }
            if i >= 2 {
                z[i] -= self.l2[i - 2] * z[i - 2];
            }
        }
        for i in 0..m {
            z[i] /= self.d[i];
        }
        for i in (0..m).rev() {
            if i + 1 < m {
                z[i] -= self.l1[i] * z[i + 1];
            }
            if i + 2 < m {
                z[i] -= self.l2[i] * z[i + 2];
            }
        }
        z
    }

    /// Central five bands of the inverse (Hutchinson-de Hoog): `s0[i] = S[i][i]`,
    /// `s1[i] = S[i][i+1]`, `s2[i] = S[i][i+2]`.
    fn inverse_band(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.d.len();
        let (mut s0, mut s1, mut s2) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for i in (0..m).rev() {
            let l1 = if i + 1 < m { self.l1[i] } else { 0.0 };
            let l2 = if i + 2 < m { self.l2[i] } else { 0.0 };
            let s_11 = if i + 1 < m { s0[i + 1] } else { 0.0 };
            let s_12 = if i + 2 < m { s1[i + 1] } else { 0.0 };
            let s_22 = if i + 2 < m { s0[i + 2] } else { 0.0 };
            if i + 2 < m {
                s2[i] = -l1 * s_12 - l2 * s_22;
            }
            if i + 1 < m {
                s1[i] = -l1 * s_11 - l2 * s_12;
            }
            s0[i] = 1.0 / self.d[i] - l1 * s1[i] - l2 * s2[i];
        }
        (s0, s1, s2)
    }
}

struct Solution {
    values: Vec<f64>,
    gamma: Vec<f64>,
    rss: f64,
    /// Trace of the hat matrix.
    edf: f64,
}

fn solve(d: &Data, sys: &System, lambda: f64, want_trace: bool) -> Result<Solution, PreprocessError> {
    let m = d.x.len() - 2;
    let a0: Vec<f64> = (0..m).map(|i| sys.r0[i] + lambda * sys.b0[i]).collect();
    let a1: Vec<f64> = (0..m).map(|i| sys.r1[i] + lambda * sys.b1[i]).collect();
    let a2: Vec<f64> = (0..m).map(|i| lambda * sys.b2[i]).collect();
    let ldl = factor(&a0, &a1, &a2).ok_or(PreprocessError::SingularFit)?;
    let g = ldl.solve(&sys.qty);
    let n = d.x.len();
    let mut values = d.y.clone();
    // (Q gamma)_k collects column contributions at rows j, j+1, j+2.
    let mut qg = vec![0.0; n];
    for (j, &gj) in g.iter().enumerate() {
        let (a, b) = (1.0 / sys.h[j], 1.0 / sys.h[j + 1]);
        qg[j] += a * gj;
        qg[j + 1] += (-a - b) * gj;
        qg[j + 2] += b * gj;
    }
    for k in 0..n {
        values[k] -= lambda * qg[k] / d.w[k];
    }
    let rss = d.within
        + (0..n)
            .map(|k| d.w[k] * (d.y[k] - values[k]).powi(2))
            .sum::<f64>();
    let edf = if want_trace {
        let (s0, s1, s2) = ldl.inverse_band();
        let tr: f64 = (0..m)
            .map(|i| s0[i] * sys.b0[i] + 2.0 * s1[i] * sys.b1[i] + 2.0 * s2[i] * sys.b2[i])
            .sum();
        n as f64 - lambda * tr
    } else {
        f64::NAN
    };
    let mut gamma = vec![0.0; n];
    gamma[1..n - 1].copy_from_slice(&g);
    Ok(Solution {
        values,
        gamma,
        rss,
        edf,
    })
}

fn gcv_score(d: &Data, s: &Solution) -> f64 {
    let n = d.total_weight;
    let denom = 1.0 - s.edf / n;
    if denom <= 1e-10 {
        return f64::INFINITY;
    }
    (s.rss / n) / (denom * denom)
}

/// Fits the spline to `(x, y)` points. Tied abscissae are merged into their
/// mean with a count weight, which leaves the objective unchanged.
pub fn fit(points: &[(f64, f64)], lambda: Lambda) -> Result<SplineFit, PreprocessError> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(PreprocessError::NonFinite);
    }
    let d = merge_ties(points);
    if d.x.len() < 4 {
        return Err(PreprocessError::InsufficientPoints {
            distinct: d.x.len(),
            required: 4,
        });
    }
    let sys = System::new(&d);
    let (lam, sol) = match lambda {
        Lambda::Fixed(l) if l >= 0.0 && l.is_finite() => (l, solve(&d, &sys, l, false)?),
        Lambda::Fixed(l) => return Err(PreprocessError::InvalidLambda(l)),
        Lambda::Gcv => {
            let l = gcv_lambda(&d, &sys)?;
            (l, solve(&d, &sys, l, false)?)
        }
    };
    Ok(SplineFit {
        residual_rms: (sol.rss / d.total_weight).sqrt(),
        knots: d.x,
        values: sol.values,
        gamma: sol.gamma,
        lambda: lam,
    })
}

/// Minimises the GCV score over `log10(lambda)`: a coarse grid followed by
/// golden-section refinement around the best grid point.
fn gcv_lambda(d: &Data, sys: &System) -> Result<f64, PreprocessError> {
    // Curvature penalty scales as span^3 / n relative to the residuals.
    let span = d.x[d.x.len() - 1] - d.x[0];
    let base = span.powi(3) / d.total_weight;
    let score = |t: f64| -> Result<f64, PreprocessError> {
        let s = solve(d, sys, base * 10f64.powf(t), true)?;
        Ok(gcv_score(d, &s))
    };
    let (lo, hi, steps) = (-10.0, 4.0, 29);
    let grid: Vec<f64> = (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect();
    let mut best = (f64::INFINITY, 0usize);
    for (i, &t) in grid.iter().enumerate() {
        let v = score(t)?;
        if v < best.0 {
            best = (v, i);
        }
    }
    let i = best.1;
    let (mut a, mut b) = (grid[i.saturating_sub(1)], grid[(i + 1).min(steps - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut e = a + phi * (b - a);
    let (mut fc, mut fe) = (score(c)?, score(e)?);
    for _ in 0..30 {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - phi * (b - a);
            fc = score(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + phi * (b - a);
            fe = score(e)?;
        }
    }
    let (t, v) = if fc < fe { (c, fc) } else { (e, fe) };
    let t = if v <= best.0 { t } else { grid[i] };
    Ok(base * 10f64.powf(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn dense_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            m.swap(c, p);
            let piv = m[c][c];
            for v in m[c].iter_mut() {
                *v /= piv;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let row_c = m[c].clone();
                    for (v, pc) in m[r].iter_mut().zip(row_c) {
                        *v -= f * pc;
                    }
                }
            }
        }
        m.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    #[test]
    fn inverse_band_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 9;
        let a1: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..0.5)).collect();
        let a2: Vec<f64> = (0..m).map(|_| rng.random_range(-0.3..0.3)).collect();
        let a0: Vec<f64> = (0..m).map(|_| 3.0 + rng.random::<f64>()).collect();
        let mut dense = vec![vec![0.0; m]; m];
        for i in 0..m {
            dense[i][i] = a0[i];
            if i + 1 < m {
                dense[i][i + 1] = a1[i];
                dense[i + 1][i] = a1[i];
            }
            if i + 2 < m {
                dense[i][i + 2] = a2[i];
                dense[i + 2][i] = a2[i];
            }
        }
        let inv = dense_inverse(&dense);
        let ldl = factor(&a0, &a1, &a2).unwrap();
        let (s0, s1, s2) = ldl.inverse_band();
        for i in 0..m {
            assert!((s0[i] - inv[i][i]).abs() < 1e-12);
            if i + 1 < m {
                assert!((s1[i] - inv[i][i + 1]).abs() < 1e-12);
            }
            if i + 2 < m {
                assert!((s2[i] - inv[i][i + 2]).abs() < 1e-12);
            }
        }
        let b: Vec<f64> = (0..m).map(|i| i as f64 - 3.0).collect();
        let x = ldl.solve(&b);
        for i in 0..m {
            let ax: f64 = (0..m).map(|j| dense[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-12);
        }
    }

    fn sine(n: usize, noise: f64, seed: u64) -> (Vec<(f64, f64)>, impl Fn(f64) -> f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let truth = |x: f64| 15.0 + 0.4 * (2.0 * std::f64::consts::PI * x).sin();
        let pts = (0..n)
            .map(|_| {
                let x: f64 = rng.random();
                let e = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                (x, truth(x) + e)
            })
            .collect();
        (pts, truth)
    }

    #[test]
    fn zero_lambda_interpolates() {
        let (pts, _) = sine(40, 0.05, 2);
        let fit = fit(&pts, Lambda::Fixed(0.0)).unwrap();
        assert!(fit.residual_rms < 1e-9, "{}", fit.residual_rms);
        for &(x, y) in &pts {
            assert!((fit.eval(x) - y).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_lambda_tends_to_least_squares_line() {
        let (pts, _) = sine(50, 0.05, 3);
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / n, sy / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let fit = fit(&pts, Lambda::Fixed(1e12)).unwrap();
        assert!(fit.gamma.iter().all(|g| g.abs() < 1e-8));
        for x in [0.0, 0.3, 0.77, 1.0] {
            let line = my + slope * (x - mx);
            assert!((fit.eval(x) - line).abs() < 1e-6);
        }
    }

    #[test]
    fn gcv_recovers_noisy_sine() {
        let sigma = 0.05;
        let (pts, truth) = sine(120, sigma, 4);
        let fit = fit(&pts, Lambda::Gcv).unwrap();
        assert!(
            fit.residual_rms >= 0.5 * sigma && fit.residual_rms <= 2.0 * sigma,
            "rms {}",
            fit.residual_rms
        );
        let worst = (0..200)
            .map(|k| k as f64 / 200.0)
            .map(|x| (fit.eval(x) - truth(x)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 3.0 * sigma, "worst {worst}");
    }

    #[test]
    fn exact_sine_resamples_closely() {
        let (pts, truth) = sine(60, 0.0, 5);
        let fit = fit(&pts, Lambda::Gcv).unwrap();
        let grid = fit.resample(100);
        assert_eq!(grid.len(), 100);
        let worst = grid.iter().map(|&(x, v)| (v - truth(x)).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-2, "worst {worst}");
    }

    #[test]
    fn residuals_grow_with_lambda() {
        let (pts, _) = sine(50, 0.05, 6);
        let mut last = 0.0;
        for l in [0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 100.0] {
            let r = fit(&pts, Lambda::Fixed(l)).unwrap().residual_rms;
            assert!(r >= last - 1e-12, "{l}: {r} < {last}");
            last = r;
        }
    }

    #[test]
    fn ties_match_the_unmerged_objective() {
        // With lambda = 0 a tied pair is fitted by its mean.
        let pts = [(0.0, 1.0), (0.25, 2.0), (0.25, 4.0), (0.5, 0.0), (0.75, 1.0)];
        let fit = fit(&pts, Lambda::Fixed(0.0)).unwrap();
        assert!((fit.eval(0.25) - 3.0).abs() < 1e-12);
        assert!((fit.residual_rms - (2.0f64 / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn grid_and_constant() {
        let pts: Vec<_> = (0..8).map(|i| (i as f64 / 8.0, 19.0)).collect();
        let fit = fit(&pts, Lambda::Gcv).unwrap();
        let grid = fit.resample(4);
        let xs: Vec<f64> = grid.iter().map(|p| p.0).collect();
        assert_eq!(xs, [0.0, 0.25, 0.5, 0.75]);
        assert!(grid.iter().all(|p| (p.1 - 19.0).abs() < 1e-9));
    }

    #[test]
    fn too_few_points() {
        let pts = [(0.1, 1.0), (0.2, 1.0), (0.2, 2.0), (0.3, 1.0)];
        assert!(matches!(
            fit(&pts, Lambda::Gcv),
            Err(PreprocessError::InsufficientPoints { distinct: 3, .. })
        ));
    }
}
