//! Independent oracles shared by the acceptance and ELBO tests.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

/// Nodes and weights mapped to `[a, b]`.
pub fn gl_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    x.iter().zip(&w).map(|(x, w)| (a + 0.5 * (b - a) * (x + 1.0), 0.5 * (b - a) * w)).collect()
}

pub fn mobius(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ab = a[0] * b[0] + a[1] * b[1];
    let a2 = a[0] * a[0] + a[1] * a[1];
    let b2 = b[0] * b[0] + b[1] * b[1];
    let den = 1.0 + 2.0 * ab + a2 * b2;
    let (ca, cb) = (1.0 + 2.0 * ab + b2, 1.0 - a2);
    [(ca * a[0] + cb * b[0]) / den, (ca * a[1] + cb * b[1]) / den]
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let a2 = a[0] * a[0] + a[1] * a[1];
    let b2 = b[0] * b[0] + b[1] * b[1];
    (1.0 + 2.0 * d2 / ((1.0 - a2) * (1.0 - b2))).acosh()
}

/// Jukes–Cantor with off-diagonal rates 1/4.
pub fn jc(i: usize, j: usize, t: f64) -> f64 {
    if i == j {
        0.25 + 0.75 * (-t).exp()
    } else {
        0.25 - 0.25 * (-t).exp()
    }
}

pub fn dna_index(c: u8) -> usize {
    b"ACGT".iter().position(|&x| x == c).expect("ACGT only")
}

/// Likelihood of the rooted three-taxon tree `((i, j), k)` with branches
/// `[u->i, u->j, root->u, root->k]`, uniform root.
pub fn three_taxon_likelihood(cols: &[[usize; 3]], (i, j, k): (usize, usize, usize), b: [f64; 4]) -> f64 {
    let mut total = 1.0;
    for y in cols {
        let mut site = 0.0;
        for r in 0..4 {
            let mut inner = 0.0;
            for u in 0..4 {
                inner += jc(r, u, b[2]) * jc(u, y[i], b[0]) * jc(u, y[j], b[1]);
            }
            site += 0.25 * inner * jc(r, y[k], b[3]);
        }
        total *= site;
    }
    total
}

pub const CHERRIES: [(usize, usize, usize); 3] = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];

/// Evidence over all of `R_+^4` per topology: tensor Gauss–Legendre on
/// `[0, cap]^4`. The neglected mass is at most `3 * 4 * exp(-λ cap)`
/// because the likelihood is bounded by 1 and the prior is normalized.
pub fn strict_evidence(cols: &[[usize; 3]], lambda: f64, n: usize, cap: f64) -> f64 {
    let g = gl_on(n, 0.0, cap);
    let mut total = 0.0;
    for tau in CHERRIES {
        for &(b0, w0) in &g {
            for &(b1, w1) in &g {
                for &(b2, w2) in &g {
                    for &(b3, w3) in &g {
                        let prior = lambda.powi(4) * (-lambda * (b0 + b1 + b2 + b3)).exp();
                        total += w0 * w1 * w2 * w3 * prior * three_taxon_likelihood(cols, tau, [b0, b1, b2, b3]);
                    }
                }
            }
        }
    }
    total
}

/// Points at distance `r1` from the origin and `r2` from `(tanh(d/2), 0)`.
fn mirror_pair(d: f64, r1: f64, r2: f64) -> [[f64; 2]; 2] {
    let rho = (r1 / 2.0).tanh();
    let rj = (d / 2.0).tanh();
    let chord2 = (r2.cosh() - 1.0) * (1.0 - rho * rho) * (1.0 - rj * rj) / 2.0;
    let c = ((rho * rho + rj * rj - chord2) / (2.0 * rho * rj)).clamp(-1.0, 1.0);
    let s = (1.0 - c * c).sqrt();
    [[rho * c, rho * s], [rho * c, -rho * s]]
}

/// Integral over branch pairs `(a, b)` with `|a-b| <= d <= a+b`, in
/// coordinates `a+b = d+t^2`, `a-b = d sin θ`, which smooth out the square
/// root behaviour of the preimages at the region's edges.
fn wedge<F: FnMut(f64, f64) -> f64>(d: f64, lambda: f64, n: usize, tail: f64, mut f: F) -> f64 {
    let ts = gl_on(n, 0.0, tail);
    let ths = gl_on(n, -PI / 2.0, PI / 2.0);
    let mut acc = 0.0;
    for &(t, wt) in &ts {
        let u = d + t * t;
        for &(th, wth) in &ths {
            let w = d * th.sin();
            let jac = 0.5 * 2.0 * t * d * th.cos();
            let (a, b) = (0.5 * (u + w), 0.5 * (u - w));
            acc += wt * wth * jac * lambda * lambda * (-lambda * u).exp() * f(a, b);
        }
    }
    acc
}

/// Expected value of `Ẑ` for the three-taxon sampler: the target restricted
/// to branch lengths the embedding map can produce, counted once per mirror
/// preimage at each merge.
pub fn reachable_evidence(points: [[f64; 2]; 3], cols: &[[usize; 3]], lambda: f64, n: usize, tail: f64) -> f64 {
    let mut total = 0.0;
    for (i, j, k) in CHERRIES {
        // Frame with taxon i at the origin and taxon j on the positive x axis.
        let neg = [-points[i][0], -points[i][1]];
        let zj = mobius(neg, points[j]);
        let zk = mobius(neg, points[k]);
        let ang = zj[1].atan2(zj[0]);
        let (c, s) = (ang.cos(), ang.sin());
        let zk = [c * zk[0] + s * zk[1], -s * zk[0] + c * zk[1]];
        let d = dist(points[i], points[j]);
        total += wedge(d, lambda, n, tail, |b1, b2| {
            mirror_pair(d, b1, b2)
                .iter()
                .map(|p| {
                    let dk = dist(*p, zk);
                    2.0 * wedge(dk, lambda, n, tail, |b3, b4| three_taxon_likelihood(cols, (i, j, k), [b1, b2, b3, b4]))
                })
                .sum::<f64>()
        });
    }
    total
}

/// Upper `1 - alpha` quantile of χ² by the Wilson–Hilferty approximation.
pub fn chi2_quantile(df: f64, z: f64) -> f64 {
    let k = 2.0 / (9.0 * df);
    df * (1.0 - k + z * k.sqrt()).powi(3)
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}
