//! Reference implementations and fixtures shared by the integration tests.
//! Everything here is deliberately naive and independent of the library's
//! linear algebra.
#![allow(dead_code)]

use std::collections::HashMap;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wblcmp::scenario::{Interval, SignalDescriptor, SourceRole, SourceSpec};
use wblcmp::ScenarioSpec;

pub type Mat = Vec<Vec<C64>>;

pub fn crandn<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn crandn_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<C64> {
    (0..n).map(|_| crandn(rng)).collect()
}

pub fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect()).collect()
}

/// `a <- g a + w x x^H`
pub fn decay_and_add(a: &mut Mat, g: f64, w: f64, x: &[C64]) {
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * g + x[i] * x[j].conj() * w;
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a.iter().zip(identity(n)).map(|(r, e)| r.iter().cloned().chain(e).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.norm() > 0.0, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = m[col].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i != col {
                let f = row[col];
                if f.norm() != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn mat_vec(a: &Mat, x: &[C64]) -> Vec<C64> {
    a.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// `a^H b`
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn frobenius(a: &Mat) -> f64 {
    a.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frobenius_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Azimuth in degrees (0 = front, 90 = left side) to a position at range `r`.
pub fn at(deg: f64, r: f64) -> [f64; 3] {
    let a = deg.to_radians();
    [r * a.sin(), r * a.cos(), 0.0]
}

/// The preset geometry shortened to `duration` seconds: one target from
/// 2 s to the end and the interferer from 1 s.
pub fn short_scene(duration: f64, seed: u64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::paper_switching_target(seed);
    spec.duration = duration;
    spec.sources.remove(1);
    spec.sources[0].activity = Interval::new(2.0, duration);
    spec.sources[1].activity = Interval::new(1.0, duration);
    spec
}

pub const WHITE_CLIP: &str = "white";

/// Seeded unit-variance Gaussian clip table for [`SignalDescriptor::Clip`]
/// sources named [`WHITE_CLIP`].
pub fn white_clips(n_samples: usize, seed: u64) -> HashMap<String, Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..n_samples).map(|_| rng.sample(StandardNormal)).collect();
    HashMap::from([(WHITE_CLIP.to_string(), w)])
}

/// Single stationary broadband target at `deg`, no interferer, nearly
/// anechoic room. Render with [`white_clips`].
pub fn anechoic_single_source(duration: f64, deg: f64, snr_db: f64, seed: u64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::paper_switching_target(seed);
    spec.duration = duration;
    spec.t60 = 0.001;
    spec.snr_db = snr_db;
    spec.sir_db = f64::INFINITY;
    spec.sources = vec![SourceSpec {
        role: SourceRole::Target,
        position: at(deg, 2.0),
        activity: Interval::new(2.0, duration),
        signal: SignalDescriptor::Clip { path: WHITE_CLIP.into() },
    }];
    spec
}
