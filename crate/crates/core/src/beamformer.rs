//! Weighted sparsity-promoting convolutional LCMP beamformer (wBLCMP).
//!
//! Per bin, the stacked observation `[y_t; y_{t-tau}; ...; y_{t-L_h+1}]` is
//! filtered by `h_nu` for the left and right reference microphones. The
//! filters minimize a weighted, exponentially windowed output power subject
//! to one linear constraint per source on the non-delayed block.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::FrameRing;
use crate::linalg::{
    hermitian_eigh, rank_one_inverse_update_in_place, CMat, CVec, Cholesky, LinalgError, UpdateScratch,
};
use crate::scalar::{czero, Real, C};

/// Relative floor on the output power entering the IRLS weights.
pub const WEIGHT_FLOOR: f64 = 1e-10;
/// Constraint Gram matrices with a larger condition number are singular.
pub const MAX_GRAM_CONDITION: f64 = 1e12;
/// Initial loading relative to the mean input power.
pub const INIT_REG_REL: f64 = 1e-3;
pub const INIT_REG_FALLBACK: f64 = 1e-6;
/// Frames used to measure the input power for the initial loading.
pub const INIT_REG_FRAMES: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeamformerError {
    #[error("invalid beamformer configuration: {0}")]
    ConfigInvalid(String),
    #[error("constraint Gram matrix is singular (condition estimate {condition:e})")]
    SingularConstraintGram { condition: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T, E = BeamformerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamformerConfig {
    pub n_mics: usize,
    /// Filter length `L_h` in frames.
    pub filter_len: usize,
    /// Prediction delay `tau` in frames.
    pub delay: usize,
    /// Shape parameter of the lp cost.
    pub p: f64,
    /// Forgetting factor; 1 for the growing window.
    pub gamma: f64,
    /// Per-source scaling of the direct component in dB, target first.
    pub betas_db: Vec<f64>,
    /// Left and right reference microphones.
    pub ref_mics: (usize, usize),
    /// Initial loading `delta`; `None` measures it from the input.
    pub init_reg: Option<f64>,
    /// IRLS iterations of the batch solver.
    pub n_irls_iters: usize,
}

/// `gamma = exp(-t_s / t_gamma)`; an infinite time constant gives 1.
pub fn gamma_from_time_constant(frame_shift_s: f64, t_gamma_s: f64) -> f64 {
    if t_gamma_s.is_infinite() {
        1.0
    } else {
        (-frame_shift_s / t_gamma_s).exp()
    }
}

impl Default for BeamformerConfig {
    /// Paper defaults for four microphones with references 0 and 2.
    fn default() -> Self {
        Self::paper_defaults(4, (0, 2))
    }
}

impl BeamformerConfig {
    /// `L_h = 16`, `tau = 3`, `beta = [0, -20] dB`, `p = 0.5`, `t_gamma = 450 ms`
    /// at a 16 ms frame shift.
    pub fn paper_defaults(n_mics: usize, ref_mics: (usize, usize)) -> Self {
        Self {
            n_mics,
            filter_len: 16,
            delay: 3,
            p: 0.5,
            gamma: gamma_from_time_constant(0.016, 0.45),
            betas_db: vec![0.0, -20.0],
            ref_mics,
            init_reg: None,
            n_irls_iters: 1,
        }
    }

    pub fn stack_dim(&self) -> usize {
        stacked_dim(self.n_mics, self.filter_len, self.delay)
    }

    /// Linear amplitude scalings, `10^(dB/20)`.
    pub fn betas(&self) -> Vec<f64> {
        self.betas_db.iter().map(|db| 10f64.powf(db / 20.0)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BeamformerError::ConfigInvalid(m));
        if self.n_mics == 0 {
            return bad("n_mics must be positive".into());
        }
        if self.delay < 1 || self.filter_len < self.delay {
            return bad(format!("need filter_len >= delay >= 1, got L_h = {}, tau = {}", self.filter_len, self.delay));
        }
        if !(0.0..=2.0).contains(&self.p) {
            return bad(format!("p must lie in [0, 2], got {}", self.p));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.betas_db.is_empty() || self.betas_db.iter().any(|b| !b.is_finite()) {
            return bad("betas_db must be a non-empty list of finite values".into());
        }
        if self.ref_mics.0 >= self.n_mics || self.ref_mics.1 >= self.n_mics {
            return bad(format!("reference microphones {:?} out of range", self.ref_mics));
        }
        if let Some(d) = self.init_reg {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("init_reg must be positive, got {d}"));
            }
        }
        if self.n_irls_iters == 0 {
            return bad("n_irls_iters must be at least 1".into());
        }
        Ok(())
    }
}

pub fn stacked_dim(n_mics: usize, filter_len: usize, delay: usize) -> usize {
    n_mics * (filter_len - delay + 1)
}

/// Writes `[y_t; y_{t-tau}; ...; y_{t-L_h+1}]` into `out`, zero-filling
/// history that is not available yet. The ring holds frames up to `t-1`.
pub fn stack<T: Real>(ring: &FrameRing<T>, y: &[C<T>], filter_len: usize, delay: usize, out: &mut [C<T>]) {
    let m = y.len();
    out[..m].copy_from_slice(y);
    if filter_len > delay {
        ring.stack_lags(delay, filter_len - 1, &mut out[m..]);
    }
}

/// IRLS weight `max(|d_L|^2 + |d_R|^2, floor)^(p/2 - 1)`.
pub fn estimate_weight<T: Real>(d_left: C<T>, d_right: C<T>, p: T, floor: T) -> T {
    let power = (d_left.norm_sqr() + d_right.norm_sqr()).max(floor);
    power.powf(p / T::lit(2.0) - T::one())
}

/// Initial loading `delta` from the mean per-entry power of the first
/// frames that carry any energy, raised to `p/2` so that it scales like the
/// weighted STCM. Leading digital silence is skipped.
pub fn initial_loading<T: Real>(frames: &[Vec<C<T>>], p: f64) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    let active = frames.iter().filter(|f| f.iter().any(|v| v.norm_sqr() > T::zero()));
    for f in active.take(INIT_REG_FRAMES) {
        sum += f.iter().map(|v| v.norm_sqr().to_f64_lossy()).sum::<f64>();
        count += f.len();
    }
    let power = if count > 0 { sum / count as f64 } else { 0.0 };
    let delta = INIT_REG_REL * power.powf(p / 2.0);
    if delta > 0.0 && delta.is_finite() {
        delta
    } else {
        INIT_REG_FALLBACK
    }
}

/// `R^{-1} C (C^H R^{-1} C)^{-1}` machinery for one constraint set. Columns
/// may be shorter than `R`; missing entries are zero.
struct LcmpSolve<'a, T> {
    cols: &'a [CVec<T>],
    x: Vec<CVec<T>>,
    gram: Cholesky<T>,
}

impl<'a, T: Real> LcmpSolve<'a, T> {
    fn new(rinv: &CMat<T>, cols: &'a [CVec<T>]) -> Result<Self> {
        let d = rinv.rows();
        let data = rinv.as_slice();
        let x: Vec<CVec<T>> = cols
            .iter()
            .map(|c| {
                let mut out = CVec::zeros(d);
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &data[i * d..i * d + c.len()];
                    *o = row.iter().zip(c.iter()).fold(czero(), |acc, (a, b)| acc + a * b);
                }
                out
            })
            .collect();
        Self::from_products(cols, x)
    }

    /// Filter with `C^H h = b`, plus one step of iterative refinement on the
    /// constraint residual.
    fn filter(&self, b: &[C<T>]) -> CVec<T> {
        let d = self.x[0].len();
        let mut h = CVec::zeros(d);
        let mut rhs = b.to_vec();
        for _ in 0..2 {
            self.gram.solve_in_place(&mut rhs);
            for (xj, yj) in self.x.iter().zip(&rhs) {
                for (hi, xi) in h.iter_mut().zip(xj.iter()) {
                    *hi = *hi + xi * yj;
                }
            }
            for (r, (c, bj)) in rhs.iter_mut().zip(self.cols.iter().zip(b)) {
                let ch = c.iter().zip(h.iter()).fold(czero(), |acc: C<T>, (ci, hi)| acc + ci.conj() * hi);
                *r = bj - ch;
            }
        }
        h
    }
}

fn gram_condition<T: Real>(g: &CMat<T>) -> Result<f64> {
    let n = g.rows();
    let (lo, hi) = match n {
        1 => (g[(0, 0)].re.to_f64_lossy(), g[(0, 0)].re.to_f64_lossy()),
        2 => {
            let a = g[(0, 0)].re.to_f64_lossy();
            let d = g[(1, 1)].re.to_f64_lossy();
            let b = g[(0, 1)].norm().to_f64_lossy();
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (mid - rad, mid + rad)
        }
        _ => {
            let (vals, _) = hermitian_eigh(g)?;
            (vals[0].to_f64_lossy(), vals[n - 1].to_f64_lossy())
        }
    };
    Ok(if lo > 0.0 && hi.is_finite() { hi / lo } else { f64::INFINITY })
}

/// Right-hand side `B C^H e_nu`.
fn constraint_rhs<T: Real>(cols: &[CVec<T>], betas: &[T], nu: usize) -> Vec<C<T>> {
    cols.iter().zip(betas).map(|(c, &beta)| c[nu].conj() * beta).collect()
}

/// Closed-form LCMP filter `R^{-1} C (C^H R^{-1} C)^{-1} B C^H e_nu` for a
/// stacked constraint matrix `C` (columns of length `rinv.rows()`).
pub fn solve_filter<T: Real>(rinv: &CMat<T>, c: &CMat<T>, betas: &[T], nu: usize) -> Result<CVec<T>> {
    if c.rows() != rinv.rows() || betas.len() < c.cols() || c.cols() == 0 {
        return Err(LinalgError::DimensionMismatch(format!(
            "{}x{} constraints, {} betas, {}x{} inverse",
            c.rows(),
            c.cols(),
            betas.len(),
            rinv.rows(),
            rinv.cols()
        ))
        .into());
    }
    let cols: Vec<CVec<T>> = (0..c.cols()).map(|j| c.column(j)).collect();
    let solver = LcmpSolve::new(rinv, &cols)?;
    Ok(solver.filter(&constraint_rhs(&cols, betas, nu)))
}

/// `max_j |h^H c_j / c_j[nu] - beta_j|`: distance from the constraints with
/// each RTF normalized to the reference `nu`.
pub fn constraint_violation<T: Real>(h: &[C<T>], cols: &[CVec<T>], betas: &[T], nu: usize) -> T {
    cols.iter()
        .zip(betas)
        .map(|(c, &beta)| {
            let hc = h.iter().zip(c.iter()).fold(czero(), |acc: C<T>, (hi, ci)| acc + hi.conj() * ci);
            (hc / c[nu] - beta).norm()
        })
        .fold(T::zero(), T::max)
}

/// Diagnostics of one online frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport<T> {
    pub outputs: [C<T>; 2],
    pub weight: T,
    /// Filters were held because the constraint Gram matrix was singular.
    pub singular: bool,
    pub n_constraints: usize,
    /// Largest constraint error over both references.
    pub violation: T,
}

#[derive(Debug, Clone)]
pub struct BinBeamformerState<T> {
    n_mics: usize,
    filter_len: usize,
    delay: usize,
    p: T,
    gamma: T,
    betas: Vec<T>,
    refs: [usize; 2],
    rinv: CMat<T>,
    ring: FrameRing<T>,
    ybar: Vec<C<T>>,
    scratch: UpdateScratch<T>,
    h: [CVec<T>; 2],
    power_sum: T,
    frames: usize,
    forced_weight: Option<T>,
}

impl<T: Real> BinBeamformerState<T> {
    /// Starts from `R^{-1} = I / delta` and filters selecting the reference
    /// microphones.
    pub fn new(cfg: &BeamformerConfig, delta: f64) -> Result<Self> {
        cfg.validate()?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(BeamformerError::ConfigInvalid(format!("initial loading must be positive, got {delta}")));
        }
        let d = cfg.stack_dim();
        let mut rinv = CMat::zeros(d, d);
        rinv.add_scaled_identity(T::lit(1.0 / delta));
        let refs = [cfg.ref_mics.0, cfg.ref_mics.1];
        Ok(Self {
            n_mics: cfg.n_mics,
            filter_len: cfg.filter_len,
            delay: cfg.delay,
            p: T::lit(cfg.p),
            gamma: T::lit(cfg.gamma),
            betas: cfg.betas().into_iter().map(T::lit).collect(),
            refs,
            rinv,
            ring: FrameRing::new(cfg.n_mics, cfg.filter_len.saturating_sub(1)),
            ybar: vec![czero(); d],
            scratch: UpdateScratch::default(),
            h: refs.map(|r| CVec::basis(d, r)),
            power_sum: T::zero(),
            frames: 0,
            forced_weight: None,
        })
    }

    pub fn rinv(&self) -> &CMat<T> {
        &self.rinv
    }

    pub fn filters(&self) -> &[CVec<T>; 2] {
        &self.h
    }

    /// Overrides the IRLS weights (all frames get `w`); `None` restores them.
    pub fn force_weight(&mut self, w: Option<T>) {
        self.forced_weight = w;
    }

    /// One frame: stack, provisional outputs with the previous filters,
    /// weight, inverse update, constraint refresh, filter solve, outputs.
    /// Missing RTFs fall back to the reference selector (target) or drop the
    /// constraint (interferer).
    pub fn online_step(
        &mut self,
        y: &[C<T>],
        rtf_target: Option<&[C<T>]>,
        rtf_interferer: Option<&[C<T>]>,
    ) -> Result<StepReport<T>> {
        debug_assert_eq!(y.len(), self.n_mics);
        stack(&self.ring, y, self.filter_len, self.delay, &mut self.ybar);
        self.ring.push(y);

        let provisional = [dot_slices(&self.h[0], &self.ybar), dot_slices(&self.h[1], &self.ybar)];
        let d = self.ybar.len();
        let stacked_power = self.ybar.iter().map(|v| v.norm_sqr()).sum::<T>() / T::from_usize_lossy(d);
        self.power_sum = self.power_sum + stacked_power;
        self.frames += 1;
        let floor =
            (T::lit(WEIGHT_FLOOR) * self.power_sum / T::from_usize_lossy(self.frames)).max(T::min_positive_value());
        let weight =
            self.forced_weight.unwrap_or_else(|| estimate_weight(provisional[0], provisional[1], self.p, floor));
        rank_one_inverse_update_in_place(&mut self.rinv, &self.ybar, weight, self.gamma, &mut self.scratch)?;

        let m = self.n_mics;
        let interferer = rtf_interferer.map(|v| CVec::from_vec(v.to_vec()));
        let (mut singular, mut violation, mut n_constraints) = (false, T::zero(), 0);
        let mut new_h = self.h.clone();
        let solved: Result<()> = (|| {
            match rtf_target {
                Some(t) => {
                    let mut cols = vec![CVec::from_vec(t.to_vec())];
                    cols.extend(interferer.clone());
                    let solver = LcmpSolve::new(&self.rinv, &cols)?;
                    for (k, &nu) in self.refs.iter().enumerate() {
                        new_h[k] = solver.filter(&constraint_rhs(&cols, &self.betas, nu));
                        violation = violation.max(constraint_violation(&new_h[k], &cols, &self.betas, nu));
                    }
                    n_constraints = cols.len();
                }
                None => {
                    for (k, &nu) in self.refs.iter().enumerate() {
                        let mut cols = vec![CVec::basis(m, nu)];
                        cols.extend(interferer.clone());
                        let solver = LcmpSolve::new(&self.rinv, &cols)?;
                        new_h[k] = solver.filter(&constraint_rhs(&cols, &self.betas, nu));
                        violation = violation.max(constraint_violation(&new_h[k], &cols, &self.betas, nu));
                        n_constraints = cols.len();
                    }
                }
            }
            Ok(())
        })();
        match solved {
            Ok(()) => self.h = new_h,
            Err(BeamformerError::SingularConstraintGram { .. }) => {
                singular = true;
                violation = T::zero();
            }
            Err(e) => return Err(e),
        }

        let outputs = [0, 1].map(|k| dot_slices(&self.h[k], &self.ybar));
        Ok(StepReport { outputs, weight, singular, n_constraints, violation })
    }
}

fn dot_slices<T: Real>(h: &[C<T>], y: &[C<T>]) -> C<T> {
    h.iter().zip(y).fold(czero(), |acc, (a, b)| acc + a.conj() * b)
}

/// Result of the time-invariant (non-adaptive) solver for one bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput<T> {
    pub outputs: [Vec<C<T>>; 2],
    pub filters: [CVec<T>; 2],
    pub weights: Vec<T>,
    /// `sum_nu sum_n |d_nu,n|^p` after each IRLS iteration.
    pub objective: Vec<f64>,
    /// `sum_n (|d_L,n|^2 + |d_R,n|^2)^(p/2)`, the cost the shared weights
    /// majorize, after each iteration.
    pub joint_objective: Vec<f64>,
    pub max_violation: T,
}

/// Time-invariant filters from the growing-window STCM `delta I + sum w_n
/// y_n y_n^H`, iterating IRLS `n_irls_iters` times from unit weights.
pub fn batch_solve<T: Real>(
    frames: &[Vec<C<T>>],
    rtf_target: &[C<T>],
    rtf_interferer: Option<&[C<T>]>,
    cfg: &BeamformerConfig,
    delta: f64,
) -> Result<BatchOutput<T>> {
    cfg.validate()?;
    let d = cfg.stack_dim();
    let n = frames.len();
    let p = T::lit(cfg.p);
    let betas: Vec<T> = cfg.betas().into_iter().map(T::lit).collect();
    let refs = [cfg.ref_mics.0, cfg.ref_mics.1];

    let mut ring = FrameRing::new(cfg.n_mics, cfg.filter_len.saturating_sub(1));
    let mut stacked = vec![czero::<T>(); n * d];
    for (t, y) in frames.iter().enumerate() {
        stack(&ring, y, cfg.filter_len, cfg.delay, &mut stacked[t * d..(t + 1) * d]);
        ring.push(y);
    }
    let mean_power = stacked.iter().map(|v| v.norm_sqr()).sum::<T>() / T::from_usize_lossy((n * d).max(1));
    let floor = (T::lit(WEIGHT_FLOOR) * mean_power).max(T::min_positive_value());

    let mut cols = vec![CVec::from_vec(rtf_target.to_vec())];
    if let Some(i) = rtf_interferer {
        cols.push(CVec::from_vec(i.to_vec()));
    }
    let mut weights = vec![T::one(); n];
    let mut outputs = [vec![czero(); n], vec![czero(); n]];
    let mut filters = refs.map(|r| CVec::basis(d, r));
    let (mut objective, mut joint_objective) = (Vec::new(), Vec::new());
    let mut max_violation = T::zero();

    for _ in 0..cfg.n_irls_iters {
        let mut r = CMat::<T>::zeros(d, d);
        r.add_scaled_identity(T::lit(delta));
        {
            let data = r.as_mut_slice();
            for (t, &w) in weights.iter().enumerate() {
                let yb = &stacked[t * d..(t + 1) * d];
                for i in 0..d {
                    let wi = yb[i] * w;
                    let row = &mut data[i * d..(i + 1) * d];
                    for j in i..d {
                        row[j] = row[j] + wi * yb[j].conj();
                    }
                }
            }
            for i in 0..d {
                data[i * d + i] = C::new(data[i * d + i].re, T::zero());
                for j in i + 1..d {
                    data[j * d + i] = data[i * d + j].conj();
                }
            }
        }
        let chol = Cholesky::factor(&r)?;
        // With the Cholesky factor at hand the solver only needs R^{-1} C.
        let rinv_c: Vec<CVec<T>> = cols
            .iter()
            .map(|c| {
                let mut v = CVec::zeros(d);
                v[..c.len()].copy_from_slice(c);
                chol.solve_in_place(&mut v);
                v
            })
            .collect();
        let solver = LcmpSolve::from_products(&cols, rinv_c)?;
        max_violation = T::zero();
        for (k, &nu) in refs.iter().enumerate() {
            filters[k] = solver.filter(&constraint_rhs(&cols, &betas, nu));
            max_violation = max_violation.max(constraint_violation(&filters[k], &cols, &betas, nu));
        }
        let (mut obj, mut joint) = (0.0, 0.0);
        for t in 0..n {
            let yb = &stacked[t * d..(t + 1) * d];
            let dl = dot_slices(&filters[0], yb);
            let dr = dot_slices(&filters[1], yb);
            outputs[0][t] = dl;
            outputs[1][t] = dr;
            let pf = cfg.p;
            obj += dl.norm().to_f64_lossy().powf(pf) + dr.norm().to_f64_lossy().powf(pf);
            joint += (dl.norm_sqr() + dr.norm_sqr()).to_f64_lossy().powf(pf / 2.0);
            weights[t] = estimate_weight(dl, dr, p, floor);
        }
        objective.push(obj);
        joint_objective.push(joint);
    }
    Ok(BatchOutput { outputs, filters, weights, objective, joint_objective, max_violation })
}

impl<'a, T: Real> LcmpSolve<'a, T> {
    fn from_products(cols: &'a [CVec<T>], x: Vec<CVec<T>>) -> Result<Self> {
        let j = cols.len();
        let mut g = CMat::from_fn(j, j, |a, b| {
            cols[a].iter().zip(x[b].iter()).fold(czero(), |acc, (ca, xb)| acc + ca.conj() * xb)
        });
        g.hermitianize();
        let condition = gram_condition(&g)?;
        if !(condition <= MAX_GRAM_CONDITION) {
            return Err(BeamformerError::SingularConstraintGram { condition });
        }
        let gram =
            Cholesky::factor(&g).map_err(|_| BeamformerError::SingularConstraintGram { condition: f64::INFINITY })?;
        Ok(Self { cols, x, gram })
    }
}
