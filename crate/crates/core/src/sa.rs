//! Stochastic-approximation steppers for linear root-finding problems.
//!
//! Every algorithm consumes a stream of [`LinearSample`]s `(A_{n+1}, b_{n+1})`
//! and evaluates the noisy function as `f_{n+1}(θ) = A_{n+1} θ − b_{n+1}`.
//! The state carries `θ_n`, the increment `Δθ_n = θ_n − θ_{n−1}` (zero at the
//! start, i.e. `θ_{−1} = θ_0`) and the running mean `Â_n` of the observed
//! `A_k`.
//!
//! Algorithms that use `Â` must see it updated with the current sample before
//! `θ` moves; [`Stepper`] enforces that order.

use crate::error::{Error, Result};
use crate::linalg::{pinv_solve, Mat, Vector};

/// Iterates whose Euclidean norm exceeds this are declared divergent.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Default relative pseudo-inverse cut-off for SNR.
pub const SNR_PINV_RTOL: f64 = 1e-8;

/// The `A_{n+1}` part of a sample, dense or as a short list of entries.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleMatrix {
    Dense(Mat),
    /// `(row, col, value)` triples; duplicates are summed.
    Sparse {
        dim: usize,
        entries: Vec<(usize, usize, f64)>,
    },
}

impl SampleMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SampleMatrix::Dense(m) => m.nrows(),
            SampleMatrix::Sparse { dim, .. } => *dim,
        }
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        match self {
            SampleMatrix::Dense(m) => m * v,
            SampleMatrix::Sparse { dim, entries } => {
                let mut out = Vector::zeros(*dim);
                for &(i, j, x) in entries {
                    out[i] += x * v[j];
                }
                out
            }
        }
    }

    /// `target += scale · A`
    pub fn add_scaled_to(&self, target: &mut Mat, scale: f64) {
        match self {
            SampleMatrix::Dense(m) => *target += m * scale,
            SampleMatrix::Sparse { entries, .. } => {
                for &(i, j, x) in entries {
                    target[(i, j)] += scale * x;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Mat {
        let d = self.dim();
        let mut m = Mat::zeros(d, d);
        self.add_scaled_to(&mut m, 1.0);
        m
    }

    /// Number of structurally nonzero entries after merging duplicates.
    pub fn nnz(&self) -> usize {
        self.to_dense().iter().filter(|x| **x != 0.0).count()
    }
}

/// One draw `(A_{n+1}, b_{n+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSample {
    pub a: SampleMatrix,
    pub b: Vector,
}

impl LinearSample {
    pub fn dense(a: Mat, b: Vector) -> Self {
        Self {
            a: SampleMatrix::Dense(a),
            b,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `f(θ) = A θ − b`
    pub fn eval(&self, theta: &Vector) -> Vector {
        self.a.mul_vec(theta) - &self.b
    }
}

/// Step-size sequence `α_n`, `n ≥ 1`.
pub trait StepSize {
    fn alpha(&self, n: usize) -> f64;
}

/// `α_n = g / (n + n0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSchedule {
    pub g: f64,
    pub n0: usize,
}

impl Default for GainSchedule {
    fn default() -> Self {
        Self { g: 1.0, n0: 0 }
    }
}

impl GainSchedule {
    pub fn new(g: f64, n0: usize) -> Result<Self> {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gain schedule needs g > 0, got {g}"
            )));
        }
        Ok(Self { g, n0 })
    }
}

impl StepSize for GainSchedule {
    fn alpha(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        self.g / (n + self.n0) as f64
    }
}

/// Constant step size, for the deterministic recursions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantStep(pub f64);

impl StepSize for ConstantStep {
    fn alpha(&self, _n: usize) -> f64 {
        self.0
    }
}

/// Running arithmetic mean of the sampled matrices, `Â_n = (1/n) Σ_{k≤n} A_k`.
///
/// Stored as the raw sum so that sparse samples update in `O(nnz)` and the
/// mean is exact up to the final division.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEstimate {
    sum: Mat,
    count: usize,
}

impl MatrixEstimate {
    pub fn zeros(d: usize) -> Self {
        Self {
            sum: Mat::zeros(d, d),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, a: &SampleMatrix) {
        a.add_scaled_to(&mut self.sum, 1.0);
        self.count += 1;
    }

    /// `Â_n`; zero before any sample.
    pub fn mean(&self) -> Mat {
        if self.count == 0 {
            self.sum.clone()
        } else {
            &self.sum / self.count as f64
        }
    }

    /// `Â_n v` without forming `Â_n`.
    pub fn mul_vec(&self, v: &Vector) -> Vector {
        if self.count == 0 {
            Vector::zeros(v.len())
        } else {
            (&self.sum * v) / self.count as f64
        }
    }
}

/// Evolving quantities of one algorithm run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub n: usize,
    pub theta: Vector,
    pub dtheta: Vector,
    pub a_hat: MatrixEstimate,
}

impl IterateState {
    /// Fresh state at `θ_0` with `Δθ_0 = 0` and `Â_0 = 0`.
    pub fn new(theta0: Vector) -> Self {
        let d = theta0.len();
        Self {
            n: 0,
            theta: theta0,
            dtheta: Vector::zeros(d),
            a_hat: MatrixEstimate::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn advance(&mut self, dtheta: Vector) {
        self.theta += &dtheta;
        self.dtheta = dtheta;
        self.n += 1;
    }

    fn check_dims(&self, sample: &LinearSample) {
        assert_eq!(sample.dim(), self.dim(), "sample dimension mismatch");
        assert_eq!(sample.a.dim(), self.dim(), "sample dimension mismatch");
    }
}

/// `Â_{n+1} = Â_n + (A_{n+1} − Â_n)/(n+1)`.
pub fn update_matrix_estimate(state: &mut IterateState, sample: &LinearSample) {
    state.check_dims(sample);
    state.a_hat.push(&sample.a);
}

/// Matrix gain for plain stochastic approximation.
#[derive(Debug, Clone, Copy)]
pub enum Gain<'a> {
    Identity,
    Scalar(f64),
    Matrix(&'a Mat),
    Diagonal(&'a Vector),
}

impl Gain<'_> {
    fn apply(&self, v: Vector) -> Vector {
        match self {
            Gain::Identity => v,
            Gain::Scalar(c) => v * *c,
            Gain::Matrix(g) => *g * v,
            Gain::Diagonal(d) => v.component_mul(d),
        }
    }
}

/// `Δθ_{n+1} = α_{n+1} G (A_{n+1} θ_n − b_{n+1})`
pub fn step_sa(
    state: &mut IterateState,
    sample: &LinearSample,
    gain: Gain<'_>,
    schedule: &impl StepSize,
) {
    state.check_dims(sample);
    let alpha = schedule.alpha(state.n + 1);
    let dtheta = gain.apply(sample.eval(&state.theta)) * alpha;
    state.advance(dtheta);
}

/// Stochastic Newton–Raphson with the estimated matrix:
/// `Δθ_{n+1} = −α_{n+1} Â_{n+1}⁺ f_{n+1}(θ_n)`.
///
/// `Â` must already include this sample.
pub fn step_snr(
    state: &mut IterateState,
    sample: &LinearSample,
    schedule: &impl StepSize,
    pinv_rtol: f64,
) {
    state.check_dims(sample);
    let alpha = schedule.alpha(state.n + 1);
    let f = sample.eval(&state.theta);
    let x = pinv_solve(&state.a_hat.mean(), &f, pinv_rtol);
    state.advance(x * -alpha);
}

/// SNR with the true mean inverse supplied:
/// `Δθ*_{n+1} = −α_{n+1} A⁻¹ f_{n+1}(θ*_n)`.
pub fn step_snr_idealized(
    state: &mut IterateState,
    sample: &LinearSample,
    a_inv: &Mat,
    schedule: &impl StepSize,
) {
    state.check_dims(sample);
    let alpha = schedule.alpha(state.n + 1);
    let f = sample.eval(&state.theta);
    state.advance(a_inv * f * -alpha);
}

/// Momentum matrix used by [`step_polsa`].
#[derive(Debug, Clone, Copy)]
pub enum PolsaMode<'a> {
    /// `(I + ζ Â_{n+1}) Δθ_n + α ζ f`
    Estimated { zeta: f64 },
    /// `(I + ζ A) Δθ_n + α ζ f`, with the true mean `A`.
    Fixed { a: &'a Mat, zeta: f64 },
    /// `(I + D Â_{n+1}) Δθ_n + α D f`, `D` diagonal.
    Diagonal { d: &'a Vector },
}

/// Matrix heavy-ball step.
pub fn step_polsa(
    state: &mut IterateState,
    sample: &LinearSample,
    schedule: &impl StepSize,
    mode: PolsaMode<'_>,
) {
    state.check_dims(sample);
    let alpha = schedule.alpha(state.n + 1);
    let f = sample.eval(&state.theta);
    let dtheta = match mode {
        PolsaMode::Estimated { zeta } => {
            let m = state.a_hat.mul_vec(&state.dtheta);
            &state.dtheta + (m + f * alpha) * zeta
        }
        PolsaMode::Fixed { a, zeta } => {
            let m = a * &state.dtheta;
            &state.dtheta + (m + f * alpha) * zeta
        }
        PolsaMode::Diagonal { d } => {
            let m = state.a_hat.mul_vec(&state.dtheta);
            &state.dtheta + (m + f * alpha).component_mul(d)
        }
    };
    state.advance(dtheta);
}

/// Nesterov-style step with two evaluations of the current sample:
/// `Δθ_{n+1} = Δθ_n + ζ [f(θ_n) − f(θ_{n−1})] + ζ α_{n+1} f(θ_n)`.
pub fn step_nesa(
    state: &mut IterateState,
    sample: &LinearSample,
    schedule: &impl StepSize,
    zeta: f64,
) {
    state.check_dims(sample);
    let alpha = schedule.alpha(state.n + 1);
    let f_now = sample.eval(&state.theta);
    let theta_prev = &state.theta - &state.dtheta;
    let f_prev = sample.eval(&theta_prev);
    let dtheta = &state.dtheta + (&f_now - f_prev) * zeta + f_now * (zeta * alpha);
    state.advance(dtheta);
}

/// NeSA in matrix-momentum form, `(I + ζ A_{n+1}) Δθ_n + ζ α f(θ_n)`.
/// Identical to [`step_nesa`] for linear samples and cheaper for sparse ones.
pub fn step_nesa_matrix(
    state: &mut IterateState,
    sample: &LinearSample,
    schedule: &impl StepSize,
    zeta: f64,
) {
    state.check_dims(sample);
    let alpha = schedule.alpha(state.n + 1);
    let f = sample.eval(&state.theta);
    let m = sample.a.mul_vec(&state.dtheta);
    let dtheta = &state.dtheta + (m + f * alpha) * zeta;
    state.advance(dtheta);
}

/// The algorithm families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlgorithmKind {
    Sa,
    Snr,
    PolSa,
    PolSaD,
    NeSa,
}

/// Gain choice for [`Algorithm::Sa`].
#[derive(Debug, Clone, PartialEq)]
pub enum SaGain {
    Identity,
    Scalar(f64),
    Matrix(Mat),
    /// Diagonal gain supplied by the caller at every step (e.g. visit counts).
    Diagonal,
}

/// Where PolSA takes its momentum matrix from.
#[derive(Debug, Clone, PartialEq)]
pub enum Momentum {
    Estimated,
    Fixed(Mat),
}

/// Which of the two equivalent NeSA forms to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NesaForm {
    TwoEvaluation,
    Matrix,
}

/// A fully configured algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    Sa { gain: SaGain },
    Snr { pinv_rtol: f64 },
    SnrIdealized { a_inv: Mat },
    PolSa { zeta: f64, momentum: Momentum },
    PolSaD,
    NeSa { zeta: f64, form: NesaForm },
}

impl Algorithm {
    pub fn snr() -> Self {
        Algorithm::Snr {
            pinv_rtol: SNR_PINV_RTOL,
        }
    }

    pub fn polsa(zeta: f64) -> Self {
        Algorithm::PolSa {
            zeta,
            momentum: Momentum::Estimated,
        }
    }

    pub fn nesa(zeta: f64) -> Self {
        Algorithm::NeSa {
            zeta,
            form: NesaForm::TwoEvaluation,
        }
    }

    pub fn kind(&self) -> AlgorithmKind {
        match self {
            Algorithm::Sa { .. } => AlgorithmKind::Sa,
            Algorithm::Snr { .. } | Algorithm::SnrIdealized { .. } => AlgorithmKind::Snr,
            Algorithm::PolSa { .. } => AlgorithmKind::PolSa,
            Algorithm::PolSaD => AlgorithmKind::PolSaD,
            Algorithm::NeSa { .. } => AlgorithmKind::NeSa,
        }
    }

    /// Whether the step reads `Â_{n+1}`.
    pub fn uses_estimate(&self) -> bool {
        matches!(
            self,
            Algorithm::Snr { .. }
                | Algorithm::PolSa {
                    momentum: Momentum::Estimated,
                    ..
                }
                | Algorithm::PolSaD
        )
    }

    /// Whether the step needs a caller-supplied diagonal gain.
    pub fn uses_diagonal(&self) -> bool {
        matches!(
            self,
            Algorithm::Sa {
                gain: SaGain::Diagonal
            } | Algorithm::PolSaD
        )
    }
}

/// An algorithm bound to its state. Updates `Â` before `θ` and guards
/// against divergence.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub algorithm: Algorithm,
    pub state: IterateState,
}

impl Stepper {
    pub fn new(algorithm: Algorithm, theta0: Vector) -> Self {
        Self {
            algorithm,
            state: IterateState::new(theta0),
        }
    }

    /// One step. `diag` is required by [`Algorithm::uses_diagonal`] algorithms.
    pub fn step(
        &mut self,
        sample: &LinearSample,
        schedule: &impl StepSize,
        diag: Option<&Vector>,
    ) -> Result<()> {
        if self.algorithm.uses_estimate() {
            update_matrix_estimate(&mut self.state, sample);
        }
        let need_diag = || {
            diag.ok_or_else(|| {
                Error::InvalidArgument("diagonal gain required but not supplied".into())
            })
        };
        let st = &mut self.state;
        match &self.algorithm {
            Algorithm::Sa { gain } => {
                let g = match gain {
                    SaGain::Identity => Gain::Identity,
                    SaGain::Scalar(c) => Gain::Scalar(*c),
                    SaGain::Matrix(m) => Gain::Matrix(m),
                    SaGain::Diagonal => Gain::Diagonal(need_diag()?),
                };
                step_sa(st, sample, g, schedule)
            }
            Algorithm::Snr { pinv_rtol } => step_snr(st, sample, schedule, *pinv_rtol),
            Algorithm::SnrIdealized { a_inv } => step_snr_idealized(st, sample, a_inv, schedule),
            Algorithm::PolSa { zeta, momentum } => {
                let mode = match momentum {
                    Momentum::Estimated => PolsaMode::Estimated { zeta: *zeta },
                    Momentum::Fixed(a) => PolsaMode::Fixed { a, zeta: *zeta },
                };
                step_polsa(st, sample, schedule, mode)
            }
            Algorithm::PolSaD => step_polsa(
                st,
                sample,
                schedule,
                PolsaMode::Diagonal { d: need_diag()? },
            ),
            Algorithm::NeSa { zeta, form } => match form {
                NesaForm::TwoEvaluation => step_nesa(st, sample, schedule, *zeta),
                NesaForm::Matrix => step_nesa_matrix(st, sample, schedule, *zeta),
            },
        }
        check_finite(st)
    }
}

fn check_finite(state: &IterateState) -> Result<()> {
    let norm = state.theta.norm();
    if !norm.is_finite() || norm > DIVERGENCE_BOUND || !state.dtheta.norm().is_finite() {
        return Err(Error::Diverged { step: state.n });
    }
    Ok(())
}

/// Source of samples for [`run`]. Receives the current iterate so that
/// state-dependent samples are possible.
pub trait SampleOracle {
    fn sample(&mut self, theta: &Vector) -> LinearSample;
}

impl<F: FnMut(&Vector) -> LinearSample> SampleOracle for F {
    fn sample(&mut self, theta: &Vector) -> LinearSample {
        self(theta)
    }
}

/// Iterate values recorded at step `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub n: usize,
    pub theta: Vector,
    pub dtheta: Vector,
}

impl Snapshot {
    pub fn of(state: &IterateState) -> Self {
        Self {
            n: state.n,
            theta: state.theta.clone(),
            dtheta: state.dtheta.clone(),
        }
    }
}

/// Runs one algorithm for `n_steps` and records snapshots at the requested
/// step indices (0 means the initial state). Indices beyond `n_steps` are
/// ignored.
pub fn run(
    algorithm: Algorithm,
    oracle: &mut impl SampleOracle,
    schedule: &impl StepSize,
    theta0: Vector,
    n_steps: usize,
    snapshot_indices: &[usize],
) -> Result<Vec<Snapshot>> {
    if algorithm.uses_diagonal() {
        return Err(Error::InvalidArgument(
            "run() cannot supply a diagonal gain; drive the Stepper directly".into(),
        ));
    }
    let mut wanted: Vec<usize> = snapshot_indices
        .iter()
        .copied()
        .filter(|&n| n <= n_steps)
        .collect();
    wanted.sort_unstable();
    wanted.dedup();

    let mut stepper = Stepper::new(algorithm, theta0);
    let mut out = Vec::with_capacity(wanted.len());
    let mut next = wanted.iter().peekable();
    if next.peek() == Some(&&0) {
        out.push(Snapshot::of(&stepper.state));
        next.next();
    }
    for _ in 0..n_steps {
        let sample = oracle.sample(&stepper.state.theta);
        stepper.step(&sample, schedule, None)?;
        if next.peek() == Some(&&stepper.state.n) {
            out.push(Snapshot::of(&stepper.state));
            next.next();
        }
    }
    Ok(out)
}
