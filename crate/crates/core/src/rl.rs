//! Q-learning and TD(0) as linear stochastic approximation.
//!
//! Each observed transition becomes a sample `(A_{n+1}, b_{n+1})` and is
//! fed to the generic steppers in [`crate::sa`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::mdp::{Mdp, Transition};
use crate::sa::{
    Algorithm, LinearSample, Momentum, NesaForm, SaGain, SampleMatrix, StepSize, Stepper,
    SNR_PINV_RTOL,
};

/// A transition together with the greedy action at the next state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QEvent {
    pub x: usize,
    pub pair: usize,
    pub x_next: usize,
    /// Greedy pair at `x_next` under the current `θ`.
    pub pi_next: usize,
}

impl QEvent {
    pub fn new(mdp: &Mdp, t: Transition, theta: &Vector) -> Self {
        Self {
            x: t.x,
            pair: t.pair,
            x_next: t.x_next,
            pi_next: mdp.greedy(theta, t.x_next),
        }
    }
}

/// `A = φ(x,u)[βφ(x',π(x')) − φ(x,u)]ᵀ`, `b = −c(x,u) φ(x,u)`, so that
/// `Aθ − b` is `φ(x,u)` times the temporal difference.
pub fn q_sample(mdp: &Mdp, e: &QEvent) -> LinearSample {
    let d = mdp.d();
    let (i, j) = (e.pair, e.pi_next);
    let entries = if i == j {
        vec![(i, i, mdp.beta() - 1.0)]
    } else {
        vec![(i, j, mdp.beta()), (i, i, -1.0)]
    };
    let mut b = Vector::zeros(d);
    b[i] = -mdp.pair(i).cost;
    LinearSample {
        a: SampleMatrix::Sparse { dim: d, entries },
        b,
    }
}

/// Visit counts behind the diagonal gain `D̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGain {
    counts: Vec<usize>,
    n: usize,
}

impl DiagonalGain {
    pub fn new(d: usize) -> Self {
        Self {
            counts: vec![0; d],
            n: 0,
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Records a visit to `pair`.
    pub fn record(&mut self, pair: usize) {
        self.counts[pair] += 1;
        self.n += 1;
    }

    /// `D̂(i,i) = n / countᵢ`, zero for unvisited pairs. Under clock
    /// sampling this is exactly `d I` at the end of every sweep.
    pub fn diagonal(&self) -> Vector {
        let n = self.n as f64;
        Vector::from_iterator(
            self.counts.len(),
            self.counts
                .iter()
                .map(|&c| if c == 0 { 0.0 } else { n / c as f64 }),
        )
    }
}

/// Records the event's pair in `gain`.
pub fn update_diagonal_gain(gain: &mut DiagonalGain, e: &QEvent) {
    gain.record(e.pair);
}

/// The Q-learning variants compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QAlgorithm {
    /// `α D̂ f`
    Watkins,
    /// `−α Â⁺ f`
    Snr,
    /// `(I + Â)Δθ + α f`
    PolSa,
    /// `(I + D̂Â)Δθ + α D̂ f`
    PolSaD,
    /// `(I + A_{n+1})Δθ + α f`
    NeSa,
}

impl QAlgorithm {
    pub const ALL: [QAlgorithm; 5] = [
        QAlgorithm::Watkins,
        QAlgorithm::Snr,
        QAlgorithm::PolSa,
        QAlgorithm::PolSaD,
        QAlgorithm::NeSa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QAlgorithm::Watkins => "watkins",
            QAlgorithm::Snr => "snr",
            QAlgorithm::PolSa => "polsa",
            QAlgorithm::PolSaD => "polsa-d",
            QAlgorithm::NeSa => "nesa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown Q-learning algorithm `{s}`")))
    }

    /// Generic stepper configuration. PolSA uses `ζ = 1`.
    pub fn algorithm(self) -> Algorithm {
        match self {
            QAlgorithm::Watkins => Algorithm::Sa {
                gain: SaGain::Diagonal,
            },
            QAlgorithm::Snr => Algorithm::Snr {
                pinv_rtol: SNR_PINV_RTOL,
            },
            QAlgorithm::PolSa => Algorithm::PolSa {
                zeta: 1.0,
                momentum: Momentum::Estimated,
            },
            QAlgorithm::PolSaD => Algorithm::PolSaD,
            QAlgorithm::NeSa => Algorithm::NeSa {
                zeta: 1.0,
                form: NesaForm::Matrix,
            },
        }
    }
}

/// One Q-learning update from the transition `t`. `diag` is the current
/// diagonal gain, already including this event.
pub fn q_step(
    stepper: &mut Stepper,
    mdp: &Mdp,
    t: Transition,
    schedule: &impl StepSize,
    diag: &Vector,
) -> Result<QEvent> {
    let e = QEvent::new(mdp, t, &stepper.state.theta);
    let sample = q_sample(mdp, &e);
    stepper.step(&sample, schedule, Some(diag))?;
    Ok(e)
}

/// Linearly parameterized value prediction `h(x) ≈ ψ(x)ᵀθ` for a Markov
/// chain with per-state cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TdModel {
    /// Row `x` is `ψ(x)ᵀ`.
    features: Mat,
    cost: Vector,
    beta: f64,
    transition: Mat,
    cumulative: Vec<Vec<f64>>,
}

/// Largest feature dimension accepted.
pub const TD_MAX_DIM: usize = 256;

impl TdModel {
    pub fn new(features: Mat, cost: Vector, beta: f64, transition: Mat) -> Result<Self> {
        let l = transition.nrows();
        if transition.ncols() != l || features.nrows() != l || cost.len() != l {
            return Err(Error::Shape(format!(
                "TD model: {} states in P, {} feature rows, {} costs",
                l,
                features.nrows(),
                cost.len()
            )));
        }
        if features.ncols() == 0 || features.ncols() > TD_MAX_DIM {
            return Err(Error::Shape(format!(
                "TD model: feature dimension {} not in 1..={TD_MAX_DIM}",
                features.ncols()
            )));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidModel(format!("discount {beta} is not in (0,1)")));
        }
        if features.iter().chain(cost.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("TD model"));
        }
        let mut cumulative = Vec::with_capacity(l);
        for x in 0..l {
            let row = transition.row(x);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!("row {x} of P is not a distribution")));
            }
            let mut acc = 0.0;
            cumulative.push(
                row.iter()
                    .map(|&p| {
                        acc += p;
                        acc
                    })
                    .collect(),
            );
        }
        Ok(Self {
            features,
            cost,
            beta,
            transition,
            cumulative,
        })
    }

    /// Random walk on a cycle of `l` states moving to `x−1`, `x`, `x+1` with
    /// equal probability, one-hot features.
    pub fn cycle(l: usize, beta: f64, cost: Vector) -> Result<Self> {
        if l < 3 {
            return Err(Error::InvalidModel("cycle needs at least three states".into()));
        }
        let mut p = Mat::zeros(l, l);
        for x in 0..l {
            for y in [x + l - 1, x, x + 1] {
                p[(x, y % l)] += 1.0 / 3.0;
            }
        }
        Self::new(Mat::identity(l, l), cost, beta, p)
    }

    /// Two states, each jumping to either with probability ½.
    pub fn two_state(beta: f64, cost: Vector) -> Result<Self> {
        Self::new(Mat::identity(2, 2), cost, beta, Mat::from_element(2, 2, 0.5))
    }

    /// Four-state cycle with costs `(0, ½, 1, ½)` and `β = 0.5`.
    pub fn cycle_preset() -> Self {
        Self::cycle(4, 0.5, Vector::from_vec(vec![0.0, 0.5, 1.0, 0.5])).expect("valid preset")
    }

    /// Scalar gain that makes plain TD(0) with `α_n = g/n` converge at the
    /// `1/√n` rate: `g` times the smallest decay rate of `Ā` is at least one.
    pub fn td0_gain(&self) -> Result<f64> {
        let (a, _) = self.mean_system()?;
        let slowest = crate::linalg::eigenvalues(&a)?
            .iter()
            .map(|z| -z.re)
            .fold(f64::INFINITY, f64::min);
        if !(slowest > 0.0) {
            return Err(Error::StabilityFailure("TD mean matrix is not Hurwitz".into()));
        }
        Ok(1.0 / slowest)
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cost(&self) -> &Vector {
        &self.cost
    }

    pub fn transition(&self) -> &Mat {
        &self.transition
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn psi(&self, x: usize) -> Vector {
        self.features.row(x).transpose()
    }

    pub fn sample_next(&self, x: usize, rng: &mut impl Rng) -> usize {
        let cum = &self.cumulative[x];
        let u = rng.gen::<f64>() * cum[cum.len() - 1];
        cum.partition_point(|&c| c <= u).min(cum.len() - 1)
    }

    /// Stationary law `π = πP`.
    pub fn stationary(&self) -> Result<Vector> {
        let l = self.n_states();
        let mut m = self.transition.transpose() - Mat::identity(l, l);
        m.row_mut(l - 1).fill(1.0);
        let mut rhs = Vector::zeros(l);
        rhs[l - 1] = 1.0;
        m.lu()
            .solve(&rhs)
            .ok_or(Error::Singular("stationary law of a reducible chain"))
    }

    /// Exact value function `h = (I − βP)⁻¹ c`.
    pub fn value_function(&self) -> Result<Vector> {
        let l = self.n_states();
        (Mat::identity(l, l) - &self.transition * self.beta)
            .lu()
            .solve(&self.cost)
            .ok_or(Error::Singular("I - βP"))
    }

    /// Steady-state mean `(Ā, b̄)` of the TD samples.
    pub fn mean_system(&self) -> Result<(Mat, Vector)> {
        let pi = self.stationary()?;
        let psi = &self.features;
        let dpi = Mat::from_diagonal(&pi);
        let l = self.n_states();
        let a = psi.transpose() * &dpi * (&self.transition * self.beta - Mat::identity(l, l)) * psi;
        let b = -(psi.transpose() * &dpi * &self.cost);
        Ok((a, b))
    }

    /// TD(0) target: the root of `Āθ = b̄`. Equals `h` for one-hot features.
    pub fn theta_star(&self) -> Result<Vector> {
        let (a, b) = self.mean_system()?;
        a.lu().solve(&b).ok_or(Error::Singular("TD mean matrix"))
    }
}

/// `A = ψ(x_prev)[βψ(x) − ψ(x_prev)]ᵀ`, `b = −ψ(x_prev) c(x_prev)`.
pub fn td_sample(model: &TdModel, x_prev: usize, x: usize) -> LinearSample {
    let p = model.psi(x_prev);
    let q = model.psi(x) * model.beta - &p;
    let a = &p * q.transpose();
    let b = &p * -model.cost[x_prev];
    LinearSample::dense(a, b)
}

/// Stationary trajectory of the chain, emitting `(x_prev, x)`.
#[derive(Debug, Clone)]
pub struct TdChain {
    state: usize,
}

impl TdChain {
    /// Starts from a uniformly random state.
    pub fn new(model: &TdModel, rng: &mut impl Rng) -> Self {
        Self {
            state: rng.gen_range(0..model.n_states()),
        }
    }

    pub fn next_pair(&mut self, model: &TdModel, rng: &mut impl Rng) -> (usize, usize) {
        let prev = self.state;
        self.state = model.sample_next(prev, rng);
        (prev, self.state)
    }
}

/// The TD(0) family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TdAlgorithm {
    Td0,
    Lstd0,
    PolSaTd0 { zeta: f64 },
    NeSaTd0 { zeta: f64 },
}

impl TdAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            TdAlgorithm::Td0 => "td0",
            TdAlgorithm::Lstd0 => "lstd0",
            TdAlgorithm::PolSaTd0 { .. } => "polsa-td0",
            TdAlgorithm::NeSaTd0 { .. } => "nesa-td0",
        }
    }

    /// Parses a name; momentum variants take `zeta`.
    pub fn parse(s: &str, zeta: f64) -> Result<Self> {
        match s {
            "td0" => Ok(TdAlgorithm::Td0),
            "lstd0" => Ok(TdAlgorithm::Lstd0),
            "polsa-td0" => Ok(TdAlgorithm::PolSaTd0 { zeta }),
            "nesa-td0" => Ok(TdAlgorithm::NeSaTd0 { zeta }),
            _ => Err(Error::InvalidArgument(format!("unknown TD algorithm `{s}`"))),
        }
    }

    /// TD(0) is plain SA with `G = I`; the step size carries any scalar gain.
    pub fn algorithm(&self) -> Algorithm {
        match *self {
            TdAlgorithm::Td0 => Algorithm::Sa {
                gain: SaGain::Identity,
            },
            TdAlgorithm::Lstd0 => Algorithm::snr(),
            TdAlgorithm::PolSaTd0 { zeta } => Algorithm::polsa(zeta),
            TdAlgorithm::NeSaTd0 { zeta } => Algorithm::nesa(zeta),
        }
    }
}

/// One TD-family update from the pair `(x_prev, x)`.
pub fn td_step(
    stepper: &mut Stepper,
    model: &TdModel,
    x_prev: usize,
    x: usize,
    schedule: &impl StepSize,
) -> Result<()> {
    stepper.step(&td_sample(model, x_prev, x), schedule, None)
}
