//! Signals that carry their own linear dependence on the episode's random
//! variables.
//!
//! Every quantity a receiver or transmitter computes during an episode is a
//! linear combination of independent circular Gaussians: the transmitted
//! symbols (variance `P`) and the noise samples (variance `N0`). A
//! [`Tracked`] value holds the realized number together with that coefficient
//! vector, so the decoder's effective observation model falls out of the same
//! arithmetic that produces the estimate.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

/// The two phase-1 slots of a pairing event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    T1,
    T2,
}

impl Slot {
    fn offset(self) -> usize {
        match self {
            Slot::T1 => 0,
            Slot::T2 => 1,
        }
    }
}

/// What kind of random variable sits at a coordinate of a [`VarSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symbol { slot: Slot, user: usize },
    Phase1Noise { slot: Slot, receiver: usize },
    Phase2Noise { receiver: usize, phase2_slot: usize },
}

/// Coordinate layout for one episode with `K` users:
/// `[x(t1); x(t2); z(t1); z(t2); z_phase2 (receiver-major)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarSpace {
    num_users: usize,
}

impl VarSpace {
    pub fn new(num_users: usize) -> Self {
        Self { num_users }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn dim(&self) -> usize {
        4 * self.num_users + self.num_users * self.num_users
    }

    pub fn symbol(&self, slot: Slot, user: usize) -> usize {
        debug_assert!(user < self.num_users);
        slot.offset() * self.num_users + user
    }

    pub fn phase1_noise(&self, slot: Slot, receiver: usize) -> usize {
        debug_assert!(receiver < self.num_users);
        2 * self.num_users + slot.offset() * self.num_users + receiver
    }

    pub fn phase2_noise(&self, receiver: usize, phase2_slot: usize) -> usize {
        debug_assert!(receiver < self.num_users && phase2_slot < self.num_users);
        4 * self.num_users + receiver * self.num_users + phase2_slot
    }

    pub fn kind(&self, index: usize) -> VarKind {
        let k = self.num_users;
        let slot = |block: usize| if block == 0 { Slot::T1 } else { Slot::T2 };
        match index {
            i if i < 2 * k => VarKind::Symbol { slot: slot(i / k), user: i % k },
            i if i < 4 * k => {
                let i = i - 2 * k;
                VarKind::Phase1Noise { slot: slot(i / k), receiver: i % k }
            }
            i => {
                let i = i - 4 * k;
                VarKind::Phase2Noise { receiver: i / k, phase2_slot: i % k }
            }
        }
    }

    /// Variance of the coordinate under transmit power `power` and noise
    /// variance `noise_variance`.
    pub fn variance(&self, index: usize, power: f64, noise_variance: f64) -> f64 {
        match self.kind(index) {
            VarKind::Symbol { .. } => power,
            _ => noise_variance,
        }
    }
}

/// A realized complex value plus its coefficients over a [`VarSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tracked {
    value: Complex64,
    form: Vec<Complex64>,
}

impl Tracked {
    pub fn zero(space: &VarSpace) -> Self {
        Self {
            value: Complex64::new(0.0, 0.0),
            form: vec![Complex64::new(0.0, 0.0); space.dim()],
        }
    }

    /// The basis variable at `index`, realized as `value`.
    pub fn variable(space: &VarSpace, index: usize, value: Complex64) -> Self {
        let mut t = Self::zero(space);
        t.form[index] = Complex64::new(1.0, 0.0);
        t.value = value;
        t
    }

    pub fn value(&self) -> Complex64 {
        self.value
    }

    pub fn coefficient(&self, index: usize) -> Complex64 {
        self.form[index]
    }

    pub fn form(&self) -> &[Complex64] {
        &self.form
    }

    fn zip_with(mut self, rhs: &Tracked, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        debug_assert_eq!(self.form.len(), rhs.form.len());
        self.value = f(self.value, rhs.value);
        for (a, b) in self.form.iter_mut().zip(&rhs.form) {
            *a = f(*a, *b);
        }
        self
    }

    fn map(mut self, f: impl Fn(Complex64) -> Complex64) -> Self {
        self.value = f(self.value);
        for a in &mut self.form {
            *a = f(*a);
        }
        self
    }
}

impl Add for Tracked {
    type Output = Tracked;
    fn add(self, rhs: Tracked) -> Tracked {
        self.zip_with(&rhs, |a, b| a + b)
    }
}

impl Sub for Tracked {
    type Output = Tracked;
    fn sub(self, rhs: Tracked) -> Tracked {
        self.zip_with(&rhs, |a, b| a - b)
    }
}

impl Neg for Tracked {
    type Output = Tracked;
    fn neg(self) -> Tracked {
        self.map(|a| -a)
    }
}

impl Mul<Complex64> for Tracked {
    type Output = Tracked;
    fn mul(self, rhs: Complex64) -> Tracked {
        self.map(|a| a * rhs)
    }
}

impl Div<Complex64> for Tracked {
    type Output = Tracked;
    fn div(self, rhs: Complex64) -> Tracked {
        self.map(|a| a / rhs)
    }
}

/// Arithmetic shared by plain numbers and [`Tracked`] values, so protocol
/// steps are written once and evaluated either way.
pub trait Signal:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Complex64, Output = Self>
    + Div<Complex64, Output = Self>
{
}

impl<T> Signal for T where
    T: Clone
        + Add<Output = T>
        + Sub<Output = T>
        + Mul<Complex64, Output = T>
        + Div<Complex64, Output = T>
{
}

/// Covariance of the random parts of `stats` after removing the
/// contributions of the `exclude` coordinates (the desired symbols, whose
/// coefficients form the gain instead).
pub fn covariance(
    space: &VarSpace,
    stats: &[Tracked],
    exclude: &[usize],
    power: f64,
    noise_variance: f64,
) -> DMatrix<Complex64> {
    let n = stats.len();
    let variances: Vec<f64> = (0..space.dim())
        .map(|v| {
            if exclude.contains(&v) {
                0.0
            } else {
                space.variance(v, power, noise_variance)
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |r, c| {
        stats[r]
            .form
            .iter()
            .zip(&stats[c].form)
            .zip(&variances)
            .map(|((a, b), &v)| a * b.conj() * v)
            .sum()
    })
}

/// Covariance of `estimates[i] - variable(targets[i])`, the estimation error.
pub fn error_covariance(
    space: &VarSpace,
    estimates: &[Tracked],
    targets: &[usize],
    power: f64,
    noise_variance: f64,
) -> DMatrix<Complex64> {
    let errors: Vec<Tracked> = estimates
        .iter()
        .zip(targets)
        .map(|(e, &t)| e.clone() - Tracked::variable(space, t, Complex64::new(0.0, 0.0)))
        .collect();
    covariance(space, &errors, &[], power, noise_variance)
}
