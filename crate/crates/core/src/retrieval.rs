//! Iterative phase-only hologram baselines: Gerchberg-Saxton alternating
//! projections and first-order gradient descent on the reconstruction MSE.
//!
//! Both run on the padded propagation grid. The hologram plane constraint is
//! unit amplitude on the frame and zero outside it; the object plane
//! constraint fixes the amplitude on the roi and leaves the rest free.

use ndarray::Array2;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::optics::{AmplitudeMap, OpticsConfig, PhaseMap, Propagator};
use crate::{wrap_phase, Error, Result, Scalar};

pub const DEFAULT_STEP_SIZE: f64 = 0.1;

/// Starting phase of a retrieval run.
#[derive(Clone, Debug, PartialEq)]
pub enum PhaseInit<T: Scalar> {
    /// Uniform in `(-pi, pi]` from the settings seed.
    Random,
    Zeros,
    Provided(PhaseMap<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalSettings<T: Scalar> {
    pub iterations: usize,
    /// Gradient variant only; per-pixel step on the summed squared error.
    pub step_size: f64,
    pub init: PhaseInit<T>,
    pub seed: u64,
}

impl<T: Scalar> Default for RetrievalSettings<T> {
    fn default() -> Self {
        Self {
            iterations: 100,
            step_size: DEFAULT_STEP_SIZE,
            init: PhaseInit::Random,
            seed: 0,
        }
    }
}

impl<T: Scalar> RetrievalSettings<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Result of a traced run: the phase and the object-plane error before each
/// iteration plus the final one (`iterations + 1` entries).
#[derive(Clone, Debug)]
pub struct RetrievalRun<T: Scalar> {
    pub phase: PhaseMap<T>,
    pub errors: Vec<f64>,
}

/// Uniform random phase in `(-pi, pi]`.
pub fn random_phase<T: Scalar>(dim: (usize, usize), seed: u64) -> PhaseMap<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    PhaseMap(Array2::from_shape_fn(dim, |_| {
        wrap_phase(T::of(rng.random_range(-pi..pi)))
    }))
}

struct Problem<'a, T: Scalar> {
    prop: Propagator<T>,
    target: &'a AmplitudeMap<T>,
    /// Top-left of the roi inside the padded grid.
    roi_at: (usize, usize),
}

impl<'a, T: Scalar> Problem<'a, T> {
    fn new(frame: (usize, usize), target: &'a AmplitudeMap<T>, config: &OpticsConfig) -> Result<Self> {
        config.validate()?;
        let roi = config.roi_in(frame)?;
        if target.dim() != roi {
            return Err(Error::Shape(format!(
                "target {:?} does not match roi {:?}",
                target.dim(),
                roi
            )));
        }
        if target.0.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(Error::Domain("target amplitude must be finite and non-negative".into()));
        }
        let prop = Propagator::new(frame, config, -config.distance)?;
        let (oy, ox) = prop.offset();
        let roi_at = (oy + (frame.0 - roi.0) / 2, ox + (frame.1 - roi.1) / 2);
        Ok(Self { prop, target, roi_at })
    }

    fn roi_indices(&self) -> impl Iterator<Item = (usize, (usize, usize))> + '_ {
        let pw = self.prop.padded().1;
        let (ry, rx) = self.roi_at;
        self.target
            .0
            .indexed_iter()
            .map(move |((i, j), _)| ((ry + i) * pw + rx + j, (i, j)))
    }

    /// Object-plane field of a hologram phase, on the padded grid.
    fn object(&self, phase: &Array2<T>) -> Vec<Complex<T>> {
        let unit = phase.mapv(|p| Complex::from_polar(T::one(), p));
        let mut buf = self.prop.pad(unit.view());
        self.prop.apply_padded(&mut buf);
        buf
    }

    /// `sum (|u| - t)^2` over the roi.
    fn sq_error(&self, obj: &[Complex<T>]) -> f64 {
        self.roi_indices()
            .map(|(k, ij)| {
                let d = obj[k].norm().to64() - self.target.0[ij].to64();
                d * d
            })
            .sum()
    }
}

fn initial_phase<T: Scalar>(settings: &RetrievalSettings<T>, frame: (usize, usize)) -> Result<Array2<T>> {
    match &settings.init {
        PhaseInit::Random => Ok(random_phase::<T>(frame, settings.seed).0),
        PhaseInit::Zeros => Ok(Array2::zeros(frame)),
        PhaseInit::Provided(p) => {
            if p.dim() != frame {
                return Err(Error::Shape(format!(
                    "initial phase {:?} does not match frame {:?}",
                    p.dim(),
                    frame
                )));
            }
            Ok(PhaseMap::new(p.0.clone())?.0)
        }
    }
}

/// Frame shape implied by the initializer, or the roi when random/zeros.
fn frame_of<T: Scalar>(settings: &RetrievalSettings<T>, config: &OpticsConfig) -> (usize, usize) {
    match &settings.init {
        PhaseInit::Provided(p) => p.dim(),
        _ => config.roi,
    }
}

/// Gerchberg-Saxton on a frame equal to the roi (or the provided phase).
pub fn gerchberg_saxton<T: Scalar>(
    target: &AmplitudeMap<T>,
    config: &OpticsConfig,
    settings: &RetrievalSettings<T>,
) -> Result<PhaseMap<T>> {
    gerchberg_saxton_traced(target, config, settings, frame_of(settings, config)).map(|r| r.phase)
}

pub fn gerchberg_saxton_traced<T: Scalar>(
    target: &AmplitudeMap<T>,
    config: &OpticsConfig,
    settings: &RetrievalSettings<T>,
    frame: (usize, usize),
) -> Result<RetrievalRun<T>> {
    settings.validate()?;
    let problem = Problem::new(frame, target, config)?;
    let mut phase = initial_phase(settings, frame)?;
    let mut errors = Vec::with_capacity(settings.iterations + 1);
    let (oy, ox) = problem.prop.offset();
    let pw = problem.prop.padded().1;
    let mut obj = problem.object(&phase);
    errors.push(problem.sq_error(&obj).sqrt());
    for it in 0..settings.iterations {
        for (k, ij) in problem.roi_indices() {
            let m = obj[k].norm();
            let t = target.0[ij];
            obj[k] = if m > T::zero() { obj[k] * (t / m) } else { Complex::new(t, T::zero()) };
        }
        problem.prop.adjoint_padded(&mut obj);
        for ((i, j), p) in phase.indexed_iter_mut() {
            let v = obj[(i + oy) * pw + j + ox];
            if v.norm_sqr() > T::zero() {
                *p = v.arg();
            }
        }
        if phase.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure {
                iteration: it,
                reason: "non-finite phase".into(),
            });
        }
        obj = problem.object(&phase);
        errors.push(problem.sq_error(&obj).sqrt());
    }
    Ok(RetrievalRun {
        phase: PhaseMap(phase.mapv(wrap_phase)),
        errors,
    })
}

/// Mean squared reconstruction error over the roi and its gradient with
/// respect to the hologram phase.
pub fn mse_and_gradient<T: Scalar>(
    phase: &PhaseMap<T>,
    target: &AmplitudeMap<T>,
    config: &OpticsConfig,
) -> Result<(f64, Array2<T>)> {
    let problem = Problem::new(phase.dim(), target, config)?;
    Ok(problem_gradient(&problem, &phase.0))
}

fn problem_gradient<T: Scalar>(problem: &Problem<'_, T>, phase: &Array2<T>) -> (f64, Array2<T>) {
    let n = T::of_usize(problem.target.0.len());
    let obj = problem.object(phase);
    let loss = problem.sq_error(&obj) / n.to64();
    let mut g = vec![Complex::new(T::zero(), T::zero()); obj.len()];
    let two = T::of(2.0);
    for (k, ij) in problem.roi_indices() {
        let m = obj[k].norm();
        if m > T::zero() {
            g[k] = obj[k] * (two * (m - problem.target.0[ij]) / (n * m));
        }
    }
    problem.prop.adjoint_padded(&mut g);
    let gh = problem.prop.crop(&g);
    let grad = Array2::from_shape_fn(phase.dim(), |ij| {
        let u = Complex::from_polar(T::one(), phase[ij]);
        (gh[ij] * u.conj()).im
    });
    (loss, grad)
}

pub fn sgd_phase_retrieval<T: Scalar>(
    target: &AmplitudeMap<T>,
    config: &OpticsConfig,
    settings: &RetrievalSettings<T>,
) -> Result<PhaseMap<T>> {
    sgd_phase_retrieval_traced(target, config, settings, frame_of(settings, config)).map(|r| r.phase)
}

/// Plain gradient descent; `errors` holds the roi MSE per iteration.
pub fn sgd_phase_retrieval_traced<T: Scalar>(
    target: &AmplitudeMap<T>,
    config: &OpticsConfig,
    settings: &RetrievalSettings<T>,
    frame: (usize, usize),
) -> Result<RetrievalRun<T>> {
    settings.validate()?;
    let problem = Problem::new(frame, target, config)?;
    let mut phase = initial_phase(settings, frame)?;
    let step = T::of(settings.step_size * target.0.len() as f64);
    let mut errors = Vec::with_capacity(settings.iterations + 1);
    for it in 0..settings.iterations {
        let (loss, grad) = problem_gradient(&problem, &phase);
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure {
                iteration: it,
                reason: format!("loss became {loss}"),
            });
        }
        errors.push(loss);
        phase.zip_mut_with(&grad, |p, &g| *p = wrap_phase(*p - step * g));
    }
    let final_loss = problem.sq_error(&problem.object(&phase)) / target.0.len() as f64;
    if !final_loss.is_finite() {
        return Err(Error::NumericFailure {
            iteration: settings.iterations,
            reason: format!("loss became {final_loss}"),
        });
    }
    errors.push(final_loss);
    Ok(RetrievalRun {
        phase: PhaseMap(phase),
        errors,
    })
}
