//! Which segments are observed at each step, with what noise, and whether
//! the chosen set makes the linearized model observable.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use thiserror::Error;

use crate::model::{ArzModel, SegmentKind, Topology};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SensingError {
    #[error("segment id {0} does not exist")]
    UnknownSegment(usize),
    #[error("mobile sensor start {0} must be a mainline segment without a fixed sensor")]
    BadMobileStart(usize),
    #[error("duplicate mobile start position {0}")]
    DuplicateStart(usize),
    #[error("{count} mobile sensors but only {available} free mainline segments")]
    TooManyMobile { count: usize, available: usize },
    #[error("rotation period must be at least one step")]
    ZeroPeriod,
}

/// Rows of the full measurement vector that are observed: density and speed
/// of each measured segment, in increasing segment order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Selector {
    segments: Vec<usize>,
    rows: Vec<usize>,
    had_duplicates: bool,
}

impl Selector {
    /// From 1-based segment ids. Duplicates are dropped and flagged.
    pub fn new(ids: &[usize], n_segments: usize) -> Result<Self, SensingError> {
        let mut set = BTreeSet::new();
        let mut dup = false;
        for &id in ids {
            if id == 0 || id > n_segments {
                return Err(SensingError::UnknownSegment(id));
            }
            dup |= !set.insert(id);
        }
        let segments: Vec<usize> = set.into_iter().collect();
        let rows = segments
            .iter()
            .flat_map(|&s| [2 * (s - 1), 2 * (s - 1) + 1])
            .collect();
        Ok(Self {
            segments,
            rows,
            had_duplicates: dup,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Every segment of the network.
    pub fn all(n_segments: usize) -> Self {
        let ids: Vec<usize> = (1..=n_segments).collect();
        Self::new(&ids, n_segments).expect("ids in range")
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn had_duplicates(&self) -> bool {
        self.had_duplicates
    }

    /// Picks the selected entries out of a full measurement vector.
    pub fn apply<T: Real>(&self, full: &DVector<T>) -> DVector<T> {
        DVector::from_fn(self.rows.len(), |r, _| full[self.rows[r]])
    }

    /// The 0/1 observation matrix for a state of dimension `n_x`.
    pub fn matrix<T: Real>(&self, n_x: usize) -> DMatrix<T> {
        let mut c = DMatrix::zeros(self.rows.len(), n_x);
        for (r, &k) in self.rows.iter().enumerate() {
            c[(r, k)] = T::one();
        }
        c
    }
}

/// Fixed sensors plus connected-vehicle probes that hop one mainline
/// segment downstream every `period` steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorSchedule {
    fixed: Vec<usize>,
    mobile_start: Vec<usize>,
    /// `None` keeps mobile sensors in place.
    period: Option<usize>,
    /// Mainline segments without a fixed sensor, increasing.
    cycle: Vec<usize>,
    n_segments: usize,
}

impl SensorSchedule {
    pub fn new<T: Real>(
        topo: &Topology<T>,
        fixed: &[usize],
        mobile_start: &[usize],
        period: Option<usize>,
    ) -> Result<Self, SensingError> {
        let n_segments = topo.n_segments();
        let fixed_sel = Selector::new(fixed, n_segments)?;
        let fixed = fixed_sel.segments().to_vec();
        let cycle: Vec<usize> = (1..=topo.n_mainline())
            .filter(|id| !fixed.contains(id))
            .collect();
        if mobile_start.len() > cycle.len() {
            return Err(SensingError::TooManyMobile {
                count: mobile_start.len(),
                available: cycle.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for &s in mobile_start {
            if topo.kind(s) != Some(SegmentKind::Mainline) || fixed.contains(&s) {
                return Err(SensingError::BadMobileStart(s));
            }
            if !seen.insert(s) {
                return Err(SensingError::DuplicateStart(s));
            }
        }
        if period == Some(0) {
            return Err(SensingError::ZeroPeriod);
        }
        Ok(Self {
            fixed,
            mobile_start: mobile_start.to_vec(),
            period,
            cycle,
            n_segments,
        })
    }

    /// Only fixed sensors.
    pub fn fixed_only<T: Real>(topo: &Topology<T>, fixed: &[usize]) -> Result<Self, SensingError> {
        Self::new(topo, fixed, &[], None)
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    pub fn period(&self) -> Option<usize> {
        self.period
    }

    /// Number of position changes that happened before step `k` (1-based
    /// measurement steps; changes occur after every `period` steps).
    pub fn changes_before(&self, k: usize) -> usize {
        match self.period {
            None => 0,
            Some(p) => k.saturating_sub(1) / p,
        }
    }

    /// Mobile positions at step `k`, in start order.
    pub fn mobile_at(&self, k: usize) -> Vec<usize> {
        let c = self.changes_before(k);
        let len = self.cycle.len();
        self.mobile_start
            .iter()
            .map(|s| {
                let idx = self.cycle.iter().position(|x| x == s).expect("validated start");
                self.cycle[(idx + c) % len]
            })
            .collect()
    }

    /// All measured segments at step `k`, increasing.
    pub fn positions_at(&self, k: usize) -> Vec<usize> {
        let mut all: BTreeSet<usize> = self.fixed.iter().copied().collect();
        all.extend(self.mobile_at(k));
        all.into_iter().collect()
    }

    pub fn selector_at(&self, k: usize) -> Selector {
        Selector::new(&self.positions_at(k), self.n_segments).expect("validated ids")
    }

    /// Steps after which the mobile positions repeat.
    pub fn cycle_steps(&self) -> Option<usize> {
        self.period.map(|p| p * self.cycle.len())
    }
}

/// Zero-mean uniform noise with standard deviation `std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<T> {
    pub std: T,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(std: T) -> Self {
        Self { std }
    }

    /// Half-width of the support, `std * sqrt(3)`.
    pub fn half_width(&self) -> T {
        self.std * T::lit(3.0).sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> DVector<T> {
        if self.std <= T::zero() {
            return DVector::zeros(n);
        }
        let a = self.half_width().as_f64();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
        DVector::from_fn(n, |_, _| T::lit(dist.sample(rng)))
    }
}

/// Noisy observation `C h(x) + noise` of a true state. `speed_scales`
/// multiplies the speed row of each segment before selection.
pub fn synthesize_measurements<T: Real, R: Rng + ?Sized>(
    model: &ArzModel<T>,
    x_true: &DVector<T>,
    selector: &Selector,
    speed_scales: Option<&[T]>,
    noise: &NoiseModel<T>,
    rng: &mut R,
) -> DVector<T> {
    let mut full = model.measure_h(x_true);
    if let Some(sc) = speed_scales {
        for (s, &f) in sc.iter().enumerate() {
            full[2 * s + 1] *= f;
        }
    }
    let clean = selector.apply(&full);
    let n = clean.len();
    clean + noise.sample(rng, n)
}

/// Minimum eigenvalue above which a Gramian counts as positive definite.
pub const PD_THRESHOLD: f64 = 1e-9;
pub const GRAMIAN_TERMS: usize = 200;

#[derive(Debug, Clone)]
pub struct GramianReport<T> {
    pub gramian: DMatrix<T>,
    pub min_eigenvalue: T,
    /// `||A^m||^(1/m)` at the last term, an estimate of the spectral radius.
    pub spectral_radius: T,
    /// Terms stopped shrinking over the last ten summands.
    pub diverged: bool,
}

impl<T: Real> GramianReport<T> {
    pub fn observable(&self) -> bool {
        !self.diverged && self.min_eigenvalue > T::lit(PD_THRESHOLD)
    }
}

/// Truncated observability Gramian `sum_m (A^T)^m C^T C A^m`.
pub fn observability_gramian<T: Real>(a: &DMatrix<T>, c: &DMatrix<T>, terms: usize) -> GramianReport<T> {
    let n = a.nrows();
    let ctc = c.transpose() * c;
    let mut w = DMatrix::zeros(n, n);
    let mut am = DMatrix::identity(n, n);
    let mut term_norms = Vec::with_capacity(terms);
    for m in 0..terms {
        let term = am.transpose() * &ctc * &am;
        term_norms.push(term.norm());
        w += term;
        if m + 1 < terms {
            am = a * am;
        }
    }
    // exact symmetry
    let w = (&w + w.transpose()) * T::lit(0.5);
    let radius = if terms > 1 {
        am.norm().powf(T::one() / T::lit((terms - 1) as f64))
    } else {
        T::zero()
    };
    let diverged = terms > 10 && {
        let tail = &term_norms[terms - 11..];
        let first = tail[0];
        let last = tail[10];
        last > first && last > T::lit(1e-12)
    } || !w.iter().all(|v| v.is_finite());
    let min_eigenvalue = if w.iter().all(|v| v.is_finite()) {
        w.clone().symmetric_eigenvalues().min()
    } else {
        T::lit(f64::NAN)
    };
    GramianReport {
        gramian: w,
        min_eigenvalue,
        spectral_radius: radius,
        diverged: diverged || radius > T::one() + T::lit(1e-9),
    }
}
