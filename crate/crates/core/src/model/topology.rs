use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::num::Real;

/// On-ramp merging into mainline segment `at` (1-based) across the boundary
/// `at - 1 -> at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnRamp {
    pub at: usize,
}

/// Off-ramp diverging from mainline segment `at` (1-based) across the boundary
/// `at -> at + 1`; a fraction `alpha` of the outflow of `at` leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffRamp<T> {
    pub at: usize,
    pub alpha: T,
}

/// Kind of a junction between consecutive mainline segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Junction<T> {
    OneToOne,
    /// Index into `Topology::on_ramps`.
    Merge { ramp: usize },
    /// Index into `Topology::off_ramps`.
    Diverge { ramp: usize, alpha: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Mainline,
    OnRamp,
    OffRamp,
}

/// Mainline stretch with ramp attachments.
///
/// Segments are numbered 1-based: mainline `1..=N`, then on-ramps
/// `N+1..=N+N_I` and off-ramps after them, in declaration order. Each ramp
/// is a single cell. The state vector interleaves `(rho, psi)` per segment in
/// that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology<T> {
    n_mainline: usize,
    on_ramps: Vec<OnRamp>,
    off_ramps: Vec<OffRamp<T>>,
    junctions: Vec<Junction<T>>,
}

impl<T: Real> Topology<T> {
    pub fn new(
        n_mainline: usize,
        on_ramps: Vec<OnRamp>,
        off_ramps: Vec<OffRamp<T>>,
    ) -> Result<Self, ModelError> {
        if n_mainline == 0 {
            return Err(ModelError::Topology("at least one mainline segment required".into()));
        }
        // junctions[i] sits between mainline i+1 and i+2 (1-based)
        let mut junctions = vec![Junction::OneToOne; n_mainline.saturating_sub(1)];
        for (ramp, on) in on_ramps.iter().enumerate() {
            if on.at < 2 || on.at > n_mainline {
                return Err(ModelError::Topology(format!(
                    "on-ramp {} merges into segment {}, must be in 2..={n_mainline}",
                    ramp + 1,
                    on.at
                )));
            }
            let b = on.at - 2;
            if junctions[b] != Junction::OneToOne {
                return Err(ModelError::Topology(format!(
                    "boundary {}->{} already carries a ramp",
                    on.at - 1,
                    on.at
                )));
            }
            junctions[b] = Junction::Merge { ramp };
        }
        for (ramp, off) in off_ramps.iter().enumerate() {
            if off.at < 1 || off.at >= n_mainline {
                return Err(ModelError::Topology(format!(
                    "off-ramp {} diverges from segment {}, must be in 1..={}",
                    ramp + 1,
                    off.at,
                    n_mainline.saturating_sub(1)
                )));
            }
            if !(off.alpha > T::zero() && off.alpha < T::one()) {
                return Err(ModelError::Topology(format!(
                    "off-ramp {} split ratio {} outside (0, 1)",
                    ramp + 1,
                    off.alpha.as_f64()
                )));
            }
            let b = off.at - 1;
            if junctions[b] != Junction::OneToOne {
                return Err(ModelError::Topology(format!(
                    "boundary {}->{} already carries a ramp",
                    off.at,
                    off.at + 1
                )));
            }
            junctions[b] = Junction::Diverge {
                ramp,
                alpha: off.alpha,
            };
        }
        Ok(Self {
            n_mainline,
            on_ramps,
            off_ramps,
            junctions,
        })
    }

    /// Nine 100 m mainline cells, an on-ramp merging into segment 6 and
    /// off-ramps leaving segments 2 and 8 (15 % split each).
    pub fn highway() -> Self {
        Self::new(
            9,
            vec![OnRamp { at: 6 }],
            vec![
                OffRamp {
                    at: 2,
                    alpha: T::lit(0.15),
                },
                OffRamp {
                    at: 8,
                    alpha: T::lit(0.15),
                },
            ],
        )
        .expect("highway topology is valid")
    }

    pub fn n_mainline(&self) -> usize {
        self.n_mainline
    }

    pub fn on_ramps(&self) -> &[OnRamp] {
        &self.on_ramps
    }

    pub fn off_ramps(&self) -> &[OffRamp<T>] {
        &self.off_ramps
    }

    pub fn n_on(&self) -> usize {
        self.on_ramps.len()
    }

    pub fn n_off(&self) -> usize {
        self.off_ramps.len()
    }

    pub fn n_segments(&self) -> usize {
        self.n_mainline + self.on_ramps.len() + self.off_ramps.len()
    }

    /// `n_x = 2 (N + N_I + N_O)`.
    pub fn n_states(&self) -> usize {
        2 * self.n_segments()
    }

    /// `n_u = 3 + 2 N_I + N_O`.
    pub fn n_inputs(&self) -> usize {
        3 + 2 * self.on_ramps.len() + self.off_ramps.len()
    }

    /// Junction between mainline segments `i` and `i + 1` (0-based `i`).
    pub fn junction(&self, i: usize) -> Junction<T> {
        self.junctions[i]
    }

    /// 0-based segment index of on-ramp `j` (0-based).
    pub fn on_ramp_segment(&self, j: usize) -> usize {
        self.n_mainline + j
    }

    /// 0-based segment index of off-ramp `l` (0-based).
    pub fn off_ramp_segment(&self, l: usize) -> usize {
        self.n_mainline + self.on_ramps.len() + l
    }

    /// Kind of the segment with 1-based id `id`, or `None` if out of range.
    pub fn kind(&self, id: usize) -> Option<SegmentKind> {
        if id == 0 || id > self.n_segments() {
            None
        } else if id <= self.n_mainline {
            Some(SegmentKind::Mainline)
        } else if id <= self.n_mainline + self.on_ramps.len() {
            Some(SegmentKind::OnRamp)
        } else {
            Some(SegmentKind::OffRamp)
        }
    }

    /// Ids of every ramp segment followed by the last mainline segment: the
    /// smallest sensor set under which the linearized model is observable.
    pub fn minimum_sensor_set(&self) -> Vec<usize> {
        let mut ids = vec![self.n_mainline];
        ids.extend(self.n_mainline + 1..=self.n_segments());
        ids
    }
}
