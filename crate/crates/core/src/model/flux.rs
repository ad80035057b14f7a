//! Demand/supply junction fluxes.

use crate::model::ModelParams;
use crate::num::Real;

/// Density, driver characteristic and capacity scale of one cell as seen by
/// the junction formulas.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell<T> {
    pub rho: T,
    pub w: T,
    /// Multiplies both demand and supply of the cell; `1` outside jams.
    pub scale: T,
}

impl<T: Real> Cell<T> {
    pub fn from_state(p: &ModelParams<T>, rho: T, psi: T, scale: T) -> Self {
        Self {
            rho,
            w: p.driver_characteristic(rho, psi),
            scale,
        }
    }

    #[cfg(test)]
    pub fn demand(&self, p: &ModelParams<T>) -> T {
        self.demand_rec(p, &mut ())
    }

    /// Demand, recording which side of `sigma(w)` the density lies on.
    pub fn demand_rec<S: MinSink<T>>(&self, p: &ModelParams<T>, sink: &mut S) -> T {
        record_side(self.rho, p.sigma(self.w.max(T::zero())), sink);
        if self.rho <= T::zero() {
            return T::zero();
        }
        self.scale * p.demand(self.rho, self.w)
    }

    /// Supply, recording the side of `sigma(w_up)` and whether the cut at
    /// zero is active.
    pub fn supply_rec<S: MinSink<T>>(&self, p: &ModelParams<T>, w_up: T, sink: &mut S) -> T {
        supply_recorded(p, self.rho, w_up, sink) * self.scale
    }
}

/// Side of the critical density; no traffic means no branch to switch.
fn record_side<T: Real, S: MinSink<T>>(rho: T, sigma: T, sink: &mut S) {
    let margin = if sigma > T::zero() && rho > T::zero() {
        (rho - sigma).abs()
    } else {
        T::max_value().unwrap_or_else(|| T::lit(f64::MAX))
    };
    sink.record(MinRecord {
        argmin: (rho > sigma) as u8,
        margin,
    });
}

fn supply_recorded<T: Real, S: MinSink<T>>(p: &ModelParams<T>, rho: T, w_up: T, sink: &mut S) -> T {
    let rho = rho.max(T::zero());
    let w = w_up.max(T::zero());
    let sigma = p.sigma(w);
    record_side(rho, sigma, sink);
    if rho > sigma {
        let raw = rho * (w - p.p(rho));
        sink.record(MinRecord {
            argmin: (raw < T::zero()) as u8,
            margin: raw.abs(),
        });
    } else {
        sink.record(MinRecord {
            argmin: 0,
            margin: T::max_value().unwrap_or_else(|| T::lit(f64::MAX)),
        });
    }
    p.supply(rho, w_up)
}

/// Records which branch of each `min` or piecewise formula was taken and
/// how far the point is from switching; used to flag non-differentiable
/// points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinRecord<T> {
    pub argmin: u8,
    pub margin: T,
}

pub(crate) trait MinSink<T> {
    fn record(&mut self, rec: MinRecord<T>);
}

impl<T> MinSink<T> for () {
    #[inline]
    fn record(&mut self, _: MinRecord<T>) {}
}

impl<T> MinSink<T> for Vec<MinRecord<T>> {
    fn record(&mut self, rec: MinRecord<T>) {
        self.push(rec);
    }
}

pub(crate) fn min_of<T: Real, S: MinSink<T>>(args: &[T], sink: &mut S) -> T {
    let mut best = 0usize;
    for (k, &a) in args.iter().enumerate().skip(1) {
        if a < args[best] {
            best = k;
        }
    }
    let mut margin = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
    for (k, &a) in args.iter().enumerate() {
        if k != best {
            margin = margin.min(a - args[best]);
        }
    }
    sink.record(MinRecord {
        argmin: best as u8,
        margin,
    });
    args[best]
}

/// Fluxes across a one-to-one junction `(q_i, phi_i)`.
pub fn flux_one_to_one<T: Real>(p: &ModelParams<T>, up: (T, T), down: (T, T)) -> (T, T) {
    let up = Cell::from_state(p, up.0, up.1, T::one());
    let down = Cell::from_state(p, down.0, down.1, T::one());
    one_to_one(p, up, down, &mut ())
}

pub(crate) fn one_to_one<T: Real, S: MinSink<T>>(
    p: &ModelParams<T>,
    up: Cell<T>,
    down: Cell<T>,
    sink: &mut S,
) -> (T, T) {
    if up.rho <= T::zero() {
        return (T::zero(), T::zero());
    }
    let d = up.demand_rec(p, sink);
    let s = down.supply_rec(p, up.w, sink);
    let q = min_of(&[d, s], sink);
    (q, q * up.w)
}

/// Fluxes around a merge junction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MergeFlux<T> {
    /// Leaving the upstream mainline segment.
    pub q_main: T,
    /// Leaving the on-ramp.
    pub q_ramp: T,
    /// Entering the downstream mainline segment; `q_main + q_ramp`.
    pub q_down: T,
    pub phi_main: T,
    pub phi_ramp: T,
    pub phi_down: T,
}

/// Merge of mainline `main_up` and on-ramp `ramp` into `down`, each given as
/// `(rho, psi)`. Inflow is shared in proportion to the demands.
pub fn flux_merge<T: Real>(
    p: &ModelParams<T>,
    main_up: (T, T),
    ramp: (T, T),
    down: (T, T),
) -> MergeFlux<T> {
    merge(
        p,
        Cell::from_state(p, main_up.0, main_up.1, T::one()),
        Cell::from_state(p, ramp.0, ramp.1, T::one()),
        Cell::from_state(p, down.0, down.1, T::one()),
        &mut (),
    )
}

pub(crate) fn merge<T: Real, S: MinSink<T>>(
    p: &ModelParams<T>,
    main: Cell<T>,
    ramp: Cell<T>,
    down: Cell<T>,
    sink: &mut S,
) -> MergeFlux<T> {
    let d_main = main.demand_rec(p, sink);
    let d_ramp = ramp.demand_rec(p, sink);
    let total = d_main + d_ramp;
    if total <= T::zero() {
        return MergeFlux::default();
    }
    let beta = d_main / total;
    let one = T::one();
    let w_mix = beta * main.w + (one - beta) * ramp.w;
    let s_down = down.supply_rec(p, w_mix, sink);

    // (beta / (1 - beta)) * D_ramp equals D_main whenever both demands are
    // positive, so the min reduces to two arguments; with beta in {0, 1}
    // the dropped term is unconstrained.
    let (q_main, q_ramp) = if beta <= T::zero() {
        (T::zero(), min_of(&[s_down, d_ramp], sink))
    } else {
        let q_main = min_of(&[beta * s_down, d_main], sink);
        // q_bar = q_main / beta; q_ramp = (1 - beta) q_bar
        let q_ramp = if beta >= one {
            T::zero()
        } else {
            (one - beta) * (q_main / beta)
        };
        (q_main, q_ramp)
    };
    let q_down = q_main + q_ramp;
    MergeFlux {
        q_main,
        q_ramp,
        q_down,
        phi_main: q_main * main.w,
        phi_ramp: q_ramp * ramp.w,
        phi_down: q_down * w_mix,
    }
}

/// Fluxes around a diverge junction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DivergeFlux<T> {
    /// Leaving the upstream mainline segment.
    pub q_up: T,
    /// Entering the downstream mainline segment, `(1 - alpha) q_up`.
    pub q_down: T,
    /// Entering the off-ramp, `alpha q_up`.
    pub q_off: T,
    pub phi_up: T,
    pub phi_down: T,
    pub phi_off: T,
}

/// Diverge of `up` into mainline `down` and off-ramp `off` with split ratio
/// `alpha` towards the off-ramp.
pub fn flux_diverge<T: Real>(
    p: &ModelParams<T>,
    up: (T, T),
    down: (T, T),
    off: (T, T),
    alpha: T,
) -> DivergeFlux<T> {
    diverge(
        p,
        Cell::from_state(p, up.0, up.1, T::one()),
        Cell::from_state(p, down.0, down.1, T::one()),
        Cell::from_state(p, off.0, off.1, T::one()),
        alpha,
        &mut (),
    )
}

pub(crate) fn diverge<T: Real, S: MinSink<T>>(
    p: &ModelParams<T>,
    up: Cell<T>,
    down: Cell<T>,
    off: Cell<T>,
    alpha: T,
    sink: &mut S,
) -> DivergeFlux<T> {
    if up.rho <= T::zero() {
        return DivergeFlux::default();
    }
    let d_up = up.demand_rec(p, sink);
    let s_off = off.supply_rec(p, up.w, sink);
    let s_down = down.supply_rec(p, up.w, sink);
    let q_up = min_of(&[d_up, s_off / alpha, s_down / (T::one() - alpha)], sink);
    let q_off = alpha * q_up;
    let phi_up = q_up * up.w;
    let phi_off = alpha * phi_up;
    DivergeFlux {
        q_up,
        q_down: q_up - q_off,
        q_off,
        phi_up,
        phi_down: phi_up - phi_off,
        phi_off,
    }
}

/// Inflow through an entry boundary with known demand and characteristic.
pub(crate) fn entry<T: Real, S: MinSink<T>>(
    p: &ModelParams<T>,
    demand_in: T,
    w_in: T,
    receiver: Cell<T>,
    sink: &mut S,
) -> (T, T) {
    let demand_in = demand_in.max(T::zero());
    let w_in = w_in.max(T::zero());
    let s = receiver.supply_rec(p, w_in, sink);
    let q = min_of(&[demand_in, s], sink);
    (q, q * w_in)
}

/// Outflow through an exit boundary whose downstream density is known. The
/// exit supply is evaluated with the exiting traffic's characteristic.
pub(crate) fn exit<T: Real, S: MinSink<T>>(
    p: &ModelParams<T>,
    sender: Cell<T>,
    rho_out: T,
    sink: &mut S,
) -> (T, T) {
    if sender.rho <= T::zero() {
        return (T::zero(), T::zero());
    }
    let d = sender.demand_rec(p, sink);
    let s = supply_recorded(p, rho_out, sender.w, sink);
    let q = min_of(&[d, s], sink);
    (q, q * sender.w)
}
