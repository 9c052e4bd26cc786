//! Synthetic signal bundles with planted storms, for tests and demos.
//!
//! All four signals share a trend, weekly and yearly cycles and carry
//! independent Gaussian noise. A planted storm lowers three or four signals
//! by `depth_sigmas` noise standard deviations for 3 to 7 days; a decoy
//! lowers only two.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stormwatch_core::span::add_days;
use stormwatch_core::tune::SeedStorm;
use stormwatch_core::{DateSpan, DispersionSeries, NaiveDate, SignalBundle, SignalKind};

/// A planted dip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dip {
    pub label: String,
    pub span: DateSpan,
    pub kinds: Vec<SignalKind>,
}

impl Dip {
    pub fn to_seed(&self) -> SeedStorm {
        SeedStorm { label: self.label.clone(), start: self.span.start, end: self.span.end }
    }
}

#[derive(Debug, Clone)]
pub struct StormWorld {
    pub bundle: SignalBundle,
    pub storms: Vec<Dip>,
    pub decoys: Vec<Dip>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldSpec {
    pub start: NaiveDate,
    pub days: usize,
    pub n_storms: usize,
    pub n_decoys: usize,
    pub noise: f64,
    pub depth_sigmas: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(1996, 1, 1).expect("valid date"),
            days: 2000,
            n_storms: 10,
            n_decoys: 5,
            noise: 0.05,
            depth_sigmas: 5.0,
            seed: 7,
        }
    }
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
}

/// Build a world. Dips get one equal-width slot each, kept away from slot
/// edges, so no two dips are closer than about 20 days.
///
/// # Panics
/// If the slots are too short for a 7-day dip with margins (under 28 days).
pub fn storm_world(spec: &WorldSpec) -> StormWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise).expect("noise must be finite and non-negative");
    let n = spec.days;
    let slots = spec.n_storms + spec.n_decoys;
    let slot_len = (n - 60) / slots.max(1);
    assert!(slot_len >= 28, "{slots} dips do not fit in {n} days");
    let mut roles: Vec<usize> = (0..slots).collect();
    shuffle(&mut roles, &mut rng);
    let mut storms = Vec::new();
    let mut decoys = Vec::new();
    for (slot, &role) in roles.iter().enumerate() {
        let len = rng.random_range(3..=7);
        let off = 30 + slot * slot_len + rng.random_range(10..slot_len - len - 10);
        let span = DateSpan::from_len(add_days(spec.start, off as i64), len);
        let mut kinds = SignalKind::ALL.to_vec();
        shuffle(&mut kinds, &mut rng);
        if role < spec.n_storms {
            kinds.truncate(if rng.random_bool(0.5) { 3 } else { 4 });
            storms.push(Dip { label: String::new(), span, kinds });
        } else {
            kinds.truncate(2);
            decoys.push(Dip { label: String::new(), span, kinds });
        }
    }
    storms.sort_by_key(|d| d.span.start);
    decoys.sort_by_key(|d| d.span.start);
    for (i, d) in storms.iter_mut().enumerate() {
        d.label = format!("storm {i:03}");
    }
    for (i, d) in decoys.iter_mut().enumerate() {
        d.label = format!("decoy {i:03}");
    }

    let mut all = Vec::new();
    for kind in SignalKind::ALL {
        let level = 1.0 + 0.2 * kind.index() as f64;
        let mut vals: Vec<f64> = (0..n)
            .map(|i| {
                let d = i as f64;
                let t = d / n as f64;
                level + 0.3 * t
                    + 0.05 * (2.0 * PI * d / 7.0).sin()
                    + 0.1 * (2.0 * PI * d / 365.25).cos()
                    + normal.sample(&mut rng)
            })
            .collect();
        for dip in storms.iter().chain(&decoys) {
            if dip.kinds.contains(&kind) {
                for date in dip.span.days() {
                    vals[(date - spec.start).num_days() as usize] -= spec.depth_sigmas * spec.noise;
                }
            }
        }
        let values = vals.into_iter().map(Some).collect();
        all.push(DispersionSeries::new(kind, spec.start, values).expect("finite values"));
    }
    StormWorld { bundle: SignalBundle::new(all).expect("four kinds"), storms, decoys }
}
