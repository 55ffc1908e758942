//! Helpers shared by the integration tests and the acceptance target.

#![allow(dead_code)]

use std::sync::Arc;

use mlrp::gridmodel::{generate_layered_model, SourceSpec, Task, VelocityModel};

/// Double-double number: `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        Self { hi: s, lo: (a - (s - bb)) + (b - bb) }
    }

    fn quick(a: f64, b: f64) -> Self {
        let s = a + b;
        Self { hi: s, lo: b - (s - a) }
    }

    pub fn add(self, o: Self) -> Self {
        let s = Self::two_sum(self.hi, o.hi);
        let t = Self::two_sum(self.lo, o.lo);
        let u = Self::quick(s.hi, s.lo + t.hi);
        Self::quick(u.hi, u.lo + t.lo)
    }

    pub fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }

    pub fn mul(self, o: Self) -> Self {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Self::quick(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    pub fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul(Self::new(q1)).neg());
        let q2 = r.hi / o.hi;
        let r = r.add(o.mul(Self::new(q2)).neg());
        let q3 = r.hi / o.hi;
        Self::quick(q1, q2).add(Self::new(q3))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// `pi` and Euler's constant to double-double precision.
pub const DD_PI: Dd = Dd { hi: std::f64::consts::PI, lo: 1.224_646_799_147_353_2e-16 };
pub const DD_GAMMA: Dd = Dd { hi: 0.577_215_664_901_532_9, lo: -4.942_915_152_430_646e-18 };

/// Ascending series for `J0` and the harmonic-number series for `Y0`, both
/// summed in double-double until the terms fall below 1e-34 of the peak.
pub fn dd_bessel(x: f64) -> (f64, f64) {
    let q = Dd::new(x).mul(Dd::new(x)).div(Dd::new(4.0));
    let mut term = Dd::new(1.0);
    let mut j0 = Dd::new(1.0);
    let mut h = Dd::new(0.0);
    let mut s = Dd::new(0.0);
    let mut peak: f64 = 1.0;
    for k in 1..2000 {
        let kk = Dd::new(k as f64);
        term = term.mul(q).div(kk.mul(kk)).neg();
        h = h.add(Dd::new(1.0).div(kk));
        j0 = j0.add(term);
        s = s.add(term.mul(h).neg());
        peak = peak.max(term.hi.abs() * h.hi);
        if term.hi.abs() * h.hi < 1e-34 * peak {
            break;
        }
    }
    // ln(x/2) enters multiplied by J0 = O(1); f64 accuracy is ample there.
    let log = Dd::new((x / 2.0).ln()).add(DD_GAMMA);
    let y0 = Dd::new(2.0).div(DD_PI).mul(log.mul(j0).add(s));
    (j0.to_f64(), y0.to_f64())
}

/// 500 deterministic abscissae covering `[1e-6, 50]`: 200 log-spaced below
/// 1 and 300 evenly spaced above it.
pub fn bessel_sweep() -> Vec<f64> {
    let mut xs: Vec<f64> = (0..200).map(|i| 10f64.powf(-6.0 + 6.0 * i as f64 / 200.0)).collect();
    xs.extend((0..300).map(|i| 1.0 + 49.0 * i as f64 / 299.0));
    xs
}

/// Layered task family on `extent` km models with the source near the surface.
pub fn layered_tasks(seeds: &[u64], extent: (f64, f64), freqs: &[f64], source: SourceSpec) -> Vec<Task> {
    let mut tasks = Vec::new();
    for &s in seeds {
        let layers = 2 + (s as usize % 3);
        let model = Arc::new(generate_layered_model(s, extent, layers).expect("valid layered model"));
        for &f in freqs {
            tasks.push(Task::new(model.clone(), source, f).expect("valid task"));
        }
    }
    tasks
}

pub fn constant_task(extent: (f64, f64), velocity: f64, source: SourceSpec, freq: f64) -> Task {
    let model = VelocityModel::constant(extent, 0.01, velocity).expect("valid model");
    Task::new(Arc::new(model), source, freq).expect("valid task")
}

pub fn majority(flags: &[bool], need: usize) -> bool {
    flags.iter().filter(|&&f| f).count() >= need
}
