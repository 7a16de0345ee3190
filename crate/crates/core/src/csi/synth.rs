//! Multipath CSI generator.
//!
//! Channel response on subcarrier `f` at time `t` is the phasor sum over
//! propagation paths
//!
//! ```text
//! H(f, t) = Σ_n α_n · exp(−j 2π d_n(t) / λ_f),    λ_f = c / f
//! d_n(t)  = d0_n + v_n · t + a_n · sin(2π f_n t)
//! ```
//!
//! Each activity class has its own motion law per path; every sample jitters
//! the start distance and velocity within class-conditional ranges, and the
//! emitted sample is the amplitude `|H|` on the subcarrier × time grid plus
//! Gaussian noise.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Manifest};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Motion of one path for one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMotion {
    /// Path length at `t = 0` (m).
    pub d0: f64,
    /// Rate of path-length change (m/s).
    pub velocity: f64,
    pub sway_amplitude: f64,
    pub sway_freq: f64,
}

impl PathMotion {
    pub fn fixed(d0: f64) -> Self {
        PathMotion {
            d0,
            velocity: 0.0,
            sway_amplitude: 0.0,
            sway_freq: 0.0,
        }
    }

    pub fn length_at(&self, t: f64) -> f64 {
        self.d0 + self.velocity * t + self.sway_amplitude * (2.0 * std::f64::consts::PI * self.sway_freq * t).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipathConfig {
    pub classes: usize,
    /// Carrier wavelength λ (m).
    pub wavelength: f64,
    /// Subcarrier frequency offsets from the carrier (Hz).
    pub subcarrier_offsets: Vec<f64>,
    pub time_steps: usize,
    /// CSI sampling rate (Hz).
    pub sample_rate: f64,
    /// Complex attenuation per path as `[re, im]`.
    pub attenuations: Vec<[f64; 2]>,
    /// `class_motion[c][n]` is the motion law of path `n` under class `c`.
    pub class_motion: Vec<Vec<PathMotion>>,
    /// Per-sample uniform jitter half-widths.
    pub d0_jitter: f64,
    pub velocity_jitter: f64,
    pub noise_std: f64,
}

impl MultipathConfig {
    /// Six-class, 30-subcarrier, 64-step, 5-path setup used as the default fixture.
    pub fn desk_default() -> Self {
        Self::procedural(6, 30, 64, 5, 0.05, Self::DEFAULT_LAYOUT_SEED)
    }

    pub const DEFAULT_LAYOUT_SEED: u64 = 0x05EE_DC51;
    pub const DEFAULT_D0_JITTER: f64 = 0.1;
    pub const DEFAULT_VELOCITY_JITTER: f64 = 0.1;

    /// Builds a configuration whose class motion laws are drawn from `layout_seed`.
    ///
    /// Path 0 is a static line-of-sight path shared by all classes; the other
    /// paths are body reflections whose geometry and motion differ per class.
    pub fn procedural(
        classes: usize,
        subcarriers: usize,
        time_steps: usize,
        path_count: usize,
        noise_std: f64,
        layout_seed: u64,
    ) -> Self {
        let carrier = 5.32e9;
        let spacing = 40e6 / subcarriers.max(1) as f64;
        let mid = (subcarriers as f64 - 1.0) / 2.0;
        let subcarrier_offsets = (0..subcarriers).map(|k| (k as f64 - mid) * spacing).collect();

        let mut rng = rng_from(layout_seed);
        let mut attenuations = vec![[0.8, 0.0]];
        for _ in 1..path_count {
            let mag = rng.gen_range(0.25..0.5);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            attenuations.push([mag * f64::cos(phase), mag * f64::sin(phase)]);
        }
        let class_motion = (0..classes)
            .map(|_| {
                let mut paths = vec![PathMotion::fixed(3.0)];
                for _ in 1..path_count {
                    paths.push(PathMotion {
                        d0: rng.gen_range(3.5..9.0),
                        velocity: rng.gen_range(-1.2..1.2),
                        sway_amplitude: rng.gen_range(0.01..0.08),
                        sway_freq: rng.gen_range(0.5..3.0),
                    });
                }
                paths
            })
            .collect();

        MultipathConfig {
            classes,
            wavelength: SPEED_OF_LIGHT / carrier,
            subcarrier_offsets,
            time_steps,
            sample_rate: 64.0,
            attenuations,
            class_motion,
            d0_jitter: Self::DEFAULT_D0_JITTER,
            velocity_jitter: Self::DEFAULT_VELOCITY_JITTER,
            noise_std,
        }
    }

    pub fn path_count(&self) -> usize {
        self.attenuations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("multipath: {m}")));
        if !(self.wavelength > 0.0) {
            return fail(format!("wavelength {} must be positive", self.wavelength));
        }
        if self.attenuations.is_empty() {
            return fail("at least one path is required".into());
        }
        if let Some(a) = self
            .attenuations
            .iter()
            .find(|a| Complex64::new(a[0], a[1]).norm() > 1.0 + 1e-12)
        {
            return fail(format!("attenuation {a:?} has magnitude above 1"));
        }
        if self.classes < 2 || self.class_motion.len() != self.classes {
            return fail(format!(
                "{} classes with {} motion tables",
                self.classes,
                self.class_motion.len()
            ));
        }
        if self.class_motion.iter().any(|m| m.len() != self.path_count()) {
            return fail("every class needs one motion law per path".into());
        }
        if self.subcarrier_offsets.is_empty() || self.time_steps == 0 || !(self.sample_rate > 0.0) {
            return fail("empty subcarrier/time grid".into());
        }
        let carrier = SPEED_OF_LIGHT / self.wavelength;
        if self.subcarrier_offsets.iter().any(|o| carrier + o <= 0.0) {
            return fail("subcarrier frequency must stay positive".into());
        }
        if self.d0_jitter < 0.0 || self.velocity_jitter < 0.0 || self.noise_std < 0.0 {
            return fail("jitter and noise must be non-negative".into());
        }
        Ok(())
    }

    /// Subcarrier wavelengths `c / (f_carrier + offset)`.
    pub fn subcarrier_wavelengths(&self) -> Vec<f64> {
        let carrier = SPEED_OF_LIGHT / self.wavelength;
        self.subcarrier_offsets
            .iter()
            .map(|o| SPEED_OF_LIGHT / (carrier + o))
            .collect()
    }

    /// Noise-free amplitude grid `[F, T_s]` for explicit per-path motions.
    pub fn amplitude_grid(&self, motions: &[PathMotion]) -> Vec<f64> {
        let lambdas = self.subcarrier_wavelengths();
        let alphas: Vec<Complex64> = self
            .attenuations
            .iter()
            .map(|a| Complex64::new(a[0], a[1]))
            .collect();
        let mut out = Vec::with_capacity(lambdas.len() * self.time_steps);
        for &lambda in &lambdas {
            for s in 0..self.time_steps {
                let t = s as f64 / self.sample_rate;
                let h: Complex64 = alphas
                    .iter()
                    .zip(motions)
                    .map(|(&a, m)| {
                        a * Complex64::from_polar(1.0, -std::f64::consts::TAU * m.length_at(t) / lambda)
                    })
                    .sum();
                out.push(h.norm());
            }
        }
        out
    }
}

/// Generates `samples_per_class` amplitude samples per class, class-major.
///
/// Each sample draws from its own stream derived from `(seed, index)`, so the
/// output is deterministic and independent of generation order.
pub fn synth_csi<T: Scalar>(
    cfg: &MultipathConfig,
    samples_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    cfg.validate()?;
    if samples_per_class == 0 {
        return Err(Error::InvalidArgument("samples_per_class must be positive".into()));
    }
    let f = cfg.subcarrier_offsets.len();
    let n = cfg.classes * samples_per_class;
    let mut data = Vec::with_capacity(n * f * cfg.time_steps);
    let mut labels = Vec::with_capacity(n);
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("non-negative std");
    let unit = Uniform::new_inclusive(-1.0, 1.0);
    for c in 0..cfg.classes {
        for i in 0..samples_per_class {
            let index = (c * samples_per_class + i) as u64;
            let mut rng = rng_from(derive_seed(seed, "csi-sample", index));
            let motions: Vec<PathMotion> = cfg.class_motion[c]
                .iter()
                .map(|m| {
                    let mut m = *m;
                    if m.velocity != 0.0 || m.sway_amplitude != 0.0 {
                        m.d0 += cfg.d0_jitter * unit.sample(&mut rng);
                        m.velocity += cfg.velocity_jitter * unit.sample(&mut rng);
                    }
                    m
                })
                .collect();
            let grid = cfg.amplitude_grid(&motions);
            data.extend(grid.into_iter().map(|a| {
                let eps = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                T::of(a + eps)
            }));
            labels.push(c);
        }
    }
    let mut manifest = Manifest::new(
        cfg.classes,
        vec![f, cfg.time_steps],
        "all",
        &format!("synthetic multipath CSI amplitude (seed {seed}, {samples_per_class} per class)"),
    );
    manifest
        .extra
        .insert("generator".into(), serde_json::to_value(cfg)?);
    LabeledDataset::new(Tensor::new(vec![n, f, cfg.time_steps], data)?, labels, manifest)
}
