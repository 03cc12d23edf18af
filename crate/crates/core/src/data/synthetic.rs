//! Seeded synthetic image classification data for tests, benchmarks and
//! smoke runs where no real dataset is available.
//!
//! Each class owns a random low-frequency template (a per-channel base
//! level plus a sinusoidal pattern); samples are the template plus
//! independent per-pixel noise and a random global brightness shift.

use crate::data::{Dataset, DatasetName, Split};
use crate::error::Result;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub side: usize,
    /// Half-width of the uniform per-pixel noise, in byte units.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            side: 32,
            noise: 60.0,
        }
    }
}

struct Template {
    base: [f64; 3],
    amp: [f64; 3],
    fx: f64,
    fy: f64,
    phase: f64,
}

fn templates(spec: &SyntheticSpec, seed: u64) -> Vec<Template> {
    let mut rng = Rng::new(seed).derive("synthetic.templates");
    (0..spec.classes)
        .map(|_| Template {
            base: [0; 3].map(|_| rng.uniform(70.0, 185.0)),
            amp: [0; 3].map(|_| rng.uniform(-50.0, 50.0)),
            fx: rng.uniform(0.5, 3.0),
            fy: rng.uniform(0.5, 3.0),
            phase: rng.uniform(0.0, std::f64::consts::TAU),
        })
        .collect()
}

/// `n` samples with labels cycling through the classes. The same `seed`
/// gives the same class templates, so a train and a test split generated
/// with one seed and different `split` values share the task.
pub fn generate(spec: &SyntheticSpec, n: usize, seed: u64, split: Split) -> Result<Dataset> {
    let temps = templates(spec, seed);
    let tag = match split {
        Split::Train => "synthetic.train",
        Split::Test => "synthetic.test",
    };
    let mut rng = Rng::new(seed).derive(tag);
    let s = spec.side;
    let mut pixels = Vec::with_capacity(n * 3 * s * s);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % spec.classes;
        let t = &temps[label];
        let shift = rng.uniform(-20.0, 20.0);
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    let u = x as f64 / s as f64;
                    let v = y as f64 / s as f64;
                    let wave = (std::f64::consts::TAU * (t.fx * u + t.fy * v) + t.phase).sin();
                    let noise = rng.uniform(-spec.noise, spec.noise);
                    let value = t.base[c] + t.amp[c] * wave + shift + noise;
                    pixels.push(value.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        labels.push(label);
    }
    Dataset::new(DatasetName::Raw, split, s, s, spec.classes, pixels, labels)
}
