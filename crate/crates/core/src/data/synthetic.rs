//! Synthetic cross-corpus pairs: a Gaussian class mixture and a shifted copy.
//!
//! Fixed conventions:
//! * class means sit on a regular simplex of radius 3 spanning the first `C`
//!   coordinates (on a circle in the first two coordinates when `C > d`);
//! * every class shares the axis-aligned standard deviations
//!   `[1.5, 0.75, 1, 1, ...]`;
//! * the target translates all means by `mean_shift` along the unit vector
//!   `(e_1 - e_0)/sqrt 2`, rotates the class noise by `rotation_angle` in
//!   the `(0, 1)` plane, draws labels from `prior_shift`, and adds isotropic
//!   noise of scale `noise_scale`;
//! * sample `k` belongs to subject `k % subjects + 1` and session
//!   `(k / subjects) % sessions + 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, FeatureSample};

pub const SIMPLEX_RADIUS: f64 = 3.0;

/// Distribution shift applied to the target corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub mean_shift: f64,
    pub rotation_angle: f64,
    pub prior_shift: Vec<f64>,
    pub noise_scale: f64,
    pub seed: u64,
}

impl ShiftSpec {
    /// No shift: target drawn from the source distribution.
    pub fn none(classes: usize) -> Self {
        ShiftSpec {
            mean_shift: 0.0,
            rotation_angle: 0.0,
            prior_shift: vec![1.0 / classes as f64; classes],
            noise_scale: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidShift(m));
        if self.prior_shift.len() != classes {
            return bad(format!(
                "prior_shift has {} entries for {classes} classes",
                self.prior_shift.len()
            ));
        }
        if self.prior_shift.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad(format!("prior_shift entries must be >= 0: {:?}", self.prior_shift));
        }
        let total: f64 = self.prior_shift.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("prior_shift sums to {total}, expected 1"));
        }
        if !self.mean_shift.is_finite() || !self.rotation_angle.is_finite() {
            return bad("mean_shift and rotation_angle must be finite".into());
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return bad(format!("noise_scale must be >= 0, got {}", self.noise_scale));
        }
        Ok(())
    }
}

/// Subject/session metadata layout of generated corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub subjects: u32,
    pub sessions: u32,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            subjects: 15,
            sessions: 3,
        }
    }
}

/// Parameters of the in-repo standard benchmark.
pub struct StandardBenchmark;

impl StandardBenchmark {
    pub const DIM: usize = 16;
    pub const CLASSES: usize = 3;
    pub const SAMPLES: usize = 3000;
    pub const BASE_SEED: u64 = 0;

    pub fn shift() -> ShiftSpec {
        ShiftSpec {
            mean_shift: 1.5,
            rotation_angle: 0.5,
            prior_shift: vec![0.4, 0.35, 0.25],
            noise_scale: 0.5,
            seed: 0,
        }
    }

    pub fn generate() -> (Corpus, Corpus) {
        gen_synthetic_pair(
            Self::BASE_SEED,
            Self::DIM,
            Self::CLASSES,
            Self::SAMPLES,
            Self::SAMPLES,
            &Self::shift(),
        )
        .expect("standard benchmark parameters are valid")
    }
}

fn class_means(dim: usize, classes: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if classes <= dim {
                let inv = 1.0 / classes as f64;
                let norm = ((1.0 - inv).powi(2) + (classes - 1) as f64 * inv * inv).sqrt();
                for (k, slot) in m.iter_mut().take(classes).enumerate() {
                    let v = if k == c { 1.0 - inv } else { -inv };
                    *slot = SIMPLEX_RADIUS * v / norm;
                }
            } else {
                let angle = std::f64::consts::TAU * c as f64 / classes as f64;
                m[0] = SIMPLEX_RADIUS * angle.cos();
                m[1] = SIMPLEX_RADIUS * angle.sin();
            }
            m
        })
        .collect()
}

fn class_std(dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| match k {
            0 => 1.5,
            1 => 0.75,
            _ => 1.0,
        })
        .collect()
}

struct DomainDraw<'a> {
    name: &'a str,
    n: usize,
    priors: &'a [f64],
    mean_shift: f64,
    rotation: f64,
    noise: f64,
}

fn draw_domain(
    rng: &mut ChaCha8Rng,
    dim: usize,
    classes: usize,
    layout: Layout,
    spec: DomainDraw<'_>,
) -> Result<Corpus, DataError> {
    let means = class_means(dim, classes);
    let std = class_std(dim);
    let (cos, sin) = (spec.rotation.cos(), spec.rotation.sin());
    let shift_dir = {
        let mut u = vec![0.0; dim];
        u[0] = -std::f64::consts::FRAC_1_SQRT_2;
        u[1] = std::f64::consts::FRAC_1_SQRT_2;
        u
    };
    let weights = WeightedIndex::new(spec.priors)
        .map_err(|e| DataError::InvalidShift(format!("class priors: {e}")))?;

    let mut samples = Vec::with_capacity(spec.n);
    for k in 0..spec.n {
        // The first C samples cover every class once.
        let label = if k < classes { k } else { weights.sample(rng) };
        let mut eps: Vec<f64> = (0..dim)
            .map(|i| std[i] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (e0, e1) = (eps[0], eps[1]);
        eps[0] = cos * e0 - sin * e1;
        eps[1] = sin * e0 + cos * e1;
        let features = (0..dim)
            .map(|i| {
                let mut v = means[label][i] + eps[i] + spec.mean_shift * shift_dir[i];
                if spec.noise > 0.0 {
                    v += spec.noise * rng.sample::<f64, _>(StandardNormal);
                }
                v as f32
            })
            .collect();
        samples.push(FeatureSample {
            id: k,
            features,
            label: Some(label),
            subject: (k as u32 % layout.subjects) + 1,
            session: (k as u32 / layout.subjects) % layout.sessions + 1,
        });
    }
    let class_names = (0..classes).map(|c| format!("class{c}")).collect();
    Corpus::new(spec.name, dim, class_names, samples)
}

/// Generates a labeled (source, target) pair; see the module docs for the
/// construction. Target labels exist for evaluation only.
pub fn gen_synthetic_pair(
    base_seed: u64,
    dim: usize,
    classes: usize,
    n_source: usize,
    n_target: usize,
    shift: &ShiftSpec,
) -> Result<(Corpus, Corpus), DataError> {
    gen_synthetic_pair_with_layout(base_seed, dim, classes, n_source, n_target, shift, Layout::default())
}

pub fn gen_synthetic_pair_with_layout(
    base_seed: u64,
    dim: usize,
    classes: usize,
    n_source: usize,
    n_target: usize,
    shift: &ShiftSpec,
    layout: Layout,
) -> Result<(Corpus, Corpus), DataError> {
    if dim < 2 {
        return Err(DataError::InvalidArgument(format!("dim must be >= 2, got {dim}")));
    }
    if classes < 2 {
        return Err(DataError::InvalidArgument(format!("classes must be >= 2, got {classes}")));
    }
    if n_source < classes || n_target < classes {
        return Err(DataError::InvalidArgument(format!(
            "sample counts ({n_source}, {n_target}) must be >= classes ({classes})"
        )));
    }
    if layout.subjects == 0 || layout.sessions == 0 {
        return Err(DataError::InvalidArgument("layout needs >= 1 subject and session".into()));
    }
    shift.validate(classes)?;

    let mut source_rng = ChaCha8Rng::seed_from_u64(base_seed);
    source_rng.set_stream(0);
    let mut target_rng = ChaCha8Rng::seed_from_u64(base_seed);
    target_rng.set_stream(shift.seed.wrapping_add(1));

    let uniform = vec![1.0 / classes as f64; classes];
    let source = draw_domain(
        &mut source_rng,
        dim,
        classes,
        layout,
        DomainDraw {
            name: "synthetic-source",
            n: n_source,
            priors: &uniform,
            mean_shift: 0.0,
            rotation: 0.0,
            noise: 0.0,
        },
    )?;
    let target = draw_domain(
        &mut target_rng,
        dim,
        classes,
        layout,
        DomainDraw {
            name: "synthetic-target",
            n: n_target,
            priors: &shift.prior_shift,
            mean_shift: shift.mean_shift,
            rotation: shift.rotation_angle,
            noise: shift.noise_scale,
        },
    )?;
    Ok((source, target))
}
