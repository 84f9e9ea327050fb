//! The synthetic instruction-routing task.
//!
//! Each image carries four independent nuisance-or-signal factors. A sample's
//! class picks which factor its label reads, and its instruction names that
//! factor. Every factor is visible to exactly one mock view:
//!
//! | class | factor                         | informative view |
//! |-------|--------------------------------|------------------|
//! | 0     | checkerboard structure         | `edge`           |
//! | 1     | luminance-free chroma grain    | `stat`           |
//! | 2     | red/blue color balance         | `downsample`     |
//! | 3     | low-frequency lighting layout  | `blur`           |
//!
//! The label is a fixed threshold rule on one scalar of the informative
//! view's pooled output, so it is computable from that view alone.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{encode_all, EncoderAdapter, SyntheticImage, TextEncoderAdapter};
use crate::config::FusorConfig;
use crate::error::{FusorError, Result};
use crate::exec::{self, Execution};
use crate::feature::{align_spatial, FeatureMap};
use crate::tensor::Matrix;

pub const NUM_LEVELS: usize = 4;

/// The image factor a class reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Structure,
    Grain,
    ColorBalance,
    Layout,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Structure, Factor::Grain, Factor::ColorBalance, Factor::Layout];

    /// Nominal factor strength per level.
    pub fn levels(self) -> [f64; NUM_LEVELS] {
        match self {
            Factor::Structure => [0.0, 0.03, 0.06, 0.09],
            Factor::Grain => [0.0, 0.04, 0.08, 0.12],
            Factor::ColorBalance => [-0.09, -0.03, 0.03, 0.09],
            Factor::Layout => [0.0, 0.04, 0.08, 0.12],
        }
    }

    pub fn jitter(self) -> f64 {
        match self {
            Factor::ColorBalance => 0.01,
            _ => 0.008,
        }
    }

    /// Index of the view in [`crate::adapters::MOCK_ENCODER_NAMES`] that sees this factor.
    pub fn informative_encoder(self) -> usize {
        match self {
            Factor::ColorBalance => 0,
            Factor::Structure => 1,
            Factor::Grain => 2,
            Factor::Layout => 3,
        }
    }

    /// The scalar of the informative view's output that the label thresholds.
    pub fn statistic(self, view: &FeatureMap) -> f64 {
        let pooled = view.pooled();
        match self {
            Factor::ColorBalance => pooled[0] - pooled[2],
            Factor::Structure => 0.5 * (pooled[0] + pooled[1]),
            Factor::Grain => pooled[1],
            Factor::Layout => pooled[0],
        }
    }

    /// Upper bounds of levels `0..3` on [`Factor::statistic`], placed halfway
    /// across the observed gap between adjacent nominal levels.
    pub fn thresholds(self) -> [f64; NUM_LEVELS - 1] {
        match self {
            Factor::ColorBalance => [-0.12, 0.0, 0.117],
            Factor::Structure => [0.146, 0.436, 0.72],
            Factor::Grain => [0.163, 0.484, 0.807],
            Factor::Layout => [0.115, 0.347, 0.58],
        }
    }

    pub fn label_of(self, statistic: f64) -> usize {
        self.thresholds().iter().take_while(|&&t| statistic >= t).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRule {
    pub name: String,
    pub factor: Factor,
    pub informative_encoder: usize,
    pub templates: Vec<String>,
}

fn default_rules() -> Vec<ClassRule> {
    let rule = |name: &str, factor: Factor, templates: &[&str]| ClassRule {
        name: name.to_string(),
        factor,
        informative_encoder: factor.informative_encoder(),
        templates: templates.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        rule(
            "composition",
            Factor::Structure,
            &["assess the composition and structure", "how strong is the structure of this composition"],
        ),
        rule(
            "grain",
            Factor::Grain,
            &["judge the grain and color noise", "how much color noise and grain is there"],
        ),
        rule(
            "color",
            Factor::ColorBalance,
            &["check the white balance and color cast", "which way does the color cast lean"],
        ),
        rule(
            "lighting",
            Factor::Layout,
            &["evaluate the lighting layout", "how uneven is the lighting layout"],
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingTaskSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub classes: Vec<ClassRule>,
    pub seed: u64,
}

impl Default for RoutingTaskSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            samples_per_class: 256,
            image_size: 32,
            classes: default_rules(),
            seed: 1,
        }
    }
}

impl RoutingTaskSpec {
    pub fn with_samples(&self, samples_per_class: usize, seed: u64) -> Self {
        Self {
            samples_per_class,
            seed,
            ..self.clone()
        }
    }

    /// The first `k` classes of the default task.
    pub fn first_classes(k: usize) -> Self {
        let mut spec = Self::default();
        spec.classes.truncate(k);
        spec.num_classes = k;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes != self.classes.len() {
            return Err(FusorError::Config(format!(
                "num_classes is {} but {} class rules are given",
                self.num_classes,
                self.classes.len()
            )));
        }
        if self.samples_per_class == 0 {
            return Err(FusorError::Config("samples_per_class must be >= 1".into()));
        }
        if self.image_size < 16 || !self.image_size.is_multiple_of(16) {
            return Err(FusorError::Config(format!(
                "image_size must be a positive multiple of 16, got {}",
                self.image_size
            )));
        }
        for rule in &self.classes {
            if rule.templates.is_empty() {
                return Err(FusorError::Config(format!("class {} has no templates", rule.name)));
            }
            if rule.informative_encoder != rule.factor.informative_encoder() {
                return Err(FusorError::Config(format!(
                    "class {} reads {:?}, which only encoder {} can see",
                    rule.name,
                    rule.factor,
                    rule.factor.informative_encoder()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub image: SyntheticImage,
    pub instruction: String,
    pub class: usize,
    pub label: usize,
    /// The nominal level the factor was drawn at.
    pub level: usize,
}

/// Draws one image with the given levels for the four factors.
pub fn render_image(size: usize, levels: [usize; 4], rng: &mut impl Rng) -> Result<SyntheticImage> {
    let jittered = |f: Factor, rng: &mut dyn rand::RngCore| {
        let j = f.jitter();
        f.levels()[levels[f as usize]] + rng.random_range(-j..=j)
    };
    let base = rng.random_range(0.42..=0.58);
    let b = jittered(Factor::Structure, rng);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let s = jittered(Factor::Grain, rng);
    let grain: Vec<f64> = (0..size * size)
        .map(|_| rng.random_range(-1.0..=1.0) * s * 3f64.sqrt())
        .collect();
    let d = jittered(Factor::ColorBalance, rng);
    let a = jittered(Factor::Layout, rng);
    let theta = rng.random_range(0.0..2.0 * PI);
    let phi = rng.random_range(0.0..2.0 * PI);
    let n = size as f64;
    SyntheticImage::from_fn(size, size, |c, y, x| {
        let checker = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
        let e = grain[y * size + x];
        let (chroma, cast) = match c {
            0 => (e, d),
            1 => (-e, 0.0),
            _ => (0.0, -d),
        };
        let light = a * (2.0 * PI * (x as f64 * theta.cos() + y as f64 * theta.sin()) / n + phi).cos();
        base + sign * b * checker + chroma + cast + light
    })
    .map(|img| {
        img.with_meta("brightness", base)
            .with_meta("structure", b)
            .with_meta("grain", s)
            .with_meta("color_balance", d)
            .with_meta("layout", a)
    })
}

fn sample_seed(seed: u64, class: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ ((class as u64) << 40)
        ^ (index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Generates the dataset, `samples_per_class` per class in class order.
/// The read factor's level cycles through `0..4`; the other factors are
/// drawn uniformly. Each sample has its own seeded stream, so the result
/// does not depend on `exec`.
pub fn generate_task(
    spec: &RoutingTaskSpec,
    encoders: &[Box<dyn EncoderAdapter>],
    exec: Execution,
) -> Result<Vec<TaskSample>> {
    spec.validate()?;
    let needed = spec.classes.iter().map(|r| r.informative_encoder).max().unwrap_or(0);
    if encoders.len() <= needed {
        return Err(FusorError::Config(format!(
            "task needs encoder index {needed}, only {} encoders given",
            encoders.len()
        )));
    }
    let total = spec.num_classes * spec.samples_per_class;
    exec::map_range(exec, total, |i| {
        let class = i / spec.samples_per_class;
        let index = i % spec.samples_per_class;
        let rule = &spec.classes[class];
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, class, index));
        let mut levels = [0usize; 4];
        for l in levels.iter_mut() {
            *l = rng.random_range(0..NUM_LEVELS);
        }
        let level = index % NUM_LEVELS;
        levels[rule.factor as usize] = level;
        let image = render_image(spec.image_size, levels, &mut rng)?;
        let instruction = rule.templates[rng.random_range(0..rule.templates.len())].clone();
        let view = encoders[rule.informative_encoder].encode(&image)?;
        let label = rule.factor.label_of(rule.factor.statistic(&view));
        Ok(TaskSample {
            image,
            instruction,
            class,
            label,
            level,
        })
    })
    .into_iter()
    .collect()
}

/// A sample with its views aligned to the fusor's spatial grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    /// Native encoder outputs, kept for probes and discriminability.
    pub raw: Vec<FeatureMap>,
    /// `(H·W) × C_n` tokens per encoder.
    pub views: Vec<Matrix>,
    /// `1 × D_t`
    pub text: Matrix,
    pub class: usize,
    pub label: usize,
}

pub fn encode_samples(
    samples: &[TaskSample],
    encoders: &[Box<dyn EncoderAdapter>],
    text: &dyn TextEncoderAdapter,
    config: &FusorConfig,
    exec: Execution,
) -> Result<Vec<EncodedSample>> {
    if text.dim() != config.text_dim {
        return Err(FusorError::Config(format!(
            "text encoder dim {} does not match text_dim {}",
            text.dim(),
            config.text_dim
        )));
    }
    exec::map(exec, samples, |s| {
        let raw = encode_all(encoders, &s.image)?;
        let aligned = align_spatial(&raw, config.height, config.width)?;
        Ok(EncodedSample {
            views: aligned.iter().map(FeatureMap::to_tokens).collect(),
            raw,
            text: text.embed(&s.instruction).to_row(),
            class: s.class,
            label: s.label,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::default_mock_encoders;

    #[test]
    fn label_rule_counts_thresholds() {
        let f = Factor::ColorBalance;
        assert_eq!(f.label_of(-0.2), 0);
        assert_eq!(f.label_of(-0.05), 1);
        assert_eq!(f.label_of(0.0), 2);
        assert_eq!(f.label_of(0.5), 3);
    }

    #[test]
    fn generation_is_deterministic_across_execution_modes() {
        let encoders = default_mock_encoders();
        let spec = RoutingTaskSpec::default().with_samples(8, 3);
        let a = generate_task(&spec, &encoders, Execution::Sequential).unwrap();
        let b = generate_task(&spec, &encoders, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn single_class_task_uses_one_concern() {
        let encoders = default_mock_encoders();
        let mut spec = RoutingTaskSpec::first_classes(1).with_samples(12, 0);
        spec.classes[0].templates.truncate(1);
        let data = generate_task(&spec, &encoders, Execution::Sequential).unwrap();
        assert!(data.iter().all(|s| s.instruction == data[0].instruction && s.class == 0));
    }

    #[test]
    fn threshold_labels_track_nominal_levels() {
        let encoders = default_mock_encoders();
        let spec = RoutingTaskSpec::default().with_samples(64, 5);
        let data = generate_task(&spec, &encoders, Execution::Parallel).unwrap();
        for class in 0..4 {
            let of_class: Vec<_> = data.iter().filter(|s| s.class == class).collect();
            let agree = of_class.iter().filter(|s| s.label == s.level).count();
            assert!(agree as f64 / of_class.len() as f64 >= 0.99, "class {class}: {agree}/64");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let spec = RoutingTaskSpec {
            num_classes: 3,
            ..RoutingTaskSpec::default()
        };
        assert!(spec.validate().is_err());
        let mut spec = RoutingTaskSpec::default();
        spec.classes[0].informative_encoder = 2;
        assert!(spec.validate().is_err());
    }
}
