//! Commands over the synthetic routing task and the fusor itself:
//! `train-toy`, `gradcheck`, `inspect-gates` and `discrim`.

use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tracing::info;

use mvf_core::adapters::{default_mock_encoders, mock_encoders, mock_text_encoder, TextEncoderSpec, MOCK_ENCODER_NAMES};
use mvf_core::checkpoint::{load_model, save_model};
use mvf_core::introspect::{
    brightness_ladder, discriminability, encoder_series, forced_gate_eval, gate_reports_by_class, GateReport,
    TopicAccuracy,
};
use mvf_core::model::argmax;
use mvf_core::train::{
    encode_samples, evaluate, generate_task, grad_check, train_observed, write_metrics_jsonl, EncodedSample,
    OptimizerKind, RoutingModel, RoutingTaskSpec, TrainConfig, TrainOutcome,
};
use mvf_core::train::gradcheck::GRAD_TOLERANCE;
use mvf_core::{Execution, FusorConfig, FusorMode};

use crate::error::CliError;
use crate::manifest::Run;
use crate::svg::BarChart;

/// Generates and encodes routing-task samples for `config`.
pub fn routing_data(config: &FusorConfig, spec: &RoutingTaskSpec, exec: Execution) -> mvf_core::Result<Vec<EncodedSample>> {
    let mut encoders = default_mock_encoders();
    encoders.truncate(config.num_encoders);
    let text = mock_text_encoder(&TextEncoderSpec {
        dim: config.text_dim,
        ..TextEncoderSpec::default()
    })?;
    let tasks = generate_task(spec, &encoders, exec)?;
    encode_samples(&tasks, &encoders, &text, config, exec)
}

fn encoder_names(n: usize) -> Vec<String> {
    MOCK_ENCODER_NAMES.iter().take(n).map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRouting {
    pub class: String,
    pub informative_encoder: String,
    pub accuracy: f64,
    /// Mean normalized layer-1 gate weight per encoder.
    pub layer1_gates: Vec<f64>,
    pub gate_argmax: String,
    /// Accuracy with the gate forced onto each encoder in turn.
    pub forced_accuracy: Vec<f64>,
    pub forced_argmax: String,
    pub routed: bool,
    pub forced_routed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingAnalysis {
    pub encoders: Vec<String>,
    pub accuracy: f64,
    pub classes: Vec<ClassRouting>,
    /// Classes whose largest layer-1 gate is their informative encoder.
    pub routed_classes: usize,
    /// Classes whose forced-gate accuracy peaks at their informative encoder.
    pub forced_routed_classes: usize,
    pub gate_reports: Vec<GateReport>,
    pub forced: Vec<TopicAccuracy>,
}

/// Gate and forced-gate analysis of `model` on `test`. Ties go to the
/// lowest encoder index.
pub fn analyze_routing(
    model: &RoutingModel,
    test: &[EncodedSample],
    spec: &RoutingTaskSpec,
    exec: Execution,
) -> anyhow::Result<RoutingAnalysis> {
    let n = model.config().num_encoders;
    let encoders = encoder_names(n);
    let names: Vec<String> = spec.classes.iter().map(|c| c.name.clone()).collect();
    let full = evaluate(model, test, FusorMode::Full, exec)?;
    let gate_reports = gate_reports_by_class(model, test, &names, exec)?;
    let forced = (1..=n)
        .map(|k| forced_gate_eval(model, test, &names, k, exec))
        .collect::<mvf_core::Result<Vec<_>>>()?;
    let classes: Vec<ClassRouting> = spec
        .classes
        .iter()
        .zip(&gate_reports)
        .enumerate()
        .map(|(c, (rule, report))| {
            let layer1 = report.layers[0].clone();
            let forced_acc: Vec<f64> = forced.iter().map(|f| f.topic(&rule.name)).collect();
            let g = argmax(&layer1);
            let f = argmax(&forced_acc);
            ClassRouting {
                class: rule.name.clone(),
                informative_encoder: encoders[rule.informative_encoder].clone(),
                accuracy: full.class_accuracy(c),
                layer1_gates: layer1,
                gate_argmax: encoders[g].clone(),
                forced_accuracy: forced_acc,
                forced_argmax: encoders[f].clone(),
                routed: g == rule.informative_encoder,
                forced_routed: f == rule.informative_encoder,
            }
        })
        .collect();
    Ok(RoutingAnalysis {
        encoders,
        accuracy: full.accuracy(),
        routed_classes: classes.iter().filter(|c| c.routed).count(),
        forced_routed_classes: classes.iter().filter(|c| c.forced_routed).count(),
        classes,
        gate_reports,
        forced,
    })
}

/// One chart per layer: a group per class, a bar per encoder.
fn write_gate_plots(run: &mut Run, analysis: &RoutingAnalysis) -> anyhow::Result<()> {
    let layers = analysis.gate_reports.first().map_or(0, |r| r.layers.len());
    for l in 0..layers {
        let chart = BarChart {
            title: format!("Mean gate weight, layer {}", l + 1),
            y_label: "gate weight".into(),
            series: analysis.encoders.clone(),
            groups: analysis
                .gate_reports
                .iter()
                .map(|r| (r.label.clone(), r.layers[l].clone()))
                .collect(),
            y_max: Some(1.0),
        };
        run.write(&format!("gates_layer{}.svg", l + 1), chart.render().as_bytes())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToySettings {
    /// Seeds both parameter initialization and batch sampling.
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub samples_per_class: usize,
    pub data_seed: u64,
    pub test_samples_per_class: usize,
    pub test_seed: u64,
    /// Also train the no-fusor baseline on the same data.
    pub baseline: bool,
    pub model: FusorConfig,
}

impl Default for TrainToySettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: t.seed,
            steps: t.steps,
            lr: t.lr,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            samples_per_class: 256,
            data_seed: 1,
            test_samples_per_class: 128,
            test_seed: 2,
            baseline: true,
            model: FusorConfig::routing(),
        }
    }
}

impl TrainToySettings {
    pub fn fusor_config(&self, mode: FusorMode) -> FusorConfig {
        FusorConfig {
            seed: self.seed,
            mode,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self, mode: FusorMode, execution: Execution) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            lr: self.lr,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            mode,
            execution,
        }
    }

    pub fn task(&self) -> RoutingTaskSpec {
        RoutingTaskSpec::default().with_samples(self.samples_per_class, self.data_seed)
    }

    pub fn test_task(&self) -> RoutingTaskSpec {
        RoutingTaskSpec::default().with_samples(self.test_samples_per_class, self.test_seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub chance: f64,
    pub test_accuracy: f64,
    pub baseline_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub baseline_final_loss: Option<f64>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub routing: RoutingAnalysis,
}

pub struct ToyRun {
    pub full: TrainOutcome,
    pub baseline: Option<TrainOutcome>,
    pub summary: ToySummary,
}

/// Trains the full fusor (and optionally the baseline) and analyzes routing
/// on the held-out set.
pub fn run_toy(s: &TrainToySettings, exec: Execution) -> anyhow::Result<ToyRun> {
    let full_cfg = s.fusor_config(FusorMode::Full);
    full_cfg.validate()?;
    s.train_config(FusorMode::Full, exec).validate()?;
    let spec = s.task();
    let train_set = routing_data(&full_cfg, &spec, exec)?;
    let test_set = routing_data(&full_cfg, &s.test_task(), exec)?;
    info!(train = train_set.len(), test = test_set.len(), "routing data ready");
    let fit = |mode: FusorMode| -> anyhow::Result<TrainOutcome> {
        let cfg = s.fusor_config(mode);
        let model = RoutingModel::new(&cfg, spec.num_classes)?;
        let every = (s.steps / 10).max(1);
        let out = train_observed(model, &train_set, &s.train_config(mode, exec), &mut |m| {
            if m.step % every == 0 || m.step + 1 == s.steps {
                info!(mode = %mode, step = m.step, loss = m.loss, acc = m.acc, "train");
            }
        })?;
        Ok(out)
    };
    let full = fit(FusorMode::Full)?;
    let baseline = if s.baseline { Some(fit(FusorMode::BaselineNoFusor)?) } else { None };
    let routing = analyze_routing(&full.model, &test_set, &spec, exec)?;
    let baseline_accuracy = match &baseline {
        Some(b) => Some(evaluate(&b.model, &test_set, FusorMode::BaselineNoFusor, exec)?.accuracy()),
        None => None,
    };
    let summary = ToySummary {
        chance: 1.0 / mvf_core::train::task::NUM_LEVELS as f64,
        test_accuracy: routing.accuracy,
        baseline_accuracy,
        final_loss: full.losses.last().copied(),
        baseline_final_loss: baseline.as_ref().and_then(|b| b.losses.last().copied()),
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        routing,
    };
    Ok(ToyRun { full, baseline, summary })
}

pub fn train_toy(s: &TrainToySettings, run: &mut Run, exec: Execution) -> anyhow::Result<()> {
    let result = run_toy(s, exec)?;
    save_model(&run.path("model.fusor"), &result.full.model)?;
    run.wrote("model.fusor");
    let mut buf = Vec::new();
    write_metrics_jsonl(&result.full.metrics, &mut buf)?;
    run.write("metrics.jsonl", &buf)?;
    if let Some(b) = &result.baseline {
        save_model(&run.path("baseline.fusor"), &b.model)?;
        run.wrote("baseline.fusor");
        let mut buf = Vec::new();
        write_metrics_jsonl(&b.metrics, &mut buf)?;
        run.write("baseline_metrics.jsonl", &buf)?;
    }
    run.write_json("summary.json", &result.summary)?;
    write_gate_plots(run, &result.summary.routing)?;
    let r = &result.summary.routing;
    println!("test accuracy: {:.2}%", 100.0 * result.summary.test_accuracy);
    if let Some(b) = result.summary.baseline_accuracy {
        println!("baseline accuracy: {:.2}%", 100.0 * b);
    }
    println!(
        "routed classes: {}/{}; forced-gate peaks at informative encoder: {}/{}",
        r.routed_classes,
        r.classes.len(),
        r.forced_routed_classes,
        r.classes.len()
    );
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub seed: u64,
    pub tolerance: f64,
    pub model: FusorConfig,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            tolerance: GRAD_TOLERANCE,
            model: FusorConfig::tiny(),
        }
    }
}

pub fn gradcheck(s: &GradcheckSettings, run: &mut Run) -> anyhow::Result<()> {
    if !(s.tolerance.is_finite() && s.tolerance > 0.0) {
        return Err(CliError::Config(format!("tolerance must be positive, got {}", s.tolerance)).into());
    }
    s.model.validate()?;
    let report = grad_check(&s.model, s.seed)?;
    run.write_json("gradcheck.json", &report)?;
    for g in &report.groups {
        println!("{:<14} entries {:>5}  max rel error {:.3e}", g.group.as_str(), g.entries, g.max_rel_error);
    }
    let max = report.max_rel_error();
    println!("parameters: {}", report.num_params);
    println!("max relative error: {max:.3e} (tolerance {:.0e})", s.tolerance);
    if !report.passes(s.tolerance) {
        return Err(CliError::Failed(format!("gradient check failed: {max:.3e} >= {:.0e}", s.tolerance)).into());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectGatesSettings {
    pub checkpoint: Option<PathBuf>,
    pub samples_per_class: usize,
    pub data_seed: u64,
}

impl Default for InspectGatesSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            samples_per_class: 128,
            data_seed: 2,
        }
    }
}

pub fn inspect_gates(s: &InspectGatesSettings, run: &mut Run, exec: Execution) -> anyhow::Result<()> {
    let path = s
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("inspect-gates needs --checkpoint".into()))?;
    let model = load_model(path).with_context(|| format!("loading {}", path.display()))?;
    let spec = RoutingTaskSpec::default().with_samples(s.samples_per_class, s.data_seed);
    let data = routing_data(model.config(), &spec, exec)?;
    let analysis = analyze_routing(&model, &data, &spec, exec)?;
    run.write_json("gate_reports.json", &analysis.gate_reports)?;
    run.write_json("forced_gate.json", &analysis.forced)?;
    run.write_json("routing.json", &analysis)?;
    write_gate_plots(run, &analysis)?;
    for c in &analysis.classes {
        let gates: Vec<String> = c.layer1_gates.iter().map(|w| format!("{w:.3}")).collect();
        println!(
            "{:<12} informative {:<10} layer-1 gates [{}] argmax {:<10} forced argmax {}",
            c.class,
            c.informative_encoder,
            gates.join(", "),
            c.gate_argmax,
            c.forced_argmax
        );
    }
    println!("accuracy: {:.2}%", 100.0 * analysis.accuracy);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscrimSettings {
    pub steps: usize,
    pub lo: f64,
    pub hi: f64,
    pub size: usize,
    pub encoders: Vec<String>,
}

impl Default for DiscrimSettings {
    fn default() -> Self {
        Self {
            steps: 5,
            lo: 0.2,
            hi: 0.6,
            size: 32,
            encoders: MOCK_ENCODER_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderDiscrim {
    pub encoder: String,
    pub discriminability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrimReport {
    pub attribute: String,
    pub levels: Vec<f64>,
    pub encoders: Vec<EncoderDiscrim>,
}

pub fn discrim_report(s: &DiscrimSettings) -> anyhow::Result<DiscrimReport> {
    let ladder = brightness_ladder(s.size, s.steps, s.lo, s.hi)?;
    let names: Vec<&str> = s.encoders.iter().map(String::as_str).collect();
    let views = mock_encoders(&names)?;
    let encoders = views
        .iter()
        .map(|v| {
            let d = discriminability(&encoder_series(v.as_ref(), &ladder, "brightness")?)?;
            Ok(EncoderDiscrim {
                encoder: v.name().to_string(),
                discriminability: d,
            })
        })
        .collect::<mvf_core::Result<Vec<_>>>()?;
    Ok(DiscrimReport {
        attribute: "brightness".into(),
        levels: ladder.iter().map(|i| i.meta["brightness"]).collect(),
        encoders,
    })
}

pub fn discrim(s: &DiscrimSettings, run: &mut Run) -> anyhow::Result<()> {
    let report = discrim_report(s)?;
    run.write_json("discrim.json", &report)?;
    let chart = BarChart::single(
        "Discriminability over a brightness ladder",
        "mean pairwise distance",
        report.encoders.iter().map(|e| (e.encoder.clone(), e.discriminability)).collect(),
    );
    run.write("discrim.svg", chart.render().as_bytes())?;
    for e in &report.encoders {
        println!("{:<12} {:.6}", e.encoder, e.discriminability);
    }
    Ok(())
}
