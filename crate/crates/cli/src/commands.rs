//! The `train`, `gradcheck`, `export-dot` and `gen-data` commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;
use tinyflow::model::{
    build_classifier_forward, build_linear_classifier, ref_loss, ref_predict, ref_train,
    FORWARD_NODE_COUNT,
};
use tinyflow::{gradients, ClassifierInit, Params64, Session64, Tensor64};

use crate::dataset::{gen_synthetic, load_csv, load_iris_setosa_vs_rest, DataError, Dataset};

pub const DEFAULT_EPOCHS: usize = 1000;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MARGIN: f64 = 2.0;
pub const DEFAULT_GRADCHECK_EPS: f64 = 1e-6;
pub const DEFAULT_GRADCHECK_TRIALS: usize = 100;
/// `gradcheck` passes iff the largest relative error is at most this.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] tinyflow::Error),
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } | CliError::Engine(_) => 3,
            CliError::GradcheckFailed(_) => 1,
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Graph,
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv { path: PathBuf, setosa_vs_rest: bool },
    Synthetic { n: usize, margin: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub engine: Engine,
    pub data: DataSource,
    /// Start from these parameters instead of a seeded `N(0, 0.01^2)` draw.
    pub init: Option<Params64>,
}

impl TrainConfig {
    pub fn new(engine: Engine, data: DataSource) -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: DEFAULT_SEED,
            engine,
            data,
            init: None,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.epochs == 0 {
            return Err(CliError::Config("epochs must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(CliError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let DataSource::Synthetic { n, margin } = self.data {
            check_synthetic(n, margin)?;
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<Dataset, CliError> {
        let d = match &self.data {
            DataSource::Csv {
                path,
                setosa_vs_rest: true,
            } => load_iris_setosa_vs_rest(path)?,
            DataSource::Csv { path, .. } => load_csv(path)?,
            DataSource::Synthetic { n, margin } => gen_synthetic(*n, self.seed, *margin),
        };
        d.require_both_classes()?;
        Ok(d)
    }
}

fn check_synthetic(n: usize, margin: f64) -> Result<(), CliError> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(CliError::Config(format!(
            "synthetic size must be a positive even number, got {n}"
        )));
    }
    if margin <= 0.0 || !margin.is_finite() {
        return Err(CliError::Config(format!(
            "margin must be positive, got {margin}"
        )));
    }
    Ok(())
}

/// Fraction of rows where `y >= 0.5` agrees with `z == 1`. A probability of
/// exactly 0.5 counts as class 1.
pub fn accuracy(y: &[f64], z: &[f64]) -> Result<f64, tinyflow::Error> {
    if y.len() != z.len() {
        return Err(tinyflow::Error::ShapeMismatch {
            op: "accuracy",
            detail: format!("{} predictions for {} labels", y.len(), z.len()),
        });
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let correct = y
        .iter()
        .zip(z)
        .filter(|(&yi, &zi)| (yi >= 0.5) == (zi == 1.0))
        .count();
    Ok(correct as f64 / y.len() as f64)
}

/// The parameters a seeded session draws for the classifier.
pub fn initial_params(seed: u64) -> Result<Params64, CliError> {
    let (g, m) = build_classifier_forward(ClassifierInit::default())?;
    let mut s = Session64::new(&g, seed)?;
    s.initialize_variables()?;
    let w = s.variable(m.w).expect("initialized").clone();
    let b = s.variable(m.b).expect("initialized").clone();
    Ok(Params64::from_tensors(w, b)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss and accuracy before each epoch's update.
    pub log: Vec<LogRow>,
    pub params: Params64,
    pub final_loss: f64,
    pub final_accuracy: f64,
    /// Graphviz text of the trained graph (graph engine only).
    pub dot: Option<String>,
}

impl TrainReport {
    pub fn loss_log_csv(&self) -> String {
        let mut out = String::from("epoch,loss,accuracy\n");
        for r in &self.log {
            let _ = writeln!(out, "{},{:.16e},{}", r.epoch, r.loss, r.accuracy);
        }
        out
    }

    pub fn params_csv(&self) -> String {
        let [w0, w1, b] = self.params.flat();
        format!("name,index,value\nW,0,{w0:.16e}\nW,1,{w1:.16e}\nb,0,{b:.16e}\n")
    }
}

/// Trains on an already loaded dataset.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainReport, CliError> {
    config.validate()?;
    let start = match &config.init {
        Some(p) => p.clone(),
        None => initial_params(config.seed)?,
    };
    match config.engine {
        Engine::Graph => train_graph(config, data, start),
        Engine::Reference => train_reference(config, data, start),
    }
}

fn train_graph(
    config: &TrainConfig,
    data: &Dataset,
    start: Params64,
) -> Result<TrainReport, CliError> {
    let (g, m) = build_linear_classifier(config.learning_rate, ClassifierInit::explicit(&start))?;
    let mut s = Session64::new(&g, config.seed)?;
    s.initialize_variables()?;
    let feeds = m.nodes.feeds(&data.x, &data.z);

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, extra) = s.apply_step_fetching(&m.step, &feeds, &[m.nodes.y])?;
        log.push(LogRow {
            epoch,
            loss: loss.as_scalar().expect("scalar loss"),
            accuracy: accuracy(extra[0].data(), data.z.data())?,
        });
    }
    let out = s.run(&[m.nodes.loss, m.nodes.y], &feeds)?;
    let params = Params64::from_tensors(
        s.variable(m.nodes.w).expect("initialized").clone(),
        s.variable(m.nodes.b).expect("initialized").clone(),
    )?;
    Ok(TrainReport {
        log,
        params,
        final_loss: out[0].as_scalar().expect("scalar loss"),
        final_accuracy: accuracy(out[1].data(), data.z.data())?,
        dot: Some(g.export_dot()),
    })
}

fn train_reference(
    config: &TrainConfig,
    data: &Dataset,
    start: Params64,
) -> Result<TrainReport, CliError> {
    let mut log = Vec::with_capacity(config.epochs);
    let mut params = start;
    for epoch in 0..config.epochs {
        let y = ref_predict(&data.x, &params)?;
        let (next, trace) = ref_train(&data.x, &data.z, 1, config.learning_rate, params)?;
        log.push(LogRow {
            epoch,
            loss: trace[0],
            accuracy: accuracy(y.data(), data.z.data())?,
        });
        params = next;
    }
    let y = ref_predict(&data.x, &params)?;
    Ok(TrainReport {
        log,
        final_loss: ref_loss(&data.x, &data.z, &params)?,
        final_accuracy: accuracy(y.data(), data.z.data())?,
        params,
        dot: None,
    })
}

/// Loads data, trains, and writes `loss_log.csv`, `params.csv` and (graph
/// engine) `graph.dot` into `out_dir`.
pub fn cmd_train(config: &TrainConfig, out_dir: &Path) -> Result<TrainReport, CliError> {
    config.validate()?;
    let data = config.load_data()?;
    let report = train(config, &data)?;
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    write_file(&out_dir.join("loss_log.csv"), &report.loss_log_csv())?;
    write_file(&out_dir.join("params.csv"), &report.params_csv())?;
    if let Some(dot) = &report.dot {
        write_file(&out_dir.join("graph.dot"), dot)?;
    }
    Ok(report)
}

/// Outcome of comparing autodiff adjoints against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_rel_error: f64,
    /// Description of the instance with the largest error.
    pub worst: Option<String>,
    /// A perturbation of size `eps` left some coordinate unchanged.
    pub degenerate: bool,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.degenerate && self.max_rel_error <= GRADCHECK_TOLERANCE
    }
}

/// `|a - b| / max(|a|, |b|, 1)`: relative for large values, absolute near
/// zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    if d.is_nan() {
        f64::INFINITY
    } else {
        d
    }
}

/// Checks the adjoints of the classifier loss with respect to `W`, `b` and
/// `X` on `trials` random instances (1 to 16 rows, features in `[-2, 2]`,
/// random labels, parameters from `N(0, 1)`).
pub fn gradcheck(seed: u64, eps: f64, trials: usize) -> Result<GradcheckReport, CliError> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(CliError::Config(format!("eps must be positive, got {eps}")));
    }
    let (mut g, m) = build_classifier_forward(ClassifierInit::zeros())?;
    let targets = [m.w, m.b, m.x];
    let grads = gradients(&mut g, m.loss, &targets)?;
    let mut session = Session64::new(&g, seed)?;
    session.initialize_variables()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut report = GradcheckReport {
        trials,
        max_rel_error: 0.0,
        worst: None,
        degenerate: false,
    };
    for trial in 0..trials {
        let n = rng.random_range(1..=16);
        let x = Tensor64::new(
            &[n, 2],
            (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )?;
        let z = Tensor64::vector(
            (0..n)
                .map(|_| f64::from(rng.random_range(0..2u8)))
                .collect(),
        );
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let p = Params64::new(normal(), normal(), normal());
        session.set_variable(m.w, p.weights.clone())?;
        session.set_variable(m.b, p.bias.clone())?;
        let feeds = m.feeds(&x, &z);
        let analytic = session.run(&grads, &feeds)?;
        let bases = [p.weights.clone(), p.bias.clone(), x.clone()];

        for ((&target, base), adj) in targets.iter().zip(&bases).zip(&analytic) {
            for k in 0..base.len() {
                let mut plus = base.data().to_vec();
                let mut minus = base.data().to_vec();
                plus[k] += eps;
                minus[k] -= eps;
                if plus[k] == base.data()[k] || minus[k] == base.data()[k] {
                    report.degenerate = true;
                }
                let eval = |v: Vec<f64>| -> Result<f64, CliError> {
                    let mut o = BTreeMap::new();
                    o.insert(target, Tensor64::new(base.dims(), v)?);
                    Ok(session.evaluate(&[m.loss], &feeds, &o)?[0]
                        .as_scalar()
                        .expect("scalar loss"))
                };
                let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
                let err = relative_error(adj.data()[k], numeric);
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.worst = Some(describe_instance(
                        trial,
                        g.node(target)?.name(),
                        k,
                        adj.data()[k],
                        numeric,
                        &p,
                        &x,
                        &z,
                    ));
                }
            }
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn describe_instance(
    trial: usize,
    target: &str,
    index: usize,
    analytic: f64,
    numeric: f64,
    p: &Params64,
    x: &Tensor64,
    z: &Tensor64,
) -> String {
    let [w0, w1, b] = p.flat();
    format!(
        "trial {trial}, d{target}[{index}]: autodiff {analytic:e}, finite difference {numeric:e}; \
         W = [{w0}, {w1}], b = {b}, X = {:?}, Z = {:?}",
        x.data(),
        z.data()
    )
}

/// Writes the classifier graph as DOT; with `with_gradients` the adjoints of
/// the loss for `b`, `W` and `X` are added first. Returns `(vertices, edges)`.
pub fn cmd_export_dot(out: &Path, with_gradients: bool) -> Result<(usize, usize), CliError> {
    let (mut g, m) = build_classifier_forward::<f64>(ClassifierInit::default())?;
    debug_assert_eq!(g.len(), FORWARD_NODE_COUNT);
    if with_gradients {
        gradients(&mut g, m.loss, &[m.b, m.w, m.x])?;
    }
    write_file(out, &g.export_dot())?;
    let edges = g.nodes().iter().map(|n| n.inputs().len()).sum();
    Ok((g.len(), edges))
}

pub fn cmd_gen_data(n: usize, seed: u64, margin: f64, out: &Path) -> Result<Dataset, CliError> {
    check_synthetic(n, margin)?;
    let d = gen_synthetic(n, seed, margin);
    write_file(out, &d.to_csv())?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.4], &[1.0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0.5], &[1.0]).unwrap(), 1.0);
        assert!(accuracy(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(Engine::Graph, DataSource::Synthetic { n: 10, margin: 2.0 });
        assert!(c.validate().is_ok());
        c.epochs = 0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        c.epochs = 1;
        c.learning_rate = -0.1;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        c.learning_rate = 0.1;
        c.data = DataSource::Synthetic { n: 3, margin: 2.0 };
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn initial_params_are_small_and_seeded() {
        let a = initial_params(42).unwrap();
        assert_eq!(a, initial_params(42).unwrap());
        assert_ne!(a, initial_params(1).unwrap());
        assert!(a.flat().iter().all(|v| v.abs() < 0.1));
    }

    #[test]
    fn gradcheck_small_run() {
        let r = gradcheck(1, 1e-6, 5).unwrap();
        assert!(r.passed(), "{r:?}");
        let r = gradcheck(1, 1e-300, 2).unwrap();
        assert!(r.degenerate && !r.passed());
        let r = gradcheck(1, 1e-6, 0).unwrap();
        assert!(r.passed() && r.worst.is_none());
        assert!(gradcheck(1, 0.0, 1).is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 0.0), 1e-9);
        assert_eq!(relative_error(200.0, 100.0), 0.5);
        assert_eq!(relative_error(f64::NAN, 1.0), f64::INFINITY);
    }
}
