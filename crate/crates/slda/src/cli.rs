//! Command-line front end: `train`, `predict`, and `verify`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{self, CorpusError, LabeledCorpus, Vocabulary};
use crate::gibbs::{
    derive_seed, run_training, ChainState, ModelConfig, StepTimings, TrainError,
};
use crate::linalg::{sample_mvn, SpdMatrix};
use crate::oracle::enumerate_joint;
use crate::polya_gamma::{pg_mean, sample_pg, PgParams};
use crate::predict::{
    load_model_file, predict_binary, predict_multiclass, save_model_file, ModelFile,
    OneVsAllModel, TrainedModel,
};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{failed} of {total} verification checks failed")]
    Verification { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Verification { .. } => EXIT_VERIFY,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => CliError::Usage(c.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<crate::predict::PredictError> for CliError {
    fn from(e: crate::predict::PredictError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "slda",
    about = "Supervised topic models trained by Polya-Gamma augmented collapsed Gibbs sampling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a binary model, or one binary model per class with --classes.
    Train(TrainArgs),
    /// Predict labels for a data file with a trained model.
    Predict(PredictArgs),
    /// Run the built-in correctness checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training data: one `<label> <termid>:<count> ...` document per line.
    #[arg(long)]
    pub data: PathBuf,
    /// Vocabulary file, one term per line (line number = term id).
    #[arg(long)]
    pub vocab: PathBuf,
    /// Number of topics.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Aggregate document Dirichlet weight; each component gets alpha/k.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Per-component topic Dirichlet weight.
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    /// Supervision weight (integer values keep the augmentation draws exact).
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Prior variance of each classifier component.
    #[arg(long, default_value_t = 1.0)]
    pub nu2: f64,
    /// Number of Gibbs sweeps before the classifier is drawn.
    #[arg(long, default_value_t = 100)]
    pub burnin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train one binary model per class (one-vs-all) for this many classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Maximum number of one-vs-all models trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Train plain LDA: skip the classifier and augmentation steps.
    #[arg(long)]
    pub unsupervised: bool,
    /// Average this many trailing classifier draws (1 = single final draw).
    #[arg(long, default_value_t = 1)]
    pub eta_avg: usize,
    /// Where to write the model file.
    #[arg(long)]
    pub model_out: PathBuf,
    /// Where to write the per-model metrics CSV.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model_in: PathBuf,
    /// Test data in the training line format.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional vocabulary file; its size must match the model's.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Collapsed Gibbs passes per test document.
    #[arg(long, default_value_t = 20)]
    pub test_sweeps: usize,
    /// Average the proportions of this many trailing test sweeps.
    #[arg(long, default_value_t = 1)]
    pub test_avg: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write one predicted label per line (stdout when omitted).
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Also run the chain distribution check with this many sweeps.
    #[arg(long)]
    pub tv_sweeps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses arguments and dispatches; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Verify(args) => cmd_verify(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn validate_train_args(args: &TrainArgs) -> Result<(), CliError> {
    if args.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    if !args.unsupervised && (args.c.is_nan() || args.c <= 0.0) {
        return Err(CliError::Usage(
            "--c must be positive (use --unsupervised to train plain LDA)".into(),
        ));
    }
    if args.alpha.is_nan() || args.alpha <= 0.0 {
        return Err(CliError::Usage("--alpha must be positive".into()));
    }
    if args.beta.is_nan() || args.beta <= 0.0 {
        return Err(CliError::Usage("--beta must be positive".into()));
    }
    if args.nu2.is_nan() || args.nu2 <= 0.0 {
        return Err(CliError::Usage("--nu2 must be positive".into()));
    }
    if args.parallel == 0 {
        return Err(CliError::Usage("--parallel must be at least 1".into()));
    }
    if args.eta_avg == 0 {
        return Err(CliError::Usage("--eta-avg must be at least 1".into()));
    }
    if let Some(classes) = args.classes {
        if classes < 2 {
            return Err(CliError::Usage("--classes must be at least 2".into()));
        }
    }
    Ok(())
}

fn base_config(args: &TrainArgs) -> ModelConfig {
    ModelConfig {
        k: args.k,
        // The aggregate prior is spread evenly over the K components.
        alpha: args.alpha / args.k as f64,
        beta: args.beta,
        c: args.c,
        nu2: args.nu2,
        burn_in: args.burnin,
        seed: args.seed,
        supervised: !args.unsupervised,
        eta_avg_samples: args.eta_avg,
    }
}

/// One trained one-vs-all component plus its run statistics.
pub struct ClassResult {
    pub class: usize,
    pub seed: u64,
    pub model: TrainedModel,
    pub timings: StepTimings,
    pub train_accuracy: f64,
}

/// Trains `classes` independent binary models, at most `parallel` at a time.
/// Class `m` trains on the one-vs-rest relabeling with the seed derived from
/// `(base.seed, m)`, so the result is bit-identical however the work is
/// scheduled.
pub fn train_one_vs_all(
    corpus: &LabeledCorpus,
    base: &ModelConfig,
    classes: usize,
    parallel: usize,
) -> Result<Vec<ClassResult>, CliError> {
    if corpus.num_classes() > classes {
        return Err(CliError::Data(format!(
            "labels name {} classes but --classes is {classes}",
            corpus.num_classes()
        )));
    }
    let train_class = |class: usize| -> Result<ClassResult, CliError> {
        let relabeled = corpus.relabel_one_vs_rest(class)?;
        let config = ModelConfig {
            seed: derive_seed(base.seed, class as u64),
            ..base.clone()
        };
        let out = run_training(&relabeled, &config)?;
        let train_accuracy = training_accuracy(&out.state, &out.model, &relabeled);
        Ok(ClassResult {
            class,
            seed: config.seed,
            model: out.model,
            timings: out.timings,
            train_accuracy,
        })
    };
    if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?;
        pool.install(|| {
            (0..classes)
                .into_par_iter()
                .map(train_class)
                .collect::<Result<Vec<_>, _>>()
        })
    } else {
        (0..classes).map(train_class).collect()
    }
}

/// Fraction of training documents whose final-state proportions the reported
/// classifier labels correctly.
pub fn training_accuracy(
    state: &ChainState,
    model: &TrainedModel,
    corpus: &LabeledCorpus,
) -> f64 {
    let mut correct = 0usize;
    for d in 0..corpus.num_docs() {
        let n_d = corpus.doc(d).len() as f64;
        let zbar: Vec<f64> = state
            .doc_topic_counts(d)
            .iter()
            .map(|&c| c as f64 / n_d)
            .collect();
        if predict_binary(model.eta_hat(), &zbar) == corpus.label(d) {
            correct += 1;
        }
    }
    correct as f64 / corpus.num_docs() as f64
}

struct MetricsRow {
    k: usize,
    c: f64,
    alpha: f64,
    burnin: usize,
    seed: u64,
    accuracy: f64,
    timings: StepTimings,
}

fn write_metrics(path: &PathBuf, rows: &[MetricsRow]) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    let mut emit = |line: String| -> Result<(), CliError> {
        writeln!(out, "{line}").map_err(|e| CliError::Data(format!("write failed: {e}")))
    };
    emit("k,c,alpha,burnin,seed,accuracy,time_lambda_s,time_eta_s,time_z_s,time_total_s".into())?;
    for r in rows {
        emit(format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.k,
            r.c,
            r.alpha,
            r.burnin,
            r.seed,
            r.accuracy,
            r.timings.lambda.as_secs_f64(),
            r.timings.eta.as_secs_f64(),
            r.timings.z.as_secs_f64(),
            r.timings.total.as_secs_f64(),
        ))?;
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    validate_train_args(args)?;
    let corpus = corpus::load_corpus(&args.data, &args.vocab)?;
    let config = base_config(args);
    let mut rows = Vec::new();
    match args.classes {
        None => {
            let out = run_training(&corpus, &config)?;
            let accuracy = training_accuracy(&out.state, &out.model, &corpus);
            println!(
                "trained binary model: k={} c={} burnin={} train-accuracy={:.4} time={:.3}s",
                args.k,
                args.c,
                args.burnin,
                accuracy,
                out.timings.total.as_secs_f64()
            );
            rows.push(MetricsRow {
                k: args.k,
                c: args.c,
                alpha: args.alpha,
                burnin: args.burnin,
                seed: args.seed,
                accuracy,
                timings: out.timings,
            });
            save_model_file(&args.model_out, &ModelFile::Binary(out.model))?;
        }
        Some(classes) => {
            let results = train_one_vs_all(&corpus, &config, classes, args.parallel)?;
            for r in &results {
                println!(
                    "trained class {} model: seed={} train-accuracy={:.4} time={:.3}s",
                    r.class,
                    r.seed,
                    r.train_accuracy,
                    r.timings.total.as_secs_f64()
                );
                rows.push(MetricsRow {
                    k: args.k,
                    c: args.c,
                    alpha: args.alpha,
                    burnin: args.burnin,
                    seed: r.seed,
                    accuracy: r.train_accuracy,
                    timings: r.timings,
                });
            }
            let models = results.into_iter().map(|r| r.model).collect();
            save_model_file(&args.model_out, &ModelFile::OneVsAll(OneVsAllModel::new(models)?))?;
        }
    }
    if let Some(metrics_path) = &args.metrics_out {
        write_metrics(metrics_path, &rows)?;
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let model = load_model_file(&args.model_in)?;
    let model_v = match &model {
        ModelFile::Binary(m) => m.vocab_size(),
        ModelFile::OneVsAll(ova) => ova.class_model(0).vocab_size(),
    };
    if let Some(vocab_path) = &args.vocab {
        let vocab = Vocabulary::load(vocab_path)?;
        if vocab.len() != model_v {
            return Err(CliError::Data(format!(
                "model/data mismatch: model vocabulary size {model_v}, vocab file has {}",
                vocab.len()
            )));
        }
    }
    // Term ids beyond the model's vocabulary are allowed here; they count as
    // unseen terms and are dropped at inference time.
    let corpus = corpus::load_corpus_unbounded(&args.data)?;

    let mut predictions: Vec<i64> = Vec::with_capacity(corpus.num_docs());
    let mut failures = 0usize;
    for d in 0..corpus.num_docs() {
        let tokens = corpus.doc(d).tokens();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, d as u64));
        let outcome = match &model {
            ModelFile::Binary(m) => crate::predict::infer_test_zbar_averaged(
                m,
                tokens,
                args.test_sweeps,
                args.test_avg,
                &mut rng,
            )
            .map(|zbar| predict_binary(m.eta_hat(), &zbar)),
            ModelFile::OneVsAll(ova) => {
                predict_multiclass(ova, tokens, args.test_sweeps, args.test_avg, &mut rng)
            }
        };
        match outcome {
            Ok(label) => predictions.push(label as i64),
            Err(e) => {
                eprintln!("document {}: {e}", d + 1);
                predictions.push(-1);
                failures += 1;
            }
        }
    }

    let mut out: Box<dyn Write> = match &args.predictions_out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| {
            CliError::Data(format!("cannot write {}: {e}", path.display()))
        })?)),
        None => Box::new(std::io::stdout().lock()),
    };
    for p in &predictions {
        writeln!(out, "{p}").map_err(|e| CliError::Data(format!("write failed: {e}")))?;
    }
    out.flush()
        .map_err(|e| CliError::Data(format!("write failed: {e}")))?;

    let correct = predictions
        .iter()
        .zip(corpus.labels())
        .filter(|(&p, &y)| p >= 0 && p as usize == y)
        .count();
    let accuracy = correct as f64 / corpus.num_docs() as f64;
    eprintln!(
        "accuracy {:.4} over {} documents ({} failed)",
        accuracy,
        corpus.num_docs(),
        failures
    );
    if failures > 0 {
        return Err(CliError::Data(format!(
            "{failures} document(s) had no terms known to the model"
        )));
    }
    Ok(())
}

/// Outcome of one verification check.
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let outcomes = run_verification(args.tv_sweeps, args.seed);
    let mut failed = 0usize;
    for o in &outcomes {
        println!(
            "{} {} ({})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        Err(CliError::Verification {
            failed,
            total: outcomes.len(),
        })
    } else {
        Ok(())
    }
}

/// Tiny instance used by the verification checks: 2 documents of 2 tokens
/// each over a 2-term vocabulary with fixed classifier and augmentation
/// values.
fn verification_instance() -> (LabeledCorpus, ModelConfig, Vec<f64>, Vec<f64>) {
    let corpus = LabeledCorpus::new(
        vec![
            corpus::Document::new(vec![0, 1]).unwrap(),
            corpus::Document::new(vec![1, 0]).unwrap(),
        ],
        vec![1, 0],
        2,
    )
    .unwrap();
    let config = ModelConfig {
        k: 2,
        alpha: 0.3,
        beta: 0.2,
        c: 2.0,
        nu2: 1.0,
        burn_in: 0,
        seed: 0,
        supervised: true,
        eta_avg_samples: 1,
    };
    (corpus, config, vec![0.9, -0.6], vec![1.4, 0.8])
}

/// Runs the invariant suite; the chain distribution check is included only
/// when `tv_sweeps` is given.
pub fn run_verification(tv_sweeps: Option<usize>, seed: u64) -> Vec<CheckOutcome> {
    let mut outcomes = vec![
        check_conditional_vs_enumeration(),
        check_pg_moments(seed),
        check_mvn_moments(seed),
    ];
    if let Some(sweeps) = tv_sweeps {
        outcomes.push(check_chain_tv(sweeps, seed));
    }
    outcomes
}

fn check_conditional_vs_enumeration() -> CheckOutcome {
    let (corpus, config, eta, lambda) = verification_instance();
    let post = enumerate_joint(&corpus, &config, &eta, &lambda).expect("tiny instance");
    let mut state = ChainState::init(&corpus, &config);
    state.set_eta(eta);
    state.set_lambda(lambda);
    let mut max_err = 0.0_f64;
    for code in 0..post.num_configs() {
        let assignment = post.decode(code);
        for (d, doc) in assignment.iter().enumerate() {
            for (n, &topic) in doc.iter().enumerate() {
                state.set_assignment(&corpus, d, n, topic);
            }
        }
        for d in 0..corpus.num_docs() {
            for n in 0..corpus.doc(d).len() {
                let ours = state.token_conditional(&corpus, &config, d, n);
                let exact = post.token_conditional(code, post.token_index(d, n));
                for k in 0..config.k {
                    max_err = max_err.max((ours[k] - exact[k]).abs());
                }
            }
        }
    }
    CheckOutcome {
        name: "token-conditional-vs-enumeration",
        passed: max_err <= 1e-12,
        detail: format!("max abs error {max_err:.3e}, tolerance 1e-12"),
    }
}

fn check_pg_moments(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 101));
    let n = 100_000;
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for &(a, b) in &[(1.0, 0.0), (1.0, 2.0), (2.0, 0.0), (25.0, 0.0), (1.0, -2.0)] {
        let params = PgParams::new(a, b).expect("valid grid");
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = sample_pg(params, &mut rng);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let z = (mean - pg_mean(a, b)).abs() / se;
        if z > worst {
            worst = z;
            detail = format!("worst case PG({a},{b}): |z| = {z:.2}");
        }
    }
    CheckOutcome {
        name: "pg-moment-identity",
        passed: worst < 3.0,
        detail: format!("{detail}, limit 3 SE"),
    }
}

fn check_mvn_moments(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 202));
    let n = 100_000;
    let precision = SpdMatrix::new(2, vec![4.0, 0.0, 0.0, 1.0]).expect("diagonal");
    let mu = [5.0, -5.0];
    let sigma2 = [0.25, 1.0];
    let mut sums = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let x = sample_mvn(&mu, &precision, &mut rng).expect("valid precision");
        for i in 0..2 {
            sums[i] += x[i];
            sq[i] += (x[i] - mu[i]) * (x[i] - mu[i]);
        }
    }
    let nf = n as f64;
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let mean_z = (sums[i] / nf - mu[i]).abs() / (sigma2[i] / nf).sqrt();
        let var = sq[i] / nf;
        let var_z = (var - sigma2[i]).abs() / (sigma2[i] * (2.0 / nf).sqrt());
        worst = worst.max(mean_z).max(var_z);
    }
    CheckOutcome {
        name: "mvn-moments",
        passed: worst < 3.0,
        detail: format!("worst |z| = {worst:.2}, limit 3 SE"),
    }
}

fn check_chain_tv(sweeps: usize, seed: u64) -> CheckOutcome {
    let (corpus, config, eta, lambda) = verification_instance();
    let post = enumerate_joint(&corpus, &config, &eta, &lambda).expect("tiny instance");
    let mut state = ChainState::init(
        &corpus,
        &ModelConfig {
            seed: derive_seed(seed, 303),
            ..config.clone()
        },
    );
    state.set_eta(eta);
    state.set_lambda(lambda);
    let burn = 1000;
    for _ in 0..burn {
        state.sweep_assignments(&corpus, &config);
    }
    let mut counts = vec![0u64; post.num_configs()];
    for _ in 0..sweeps {
        state.sweep_assignments(&corpus, &config);
        let mut code = 0;
        let mut base = 1;
        for d in 0..corpus.num_docs() {
            for &z in state.assignments(d) {
                code += z * base;
                base *= config.k;
            }
        }
        counts[code] += 1;
    }
    let tv: f64 = counts
        .iter()
        .zip(post.weights())
        .map(|(&c, &p)| (c as f64 / sweeps as f64 - p).abs())
        .sum::<f64>()
        / 2.0;
    CheckOutcome {
        name: "chain-tv-distance",
        passed: tv < 0.05,
        detail: format!("TV {tv:.4} over {sweeps} sweeps, threshold 0.05"),
    }
}
