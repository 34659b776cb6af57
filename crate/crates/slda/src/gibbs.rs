//! The augment-and-collapse Gibbs sampler.
//!
//! With the topic and proportion Dirichlets integrated out, one training
//! sweep draws, in order:
//!
//! 1. classifier weights `η` from a K-dimensional Gaussian whose precision is
//!    `I/ν² + Σ_d λ_d z̄_d z̄_dᵀ` and whose mean is the precision-solve of
//!    `Σ_d κ_d z̄_d`, where `κ_d = c(y_d - 1/2)`;
//! 2. every token's topic from the collapsed count conditional times a
//!    supervision tilt `exp(γκ_d η_k - λ_d(γ²η_k² + 2γ(1-γ)η_k Λ)/2)` with
//!    `γ = 1/N_d` and `Λ` the held-out discriminant `Σ_k η_k C_d^k/(N_d-1)`;
//! 3. each document's augmentation variable `λ_d ~ PG(c, η᷆ᵀz̄_d)`.
//!
//! After the configured number of sweeps one more `η` draw is taken as the
//! classifier. In unsupervised mode steps 1 and 3 are skipped and the token
//! conditional reduces exactly to collapsed LDA.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledCorpus;
use crate::linalg::{sample_mvn_with_factor, SpdMatrix};
use crate::polya_gamma::{sample_pg, PgParams};
use crate::predict::{estimate_phi, TrainedModel};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("k must be at least 1")]
    ZeroTopics,
    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("c must be positive for supervised training, got {0}; use unsupervised mode to train plain LDA")]
    NonPositiveC(f64),
    #[error("nu2 must be positive, got {0}")]
    NonPositiveNu2(f64),
    #[error("eta_avg_samples must be at least 1")]
    ZeroEtaSamples,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("supervised training requires binary labels, found label {0}; relabel one-vs-rest first")]
    NonBinaryLabels(usize),
}

/// Sampler hyperparameters and run settings.
///
/// `alpha` and `beta` are per-component symmetric Dirichlet values; callers
/// working with an aggregate document prior should divide it by `k` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Supervision weight: the exponent on the logistic response likelihood.
    pub c: f64,
    /// Prior variance of each classifier component.
    pub nu2: f64,
    /// Number of full Gibbs sweeps before the classifier is drawn.
    pub burn_in: usize,
    pub seed: u64,
    /// When false, the classifier and augmentation steps are skipped and the
    /// sampler is plain collapsed LDA.
    #[serde(default = "default_supervised")]
    pub supervised: bool,
    /// Number of trailing classifier draws averaged into the final
    /// classifier; 1 keeps the single post-sweep draw.
    #[serde(default = "default_eta_avg")]
    pub eta_avg_samples: usize,
}

fn default_supervised() -> bool {
    true
}

fn default_eta_avg() -> usize {
    1
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::ZeroTopics);
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(ConfigError::NonPositiveAlpha(self.alpha));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(ConfigError::NonPositiveBeta(self.beta));
        }
        if self.supervised && (self.c.is_nan() || self.c <= 0.0) {
            return Err(ConfigError::NonPositiveC(self.c));
        }
        if self.nu2.is_nan() || self.nu2 <= 0.0 {
            return Err(ConfigError::NonPositiveNu2(self.nu2));
        }
        if self.eta_avg_samples == 0 {
            return Err(ConfigError::ZeroEtaSamples);
        }
        Ok(())
    }
}

/// Signed supervision weight `c·(y - 1/2)` of a binary label.
pub fn kappa(c: f64, y: usize) -> f64 {
    debug_assert!(y <= 1, "kappa expects a binary label");
    c * (y as f64 - 0.5)
}

/// Deterministic per-stream seed derivation (splitmix64 finalizer), used to
/// give every class and every prediction its own reproducible stream.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut x = master.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-document derived quantities of the current state.
#[derive(Debug, Clone)]
pub struct DocStats {
    /// Empirical topic proportions `C_d^k / N_d`.
    pub zbar: Vec<f64>,
    /// Discriminant value `ηᵀ z̄`.
    pub omega: f64,
    /// Signed supervision weight `c(y - 1/2)`.
    pub kappa: f64,
}

/// Wall-clock totals for the three sweep step kinds.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepTimings {
    pub lambda: Duration,
    pub eta: Duration,
    pub z: Duration,
    pub total: Duration,
}

/// Mutable sampler state: per-token assignments, the three count arrays kept
/// in sync with them, classifier weights, augmentation variables, and the
/// chain's random stream. One state is owned by exactly one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    k: usize,
    v: usize,
    z: Vec<Vec<usize>>,
    /// K×V topic-term counts, row-major.
    ckt: Vec<usize>,
    /// D×K document-topic counts, row-major.
    cdk: Vec<usize>,
    /// Per-topic totals, the row sums of `ckt`.
    ck: Vec<usize>,
    eta: Vec<f64>,
    lambda: Vec<f64>,
    rng: ChaCha8Rng,
}

impl ChainState {
    /// Initializes a chain: every `λ_d = 1`, every token's topic uniform on
    /// `[0, K)`, classifier weights zero, counts consistent by construction.
    pub fn init(corpus: &LabeledCorpus, config: &ModelConfig) -> Self {
        let k = config.k;
        let v = corpus.vocab_size();
        let d_count = corpus.num_docs();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ckt = vec![0usize; k * v];
        let mut cdk = vec![0usize; d_count * k];
        let mut ck = vec![0usize; k];
        let mut z = Vec::with_capacity(d_count);
        for (d, doc) in corpus.docs().iter().enumerate() {
            let mut zd = Vec::with_capacity(doc.len());
            for &term in doc.tokens() {
                let topic = rng.random_range(0..k);
                zd.push(topic);
                ckt[topic * v + term] += 1;
                cdk[d * k + topic] += 1;
                ck[topic] += 1;
            }
            z.push(zd);
        }
        Self {
            k,
            v,
            z,
            ckt,
            cdk,
            ck,
            eta: vec![0.0; k],
            lambda: vec![1.0; d_count],
            rng,
        }
    }

    pub fn num_topics(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    pub fn num_docs(&self) -> usize {
        self.lambda.len()
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn assignments(&self, d: usize) -> &[usize] {
        &self.z[d]
    }

    pub fn doc_topic_counts(&self, d: usize) -> &[usize] {
        &self.cdk[d * self.k..(d + 1) * self.k]
    }

    pub fn topic_term_counts(&self, topic: usize) -> &[usize] {
        &self.ckt[topic * self.v..(topic + 1) * self.v]
    }

    pub fn topic_total(&self, topic: usize) -> usize {
        self.ck[topic]
    }

    pub fn set_eta(&mut self, eta: Vec<f64>) {
        assert_eq!(eta.len(), self.k);
        self.eta = eta;
    }

    pub fn set_lambda(&mut self, lambda: Vec<f64>) {
        assert_eq!(lambda.len(), self.num_docs());
        assert!(lambda.iter().all(|&l| l > 0.0), "lambda must stay positive");
        self.lambda = lambda;
    }

    /// Reassigns one token's topic, keeping the count arrays in sync.
    pub fn set_assignment(
        &mut self,
        corpus: &LabeledCorpus,
        d: usize,
        n: usize,
        topic: usize,
    ) {
        assert!(topic < self.k);
        let term = corpus.doc(d).tokens()[n];
        let old = self.z[d][n];
        self.remove_token(d, term, old);
        self.add_token(d, term, topic);
        self.z[d][n] = topic;
    }

    #[inline]
    fn remove_token(&mut self, d: usize, term: usize, topic: usize) {
        self.ckt[topic * self.v + term] -= 1;
        self.cdk[d * self.k + topic] -= 1;
        self.ck[topic] -= 1;
    }

    #[inline]
    fn add_token(&mut self, d: usize, term: usize, topic: usize) {
        self.ckt[topic * self.v + term] += 1;
        self.cdk[d * self.k + topic] += 1;
        self.ck[topic] += 1;
    }

    /// Empirical proportions, discriminant, and supervision weight of one
    /// document under the current counts.
    pub fn doc_stats(&self, corpus: &LabeledCorpus, config: &ModelConfig, d: usize) -> DocStats {
        let n_d = corpus.doc(d).len() as f64;
        let zbar: Vec<f64> = self
            .doc_topic_counts(d)
            .iter()
            .map(|&c| c as f64 / n_d)
            .collect();
        let omega = self.eta.iter().zip(&zbar).map(|(e, z)| e * z).sum();
        DocStats {
            zbar,
            omega,
            kappa: kappa(config.c, corpus.label(d)),
        }
    }

    /// Posterior-mean mixing proportion estimate `(C_d^k + α) / (N_d + Kα)`.
    pub fn estimate_theta(&self, config: &ModelConfig, d: usize) -> Vec<f64> {
        let counts = self.doc_topic_counts(d);
        let total: f64 =
            counts.iter().sum::<usize>() as f64 + self.k as f64 * config.alpha;
        counts
            .iter()
            .map(|&c| (c as f64 + config.alpha) / total)
            .collect()
    }

    /// Draws the classifier weights from their Gaussian conditional given the
    /// current assignments and augmentation variables.
    pub fn sample_eta(&mut self, corpus: &LabeledCorpus, config: &ModelConfig) {
        let (precision, mean) = self.eta_posterior(corpus, config);
        let chol = precision
            .cholesky()
            .expect("precision is positive definite while nu2 > 0 and lambda > 0");
        let mean = chol.solve(&mean).expect("dimensions match");
        self.eta = sample_mvn_with_factor(&mean, &chol, &mut self.rng).expect("dimensions match");
    }

    /// Precision matrix and unsolved mean vector (`Σ_d κ_d z̄_d`) of the
    /// classifier conditional.
    fn eta_posterior(&self, corpus: &LabeledCorpus, config: &ModelConfig) -> (SpdMatrix, Vec<f64>) {
        let k = self.k;
        let mut zbar = vec![0.0; k];
        let contributions = (0..corpus.num_docs()).map(|d| {
            let n_d = corpus.doc(d).len() as f64;
            for (zb, &c) in zbar.iter_mut().zip(self.doc_topic_counts(d)) {
                *zb = c as f64 / n_d;
            }
            (zbar.clone(), self.lambda[d], kappa(config.c, corpus.label(d)))
        });
        eta_posterior_params(k, config.nu2, contributions)
    }

    /// Redraws one document's augmentation variable `λ_d ~ PG(c, ω_d)` with
    /// `ω_d` recomputed from the current counts.
    pub fn sample_lambda(&mut self, corpus: &LabeledCorpus, config: &ModelConfig, d: usize) {
        let n_d = corpus.doc(d).len() as f64;
        let omega: f64 = self
            .eta
            .iter()
            .zip(self.doc_topic_counts(d))
            .map(|(e, &c)| e * c as f64 / n_d)
            .sum();
        let params = PgParams::new(config.c, omega).expect("validated config");
        self.lambda[d] = sample_pg(params, &mut self.rng);
    }

    /// Resamples one token's topic with the exclude-then-include protocol:
    /// its counts are removed, a new topic is drawn from the collapsed
    /// conditional, and the counts are restored under the new topic.
    pub fn sample_z_token(
        &mut self,
        corpus: &LabeledCorpus,
        config: &ModelConfig,
        d: usize,
        n: usize,
    ) -> usize {
        let mut buf = Vec::with_capacity(self.k);
        self.resample_token(corpus, config, d, n, None, &mut buf)
    }

    /// Normalized topic probabilities of one token given every other
    /// assignment. Restores the state exactly before returning.
    pub fn token_conditional(
        &mut self,
        corpus: &LabeledCorpus,
        config: &ModelConfig,
        d: usize,
        n: usize,
    ) -> Vec<f64> {
        let term = corpus.doc(d).tokens()[n];
        let old = self.z[d][n];
        self.remove_token(d, term, old);
        let n_d = corpus.doc(d).len();
        let (kappa_d, lambda_d, s) = self.supervision_inputs(corpus, config, d, n_d);
        let mut weights = Vec::with_capacity(self.k);
        self.token_log_weights(config, d, term, n_d, kappa_d, lambda_d, s, &mut weights);
        self.add_token(d, term, old);
        normalize_log_weights(&mut weights);
        weights
    }

    fn supervision_inputs(
        &self,
        corpus: &LabeledCorpus,
        config: &ModelConfig,
        d: usize,
        n_d: usize,
    ) -> (f64, f64, f64) {
        if !config.supervised {
            return (0.0, 0.0, 0.0);
        }
        let kappa_d = kappa(config.c, corpus.label(d));
        let s = if n_d > 1 {
            self.eta
                .iter()
                .zip(self.doc_topic_counts(d))
                .map(|(e, &c)| e * c as f64)
                .sum()
        } else {
            0.0
        };
        (kappa_d, self.lambda[d], s)
    }

    /// Log weights of the token conditional; counts must already exclude the
    /// token, and `s_excluded` must be `Σ_k η_k C_{d,¬n}^k`.
    #[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
    fn token_log_weights(
        &self,
        config: &ModelConfig,
        d: usize,
        term: usize,
        n_d: usize,
        kappa_d: f64,
        lambda_d: f64,
        s_excluded: f64,
        out: &mut Vec<f64>,
    ) {
        out.clear();
        let vbeta = self.v as f64 * config.beta;
        let cdk_doc = &self.cdk[d * self.k..(d + 1) * self.k];
        if !config.supervised {
            for topic in 0..self.k {
                let lw = (self.ckt[topic * self.v + term] as f64 + config.beta).ln()
                    - (self.ck[topic] as f64 + vbeta).ln()
                    + (cdk_doc[topic] as f64 + config.alpha).ln();
                out.push(lw);
            }
            return;
        }
        let gamma = 1.0 / n_d as f64;
        // For single-token documents γ = 1, so the held-out discriminant term
        // vanishes and its 1/(N_d - 1) factor is never formed.
        let cross = if n_d > 1 {
            2.0 * gamma * (1.0 - gamma) * (s_excluded / (n_d - 1) as f64)
        } else {
            0.0
        };
        for topic in 0..self.k {
            let e = self.eta[topic];
            let lw = (self.ckt[topic * self.v + term] as f64 + config.beta).ln()
                - (self.ck[topic] as f64 + vbeta).ln()
                + (cdk_doc[topic] as f64 + config.alpha).ln()
                + gamma * kappa_d * e
                - lambda_d * (gamma * gamma * e * e + cross * e) / 2.0;
            out.push(lw);
        }
    }

    /// Shared exclude-sample-include step. `running_s` carries the
    /// incrementally maintained `Σ_k η_k C_d^k` of the sweep hot path; `None`
    /// recomputes it from the counts.
    fn resample_token(
        &mut self,
        corpus: &LabeledCorpus,
        config: &ModelConfig,
        d: usize,
        n: usize,
        running_s: Option<f64>,
        buf: &mut Vec<f64>,
    ) -> usize {
        let term = corpus.doc(d).tokens()[n];
        let old = self.z[d][n];
        self.remove_token(d, term, old);
        let n_d = corpus.doc(d).len();
        let (kappa_d, lambda_d, s) = match running_s {
            Some(s) => {
                if config.supervised {
                    (kappa(config.c, corpus.label(d)), self.lambda[d], s)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            None => self.supervision_inputs(corpus, config, d, n_d),
        };
        self.token_log_weights(config, d, term, n_d, kappa_d, lambda_d, s, buf);
        let new = sample_from_log_weights(buf, &mut self.rng);
        self.add_token(d, term, new);
        self.z[d][n] = new;
        new
    }

    /// One pass over a document's tokens, maintaining the running discriminant
    /// sum so each token update is O(K).
    fn sweep_doc(
        &mut self,
        corpus: &LabeledCorpus,
        config: &ModelConfig,
        d: usize,
        buf: &mut Vec<f64>,
    ) {
        let n_d = corpus.doc(d).len();
        let track_s = config.supervised && n_d > 1;
        let mut s = if track_s {
            self.eta
                .iter()
                .zip(self.doc_topic_counts(d))
                .map(|(e, &c)| e * c as f64)
                .sum()
        } else {
            0.0
        };
        for n in 0..n_d {
            if track_s {
                s -= self.eta[self.z[d][n]];
            }
            let new = self.resample_token(corpus, config, d, n, Some(s), buf);
            if track_s {
                s += self.eta[new];
            }
        }
    }

    /// One full training sweep in sampling order: classifier, then per
    /// document all tokens followed by the augmentation variable.
    pub fn sweep(
        &mut self,
        corpus: &LabeledCorpus,
        config: &ModelConfig,
        timings: &mut StepTimings,
    ) {
        if config.supervised {
            let t = Instant::now();
            self.sample_eta(corpus, config);
            timings.eta += t.elapsed();
        }
        let mut buf = Vec::with_capacity(self.k);
        for d in 0..corpus.num_docs() {
            let t = Instant::now();
            self.sweep_doc(corpus, config, d, &mut buf);
            timings.z += t.elapsed();
            if config.supervised {
                let t = Instant::now();
                self.sample_lambda(corpus, config, d);
                timings.lambda += t.elapsed();
            }
        }
    }

    /// Sweeps only the token assignments, leaving `η` and `λ` untouched.
    /// The stationary distribution is then the assignment conditional given
    /// the fixed `η` and `λ`.
    pub fn sweep_assignments(&mut self, corpus: &LabeledCorpus, config: &ModelConfig) {
        let mut buf = Vec::with_capacity(self.k);
        for d in 0..corpus.num_docs() {
            self.sweep_doc(corpus, config, d, &mut buf);
        }
    }

    /// Recomputes all counts from the assignments and compares; also checks
    /// the row-sum identities.
    pub fn counts_consistent(&self, corpus: &LabeledCorpus) -> bool {
        let mut ckt = vec![0usize; self.k * self.v];
        let mut cdk = vec![0usize; self.num_docs() * self.k];
        let mut ck = vec![0usize; self.k];
        for (d, doc) in corpus.docs().iter().enumerate() {
            for (n, &term) in doc.tokens().iter().enumerate() {
                let topic = self.z[d][n];
                ckt[topic * self.v + term] += 1;
                cdk[d * self.k + topic] += 1;
                ck[topic] += 1;
            }
        }
        if ckt != self.ckt || cdk != self.cdk || ck != self.ck {
            return false;
        }
        for topic in 0..self.k {
            if self.topic_term_counts(topic).iter().sum::<usize>() != self.ck[topic] {
                return false;
            }
        }
        for (d, doc) in corpus.docs().iter().enumerate() {
            if self.doc_topic_counts(d).iter().sum::<usize>() != doc.len() {
                return false;
            }
        }
        true
    }
}

/// Builds the classifier conditional's precision matrix and unsolved mean
/// from per-document contributions. With no contributions the result is the
/// prior: precision `I/ν²`, mean zero.
pub(crate) fn eta_posterior_params(
    k: usize,
    nu2: f64,
    contributions: impl Iterator<Item = (Vec<f64>, f64, f64)>,
) -> (SpdMatrix, Vec<f64>) {
    let mut prec = vec![0.0; k * k];
    let inv_nu2 = 1.0 / nu2;
    for i in 0..k {
        prec[i * k + i] = inv_nu2;
    }
    let mut mean = vec![0.0; k];
    for (zbar, lambda_d, kappa_d) in contributions {
        for i in 0..k {
            mean[i] += kappa_d * zbar[i];
            let li = lambda_d * zbar[i];
            for j in 0..=i {
                prec[i * k + j] += li * zbar[j];
            }
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            prec[i * k + j] = prec[j * k + i];
        }
    }
    let precision = SpdMatrix::new(k, prec).expect("constructed symmetric");
    (precision, mean)
}

/// Normalizes log weights into probabilities with max-subtraction.
pub(crate) fn normalize_log_weights(weights: &mut [f64]) {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
}

/// Categorical draw from log weights: max-subtract, exponentiate, then a
/// single cumulative-sum scan against one uniform variate.
fn sample_from_log_weights<R: Rng + ?Sized>(weights: &mut [f64], rng: &mut R) -> usize {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Everything produced by a training run.
#[derive(Debug)]
pub struct TrainOutput {
    pub state: ChainState,
    pub model: TrainedModel,
    pub timings: StepTimings,
}

/// Runs the full training loop: `burn_in` sweeps, then a final classifier
/// draw (averaged over the trailing `eta_avg_samples` draws when configured).
pub fn run_training(
    corpus: &LabeledCorpus,
    config: &ModelConfig,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    if config.supervised {
        if let Some(&bad) = corpus.labels().iter().find(|&&y| y > 1) {
            return Err(TrainError::NonBinaryLabels(bad));
        }
    }
    let start = Instant::now();
    let mut timings = StepTimings::default();
    let mut state = ChainState::init(corpus, config);
    let keep = config.eta_avg_samples;
    let mut recent: VecDeque<Vec<f64>> = VecDeque::new();
    for _ in 0..config.burn_in {
        state.sweep(corpus, config, &mut timings);
        if config.supervised && keep > 1 {
            recent.push_back(state.eta.clone());
            while recent.len() >= keep {
                recent.pop_front();
            }
        }
        debug_assert!(state.counts_consistent(corpus));
    }
    if config.supervised {
        let t = Instant::now();
        state.sample_eta(corpus, config);
        timings.eta += t.elapsed();
    }
    timings.total = start.elapsed();

    let eta_hat = if config.supervised && keep > 1 {
        recent.push_back(state.eta.clone());
        let mut mean = vec![0.0; config.k];
        for draw in &recent {
            for (m, &e) in mean.iter_mut().zip(draw) {
                *m += e;
            }
        }
        for m in mean.iter_mut() {
            *m /= recent.len() as f64;
        }
        mean
    } else {
        state.eta.clone()
    };

    let phi_hat = estimate_phi(&state, config);
    let model = TrainedModel::from_parts(phi_hat, eta_hat, config.clone(), state.vocab_size());
    Ok(TrainOutput {
        state,
        model,
        timings,
    })
}
