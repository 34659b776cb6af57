//! Topic point estimates, test-document inference, and prediction.
//!
//! Prediction replaces the topic posterior with the smoothed count estimate
//! `φ̂_kt ∝ C_k^t + β`, infers a test document's topic proportions by a short
//! collapsed Gibbs run against that fixed `φ̂`, and thresholds the classifier
//! score `η̂ᵀz̄` at zero. Multi-class prediction aggregates independent
//! one-vs-all binary models by maximum score.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gibbs::{derive_seed, ChainState, ModelConfig};

/// Version stamp written into every model file.
pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("document contains no terms known to the model (all {dropped} tokens dropped)")]
    NoKnownTerms { dropped: usize },
    #[error("model file version {got} is not supported (expected {expected})")]
    UnsupportedVersion { got: u32, expected: u32 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("one-vs-all model needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("one-vs-all models disagree on {field}")]
    InconsistentModels { field: &'static str },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// A trained binary model: the topic point estimate, the sampled classifier,
/// and the configuration it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    vocab_size: usize,
    config: ModelConfig,
    /// K×V row-stochastic matrix, row-major.
    phi_hat: Vec<f64>,
    eta_hat: Vec<f64>,
}

impl TrainedModel {
    pub fn from_parts(
        phi_hat: Vec<f64>,
        eta_hat: Vec<f64>,
        config: ModelConfig,
        vocab_size: usize,
    ) -> Self {
        let model = Self {
            vocab_size,
            config,
            phi_hat,
            eta_hat,
        };
        debug_assert!(model.validate().is_ok());
        model
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_topics(&self) -> usize {
        self.config.k
    }

    pub fn phi_hat(&self) -> &[f64] {
        &self.phi_hat
    }

    pub fn phi_row(&self, topic: usize) -> &[f64] {
        &self.phi_hat[topic * self.vocab_size..(topic + 1) * self.vocab_size]
    }

    pub fn eta_hat(&self) -> &[f64] {
        &self.eta_hat
    }

    /// Checks the structural invariants: shapes, positive entries, and rows
    /// summing to one within 1e-10.
    pub fn validate(&self) -> Result<(), PredictError> {
        let k = self.config.k;
        self.config
            .validate()
            .map_err(|e| PredictError::InvalidModel(e.to_string()))?;
        if self.vocab_size == 0 {
            return Err(PredictError::InvalidModel("vocab_size is zero".into()));
        }
        if self.phi_hat.len() != k * self.vocab_size {
            return Err(PredictError::InvalidModel(format!(
                "phi_hat has {} entries, expected {}",
                self.phi_hat.len(),
                k * self.vocab_size
            )));
        }
        if self.eta_hat.len() != k {
            return Err(PredictError::InvalidModel(format!(
                "eta_hat has {} entries, expected {}",
                self.eta_hat.len(),
                k
            )));
        }
        for topic in 0..k {
            let row = self.phi_row(topic);
            if row.iter().any(|&p| p.is_nan() || p <= 0.0) {
                return Err(PredictError::InvalidModel(format!(
                    "phi_hat row {topic} has a non-positive entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(PredictError::InvalidModel(format!(
                    "phi_hat row {topic} sums to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// One independent binary model per class, sharing everything but labels and
/// seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct OneVsAllModel {
    models: Vec<TrainedModel>,
}

impl OneVsAllModel {
    pub fn new(models: Vec<TrainedModel>) -> Result<Self, PredictError> {
        if models.len() < 2 {
            return Err(PredictError::TooFewClasses(models.len()));
        }
        let first = &models[0];
        for m in &models[1..] {
            if m.config.k != first.config.k {
                return Err(PredictError::InconsistentModels { field: "k" });
            }
            if m.vocab_size != first.vocab_size {
                return Err(PredictError::InconsistentModels { field: "vocab_size" });
            }
            if m.config.alpha != first.config.alpha
                || m.config.beta != first.config.beta
                || m.config.c != first.config.c
                || m.config.nu2 != first.config.nu2
                || m.config.burn_in != first.config.burn_in
                || m.config.supervised != first.config.supervised
            {
                return Err(PredictError::InconsistentModels { field: "config" });
            }
        }
        Ok(Self { models })
    }

    pub fn num_classes(&self) -> usize {
        self.models.len()
    }

    pub fn class_model(&self, class: usize) -> &TrainedModel {
        &self.models[class]
    }

    pub fn models(&self) -> &[TrainedModel] {
        &self.models
    }
}

/// Smoothed MAP topic estimate from the chain's counts:
/// `φ̂_kt = (C_k^t + β) / (Σ_t C_k^t + Vβ)`.
pub fn estimate_phi(state: &ChainState, config: &ModelConfig) -> Vec<f64> {
    let v = state.vocab_size();
    let vbeta = v as f64 * config.beta;
    let mut phi = Vec::with_capacity(config.k * v);
    for topic in 0..config.k {
        let denom = state.topic_total(topic) as f64 + vbeta;
        for &c in state.topic_term_counts(topic) {
            phi.push((c as f64 + config.beta) / denom);
        }
    }
    phi
}

/// Infers a test document's empirical topic proportions against the model's
/// fixed `φ̂`: uniform initialization, then `sweeps` collapsed passes with
/// `p(z_n = k | z_¬n) ∝ φ̂_{k,w_n} (C_¬n^k + α)`, returning the final-sweep
/// `z̄`. Tokens outside the training vocabulary are dropped first.
pub fn infer_test_zbar<R: Rng + ?Sized>(
    model: &TrainedModel,
    tokens: &[usize],
    sweeps: usize,
    rng: &mut R,
) -> Result<Vec<f64>, PredictError> {
    infer_test_zbar_averaged(model, tokens, sweeps, 1, rng)
}

/// [`infer_test_zbar`] with `z̄` averaged over the trailing `average_last`
/// sweeps instead of taken from the last one.
pub fn infer_test_zbar_averaged<R: Rng + ?Sized>(
    model: &TrainedModel,
    tokens: &[usize],
    sweeps: usize,
    average_last: usize,
    rng: &mut R,
) -> Result<Vec<f64>, PredictError> {
    let v = model.vocab_size;
    let k = model.config.k;
    let alpha = model.config.alpha;
    let kept: Vec<usize> = tokens.iter().copied().filter(|&t| t < v).collect();
    if kept.is_empty() {
        return Err(PredictError::NoKnownTerms {
            dropped: tokens.len(),
        });
    }
    let n = kept.len();
    let mut z: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut counts = vec![0usize; k];
    for &topic in &z {
        counts[topic] += 1;
    }
    let average_last = average_last.max(1).min(sweeps.max(1));
    let avg_from = sweeps.saturating_sub(average_last);
    let mut acc = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for sweep in 0..sweeps {
        for pos in 0..n {
            let term = kept[pos];
            let old = z[pos];
            counts[old] -= 1;
            let mut total = 0.0;
            for (topic, w) in weights.iter_mut().enumerate() {
                *w = model.phi_hat[topic * v + term] * (counts[topic] as f64 + alpha);
                total += *w;
            }
            let u = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut new = k - 1;
            for (topic, &w) in weights.iter().enumerate() {
                cum += w;
                if u < cum {
                    new = topic;
                    break;
                }
            }
            counts[new] += 1;
            z[pos] = new;
        }
        if sweep >= avg_from {
            for (a, &c) in acc.iter_mut().zip(&counts) {
                *a += c as f64 / n as f64;
            }
        }
    }
    if sweeps == 0 {
        return Ok(counts.iter().map(|&c| c as f64 / n as f64).collect());
    }
    let averaged = (sweeps - avg_from) as f64;
    Ok(acc.into_iter().map(|a| a / averaged).collect())
}

/// Binary decision rule: 1 iff `η̂ᵀz̄ > 0` (strictly).
pub fn predict_binary(eta_hat: &[f64], zbar: &[f64]) -> usize {
    debug_assert_eq!(eta_hat.len(), zbar.len());
    let score: f64 = eta_hat.iter().zip(zbar).map(|(e, z)| e * z).sum();
    usize::from(score > 0.0)
}

/// Per-class one-vs-all scores `η̂_mᵀ z̄_m`, each inferred in that model's own
/// topic space with an independent derived random stream, so the result does
/// not depend on evaluation order.
pub fn class_scores<R: Rng + ?Sized>(
    ova: &OneVsAllModel,
    tokens: &[usize],
    sweeps: usize,
    average_last: usize,
    rng: &mut R,
) -> Result<Vec<f64>, PredictError> {
    let base: u64 = rng.random();
    let mut scores = Vec::with_capacity(ova.num_classes());
    for (class, model) in ova.models.iter().enumerate() {
        let mut class_rng = ChaCha8Rng::seed_from_u64(derive_seed(base, class as u64));
        let zbar = infer_test_zbar_averaged(model, tokens, sweeps, average_last, &mut class_rng)?;
        let score = model
            .eta_hat
            .iter()
            .zip(&zbar)
            .map(|(e, z)| e * z)
            .sum::<f64>();
        scores.push(score);
    }
    Ok(scores)
}

/// Index of the maximal score; ties resolve to the lowest class id.
pub fn argmax_class(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// One-vs-all prediction: the class whose binary model scores highest.
pub fn predict_multiclass<R: Rng + ?Sized>(
    ova: &OneVsAllModel,
    tokens: &[usize],
    sweeps: usize,
    average_last: usize,
    rng: &mut R,
) -> Result<usize, PredictError> {
    let scores = class_scores(ova, tokens, sweeps, average_last, rng)?;
    Ok(argmax_class(&scores))
}

/// On-disk model container: a version stamp plus either one binary model or
/// the per-class models of a one-vs-all ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Binary(TrainedModel),
    OneVsAll(OneVsAllModel),
}

#[derive(Serialize, Deserialize)]
struct ModelFileRaw {
    version: u32,
    kind: String,
    models: Vec<TrainedModel>,
}

pub fn save_model_file<P: AsRef<Path>>(path: P, model: &ModelFile) -> Result<(), PredictError> {
    let path = path.as_ref();
    let (kind, models) = match model {
        ModelFile::Binary(m) => ("binary", std::slice::from_ref(m)),
        ModelFile::OneVsAll(ova) => ("one_vs_all", ova.models()),
    };
    let raw = ModelFileRaw {
        version: MODEL_FILE_VERSION,
        kind: kind.to_string(),
        models: models.to_vec(),
    };
    let file = File::create(path).map_err(|e| PredictError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::to_writer(BufWriter::new(file), &raw).map_err(|e| PredictError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_model_file<P: AsRef<Path>>(path: P) -> Result<ModelFile, PredictError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PredictError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let raw: ModelFileRaw =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| PredictError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
    if raw.version != MODEL_FILE_VERSION {
        return Err(PredictError::UnsupportedVersion {
            got: raw.version,
            expected: MODEL_FILE_VERSION,
        });
    }
    for model in &raw.models {
        model.validate()?;
    }
    match raw.kind.as_str() {
        "binary" => {
            if raw.models.len() != 1 {
                return Err(PredictError::InvalidModel(format!(
                    "binary model file holds {} models",
                    raw.models.len()
                )));
            }
            Ok(ModelFile::Binary(raw.models.into_iter().next().unwrap()))
        }
        "one_vs_all" => Ok(ModelFile::OneVsAll(OneVsAllModel::new(raw.models)?)),
        other => Err(PredictError::InvalidModel(format!(
            "unknown model kind `{other}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, LabeledCorpus};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_config(k: usize) -> ModelConfig {
        ModelConfig {
            k,
            alpha: 0.5,
            beta: 0.01,
            c: 1.0,
            nu2: 1.0,
            burn_in: 0,
            seed: 0,
            supervised: true,
            eta_avg_samples: 1,
        }
    }

    fn model_with_phi(k: usize, v: usize, phi: Vec<f64>, eta: Vec<f64>) -> TrainedModel {
        TrainedModel::from_parts(phi, eta, test_config(k), v)
    }

    #[test]
    fn estimate_phi_arithmetic() {
        // One doc [0,0,0,1], all tokens on topic 0: C_0 = [3,1], C_1 = [0,0].
        let corpus = LabeledCorpus::new(
            vec![Document::new(vec![0, 0, 0, 1]).unwrap()],
            vec![1],
            2,
        )
        .unwrap();
        let cfg = test_config(2);
        let mut state = ChainState::init(&corpus, &cfg);
        for n in 0..4 {
            state.set_assignment(&corpus, 0, n, 0);
        }
        let phi = estimate_phi(&state, &cfg);
        assert!((phi[0] - 3.01 / 4.02).abs() < 1e-15);
        assert!((phi[1] - 1.01 / 4.02).abs() < 1e-15);
        // Empty topic row falls back to the symmetric prior.
        assert!((phi[2] - 0.5).abs() < 1e-15);
        assert!((phi[3] - 0.5).abs() < 1e-15);
        for topic in 0..2 {
            let sum: f64 = phi[topic * 2..(topic + 1) * 2].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zbar_is_symmetric_for_identical_topic_rows() {
        let phi = vec![0.5, 0.5, 0.5, 0.5];
        let model = model_with_phi(2, 2, phi, vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let runs = 400;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..runs {
            let zbar = infer_test_zbar(&model, &[0, 1, 0, 1, 1, 0, 0, 1], 10, &mut rng).unwrap();
            assert!((zbar.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            sum += zbar[0];
            sumsq += zbar[0] * zbar[0];
        }
        let mean = sum / runs as f64;
        let var = sumsq / runs as f64 - mean * mean;
        let se = (var / runs as f64).sqrt();
        assert!(
            (mean - 0.5).abs() < 3.0 * se + 1e-3,
            "mean {mean}, se {se}"
        );
    }

    #[test]
    fn single_token_concentrates_on_its_topic() {
        let eps = 1e-3;
        let phi = vec![1.0 - eps, eps, eps, 1.0 - eps];
        let model = model_with_phi(2, 2, phi, vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let runs = 1000;
        let mut hits = 0;
        for _ in 0..runs {
            let zbar = infer_test_zbar(&model, &[0], 20, &mut rng).unwrap();
            if zbar[0] >= 0.95 {
                hits += 1;
            }
        }
        assert!(hits >= 950, "concentrated in {hits}/{runs} runs");
    }

    #[test]
    fn unknown_tokens_are_dropped_and_empty_docs_error() {
        let phi = vec![0.7, 0.3, 0.2, 0.8];
        let model = model_with_phi(2, 2, phi, vec![1.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        // Token 9 is out of vocabulary; the rest still infer.
        let zbar = infer_test_zbar(&model, &[0, 9, 1], 5, &mut rng).unwrap();
        assert!((zbar.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        match infer_test_zbar(&model, &[9, 17], 5, &mut rng) {
            Err(PredictError::NoKnownTerms { dropped: 2 }) => {}
            other => panic!("expected NoKnownTerms, got {other:?}"),
        }
    }

    #[test]
    fn binary_rule_thresholds_strictly_at_zero() {
        assert_eq!(predict_binary(&[0.6], &[0.5]), 1); // score 0.3
        assert_eq!(predict_binary(&[0.0, 0.0], &[0.3, 0.7]), 0); // score 0
        assert_eq!(predict_binary(&[1.0, -1.0], &[0.5, 0.5]), 0); // exact 0
        assert_eq!(predict_binary(&[-2.0], &[1.0]), 0);
    }

    #[test]
    fn binary_rule_ignores_positive_rescaling() {
        let zbar = [0.2, 0.5, 0.3];
        let eta = [0.4, -0.1, -0.2];
        let base = predict_binary(&eta, &zbar);
        for scale in [0.01, 3.0, 1e6] {
            let scaled: Vec<f64> = eta.iter().map(|e| e * scale).collect();
            assert_eq!(predict_binary(&scaled, &zbar), base);
        }
    }

    #[test]
    fn argmax_class_rules() {
        assert_eq!(argmax_class(&[0.2, -0.1, 0.5]), 2);
        assert_eq!(argmax_class(&[0.4, 0.4]), 0);
        let base = argmax_class(&[0.2, -0.1, 0.5]);
        let shifted: Vec<f64> = [0.2, -0.1, 0.5].iter().map(|s| s + 11.0).collect();
        assert_eq!(argmax_class(&shifted), base);
    }

    #[test]
    fn multiclass_uses_each_models_own_space() {
        // Class-1 model strongly associates term 0 with a positive-score
        // topic; the class-0 model is indifferent. Term-0 documents must go
        // to class 1.
        let eps = 1e-3;
        let indifferent = model_with_phi(2, 2, vec![0.5, 0.5, 0.5, 0.5], vec![0.0, 0.0]);
        let discriminative = model_with_phi(
            2,
            2,
            vec![1.0 - eps, eps, eps, 1.0 - eps],
            vec![4.0, -4.0],
        );
        let ova = OneVsAllModel::new(vec![indifferent, discriminative]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let class = predict_multiclass(&ova, &[0, 0, 0, 0], 20, 1, &mut rng).unwrap();
        assert_eq!(class, 1);
    }

    #[test]
    fn one_vs_all_requires_consistent_models() {
        let m2 = model_with_phi(2, 2, vec![0.5, 0.5, 0.5, 0.5], vec![0.0, 0.0]);
        assert!(matches!(
            OneVsAllModel::new(vec![m2.clone()]),
            Err(PredictError::TooFewClasses(1))
        ));
        let m3 = model_with_phi(3, 2, vec![0.5; 6], vec![0.0; 3]);
        assert!(matches!(
            OneVsAllModel::new(vec![m2, m3]),
            Err(PredictError::InconsistentModels { field: "k" })
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let model = model_with_phi(2, 3, vec![0.5, 0.25, 0.25, 0.1, 0.2, 0.7], vec![1.5, -0.5]);
        let file = tempfile::NamedTempFile::new().unwrap();
        save_model_file(file.path(), &ModelFile::Binary(model.clone())).unwrap();
        match load_model_file(file.path()).unwrap() {
            ModelFile::Binary(loaded) => assert_eq!(loaded, model),
            other => panic!("expected binary model, got {other:?}"),
        }
    }

    #[test]
    fn model_file_version_is_checked() {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), r#"{"version":99,"kind":"binary","models":[]}"#).unwrap();
        assert!(matches!(
            load_model_file(file.path()),
            Err(PredictError::UnsupportedVersion { got: 99, .. })
        ));
    }

    #[test]
    fn corrupt_model_file_is_rejected() {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), "not json at all").unwrap();
        assert!(matches!(
            load_model_file(file.path()),
            Err(PredictError::Json { .. })
        ));
    }

    #[test]
    fn invalid_phi_rows_are_rejected_on_load() {
        let mut model =
            model_with_phi(2, 2, vec![0.5, 0.5, 0.5, 0.5], vec![0.0, 0.0]);
        model.phi_hat[0] = 0.9; // row no longer sums to 1
        let raw = ModelFileRaw {
            version: MODEL_FILE_VERSION,
            kind: "binary".into(),
            models: vec![model],
        };
        let file = tempfile::NamedTempFile::new().unwrap();
        serde_json::to_writer(std::fs::File::create(file.path()).unwrap(), &raw).unwrap();
        assert!(matches!(
            load_model_file(file.path()),
            Err(PredictError::InvalidModel(_))
        ));
    }

    proptest! {
        #[test]
        fn zbar_is_always_a_probability_vector(
            k in 1usize..4,
            v in 1usize..5,
            seed in 0u64..1000,
            tokens in proptest::collection::vec(0usize..8, 1..12),
            sweeps in 0usize..6,
        ) {
            // Random positive rows, normalized.
            let mut phi = Vec::with_capacity(k * v);
            let mut srng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..k {
                let row: Vec<f64> = (0..v).map(|_| srng.random::<f64>() + 1e-3).collect();
                let sum: f64 = row.iter().sum();
                phi.extend(row.into_iter().map(|p| p / sum));
            }
            let model = model_with_phi(k, v, phi, vec![0.1; k]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            match infer_test_zbar(&model, &tokens, sweeps, &mut rng) {
                Ok(zbar) => {
                    prop_assert_eq!(zbar.len(), k);
                    prop_assert!((zbar.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(zbar.iter().all(|&z| (0.0..=1.0).contains(&z)));
                }
                Err(PredictError::NoKnownTerms { .. }) => {
                    prop_assert!(tokens.iter().all(|&t| t >= v));
                }
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
        }
    }
}
