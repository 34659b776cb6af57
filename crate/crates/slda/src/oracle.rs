//! Brute-force references used to verify the sampler.
//!
//! [`enumerate_joint`] evaluates the exact collapsed joint over every topic
//! configuration of a tiny corpus, with the classifier weights and
//! augmentation variables held fixed. [`pg_series_sample`] draws from the
//! defining gamma convolution of the Polya-Gamma distribution, truncated at a
//! caller-chosen depth. Both are deliberately independent of the production
//! sampling paths; they trade speed for directness.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::corpus::LabeledCorpus;
use crate::gibbs::{kappa, ModelConfig};

/// Hard cap on the number of enumerated configurations.
pub const MAX_CONFIGS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("instance too large to enumerate: K^N = {configs} exceeds {max}")]
    TooLarge { configs: u128, max: usize },
    #[error("fixed vector length {got} does not match expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Exact posterior over all K^N topic configurations of a tiny corpus, given
/// fixed classifier weights and augmentation variables.
///
/// Configurations are indexed by a base-K code over the flat token order
/// (document 0's tokens first, then document 1's, ...); digit `i` of the code
/// is token `i`'s topic.
#[derive(Debug, Clone)]
pub struct EnumeratedPosterior {
    k: usize,
    doc_lens: Vec<usize>,
    weights: Vec<f64>,
}

impl EnumeratedPosterior {
    pub fn num_configs(&self) -> usize {
        self.weights.len()
    }

    pub fn num_topics(&self) -> usize {
        self.k
    }

    /// Normalized probability of the configuration with the given code.
    pub fn weight(&self, code: usize) -> f64 {
        self.weights[code]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Decodes a configuration code into per-document topic assignments.
    pub fn decode(&self, code: usize) -> Vec<Vec<usize>> {
        let mut rest = code;
        self.doc_lens
            .iter()
            .map(|&len| {
                (0..len)
                    .map(|_| {
                        let digit = rest % self.k;
                        rest /= self.k;
                        digit
                    })
                    .collect()
            })
            .collect()
    }

    /// Encodes per-document topic assignments into a configuration code.
    pub fn encode(&self, assignments: &[Vec<usize>]) -> usize {
        let mut code = 0;
        let mut base = 1;
        for doc in assignments {
            for &z in doc {
                code += z * base;
                base *= self.k;
            }
        }
        code
    }

    /// Flat token index of token `n` of document `d`.
    pub fn token_index(&self, d: usize, n: usize) -> usize {
        self.doc_lens[..d].iter().sum::<usize>() + n
    }

    /// Exact single-site conditional of one token's topic given every other
    /// assignment in `code`, obtained as a ratio of enumerated weights.
    pub fn token_conditional(&self, code: usize, token_idx: usize) -> Vec<f64> {
        let base = self.k.pow(token_idx as u32);
        let digit = (code / base) % self.k;
        let stripped = code - digit * base;
        let raw: Vec<f64> = (0..self.k).map(|k| self.weights[stripped + k * base]).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Enumerates the collapsed joint over all topic configurations.
///
/// Each configuration's weight is the product of the Dirichlet-multinomial
/// count ratios for topics and documents and the per-document supervision
/// factor `exp(κ_d ω_d − λ_d ω_d²/2)`, computed in log space with log-gamma
/// and normalized by log-sum-exp.
pub fn enumerate_joint(
    corpus: &LabeledCorpus,
    config: &ModelConfig,
    eta: &[f64],
    lambda: &[f64],
) -> Result<EnumeratedPosterior, OracleError> {
    let k = config.k;
    let v = corpus.vocab_size();
    let d_count = corpus.num_docs();
    if eta.len() != k {
        return Err(OracleError::LengthMismatch {
            got: eta.len(),
            expected: k,
        });
    }
    if lambda.len() != d_count {
        return Err(OracleError::LengthMismatch {
            got: lambda.len(),
            expected: d_count,
        });
    }
    let total_tokens = corpus.total_tokens();
    let configs = (k as u128).pow(total_tokens as u32);
    if configs > MAX_CONFIGS as u128 {
        return Err(OracleError::TooLarge {
            configs,
            max: MAX_CONFIGS,
        });
    }
    let num_configs = configs as usize;

    let doc_lens: Vec<usize> = corpus.docs().iter().map(|d| d.len()).collect();
    let flat_terms: Vec<usize> = corpus
        .docs()
        .iter()
        .flat_map(|d| d.tokens().iter().copied())
        .collect();
    let flat_doc: Vec<usize> = corpus
        .docs()
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| std::iter::repeat_n(d, doc.len()))
        .collect();

    let alpha = config.alpha;
    let beta = config.beta;
    let lg_beta_const = (v as f64) * ln_gamma(beta) - ln_gamma(v as f64 * beta);
    let lg_alpha_const = (k as f64) * ln_gamma(alpha) - ln_gamma(k as f64 * alpha);

    let mut log_weights = Vec::with_capacity(num_configs);
    let mut ckt = vec![0usize; k * v];
    let mut ck = vec![0usize; k];
    let mut cdk = vec![0usize; d_count * k];
    let mut digits = vec![0usize; total_tokens];

    for code in 0..num_configs {
        let mut rest = code;
        for digit in digits.iter_mut() {
            *digit = rest % k;
            rest /= k;
        }
        ckt.iter_mut().for_each(|c| *c = 0);
        ck.iter_mut().for_each(|c| *c = 0);
        cdk.iter_mut().for_each(|c| *c = 0);
        for i in 0..total_tokens {
            let z = digits[i];
            ckt[z * v + flat_terms[i]] += 1;
            ck[z] += 1;
            cdk[flat_doc[i] * k + z] += 1;
        }

        let mut lw = 0.0;
        for topic in 0..k {
            for t in 0..v {
                lw += ln_gamma(ckt[topic * v + t] as f64 + beta);
            }
            lw -= ln_gamma(ck[topic] as f64 + v as f64 * beta);
            lw -= lg_beta_const;
        }
        for d in 0..d_count {
            let mut omega = 0.0;
            for topic in 0..k {
                let c = cdk[d * k + topic] as f64;
                lw += ln_gamma(c + alpha);
                omega += eta[topic] * c;
            }
            lw -= ln_gamma(doc_lens[d] as f64 + k as f64 * alpha);
            lw -= lg_alpha_const;
            omega /= doc_lens[d] as f64;
            let kap = kappa(config.c, corpus.label(d));
            lw += kap * omega - lambda[d] * omega * omega / 2.0;
        }
        log_weights.push(lw);
    }

    // Normalize with log-sum-exp.
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for lw in &log_weights {
        total += (lw - max).exp();
    }
    let log_total = max + total.ln();
    let weights: Vec<f64> = log_weights.into_iter().map(|lw| (lw - log_total).exp()).collect();

    Ok(EnumeratedPosterior {
        k,
        doc_lens,
        weights,
    })
}

/// Reference Polya-Gamma draw from the defining gamma convolution, truncated
/// at `terms` terms. Biased low by the dropped tail (the tail sum is below
/// `1/terms` of the series scale); intended for moment cross-checks only.
pub fn pg_series_sample<R: Rng + ?Sized>(a: f64, b: f64, terms: usize, rng: &mut R) -> f64 {
    assert!(terms >= 100, "series truncation below 100 terms is too biased");
    assert!(a > 0.0, "shape must be positive");
    let y2 = b * b / (4.0 * std::f64::consts::PI * std::f64::consts::PI);
    let gamma = Gamma::new(a, 1.0).expect("positive shape");
    let mut x = 0.0;
    for i in 1..=terms {
        let g: f64 = gamma.sample(rng);
        x += g / ((i as f64 - 0.5).powi(2) + y2);
    }
    x / (2.0 * std::f64::consts::PI * std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, LabeledCorpus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(k: usize, alpha: f64, beta: f64, c: f64) -> ModelConfig {
        ModelConfig {
            k,
            alpha,
            beta,
            c,
            nu2: 1.0,
            burn_in: 0,
            seed: 0,
            supervised: true,
            eta_avg_samples: 1,
        }
    }

    #[test]
    fn hand_computed_single_doc_two_tokens() {
        // One document, two identical tokens, K=2, V=1, α=0.5: with the
        // supervision factor constant the weights reduce to the document
        // Dirichlet ratios, giving 3/8 for the agreeing configurations and
        // 1/8 for the mixed ones.
        let corpus = LabeledCorpus::new(
            vec![Document::new(vec![0, 0]).unwrap()],
            vec![1],
            1,
        )
        .unwrap();
        let config = tiny_config(2, 0.5, 0.25, 0.0);
        // Uniform eta makes ω identical across configurations.
        let post = enumerate_joint(&corpus, &config, &[0.7, 0.7], &[1.3]).unwrap();
        assert_eq!(post.num_configs(), 4);
        let expected = [3.0 / 8.0, 1.0 / 8.0, 1.0 / 8.0, 3.0 / 8.0];
        for (code, &e) in expected.iter().enumerate() {
            assert!(
                (post.weight(code) - e).abs() < 1e-12,
                "config {code}: {} vs {e}",
                post.weight(code)
            );
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let corpus = LabeledCorpus::new(
            vec![
                Document::new(vec![0, 1]).unwrap(),
                Document::new(vec![1, 1]).unwrap(),
            ],
            vec![1, 0],
            2,
        )
        .unwrap();
        let config = tiny_config(2, 0.3, 0.2, 2.0);
        let post = enumerate_joint(&corpus, &config, &[0.8, -0.4], &[1.0, 2.0]).unwrap();
        assert_eq!(post.num_configs(), 16);
        let total: f64 = post.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_topic_is_degenerate() {
        let corpus = LabeledCorpus::new(
            vec![Document::new(vec![0, 1, 0]).unwrap()],
            vec![0],
            2,
        )
        .unwrap();
        let config = tiny_config(1, 0.5, 0.1, 1.0);
        let post = enumerate_joint(&corpus, &config, &[0.4], &[1.0]).unwrap();
        assert_eq!(post.num_configs(), 1);
        assert!((post.weight(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn topic_permutation_symmetry() {
        // Symmetric priors and equal eta components: swapping topic labels in
        // a configuration must not change its weight.
        let corpus = LabeledCorpus::new(
            vec![
                Document::new(vec![0, 1]).unwrap(),
                Document::new(vec![1]).unwrap(),
            ],
            vec![1, 0],
            2,
        )
        .unwrap();
        let config = tiny_config(2, 0.4, 0.3, 3.0);
        let post = enumerate_joint(&corpus, &config, &[0.6, 0.6], &[0.9, 1.7]).unwrap();
        for code in 0..post.num_configs() {
            let assignments = post.decode(code);
            let swapped: Vec<Vec<usize>> = assignments
                .iter()
                .map(|doc| doc.iter().map(|&z| 1 - z).collect())
                .collect();
            let swapped_code = post.encode(&swapped);
            assert!(
                (post.weight(code) - post.weight(swapped_code)).abs() < 1e-12,
                "codes {code} and {swapped_code} differ"
            );
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let corpus = LabeledCorpus::new(
            vec![
                Document::new(vec![0, 1]).unwrap(),
                Document::new(vec![1, 0]).unwrap(),
            ],
            vec![1, 0],
            2,
        )
        .unwrap();
        let config = tiny_config(3, 0.4, 0.3, 1.0);
        let post = enumerate_joint(&corpus, &config, &[0.0; 3], &[1.0, 1.0]).unwrap();
        for code in [0, 1, 17, 80] {
            assert_eq!(post.encode(&post.decode(code)), code);
        }
    }

    #[test]
    fn size_limit_is_enforced() {
        let corpus = LabeledCorpus::new(
            vec![Document::new(vec![0; 30]).unwrap()],
            vec![0],
            1,
        )
        .unwrap();
        let config = tiny_config(4, 0.5, 0.1, 1.0);
        assert!(matches!(
            enumerate_joint(&corpus, &config, &[0.0; 4], &[1.0]),
            Err(OracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn series_sample_mean_at_deep_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| pg_series_sample(1.0, 0.0, 10_000, &mut rng))
            .sum::<f64>()
            / n as f64;
        // Truncation bias at 10^4 terms is under 0.01%; Monte Carlo error
        // dominates, so 1% is a comfortable band.
        assert!((mean - 0.25).abs() < 0.0025, "mean {mean}");
    }

    #[test]
    fn series_is_linear_in_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 50_000;
        let mean_a1: f64 = (0..n)
            .map(|_| pg_series_sample(1.0, 0.0, 500, &mut rng))
            .sum::<f64>()
            / n as f64;
        let mean_a2: f64 = (0..n)
            .map(|_| pg_series_sample(2.0, 0.0, 500, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!(
            (mean_a2 / mean_a1 - 2.0).abs() < 0.05,
            "ratio {}",
            mean_a2 / mean_a1
        );
    }

    #[test]
    fn series_draws_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1_000 {
            assert!(pg_series_sample(0.5, 3.0, 100, &mut rng) > 0.0);
        }
    }
}
