//! Supervised latent Dirichlet allocation trained by a collapsed Gibbs sampler
//! with Polya-Gamma data augmentation.
//!
//! The model couples an LDA admixture over document words with a logistic
//! classifier on the empirical topic proportions `z̄`. A per-document
//! Polya-Gamma auxiliary variable turns the logistic term into a conditionally
//! Gaussian one, so every Gibbs conditional is available in closed form:
//! a multivariate Gaussian for the classifier weights, a multinomial for each
//! token's topic, and a Polya-Gamma draw for each auxiliary variable. A
//! regularization constant `c` scales the supervision likelihood relative to
//! the word likelihood; `c = 1` is the standard supervised LDA coupling.
//!
//! Modules:
//! - [`corpus`]: sparse bag-of-words loading, validation, one-vs-rest views.
//! - [`polya_gamma`]: exact PG(1, b) sampling and general PG(a, b) draws.
//! - [`linalg`]: dense Cholesky factorization and precision-parameterized
//!   multivariate Gaussian sampling.
//! - [`gibbs`]: chain state, the three conditionals, and the training loop.
//! - [`predict`]: topic point estimates, test-document inference, binary and
//!   one-vs-all prediction, model (de)serialization.
//! - [`oracle`]: brute-force references (exact joint enumeration on tiny
//!   instances, a series-based PG sampler) used for verification.
//! - [`cli`]: the `train` / `predict` / `verify` command-line front end.

pub mod cli;
pub mod corpus;
pub mod gibbs;
pub mod linalg;
pub mod oracle;
pub mod polya_gamma;
pub mod predict;

pub use corpus::{load_corpus, Document, LabeledCorpus, Vocabulary};
pub use gibbs::{run_training, ChainState, ModelConfig, StepTimings, TrainOutput};
pub use predict::{OneVsAllModel, TrainedModel};
