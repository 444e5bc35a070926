//! Federated intrusion detection for vehicular beacon streams.
//!
//! The pipeline ingests VeReMi-style message logs, serializes each beacon into
//! a short text line, tokenizes it, and classifies position-falsification
//! attacks with a small BERT-style encoder trained by federated weight
//! averaging. Four conventional baselines (TF-IDF features into logistic
//! regression, a linear SVM, k-nearest-neighbors, and a random forest) share
//! the same evaluation harness so every model is scored on one held-out split.
//!
//! Module map:
//!
//! - [`data`]: log parsing, resampling, text serialization, label encoding,
//!   and the train/test split.
//! - [`tokenizer`]: corpus-built vocabulary and fixed-length id sequences.
//! - [`model`]: the encoder, its analytic gradients, and the Adam optimizer.
//! - [`fed`]: the client/server round protocol over in-process state.
//! - [`transport`]: the framed wire protocol, TCP server/client, and the
//!   loopback transport that defines reference behavior.
//! - [`baselines`]: TF-IDF vectorization plus the four conventional models.
//! - [`metrics`]: confusion matrices and classification reports.
//! - [`synth`]: a synthetic beacon-trace generator with scripted attacks.
//! - [`experiment`]: config-driven orchestration of full runs.
//!
//! Every stochastic step is driven by an explicit seed, so whole runs are
//! reproducible from a config file alone.

pub mod baselines;
pub mod data;
pub mod experiment;
pub mod fed;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tokenizer;
pub mod transport;
