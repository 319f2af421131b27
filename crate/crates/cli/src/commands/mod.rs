mod evaluate;
mod generate;
mod index;
mod train;

use std::io::Write;
use std::path::{Path, PathBuf};

use forgetgen::classifier::MlpParameters;
use forgetgen::pipeline::{Guard, GuardConfig, Handles};
use forgetgen::retrieval::{AnswerIndex, CosineReranker, Reranker};

pub use evaluate::{cmd_evaluate, EvalRecord};
pub use generate::{cmd_generate, GenerateLine};
pub use index::cmd_build_index;
pub use train::{cmd_train_classifier, TrainReport};

use crate::backend::Backend;
use crate::config::RunConfig;
use crate::error::CliError;

/// Writes `content` to `path`, or to stdout when there is no path.
pub(crate) fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())
                .and_then(|()| out.flush())
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

/// Path to an artifact produced by an earlier subcommand.
pub(crate) fn artifact<'a>(key: &str, path: Option<&'a PathBuf>) -> Result<&'a Path, CliError> {
    let p = path.ok_or_else(|| CliError::Config(format!("{key} is not set")))?;
    if !p.is_file() {
        return Err(CliError::Config(format!("{key}: file not found: {}", p.display())));
    }
    Ok(p)
}

/// Trained classifier and forget index, checked against the backend.
pub(crate) struct Artifacts {
    pub classifier: MlpParameters,
    pub index: AnswerIndex,
}

impl Artifacts {
    pub fn load(cfg: &RunConfig, backend: &Backend) -> Result<Self, CliError> {
        let classifier = MlpParameters::load(artifact("classifier.params", cfg.classifier.params.as_ref())?)?;
        let index = AnswerIndex::load(artifact("index.path", cfg.index.path.as_ref())?)?;
        let prompt_dim = backend.prompt_embedder().dim();
        if classifier.input_dim != prompt_dim {
            return Err(CliError::Config(format!(
                "classifier expects {}-dimensional input but the {} backend embeds prompts in {prompt_dim}",
                classifier.input_dim,
                cfg.backend.name()
            )));
        }
        if index.key() != cfg.index.key {
            log::warn!("index was built with key {:?}, config says {:?}", index.key(), cfg.index.key);
        }
        Ok(Artifacts { classifier, index })
    }

    pub fn guard<'a>(
        &'a self,
        backend: &'a Backend,
        reranker: &'a CosineReranker<'a>,
        config: GuardConfig,
    ) -> Result<Guard<'a>, CliError> {
        let handles = Handles {
            model: backend.model(),
            tokenizer: &backend.tokenizer,
            classifier: &self.classifier,
            prompt_embedder: backend.prompt_embedder(),
            index: &self.index,
            retrieval_embedder: backend.sentence_embedder(),
            reranker: Some(reranker as &dyn Reranker),
            semantic_embedder: backend.sentence_embedder(),
        };
        Guard::new(handles, config).map_err(|e| CliError::Config(e.to_string()))
    }
}
