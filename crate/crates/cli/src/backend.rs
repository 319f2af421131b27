//! Model, tokenizer and embedder handles for the selected backend.

use std::process::Command;
use std::sync::Arc;

use forgetgen::bridge::{BridgeClient, BridgeShape, StdioTransport};
use forgetgen::embedding::{BagOfWordsEmbedder, Embedder, PooledEmbedder};
use forgetgen::forbidden::KeyPhraseExtractor;
use forgetgen::model::BigramModel;
use forgetgen::{LanguageModel, Vocabulary, WhitespaceTokenizer};

use crate::config::{BackendKind, RunConfig};
use crate::error::CliError;

type Client = BridgeClient<StdioTransport>;

enum Engine {
    Toy {
        model: BigramModel,
        embedder: BagOfWordsEmbedder,
    },
    Bridge {
        client: Arc<Client>,
        pooled: PooledEmbedder<Arc<Client>>,
    },
}

pub struct Backend {
    pub vocab: Vocabulary,
    pub tokenizer: WhitespaceTokenizer,
    engine: Engine,
}

impl Backend {
    pub fn open(cfg: &RunConfig) -> Result<Self, CliError> {
        let vocab = cfg.vocabulary()?;
        let tokenizer = WhitespaceTokenizer::new(vocab.clone());
        let engine = match cfg.backend {
            BackendKind::Toy => {
                let path = cfg.toy.bigram.as_ref().expect("validated at load");
                Engine::Toy {
                    model: BigramModel::load(path, &vocab)?,
                    embedder: BagOfWordsEmbedder::new(&vocab, cfg.toy.hash_buckets),
                }
            }
            BackendKind::Bridge => {
                let section = cfg.bridge.as_ref().expect("validated at load");
                let mut command = Command::new(&section.command[0]);
                command.args(&section.command[1..]);
                let shape = BridgeShape {
                    vocab_size: vocab.len(),
                    hidden_dim: section.hidden_dim,
                    embed_dim: section.embed_dim,
                };
                let client = Arc::new(BridgeClient::new(StdioTransport::spawn(command)?, shape));
                Engine::Bridge {
                    pooled: PooledEmbedder::new(Arc::clone(&client), cfg.layer()),
                    client,
                }
            }
        };
        Ok(Backend {
            vocab,
            tokenizer,
            engine,
        })
    }

    pub fn model(&self) -> &dyn LanguageModel {
        match &self.engine {
            Engine::Toy { model, .. } => model,
            Engine::Bridge { client, .. } => client.as_ref(),
        }
    }

    /// Embeds prompts for the classifier.
    pub fn prompt_embedder(&self) -> &dyn Embedder {
        match &self.engine {
            Engine::Toy { embedder, .. } => embedder,
            Engine::Bridge { pooled, .. } => pooled,
        }
    }

    /// Embeds texts for retrieval and soft matching.
    pub fn sentence_embedder(&self) -> &dyn Embedder {
        match &self.engine {
            Engine::Toy { embedder, .. } => embedder,
            Engine::Bridge { client, .. } => client.as_ref(),
        }
    }

    pub fn extractor(&self) -> Option<Arc<dyn KeyPhraseExtractor>> {
        match &self.engine {
            Engine::Toy { .. } => None,
            Engine::Bridge { client, .. } => Some(Arc::clone(client) as Arc<dyn KeyPhraseExtractor>),
        }
    }
}
