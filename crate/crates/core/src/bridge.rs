//! Client side of the model-bridge protocol.
//!
//! A bridge is a separate process that serves a real checkpoint over
//! line-delimited JSON: one request object per line in, exactly one response
//! object per line out, in order. Requests carry a `kind` tag and an `id`
//! that the response must echo.
//!
//! ```text
//! {"kind":"logits","id":1,"tokens":[4,17]}
//! {"id":1,"ok":true,"logprobs":[-2.3,-0.7,...]}
//! {"kind":"hidden","id":2,"text":"who wrote it","layer":-2}
//! {"id":2,"ok":true,"states":[[...],[...],[...]],"mask":[1,1,1],"rows":3,"dim":768}
//! {"kind":"embed","id":3,"text":"who wrote it"}
//! {"id":3,"ok":true,"vector":[...]}
//! {"kind":"extract","id":4,"answer":"Jane Doe wrote it in 1999."}
//! {"id":4,"ok":true,"phrases":["Jane Doe","1999"]}
//! {"id":5,"ok":false,"error":"unknown token id 99999"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, Embedding, HiddenStateProvider, HiddenStates, LayerIndex};
use crate::forbidden::KeyPhraseExtractor;
use crate::model::{check_context, LanguageModel, TokenId};
use crate::{Error, Result};

/// Allowed deviation of `Σ exp(logprob)` from 1 in a `logits` response.
pub const LOGPROB_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BridgeRequest {
    Logits { id: u64, tokens: Vec<TokenId> },
    Hidden { id: u64, text: String, layer: LayerIndex },
    Embed { id: u64, text: String },
    Extract { id: u64, answer: String },
}

impl BridgeRequest {
    pub fn id(&self) -> u64 {
        match self {
            BridgeRequest::Logits { id, .. }
            | BridgeRequest::Hidden { id, .. }
            | BridgeRequest::Embed { id, .. }
            | BridgeRequest::Extract { id, .. } => *id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BridgeRequest::Logits { .. } => "logits",
            BridgeRequest::Hidden { .. } => "hidden",
            BridgeRequest::Embed { .. } => "embed",
            BridgeRequest::Extract { .. } => "extract",
        }
    }

    /// Single-line JSON encoding, without the trailing newline.
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// A response frame. Exactly one payload field is expected on success,
/// matching the request kind; `id` is absent only when the bridge could not
/// parse the request line at all.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    #[serde(default)]
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrases: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn missing(kind: &str, field: &str) -> Error {
    Error::Bridge(format!("{kind} response has no `{field}` field"))
}

impl BridgeResponse {
    /// Parses one response line. Only JSON syntax and field types are checked
    /// here; the payload is validated by the `into_*` accessors.
    pub fn parse_line(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| Error::Bridge(format!("malformed response line: {e}")))
    }

    /// Checks the id echo and the ok flag.
    pub fn check(&self, expected_id: u64) -> Result<()> {
        if !self.ok {
            return Err(Error::Bridge(format!(
                "request {expected_id} failed: {}",
                self.error.as_deref().unwrap_or("no error message")
            )));
        }
        match self.id {
            Some(id) if id == expected_id => Ok(()),
            Some(id) => Err(Error::Bridge(format!(
                "response id {id} does not match request id {expected_id}"
            ))),
            None => Err(Error::Bridge(format!("response to request {expected_id} has no id"))),
        }
    }

    pub fn into_logprobs(self, expected_id: u64, vocab_size: usize) -> Result<Vec<f64>> {
        self.check(expected_id)?;
        let lp = self.logprobs.ok_or_else(|| missing("logits", "logprobs"))?;
        if lp.len() != vocab_size {
            return Err(Error::Bridge(format!(
                "logprobs has length {}, vocabulary size is {vocab_size}",
                lp.len()
            )));
        }
        if lp.iter().any(|v| v.is_nan() || *v > 0.0) {
            return Err(Error::Bridge("logprobs must be non-positive numbers".into()));
        }
        let mass: f64 = lp.iter().map(|v| v.exp()).sum();
        if (mass - 1.0).abs() > LOGPROB_SUM_TOLERANCE {
            return Err(Error::Bridge(format!("logprobs exponentiate to {mass}, expected 1")));
        }
        Ok(lp)
    }

    pub fn into_hidden(self, expected_id: u64, expected_dim: usize) -> Result<HiddenStates> {
        self.check(expected_id)?;
        let states = self.states.ok_or_else(|| missing("hidden", "states"))?;
        let mask = self.mask.ok_or_else(|| missing("hidden", "mask"))?;
        let rows = self.rows.ok_or_else(|| missing("hidden", "rows"))?;
        let dim = self.dim.ok_or_else(|| missing("hidden", "dim"))?;
        if dim != expected_dim {
            return Err(Error::Bridge(format!(
                "hidden dimension {dim}, client expects {expected_dim}"
            )));
        }
        if states.len() != rows || mask.len() != rows {
            return Err(Error::Bridge(format!(
                "declared {rows} rows, got {} states and {} mask entries",
                states.len(),
                mask.len()
            )));
        }
        if let Some((i, row)) = states.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Bridge(format!(
                "state row {i} has {} values, declared dimension {dim}",
                row.len()
            )));
        }
        HiddenStates::new(states, mask).map_err(|e| Error::Bridge(e.to_string()))
    }

    pub fn into_vector(self, expected_id: u64, expected_dim: usize) -> Result<Embedding> {
        self.check(expected_id)?;
        let v = self.vector.ok_or_else(|| missing("embed", "vector"))?;
        if v.len() != expected_dim {
            return Err(Error::Bridge(format!(
                "vector has dimension {}, client expects {expected_dim}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Bridge("vector has non-finite values".into()));
        }
        Ok(Embedding(v))
    }

    pub fn into_phrases(self, expected_id: u64) -> Result<Vec<String>> {
        self.check(expected_id)?;
        self.phrases.ok_or_else(|| missing("extract", "phrases"))
    }
}

/// Sends one request line and returns the matching response line.
pub trait Transport: Send {
    fn roundtrip(&mut self, line: &str) -> Result<String>;
}

/// A bridge child process spoken to over its stdin and stdout.
pub struct StdioTransport {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl StdioTransport {
    pub fn spawn(mut command: Command) -> Result<Self> {
        let mut child = command.stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().ok_or_else(|| Error::Bridge("child has no stdin".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| Error::Bridge("child has no stdout".into()))?;
        Ok(StdioTransport {
            child,
            stdin,
            stdout: BufReader::new(stdout),
        })
    }
}

impl Transport for StdioTransport {
    fn roundtrip(&mut self, line: &str) -> Result<String> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        let mut response = String::new();
        if self.stdout.read_line(&mut response)? == 0 {
            return Err(Error::Bridge("bridge closed its output".into()));
        }
        Ok(response)
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Sizes the client checks responses against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeShape {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

/// Typed access to a bridge. Requests are serialized through a mutex, so one
/// client can be shared across threads.
pub struct BridgeClient<T> {
    transport: Mutex<T>,
    next_id: AtomicU64,
    shape: BridgeShape,
}

impl<T: Transport> BridgeClient<T> {
    pub fn new(transport: T, shape: BridgeShape) -> Self {
        BridgeClient {
            transport: Mutex::new(transport),
            next_id: AtomicU64::new(1),
            shape,
        }
    }

    pub fn shape(&self) -> BridgeShape {
        self.shape
    }

    fn next_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    fn call(&self, request: &BridgeRequest) -> Result<BridgeResponse> {
        let line = request.to_line()?;
        let reply = {
            let mut transport = self
                .transport
                .lock()
                .map_err(|_| Error::Bridge("transport lock poisoned".into()))?;
            transport.roundtrip(&line)?
        };
        log::debug!("bridge {} request {} answered", request.kind(), request.id());
        BridgeResponse::parse_line(&reply)
    }
}

impl<T: Transport> LanguageModel for BridgeClient<T> {
    fn vocab_size(&self) -> usize {
        self.shape.vocab_size
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.shape.vocab_size)?;
        let id = self.next_id();
        let request = BridgeRequest::Logits {
            id,
            tokens: context.to_vec(),
        };
        self.call(&request)?.into_logprobs(id, self.shape.vocab_size)
    }
}

impl<T: Transport> HiddenStateProvider for BridgeClient<T> {
    fn dim(&self) -> usize {
        self.shape.hidden_dim
    }

    fn hidden_states(&self, text: &str, layer: LayerIndex) -> Result<HiddenStates> {
        let id = self.next_id();
        let request = BridgeRequest::Hidden {
            id,
            text: text.to_string(),
            layer,
        };
        self.call(&request)?.into_hidden(id, self.shape.hidden_dim)
    }
}

impl<T: Transport> Embedder for BridgeClient<T> {
    fn dim(&self) -> usize {
        self.shape.embed_dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let id = self.next_id();
        let request = BridgeRequest::Embed {
            id,
            text: text.to_string(),
        };
        self.call(&request)?.into_vector(id, self.shape.embed_dim)
    }
}

impl<T: Transport> KeyPhraseExtractor for BridgeClient<T> {
    fn extract(&self, answer: &str) -> Result<Vec<String>> {
        let id = self.next_id();
        let request = BridgeRequest::Extract {
            id,
            answer: answer.to_string(),
        };
        self.call(&request)?.into_phrases(id)
    }
}
