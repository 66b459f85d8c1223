//! Text embeddings from an external HTTP service.
//!
//! Protocol: `POST <endpoint>` with `{"texts": [...]}`, answered by
//! `{"vectors": [[...], ...]}`, one vector per text, in order.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EmbedError;

#[derive(Serialize)]
struct Request<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct Response {
    vectors: Vec<Vec<f64>>,
}

pub struct ExternalService {
    endpoint: String,
    dim: usize,
    batch_size: usize,
    agent: ureq::Agent,
}

impl ExternalService {
    pub fn new(endpoint: &str, dim: usize, batch_size: usize, timeout: Duration) -> ExternalService {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        ExternalService { endpoint: endpoint.to_string(), dim, batch_size: batch_size.max(1), agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp: Response = self
                .agent
                .post(&self.endpoint)
                .send_json(Request { texts: chunk })
                .map_err(|e| EmbedError::Service(format!("{}: {e}", self.endpoint)))?
                .body_mut()
                .read_json()
                .map_err(|e| EmbedError::Service(format!("{}: bad response: {e}", self.endpoint)))?;
            if resp.vectors.len() != chunk.len() {
                return Err(EmbedError::Service(format!(
                    "{}: sent {} texts, got {} vectors",
                    self.endpoint,
                    chunk.len(),
                    resp.vectors.len()
                )));
            }
            for v in resp.vectors {
                if v.len() != self.dim {
                    return Err(EmbedError::Dimension { expected: self.dim, got: v.len() });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::NonFinite);
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}
