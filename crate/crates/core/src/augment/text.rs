//! Pluggable text encoders.
//!
//! The default is a seeded feature-hashing encoder: deterministic, no model
//! weights, good enough to carry cluster-context prompts into a vector
//! space. A remote client can call out to a real embedding service over a
//! one-request HTTP POST; responses are cached by text so repeated prompts
//! never hit the network twice.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderKind {
    HashedDefault {
        seed: u64,
    },
    Remote {
        endpoint: String,
        timeout_ms: u64,
        /// When set, remote failures fall back to the hashed encoder with
        /// this seed instead of propagating the error.
        #[serde(default)]
        fallback_seed: Option<u64>,
    },
}

pub struct TextEncoder {
    pub kind: EncoderKind,
    pub output_dim: usize,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl TextEncoder {
    pub fn hashed(output_dim: usize, seed: u64) -> Self {
        TextEncoder {
            kind: EncoderKind::HashedDefault { seed },
            output_dim,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn remote(endpoint: impl Into<String>, output_dim: usize, timeout_ms: u64) -> Self {
        TextEncoder {
            kind: EncoderKind::Remote {
                endpoint: endpoint.into(),
                timeout_ms,
                fallback_seed: None,
            },
            output_dim,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_fallback(mut self, seed: u64) -> Self {
        if let EncoderKind::Remote { fallback_seed, .. } = &mut self.kind {
            *fallback_seed = Some(seed);
        }
        self
    }

    pub fn from_kind(kind: EncoderKind, output_dim: usize) -> Self {
        TextEncoder {
            kind,
            output_dim,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        match &self.kind {
            EncoderKind::HashedDefault { seed } => {
                Ok(encode_text_hashed(text, self.output_dim, *seed))
            }
            EncoderKind::Remote {
                endpoint,
                timeout_ms,
                fallback_seed,
            } => {
                if let Some(hit) = self.cache.lock().unwrap().get(text) {
                    return Ok(hit.clone());
                }
                let fetched =
                    encode_text_remote(text, endpoint, self.output_dim, *timeout_ms);
                let vec = match (fetched, fallback_seed) {
                    (Ok(v), _) => v,
                    (Err(_), Some(seed)) => encode_text_hashed(text, self.output_dim, *seed),
                    (Err(e), None) => return Err(e),
                };
                self.cache
                    .lock()
                    .unwrap()
                    .insert(text.to_string(), vec.clone());
                Ok(vec)
            }
        }
    }

    /// Number of texts currently cached (remote kind only).
    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

/// Seeded FNV-1a over a token; stable across platforms.
fn hash_token(token: &str, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Feature hashing: lowercase, split on non-alphanumeric, hash every token
/// to a (bucket, sign) pair, accumulate and L2-normalize. Empty text maps to
/// the zero vector.
pub fn encode_text_hashed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "dim must be >= 1");
    let mut out = vec![0.0; dim];
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        let h = hash_token(token, seed);
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        out[bucket] += sign;
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut out {
            *v /= norm;
        }
    }
    out
}

/// POST {"text": ...} to the endpoint and expect {"embedding": [floats]} of
/// the right length. Retries once on timeout.
pub fn encode_text_remote(
    text: &str,
    endpoint: &str,
    output_dim: usize,
    timeout_ms: u64,
) -> Result<Vec<f64>> {
    let body = serde_json::json!({ "text": text }).to_string();
    let timeout = Duration::from_millis(timeout_ms.max(1));
    let response = match http_post_json(endpoint, &body, timeout) {
        Ok(r) => r,
        Err(first_err) => {
            if is_timeout(&first_err) {
                http_post_json(endpoint, &body, timeout)
                    .map_err(|e| Error::RemoteNetwork(e.to_string()))?
            } else {
                return Err(Error::RemoteNetwork(first_err.to_string()));
            }
        }
    };
    #[derive(Deserialize)]
    struct Reply {
        embedding: Vec<f64>,
    }
    let reply: Reply = serde_json::from_str(&response)
        .map_err(|e| Error::RemoteFormat(e.to_string()))?;
    if reply.embedding.len() != output_dim {
        return Err(Error::RemoteLength {
            expected: output_dim,
            got: reply.embedding.len(),
        });
    }
    Ok(reply.embedding)
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(
        e.kind(),
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
    )
}

/// Minimal HTTP/1.1 POST for `http://host:port/path` endpoints. Reads the
/// whole response (Connection: close) and returns the body. Enough for the
/// loopback embedding services this client targets; no TLS, no chunked
/// transfer encoding.
fn http_post_json(endpoint: &str, body: &str, timeout: Duration) -> std::io::Result<String> {
    let rest = endpoint.strip_prefix("http://").ok_or_else(|| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("unsupported endpoint {endpoint}; expected http://host:port/path"),
        )
    })?;
    let (hostport, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let mut stream = TcpStream::connect(hostport)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {hostport}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(request.as_bytes())?;
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    let text = String::from_utf8_lossy(&raw);
    let mut parts = text.splitn(2, "\r\n\r\n");
    let head = parts.next().unwrap_or("");
    let body = parts.next().unwrap_or("").to_string();
    let status_line = head.lines().next().unwrap_or("");
    if !status_line.contains(" 200 ") && !status_line.ends_with(" 200") {
        return Err(std::io::Error::other(format!(
            "server answered {status_line:?}"
        )));
    }
    Ok(body)
}
