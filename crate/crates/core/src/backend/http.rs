//! HTTP clients for remote generation and embedding servers.
//!
//! Endpoints: `GET /v1/info`, `POST /v1/generate`, `POST /v1/tokenize` and
//! `POST /v1/embed`, all JSON (see [`super::wire`]).

use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{EmbedResponse, TokenizeRequest, TokenizeResponse, WireRecord};
use super::{BackendInfo, EmbedRequest, Embedder, GenerationBackend, GenerationRecord, GenerationRequest};
use crate::error::{Error, Result};
use crate::math::Embedding;

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            slots: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
struct JsonClient {
    base_url: String,
    client: Client,
    in_flight: InFlight,
    max_in_flight: usize,
}

impl JsonClient {
    fn new(base_url: &str, max_in_flight: usize, timeout: Duration) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::BackendUnreachable(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
            in_flight: InFlight::new(max_in_flight),
            max_in_flight: max_in_flight.max(1),
        })
    }

    fn finish<T: DeserializeOwned>(&self, resp: reqwest::Result<reqwest::blocking::Response>) -> Result<T> {
        let resp = resp.map_err(|e| Error::BackendUnreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Error::Protocol(format!("HTTP {status}: {body}")));
        }
        resp.json::<T>().map_err(|e| Error::Protocol(format!("bad response body: {e}")))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let _slot = self.in_flight.acquire();
        self.finish(self.client.get(format!("{}{path}", self.base_url)).send())
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let _slot = self.in_flight.acquire();
        self.finish(self.client.post(format!("{}{path}", self.base_url)).json(body).send())
    }
}

/// Client for a remote generation server.
#[derive(Debug)]
pub struct HttpBackend {
    client: JsonClient,
    info: OnceLock<BackendInfo>,
}

impl HttpBackend {
    pub fn new(base_url: &str, max_in_flight: usize) -> Result<Self> {
        Ok(Self {
            client: JsonClient::new(base_url, max_in_flight, Duration::from_secs(300))?,
            info: OnceLock::new(),
        })
    }
}

impl GenerationBackend for HttpBackend {
    fn info(&self) -> Result<BackendInfo> {
        if let Some(i) = self.info.get() {
            return Ok(i.clone());
        }
        let info: BackendInfo = self.client.get("/v1/info")?;
        Ok(self.info.get_or_init(|| info).clone())
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationRecord> {
        request.validate()?;
        let wire: WireRecord = self.client.post("/v1/generate", request)?;
        let record: GenerationRecord = wire.try_into()?;
        if record.samples.len() != request.n_samples {
            return Err(Error::Protocol(format!(
                "asked for {} samples, got {}",
                request.n_samples,
                record.samples.len()
            )));
        }
        Ok(record)
    }

    fn token_len(&self, text: &str) -> Result<usize> {
        let r: TokenizeResponse = self.client.post("/v1/tokenize", &TokenizeRequest { text: text.to_string() })?;
        Ok(r.count)
    }

    fn max_in_flight(&self) -> usize {
        self.client.max_in_flight
    }
}

/// Client for a remote embedding server used as the re-encoder.
#[derive(Debug)]
pub struct HttpEmbedder {
    client: JsonClient,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, max_in_flight: usize) -> Result<Self> {
        Ok(Self {
            client: JsonClient::new(base_url, max_in_flight, Duration::from_secs(120))?,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed_texts(&self, request: &EmbedRequest) -> Result<Vec<Embedding>> {
        request.validate()?;
        let resp: EmbedResponse = self.client.post("/v1/embed", request)?;
        let raw = resp.decode()?;
        if raw.len() != request.texts.len() {
            return Err(Error::Protocol(format!("{} texts but {} vectors", request.texts.len(), raw.len())));
        }
        // Normalize client-side as well; servers may ignore the flag.
        super::finish_vectors(raw, request.normalize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_server() {
        // Port 9 (discard) on localhost is closed in the test environment.
        let b = HttpBackend::new("http://127.0.0.1:9", 2).unwrap();
        assert!(matches!(b.info(), Err(Error::BackendUnreachable(_))));
        let e = HttpEmbedder::new("http://127.0.0.1:9/", 2).unwrap();
        assert!(matches!(
            e.embed_texts(&EmbedRequest { texts: vec!["a".into()], normalize: false }),
            Err(Error::BackendUnreachable(_))
        ));
    }

    #[test]
    fn in_flight_bound_blocks_and_releases() {
        let sem = std::sync::Arc::new(InFlight::new(2));
        let active = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let peak = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (sem, active, peak) = (sem.clone(), active.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _g = sem.acquire();
                    let now = active.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                    peak.fetch_max(now, std::sync::atomic::Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, std::sync::atomic::Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(std::sync::atomic::Ordering::SeqCst) <= 2);
    }
}
