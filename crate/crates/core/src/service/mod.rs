//! HTTP services: the cluster-job API used by the explorer UI, and a
//! generation-protocol server that exposes any backend over `/v1/*`.

pub mod backend_server;

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::benchmarks::{parse_corpus, CorpusDocument};
use crate::encoding::{EncodingSpec, Method};
use crate::error::{Error, Result};
use crate::interpretation::ClusterReport;
use crate::pipeline::{Pipeline, DEFAULT_SEED, DEFAULT_TOP_K};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub max_concurrent_jobs: usize,
    /// Finished jobs beyond this many are evicted, oldest first.
    pub max_retained_jobs: usize,
    pub snapshot: Option<PathBuf>,
    /// Explorer origin allowed by CORS; any origin when unset.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_concurrent_jobs: 2,
            max_retained_jobs: 256,
            snapshot: None,
            cors_origin: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterJob {
    pub job_id: String,
    pub corpus_id: String,
    pub instruction: String,
    pub spec: EncodingSpec,
    pub k: usize,
    pub top_k: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_view: Option<String>,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ClusterReport>,
    /// Cluster id per document, in corpus order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct JobEntry {
    job: ClusterJob,
    #[serde(default)]
    generations: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Corpus {
    pub corpus_id: String,
    pub documents: Vec<CorpusDocument>,
}

impl Corpus {
    fn metadata(&self) -> serde_json::Value {
        let views: std::collections::BTreeSet<&String> = self.documents.iter().flat_map(|d| d.labels.keys()).collect();
        json!({ "corpus_id": self.corpus_id, "size": self.documents.len(), "label_views": views })
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ClusterRequest {
    pub corpus_id: String,
    pub instruction: String,
    pub k: usize,
    #[serde(default)]
    pub spec: Option<EncodingSpec>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Label view used for per-cluster histograms and entropy ordering.
    #[serde(default)]
    pub gold_view: Option<String>,
}

#[derive(Default, Serialize, Deserialize)]
struct Snapshot {
    corpora: Vec<Corpus>,
    jobs: Vec<JobEntry>,
}

#[derive(Default)]
struct Store {
    corpora: BTreeMap<String, Arc<Corpus>>,
    jobs: BTreeMap<String, JobEntry>,
    order: VecDeque<String>,
}

/// Shared state behind the job API.
pub struct ServiceState {
    pipeline: Arc<Pipeline>,
    config: ServiceConfig,
    store: RwLock<Store>,
    slots: Arc<Semaphore>,
}

impl ServiceState {
    pub fn new(pipeline: Pipeline, config: ServiceConfig) -> Result<Arc<Self>> {
        let mut store = Store::default();
        if let Some(path) = config.snapshot.as_ref().filter(|p| p.exists()) {
            let snap: Snapshot = serde_json::from_slice(&std::fs::read(path)?)?;
            for c in snap.corpora {
                store.corpora.insert(c.corpus_id.clone(), Arc::new(c));
            }
            for mut e in snap.jobs {
                if matches!(e.job.status, JobStatus::Pending | JobStatus::Running) {
                    e.job.status = JobStatus::Failed;
                    e.job.error = Some("interrupted by service restart".into());
                }
                store.order.push_back(e.job.job_id.clone());
                store.jobs.insert(e.job.job_id.clone(), e);
            }
        }
        Ok(Arc::new(Self {
            pipeline: Arc::new(pipeline),
            slots: Arc::new(Semaphore::new(config.max_concurrent_jobs.max(1))),
            config,
            store: RwLock::new(store),
        }))
    }

    pub fn add_corpus(&self, jsonl: &str) -> Result<Arc<Corpus>> {
        let documents = parse_corpus(jsonl.as_bytes(), std::path::Path::new("upload"))?;
        let corpus_id = hex_prefix(&Sha256::digest(jsonl.as_bytes()), 16);
        let mut store = self.store.write().unwrap();
        let c = store
            .corpora
            .entry(corpus_id.clone())
            .or_insert_with(|| Arc::new(Corpus { corpus_id, documents }))
            .clone();
        drop(store);
        self.save_snapshot();
        Ok(c)
    }

    pub fn corpus(&self, id: &str) -> Result<Arc<Corpus>> {
        self.store
            .read()
            .unwrap()
            .corpora
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownCorpus(id.to_string()))
    }

    pub fn job(&self, id: &str) -> Option<ClusterJob> {
        self.store.read().unwrap().jobs.get(id).map(|e| e.job.clone())
    }

    /// Validates and records a pending job; the caller runs it.
    fn enqueue(&self, req: ClusterRequest) -> Result<(ClusterJob, Arc<Corpus>)> {
        let corpus = self.corpus(&req.corpus_id)?;
        if req.k == 0 {
            return Err(Error::InvalidK("k must be positive".into()));
        }
        if req.k > corpus.documents.len() {
            return Err(Error::InvalidK(format!("k = {} exceeds corpus size {}", req.k, corpus.documents.len())));
        }
        if req.instruction.trim().is_empty() {
            return Err(Error::EmptyField("instruction"));
        }
        let spec = req.spec.unwrap_or_else(|| EncodingSpec::new(Method::AvgGen));
        spec.validate()?;
        if let Some(v) = &req.gold_view {
            if corpus.documents.iter().any(|d| !d.labels.contains_key(v)) {
                return Err(Error::InvalidRequest(format!("not every document has a label for view {v}")));
            }
        }
        let job = ClusterJob {
            job_id: uuid::Uuid::new_v4().to_string(),
            corpus_id: req.corpus_id,
            instruction: req.instruction,
            spec,
            k: req.k,
            top_k: req.top_k.unwrap_or(DEFAULT_TOP_K),
            seed: req.seed.unwrap_or(DEFAULT_SEED),
            gold_view: req.gold_view,
            status: JobStatus::Pending,
            result: None,
            assignments: None,
            error: None,
        };
        let mut store = self.store.write().unwrap();
        store.order.push_back(job.job_id.clone());
        store.jobs.insert(
            job.job_id.clone(),
            JobEntry {
                job: job.clone(),
                generations: Vec::new(),
            },
        );
        evict(&mut store, self.config.max_retained_jobs);
        Ok((job, corpus))
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobEntry)) {
        if let Some(e) = self.store.write().unwrap().jobs.get_mut(id) {
            f(e);
        }
    }

    /// Runs a pending job to completion on the calling thread.
    fn execute(&self, job: &ClusterJob, corpus: &Corpus) {
        self.update(&job.job_id, |e| e.job.status = JobStatus::Running);
        let texts: Vec<String> = corpus.documents.iter().map(|d| d.text.clone()).collect();
        let outcome = self
            .pipeline
            .cluster(&texts, &job.instruction, &job.spec, job.k, job.seed, job.top_k)
            .and_then(|o| match &job.gold_view {
                Some(v) => {
                    let gold: Vec<String> = corpus.documents.iter().map(|d| d.labels[v].clone()).collect();
                    let report = o.report.clone().with_gold(&o.assignment, &gold)?;
                    Ok(crate::pipeline::ClusterOutcome { report, ..o })
                }
                None => Ok(o),
            });
        self.update(&job.job_id, |e| match outcome {
            Ok(o) => {
                e.job.status = JobStatus::Done;
                e.job.result = Some(o.report);
                e.job.assignments = Some(o.assignment.labels);
                e.generations = o.generations;
            }
            Err(err) => {
                e.job.status = JobStatus::Failed;
                e.job.error = Some(err.to_string());
            }
        });
        self.save_snapshot();
    }

    fn save_snapshot(&self) {
        let Some(path) = &self.config.snapshot else { return };
        let snap = {
            let store = self.store.read().unwrap();
            Snapshot {
                corpora: store.corpora.values().map(|c| (**c).clone()).collect(),
                jobs: store.order.iter().filter_map(|id| store.jobs.get(id).cloned()).collect(),
            }
        };
        let tmp = path.with_extension("tmp");
        let written = serde_json::to_vec(&snap)
            .map_err(Error::from)
            .and_then(|b| std::fs::write(&tmp, b).map_err(Error::from))
            .and_then(|_| std::fs::rename(&tmp, path).map_err(Error::from));
        if let Err(e) = written {
            log::warn!("snapshot {} not written: {e}", path.display());
        }
    }

    pub fn running_jobs(&self) -> usize {
        self.config.max_concurrent_jobs.max(1) - self.slots.available_permits()
    }
}

fn evict(store: &mut Store, cap: usize) {
    while store.jobs.len() > cap {
        let finished = store.order.iter().position(|id| {
            store
                .jobs
                .get(id)
                .is_some_and(|e| matches!(e.job.status, JobStatus::Done | JobStatus::Failed))
        });
        let Some(i) = finished else { break };
        let id = store.order.remove(i).unwrap();
        store.jobs.remove(&id);
    }
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<String>()[..n].to_string()
}

pub struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownCorpus(_) => StatusCode::NOT_FOUND,
            Error::InvalidK(_)
            | Error::KTooLarge { .. }
            | Error::InvalidRequest(_)
            | Error::EmptyField(_)
            | Error::Dataset { .. }
            | Error::Json(_)
            | Error::MethodUnavailableForMode { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn health(State(s): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    let corpora = s.store.read().unwrap().corpora.len();
    Json(json!({ "status": "ok", "corpora": corpora, "running_jobs": s.running_jobs() }))
}

async fn upload_corpus(State(s): State<Arc<ServiceState>>, body: String) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let c = tokio::task::spawn_blocking(move || s.add_corpus(&body))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(c.metadata())))
}

async fn get_corpus(State(s): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(s.corpus(&id)?.metadata()))
}

async fn submit_cluster(
    State(s): State<Arc<ServiceState>>,
    Json(req): Json<ClusterRequest>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let (job, corpus) = s.enqueue(req)?;
    let job_id = job.job_id.clone();
    let slots = s.slots.clone();
    tokio::spawn(async move {
        let Ok(_permit) = slots.acquire_owned().await else { return };
        let state = s.clone();
        let _ = tokio::task::spawn_blocking(move || state.execute(&job, &corpus)).await;
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn get_job(State(s): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult<Json<ClusterJob>> {
    s.job(&id)
        .map(Json)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown job {id}")))
}

async fn get_members(
    State(s): State<Arc<ServiceState>>,
    Path((id, cluster)): Path<(String, usize)>,
) -> ApiResult<Json<serde_json::Value>> {
    let (job, generations) = {
        let store = s.store.read().unwrap();
        let e = store
            .jobs
            .get(&id)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown job {id}")))?;
        (e.job.clone(), e.generations.clone())
    };
    let Some(assignments) = job.assignments.filter(|_| job.status == JobStatus::Done) else {
        return Err(ApiError(StatusCode::CONFLICT, format!("job {id} is not done")));
    };
    if cluster >= job.k {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("cluster {cluster} out of range")));
    }
    let corpus = s.corpus(&job.corpus_id)?;
    let members: Vec<serde_json::Value> = assignments
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == cluster)
        .map(|(i, _)| {
            let d = &corpus.documents[i];
            json!({ "index": i, "id": d.id, "text": d.text, "generation": generations.get(i), "labels": d.labels })
        })
        .collect();
    Ok(Json(json!({ "job_id": id, "cluster": cluster, "members": members })))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let origin = match &state.config.cors_origin {
        Some(o) => HeaderValue::from_str(o).map(AllowOrigin::exact).unwrap_or_else(|_| AllowOrigin::any()),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/corpus", post(upload_corpus))
        .route("/api/corpus/:id", get(get_corpus))
        .route("/api/cluster", post(submit_cluster))
        .route("/api/cluster/:id", get(get_job))
        .route("/api/cluster/:id/members/:cluster", get(get_members))
        .layer(cors)
        .with_state(state)
}

/// Serves `app` until the process exits.
pub async fn serve(app: Router, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

/// A server on its own thread and runtime; stopped on drop.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn start(app: Router) -> Result<Self> {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build() {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = addr_tx.send(Err(Error::Io(e)));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind("127.0.0.1:0").await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = addr_tx.send(Err(Error::Io(e)));
                        return;
                    }
                };
                let _ = addr_tx.send(listener.local_addr().map_err(Error::Io));
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await;
            });
        });
        let addr = addr_rx
            .recv()
            .map_err(|_| Error::Service("server thread exited".into()))??;
        Ok(Self {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
