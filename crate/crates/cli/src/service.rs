//! Labeling service: streams unlabeled queries, persists labels, and runs
//! fine-tuning as a background job per session.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info};
use serde::{Deserialize, Serialize};
use serde_json::json;

use feasible_cf::classifier::Classifier;
use feasible_cf::data::RawValue;
use feasible_cf::metrics::MetricsReport;
use feasible_cf::oracle::{finetune, read_labels, FinetuneConfig, LabelRecord, Provenance, QuerySet};
use feasible_cf::pipeline::evaluate_generator;
use feasible_cf::vae::CfVae;

use crate::commands::{EvalParts, ServeArgs};
use crate::error::{CliError, Result};
use crate::workspace::{vae_file, Loaded, Workspace, QUERIES};

#[derive(Clone, Debug)]
pub struct ServiceOptions {
    pub eval_inputs: usize,
    pub k: usize,
    pub finetune: FinetuneConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobStatus {
    Idle,
    Running { labels: usize },
    Done { labels: usize },
    Failed { message: String },
}

/// Model served to a session, replaced whole when a fine-tune job finishes.
pub struct Snapshot {
    pub model: Arc<CfVae>,
    pub after: Option<MetricsReport>,
}

struct LabelStore {
    path: PathBuf,
    file: File,
    records: BTreeMap<u64, LabelRecord>,
}

pub struct Session {
    id: String,
    dir: PathBuf,
    labels: Mutex<LabelStore>,
    status: Mutex<JobStatus>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl Session {
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn status(&self) -> JobStatus {
        self.status.lock().expect("status lock").clone()
    }

    pub fn label_file(&self) -> PathBuf {
        self.labels.lock().expect("label lock").path.clone()
    }
}

pub struct ServiceState {
    ws: Workspace,
    data: Loaded,
    parts: EvalParts,
    classifier: Classifier,
    base: Arc<CfVae>,
    queries: QuerySet,
    eval_inputs: Vec<Vec<f64>>,
    before: MetricsReport,
    options: ServiceOptions,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
}

impl ServiceState {
    pub fn load(ws: Workspace, options: ServiceOptions) -> Result<Self> {
        let data = ws.load_data()?;
        let classifier = ws.classifier()?;
        let base = Arc::new(ws.vae("base")?);
        let mut queries = QuerySet::from_json(&ws.read_text(QUERIES, "build-queries")?)?;
        for q in &mut queries.queries {
            q.label = None;
            q.provenance = None;
        }
        let parts = EvalParts::load(&ws, &data.data.schema, None)?;
        let n = options.eval_inputs.min(data.test.len());
        let eval_inputs = data.test.encoded[..n].to_vec();
        let before = evaluate_generator(
            &parts.context(&data, None),
            &classifier,
            &base,
            &eval_inputs,
            options.k,
            options.seed,
        )?;
        Ok(ServiceState {
            ws,
            data,
            parts,
            classifier,
            base,
            queries,
            eval_inputs,
            before,
            options,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    /// The session `id`, created on first use and restored from its label file.
    pub fn session(&self, id: &str) -> std::result::Result<Arc<Session>, ApiError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("invalid session id '{id}'")));
        }
        let mut sessions = self.sessions.lock().expect("session lock");
        if let Some(s) = sessions.get(id) {
            return Ok(s.clone());
        }
        let s = Arc::new(self.open_session(id).map_err(ApiError::internal)?);
        sessions.insert(id.to_string(), s.clone());
        Ok(s)
    }

    fn open_session(&self, id: &str) -> Result<Session> {
        let dir = self.ws.path("sessions").join(id);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let path = dir.join("labels.jsonl");
        let mut records = BTreeMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
            for r in read_labels(BufReader::new(f))? {
                records.insert(r.query_id, r);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        Ok(Session {
            id: id.to_string(),
            dir,
            labels: Mutex::new(LabelStore { path, file, records }),
            status: Mutex::new(JobStatus::Idle),
            snapshot: RwLock::new(Arc::new(Snapshot {
                model: self.base.clone(),
                after: None,
            })),
        })
    }

    fn decoded(&self, encoded: &[f64]) -> Result<BTreeMap<String, RawValue>> {
        let schema = &self.data.data.schema;
        Ok(schema.names().into_iter().zip(schema.decode(encoded)?).collect())
    }

    /// Fine-tunes a copy of the base model on the session's persisted labels.
    fn run_finetune(&self, records: Vec<LabelRecord>) -> Result<Snapshot> {
        let mut qs = self.queries.clone();
        qs.apply_labels(&records)?;
        let mut model = (*self.base).clone();
        finetune(&mut model, &self.classifier, &qs, &self.options.finetune)?;
        let after = evaluate_generator(
            &self.parts.context(&self.data, None),
            &self.classifier,
            &model,
            &self.eval_inputs,
            self.options.k,
            self.options.seed,
        )?;
        Ok(Snapshot {
            model: Arc::new(model),
            after: Some(after),
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;
type AppState = Arc<ServiceState>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub query_id: u64,
    pub target: usize,
    pub x: BTreeMap<String, RawValue>,
    pub cf: BTreeMap<String, RawValue>,
    pub x_scores: Vec<f64>,
    pub cf_scores: Vec<f64>,
    pub pending: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelBody {
    pub query_id: u64,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session: String,
    pub labeled: usize,
    pub pending: usize,
    pub total: usize,
    #[serde(flatten)]
    pub status: JobStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    #[serde(flatten)]
    pub status: JobStatus,
    pub before: MetricsReport,
    pub after: Option<MetricsReport>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session/{id}/next", get(next))
        .route("/session/{id}/label", post(label))
        .route("/session/{id}/finetune", post(start_finetune))
        .route("/session/{id}/metrics", get(metrics))
        .route("/session/{id}/state", get(session_state))
        .with_state(state)
}

async fn next(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<QueryView>> {
    let session = app.session(&id)?;
    let (query, pending) = {
        let store = session.labels.lock().expect("label lock");
        let mut open = app.queries.queries.iter().filter(|q| !store.records.contains_key(&q.query_id));
        let first = open.next().cloned();
        (first, open.count() + 1)
    };
    let q = query.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no pending queries"))?;
    let clf = &app.classifier;
    Ok(Json(QueryView {
        query_id: q.query_id,
        target: q.target,
        x: app.decoded(&q.x).map_err(ApiError::internal)?,
        cf: app.decoded(&q.cf).map_err(ApiError::internal)?,
        x_scores: clf.class_scores(&q.x).map_err(ApiError::internal)?,
        cf_scores: clf.class_scores(&q.cf).map_err(ApiError::internal)?,
        pending,
    }))
}

async fn label(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<LabelBody>,
) -> ApiResult<Json<serde_json::Value>> {
    if body.label > 1 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "label must be 0 or 1"));
    }
    let session = app.session(&id)?;
    let q = app
        .queries
        .queries
        .iter()
        .find(|q| q.query_id == body.query_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown query {}", body.query_id)))?;
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let record = LabelRecord::from_query(&app.data.data.schema, q, body.label, Provenance::Human, timestamp)
        .map_err(ApiError::internal)?;
    let mut store = session.labels.lock().expect("label lock");
    if store.records.contains_key(&body.query_id) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("query {} is already labeled", body.query_id),
        ));
    }
    let mut line = serde_json::to_string(&record).map_err(ApiError::internal)?;
    line.push('\n');
    store.file.write_all(line.as_bytes()).map_err(ApiError::internal)?;
    store.file.sync_data().map_err(ApiError::internal)?;
    store.records.insert(body.query_id, record);
    Ok(Json(json!({ "query_id": body.query_id, "label": body.label, "labeled": store.records.len() })))
}

async fn start_finetune(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<JobStatus>)> {
    let session = app.session(&id)?;
    let records: Vec<LabelRecord> = session.labels.lock().expect("label lock").records.values().cloned().collect();
    let running = {
        let mut status = session.status.lock().expect("status lock");
        if matches!(*status, JobStatus::Running { .. }) {
            return Err(ApiError::new(StatusCode::CONFLICT, "a fine-tune job is already running"));
        }
        if records.is_empty() {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "no labels received"));
        }
        *status = JobStatus::Running { labels: records.len() };
        status.clone()
    };
    let n = records.len();
    let job_app = app.clone();
    let job_session = session.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = job_app.run_finetune(records).and_then(|snap| {
            let path = job_session.dir.join(vae_file("example-based"));
            snap.model.save(&path)?;
            Ok(snap)
        });
        let finished = match outcome {
            Ok(snap) => {
                *job_session.snapshot.write().expect("snapshot lock") = Arc::new(snap);
                info!("session {} fine-tuned on {n} labels", job_session.id);
                JobStatus::Done { labels: n }
            }
            Err(e) => {
                error!("session {} fine-tune failed: {e}", job_session.id);
                JobStatus::Failed { message: e.to_string() }
            }
        };
        *job_session.status.lock().expect("status lock") = finished;
    });
    Ok((StatusCode::ACCEPTED, Json(running)))
}

async fn metrics(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<MetricsView>> {
    let session = app.session(&id)?;
    let status = session.status();
    Ok(Json(MetricsView {
        status,
        before: app.before.clone(),
        after: session.snapshot().after.clone(),
    }))
}

async fn session_state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    let session = app.session(&id)?;
    let labeled = session.labels.lock().expect("label lock").records.len();
    let total = app.queries.len();
    Ok(Json(SessionState {
        session: session.id.clone(),
        labeled,
        pending: total.saturating_sub(labeled),
        total,
        status: session.status(),
    }))
}

pub async fn serve(a: &ServeArgs) -> Result<()> {
    let ws = Workspace::create(&a.out)?;
    let seed = match a.seed {
        Some(s) => s,
        None => ws.read_json::<crate::workspace::DatasetArtifact>(crate::workspace::DATASET, "simulate")?.seed,
    };
    let options = ServiceOptions {
        eval_inputs: a.eval_inputs,
        k: a.k,
        finetune: a.opts.config(seed),
        seed,
    };
    let mut config = a.clone();
    config.seed = Some(seed);
    ws.write_manifest("serve", seed, &config, &[], serde_json::Value::Null)?;
    let state = tokio::task::spawn_blocking(move || ServiceState::load(ws, options))
        .await
        .map_err(|e| CliError::Usage(format!("service start-up panicked: {e}")))??;
    let addr = format!("{}:{}", a.host, a.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| CliError::io(&addr, e))?;
    info!("labeling service listening on {addr}");
    axum::serve(listener, router(Arc::new(state)))
        .await
        .map_err(|e| CliError::io(&addr, e))
}
