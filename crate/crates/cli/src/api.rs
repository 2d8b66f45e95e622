//! HTTP/JSON service over scenario runs and sweeps.
//!
//! Runs are queued on POST and executed one at a time by a single worker;
//! clients poll `GET /runs/{id}` until the status is `done` or `failed`.

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use drivelab::raster::{render, CameraRig};
use drivelab::scenario::{
    builtin_scenarios, expand_grid, run_scenario, run_sweep, GridAxis, ParamSpec, ScenarioFile, ScenarioRun, SweepReport, SweepRow,
    ViewSeries,
};
use drivelab::sim::EpisodeEnd;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

/// Largest number of grid points one POST may request.
pub const MAX_GRID_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// A parameter in a run request: a single value or an inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Value(f64),
    Range { min: f64, max: f64, step: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub scenario_id: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub id: String,
    pub status: RunStatus,
    pub scenario_id: String,
    pub params: BTreeMap<String, ParamValue>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub scenario: String,
    pub version: u32,
    pub seed: u64,
    pub row: SweepRow,
    pub snapshots: usize,
    pub duration_s: f64,
    pub end: EpisodeEnd,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunReport {
    Episode(EpisodeReport),
    Sweep(SweepReport),
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub id: String,
    pub description: String,
    pub source: String,
    pub params: Vec<ParamSpec>,
    pub viewpoints: Vec<String>,
    pub target: u32,
}

enum Plan {
    Episode(BTreeMap<String, f64>),
    Sweep(Vec<GridAxis>),
}

struct Job {
    id: String,
    file: Arc<ScenarioFile>,
    plan: Plan,
    seed: u64,
}

enum Outcome {
    Episode(Box<ScenarioRun>),
    Sweep,
}

struct RunEntry {
    handle: RunHandle,
    report: Option<RunReport>,
    outcome: Option<Arc<Outcome>>,
}

struct Inner {
    scenarios: Vec<(ScenarioFile, String)>,
    runs: RwLock<HashMap<String, RunEntry>>,
    next_id: AtomicU64,
    queue: mpsc::UnboundedSender<Job>,
    rig: CameraRig,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    fn scenario(&self, id: &str) -> Option<&ScenarioFile> {
        self.inner.scenarios.iter().find(|(f, _)| f.id == id).map(|(f, _)| f)
    }

    /// Moves a run forward; a status never regresses.
    fn advance(&self, id: &str, status: RunStatus, finish: impl FnOnce(&mut RunEntry)) {
        let mut runs = self.inner.runs.write().expect("run table lock");
        if let Some(entry) = runs.get_mut(id) {
            if status > entry.handle.status {
                entry.handle.status = status;
                finish(entry);
            }
        }
    }
}

/// Reads every `*.json` scenario file in `dir`, sorted by file name.
pub fn load_scenario_dir(dir: &Path) -> anyhow::Result<Vec<(ScenarioFile, String)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let file = ScenarioFile::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        file.validate().with_context(|| format!("validating {}", path.display()))?;
        out.push((file, path.display().to_string()));
    }
    Ok(out)
}

/// Built-in scenarios followed by `extra`; ids must be unique.
pub fn scenario_catalog(extra: Vec<(ScenarioFile, String)>) -> anyhow::Result<Vec<(ScenarioFile, String)>> {
    let mut all: Vec<(ScenarioFile, String)> = builtin_scenarios().into_iter().map(|f| (f, "builtin".to_string())).collect();
    for (file, source) in extra {
        if all.iter().any(|(f, _)| f.id == file.id) {
            bail!("duplicate scenario id `{}` in {source}", file.id);
        }
        all.push((file, source));
    }
    Ok(all)
}

/// Builds the router and starts the run worker on the current runtime.
pub fn app(scenarios: Vec<(ScenarioFile, String)>) -> Router {
    let (tx, rx) = mpsc::unbounded_channel();
    let state = AppState {
        inner: Arc::new(Inner {
            scenarios,
            runs: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            queue: tx,
            rig: CameraRig::default(),
        }),
    };
    tokio::spawn(worker(state.clone(), rx));
    Router::new()
        .route("/scenarios", get(list_scenarios))
        .route("/runs", axum::routing::post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/trace", get(get_trace))
        .route("/runs/{id}/frames/{n}", get(get_frame))
        .route("/runs/{id}/visibility", get(get_visibility))
        .with_state(state)
}

async fn worker(state: AppState, mut rx: mpsc::UnboundedReceiver<Job>) {
    while let Some(job) = rx.recv().await {
        let id = job.id.clone();
        state.advance(&id, RunStatus::Running, |_| {});
        let result = tokio::task::spawn_blocking(move || execute(job)).await;
        match result {
            Ok(Ok((report, outcome))) => state.advance(&id, RunStatus::Done, |e| {
                e.report = Some(report);
                e.outcome = Some(Arc::new(outcome));
            }),
            Ok(Err(err)) => state.advance(&id, RunStatus::Failed, |e| e.handle.error = Some(err)),
            Err(err) => state.advance(&id, RunStatus::Failed, |e| e.handle.error = Some(format!("run aborted: {err}"))),
        }
    }
}

fn execute(job: Job) -> Result<(RunReport, Outcome), String> {
    match job.plan {
        Plan::Episode(params) => {
            let run = run_scenario(&job.file, &params, 0).map_err(|e| e.to_string())?;
            let report = EpisodeReport {
                scenario: job.file.id.clone(),
                version: job.file.version,
                seed: job.seed,
                row: run.row.clone(),
                snapshots: run.trace.snapshots.len(),
                duration_s: run.trace.snapshots.last().map_or(0.0, |s| s.sim_time),
                end: run.trace.end,
                collisions: run.trace.collisions.len(),
            };
            Ok((RunReport::Episode(report), Outcome::Episode(Box::new(run))))
        }
        Plan::Sweep(grid) => {
            let report = run_sweep(&job.file, &grid, job.seed).map_err(|e| e.to_string())?;
            Ok((RunReport::Sweep(report), Outcome::Sweep))
        }
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn bad_request(message: impl Into<String>) -> Response {
    error(StatusCode::BAD_REQUEST, message)
}

fn not_found(message: impl Into<String>) -> Response {
    error(StatusCode::NOT_FOUND, message)
}

async fn list_scenarios(State(state): State<AppState>) -> Json<Vec<ScenarioSummary>> {
    let list = state
        .inner
        .scenarios
        .iter()
        .map(|(f, source)| ScenarioSummary {
            id: f.id.clone(),
            description: f.description.clone(),
            source: source.clone(),
            params: f.params.clone(),
            viewpoints: f.viewpoints.iter().map(|v| v.name.clone()).collect(),
            target: f.target,
        })
        .collect();
    Json(list)
}

fn plan(file: &ScenarioFile, params: &BTreeMap<String, ParamValue>) -> Result<Plan, String> {
    let sweep = params.values().any(|p| matches!(p, ParamValue::Range { .. }));
    if !sweep {
        let values = params
            .iter()
            .map(|(k, v)| match v {
                ParamValue::Value(x) => (k.clone(), *x),
                ParamValue::Range { .. } => unreachable!("no ranges in a single run"),
            })
            .collect();
        file.resolve_params(&values).map_err(|e| e.to_string())?;
        return Ok(Plan::Episode(values));
    }
    let grid: Vec<GridAxis> = params
        .iter()
        .map(|(name, v)| match *v {
            ParamValue::Value(x) => GridAxis { name: name.clone(), min: x, max: x, step: 1.0 },
            ParamValue::Range { min, max, step } => GridAxis { name: name.clone(), min, max, step },
        })
        .collect();
    let mut points: usize = 1;
    for axis in &grid {
        if !(axis.step > 0.0 && axis.min <= axis.max) {
            return Err(format!("range for `{}` needs min <= max and step > 0", axis.name));
        }
        points = points.saturating_mul(axis.values().len());
    }
    if points > MAX_GRID_POINTS {
        return Err(format!("grid has {points} points, more than {MAX_GRID_POINTS}"));
    }
    expand_grid(file, &grid).map_err(|e| e.to_string())?;
    Ok(Plan::Sweep(grid))
}

async fn create_run(State(state): State<AppState>, body: Bytes) -> Response {
    let req: RunRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("invalid run request: {e}")),
    };
    let Some(file) = state.scenario(&req.scenario_id) else {
        return bad_request(format!("unknown scenario `{}`", req.scenario_id));
    };
    let plan = match plan(file, &req.params) {
        Ok(p) => p,
        Err(e) => return bad_request(e),
    };
    let id = format!("run-{}", state.inner.next_id.fetch_add(1, Ordering::SeqCst));
    let handle = RunHandle {
        id: id.clone(),
        status: RunStatus::Pending,
        scenario_id: req.scenario_id.clone(),
        params: req.params.clone(),
        seed: req.seed,
        error: None,
    };
    let job = Job {
        id: id.clone(),
        file: Arc::new(file.clone()),
        plan,
        seed: req.seed,
    };
    state.inner.runs.write().expect("run table lock").insert(
        id,
        RunEntry {
            handle: handle.clone(),
            report: None,
            outcome: None,
        },
    );
    if state.inner.queue.send(job).is_err() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "run worker stopped");
    }
    Json(handle).into_response()
}

async fn get_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let runs = state.inner.runs.read().expect("run table lock");
    let Some(entry) = runs.get(&id) else {
        return not_found(format!("no run `{id}`"));
    };
    let mut body = serde_json::to_value(&entry.handle).expect("handles serialize");
    if let Some(report) = &entry.report {
        body["report"] = serde_json::to_value(report).expect("reports serialize");
    }
    Json(body).into_response()
}

fn episode(state: &AppState, id: &str) -> Result<Arc<Outcome>, Response> {
    let runs = state.inner.runs.read().expect("run table lock");
    let entry = runs.get(id).ok_or_else(|| not_found(format!("no run `{id}`")))?;
    let outcome = entry
        .outcome
        .clone()
        .ok_or_else(|| not_found(format!("run `{id}` is {:?}, not done", entry.handle.status).to_lowercase()))?;
    match *outcome {
        Outcome::Episode(_) => Ok(outcome),
        Outcome::Sweep => Err(not_found(format!("run `{id}` is a sweep and keeps no trace"))),
    }
}

fn run_of(outcome: &Outcome) -> &ScenarioRun {
    match outcome {
        Outcome::Episode(run) => run,
        Outcome::Sweep => unreachable!("checked by episode()"),
    }
}

async fn get_trace(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    match episode(&state, &id) {
        Ok(outcome) => ([(header::CONTENT_TYPE, "application/x-ndjson")], run_of(&outcome).trace.to_jsonl()).into_response(),
        Err(resp) => resp,
    }
}

async fn get_frame(State(state): State<AppState>, UrlPath((id, n)): UrlPath<(String, usize)>) -> Response {
    let outcome = match episode(&state, &id) {
        Ok(o) => o,
        Err(resp) => return resp,
    };
    let run = run_of(&outcome);
    let Some(snapshot) = run.trace.snapshots.get(n) else {
        return not_found(format!("run `{id}` has {} frames", run.trace.snapshots.len()));
    };
    let rig = state.inner.rig;
    let frame = render(&run.world, snapshot, &rig);
    let img = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.data).expect("frame buffer matches its size");
    let mut png = Cursor::new(Vec::new());
    if let Err(e) = img.write_to(&mut png, image::ImageFormat::Png) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    ([(header::CONTENT_TYPE, "image/png")], png.into_inner()).into_response()
}

#[derive(Serialize)]
struct VisibilityBody<'a> {
    times: Vec<f64>,
    viewpoints: &'a [ViewSeries],
}

async fn get_visibility(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    match episode(&state, &id) {
        Ok(outcome) => {
            let run = run_of(&outcome);
            Json(VisibilityBody {
                times: run.trace.snapshots.iter().map(|s| s.sim_time).collect(),
                viewpoints: &run.visibility,
            })
            .into_response()
        }
        Err(resp) => resp,
    }
}
