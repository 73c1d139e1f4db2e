//! Read-only HTTP API over trained checkpoints: family metadata, rollouts,
//! return surfaces and generated-weight summaries.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hyperzero_core::baselines::CtxTrained;
use hyperzero_core::envfam::{FamilySpec, ParamRange, TaskParams};
use hyperzero_core::evalcli::{evaluate, Agent};
use hyperzero_core::hyperzero::{checkpoint_kind, HzTrained};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{Semaphore, SemaphorePermit};
use tower_http::services::ServeDir;

/// Largest accepted surface side.
pub const MAX_GRID: usize = 64;
pub const MAX_SURFACE_EPISODES: usize = 100;
pub const DEFAULT_MAX_ROLLOUTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Agent name to checkpoint path.
    pub agents: BTreeMap<String, PathBuf>,
    #[serde(default = "default_max_rollouts")]
    pub max_concurrent_rollouts: usize,
    /// Built UI bundle served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_max_rollouts() -> usize {
    DEFAULT_MAX_ROLLOUTS
}

impl ServeConfig {
    pub fn read(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub enum LoadedAgent {
    Hyper(HzTrained),
    Ctx(CtxTrained),
}

impl LoadedAgent {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let fail = |message: String| ServiceError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        match checkpoint_kind(path)
            .map_err(|e| fail(e.to_string()))?
            .as_str()
        {
            "hyperzero" => HzTrained::load(path)
                .map(LoadedAgent::Hyper)
                .map_err(|e| fail(e.to_string())),
            "baseline" => CtxTrained::load(path)
                .map(LoadedAgent::Ctx)
                .map_err(|e| fail(e.to_string())),
            other => Err(fail(format!("`{other}` checkpoints cannot be served"))),
        }
    }

    pub fn kind(&self) -> String {
        match self {
            LoadedAgent::Hyper(t) => format!("hyperzero-{}", t.net.config.variant),
            LoadedAgent::Ctx(t) => t.kind.name().to_string(),
        }
    }

    pub fn family(&self) -> &FamilySpec {
        match self {
            LoadedAgent::Hyper(t) => &t.family,
            LoadedAgent::Ctx(t) => &t.family,
        }
    }

    fn as_agent(&self) -> Agent<'_> {
        match self {
            LoadedAgent::Hyper(t) => Agent::Hyper(t),
            LoadedAgent::Ctx(t) => Agent::Ctx(t),
        }
    }
}

/// Checkpoints loaded once at startup and shared read-only.
pub struct AppState {
    pub family: FamilySpec,
    pub agents: BTreeMap<String, LoadedAgent>,
    rollouts: Semaphore,
    surfaces: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl AppState {
    pub fn new(
        agents: BTreeMap<String, LoadedAgent>,
        max_concurrent_rollouts: usize,
    ) -> Result<Self, ServiceError> {
        let family = agents
            .values()
            .next()
            .ok_or_else(|| ServiceError::Config("no agents configured".into()))?
            .family()
            .clone();
        if let Some((name, _)) = agents.iter().find(|(_, a)| a.family() != &family) {
            return Err(ServiceError::Config(format!(
                "agent `{name}` was trained on a different family"
            )));
        }
        if max_concurrent_rollouts == 0 {
            return Err(ServiceError::Config(
                "max_concurrent_rollouts must be positive".into(),
            ));
        }
        Ok(Self {
            family,
            agents,
            rollouts: Semaphore::new(max_concurrent_rollouts),
            surfaces: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_config(config: &ServeConfig) -> Result<Self, ServiceError> {
        let agents = config
            .agents
            .iter()
            .map(|(name, path)| Ok((name.clone(), LoadedAgent::load(path)?)))
            .collect::<Result<_, ServiceError>>()?;
        Self::new(agents, config.max_concurrent_rollouts)
    }

    /// Occupy one rollout slot until the permit drops.
    pub fn hold_rollout_permit(&self) -> Option<SemaphorePermit<'_>> {
        self.rollouts.try_acquire().ok()
    }

    fn agent(&self, name: &str) -> Result<&LoadedAgent, ApiError> {
        self.agents
            .get(name)
            .ok_or_else(|| ApiError::bad_request(format!("unknown agent `{name}`")))
    }

    /// Contexts must lie within twice the declared range, and mass or
    /// length must stay positive for the physics to make sense.
    fn check_context(&self, psi: f64, mu: f64) -> Result<TaskParams, ApiError> {
        let within = |x: f64, r: &ParamRange| {
            let half = 0.5 * (r.hi - r.lo);
            x.is_finite() && (x - 0.5 * (r.hi + r.lo)).abs() <= 2.0 * half + 1e-12
        };
        if !within(psi, &self.family.psi) || !within(mu, &self.family.mu) {
            return Err(ApiError::bad_request(format!(
                "context ({psi}, {mu}) is outside twice the declared range"
            )));
        }
        if mu <= 0.0 {
            return Err(ApiError::bad_request(format!(
                "mu must be positive, got {mu}"
            )));
        }
        Ok(TaskParams::new(psi, mu))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub name: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub family: FamilySpec,
    pub psi: ParamRange,
    pub mu: ParamRange,
    pub agents: Vec<AgentInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRequest {
    pub agent: String,
    pub psi: f64,
    pub mu: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResponse {
    pub agent: String,
    pub psi: f64,
    pub mu: f64,
    pub seed: u64,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub clipped_actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRequest {
    pub agent: String,
    pub psi_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceResponse {
    pub agent: String,
    pub psi_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
    /// `returns[i][j]` is the mean return at `(psi_grid[i], mu_grid[j])`.
    pub returns: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsQuery {
    pub agent: String,
    pub psi: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSummary {
    pub agent: String,
    pub psi: f64,
    pub mu: f64,
    /// L2 norm of each generated policy layer (weights and bias together).
    pub policy: Vec<f64>,
    pub critic: Option<Vec<f64>>,
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/meta", get(meta))
        .route("/api/rollout", post(rollout))
        .route("/api/surface", post(surface))
        .route("/api/weights-summary", get(weights_summary))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn meta(State(state): State<Arc<AppState>>) -> Json<MetaResponse> {
    Json(MetaResponse {
        family: state.family.clone(),
        psi: state.family.psi,
        mu: state.family.mu,
        agents: state
            .agents
            .iter()
            .map(|(name, a)| AgentInfo {
                name: name.clone(),
                kind: a.kind(),
            })
            .collect(),
    })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn rollout(
    State(state): State<Arc<AppState>>,
    Json(req): Json<RolloutRequest>,
) -> Result<Json<RolloutResponse>, ApiError> {
    let task = state.check_context(req.psi, req.mu)?;
    state.agent(&req.agent)?;
    let _permit = state.hold_rollout_permit().ok_or_else(|| ApiError {
        status: StatusCode::SERVICE_UNAVAILABLE,
        message: "too many concurrent rollouts".into(),
    })?;
    let st = state.clone();
    let out = blocking(move || {
        let policy = st
            .agent(&req.agent)?
            .as_agent()
            .policy(task)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let ep = st
            .family
            .instance(task)
            .rollout(policy.as_ref(), req.seed)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(RolloutResponse {
            agent: req.agent,
            psi: req.psi,
            mu: req.mu,
            seed: req.seed,
            states: ep.states,
            actions: ep.actions,
            rewards: ep.rewards,
            total_return: ep.total_return,
            clipped_actions: ep.clipped_actions,
        })
    })
    .await?;
    Ok(Json(out))
}

fn surface_key(req: &SurfaceRequest) -> String {
    let bits = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{:016x}", x.to_bits()))
            .collect::<Vec<_>>()
            .join(",")
    };
    format!(
        "{}|{}|{}|{}|{}",
        req.agent,
        bits(&req.psi_grid),
        bits(&req.mu_grid),
        req.episodes,
        req.seed
    )
}

async fn surface(
    State(state): State<Arc<AppState>>,
    Json(req): Json<SurfaceRequest>,
) -> Result<Response, ApiError> {
    let (np, nm) = (req.psi_grid.len(), req.mu_grid.len());
    if np == 0 || nm == 0 || np > MAX_GRID || nm > MAX_GRID {
        return Err(ApiError::bad_request(format!(
            "grid {np}x{nm} must be between 1x1 and {MAX_GRID}x{MAX_GRID}"
        )));
    }
    if req.episodes == 0 || req.episodes > MAX_SURFACE_EPISODES {
        return Err(ApiError::bad_request(format!(
            "episodes must be in 1..={MAX_SURFACE_EPISODES}"
        )));
    }
    state.agent(&req.agent)?;
    let tasks: Vec<TaskParams> = req
        .psi_grid
        .iter()
        .flat_map(|&p| req.mu_grid.iter().map(move |&m| (p, m)))
        .map(|(p, m)| state.check_context(p, m))
        .collect::<Result<_, _>>()?;
    let key = surface_key(&req);
    let cached = state
        .surfaces
        .lock()
        .expect("surface cache poisoned")
        .get(&key)
        .cloned();
    let body = match cached {
        Some(body) => body,
        None => {
            let st = state.clone();
            let body = blocking(move || {
                let agent = st.agent(&req.agent)?.as_agent();
                let rets = evaluate(&agent, &st.family, &tasks, req.episodes, req.seed)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?;
                let returns = rets
                    .chunks(nm)
                    .map(|row| row.iter().map(|r| r.mean).collect())
                    .collect();
                let resp = SurfaceResponse {
                    agent: req.agent,
                    psi_grid: req.psi_grid,
                    mu_grid: req.mu_grid,
                    episodes: req.episodes,
                    seed: req.seed,
                    returns,
                };
                serde_json::to_vec(&resp)
                    .map(Arc::new)
                    .map_err(|e| ApiError::internal(e.to_string()))
            })
            .await?;
            state
                .surfaces
                .lock()
                .expect("surface cache poisoned")
                .insert(key, body.clone());
            body
        }
    };
    Ok((
        [(header::CONTENT_TYPE, "application/json")],
        body.as_ref().clone(),
    )
        .into_response())
}

async fn weights_summary(
    State(state): State<Arc<AppState>>,
    Query(q): Query<WeightsQuery>,
) -> Result<Json<WeightsSummary>, ApiError> {
    state.check_context(q.psi, q.mu)?;
    let LoadedAgent::Hyper(t) = state.agent(&q.agent)? else {
        return Err(ApiError::bad_request(format!(
            "agent `{}` is not a hypernetwork",
            q.agent
        )));
    };
    let w = t
        .net
        .weights_for(q.psi, q.mu)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(WeightsSummary {
        policy: w.policy.spec.layer_norms(&w.policy.flat),
        critic: w.critic.map(|c| c.spec.layer_norms(&c.flat)),
        agent: q.agent,
        psi: q.psi,
        mu: q.mu,
    }))
}

/// Bind and serve until the process is stopped.
pub async fn serve(config: &ServeConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::from_config(config)?);
    let app = router(state, config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    log::info!("serving on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
