//! HTTP facade over [`perm_core::Session`].
//!
//! Session state lives in memory, keyed by an opaque token. Each session
//! sits behind its own lock so requests for one session are serialized
//! while different sessions proceed independently; the model is shared
//! read-only.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use perm_core::pipeline::{derive_seed, Condition, SessionLog};
use perm_core::session::{AssignedLevel, AttemptAck, AttemptReport, NextLevel, SessionState};
use perm_core::{PermModel, Session, SessionError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Forces every new session into this condition.
    pub condition_override: Option<Condition>,
    /// Base seed for session seeds and random condition assignment.
    pub seed: u64,
}

pub struct AppState {
    model: Arc<PermModel>,
    config: ServerConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    rng: Mutex<ChaCha8Rng>,
}

impl AppState {
    pub fn new(model: PermModel, config: ServerConfig) -> Arc<Self> {
        Arc::new(Self {
            model: Arc::new(model),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            config,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    /// Logs of every live session, ordered by session id.
    pub fn summaries(&self) -> Vec<(String, SessionLog)> {
        let sessions = self.sessions.read().unwrap();
        let mut out: Vec<_> = sessions
            .iter()
            .map(|(id, s)| (id.clone(), s.lock().unwrap().summary().clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Session(SessionError),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError::Session(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(id) => (StatusCode::NOT_FOUND, format!("no session {id}")),
            ApiError::Session(e) => (
                StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
                e.to_string(),
            ),
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    /// `perm`, `random` or `none`; assigned at random when absent.
    #[serde(default)]
    pub condition: Option<String>,
    #[serde(default)]
    pub display_name: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub condition: Condition,
    pub state: SessionState,
    pub level: AssignedLevel,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/attempts", post(submit_attempt))
        .route("/sessions/{id}/levels/next", post(next_level))
        .route("/sessions/{id}/summary", get(summary))
        .with_state(state)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let sessions = state.sessions.read().unwrap().len();
    Json(json!({ "status": "ok", "sessions": sessions }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Option<Json<CreateSession>>,
) -> Result<Json<Created>, ApiError> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let requested = body
        .condition
        .as_deref()
        .map(str::parse::<Condition>)
        .transpose()
        .map_err(ApiError::BadRequest)?;
    let (condition, seed) = {
        let mut rng = state.rng.lock().unwrap();
        let drawn = Condition::ALL[rng.random_range(0..Condition::ALL.len())];
        let condition = state
            .config
            .condition_override
            .or(requested)
            .unwrap_or(drawn);
        (condition, derive_seed(state.config.seed, rng.random()))
    };
    let name = body.display_name.unwrap_or_default();
    let session = Session::new(&state.model, condition, &name, seed)?;
    let created = Created {
        session_id: uuid::Uuid::new_v4().to_string(),
        condition,
        state: session.state(),
        level: session.current_assignment(),
    };
    tracing::info!(id = %created.session_id, %condition, "session created");
    state
        .sessions
        .write()
        .unwrap()
        .insert(created.session_id.clone(), Arc::new(Mutex::new(session)));
    Ok(Json(created))
}

async fn submit_attempt(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(report): Json<AttemptReport>,
) -> Result<Json<AttemptAck>, ApiError> {
    let session = state.session(&id)?;
    let mut s = session.lock().unwrap();
    Ok(Json(s.submit_attempt(&state.model, &report)?))
}

async fn next_level(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<NextLevel>, ApiError> {
    let session = state.session(&id)?;
    let mut s = session.lock().unwrap();
    Ok(Json(s.next_level(&state.model)?))
}

async fn summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionLog>, ApiError> {
    let session = state.session(&id)?;
    let log = session.lock().unwrap().summary().clone();
    Ok(Json(log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    use axum::body::Body;
    use axum::http::{Request, StatusCode};
    use http_body_util::BodyExt;
    use perm_core::pipeline::{replay_session, LevelKind};
    use perm_core::sim::{
        simulate_episode, test_fixture_level, trial_fixture_level, Action, ScriptedActions,
    };
    use perm_core::students::StudentSpec;
    use perm_core::{stage1_collect, train_perm_from_corpus, TrainConfig};
    use serde_json::Value;
    use tower::ServiceExt;

    fn model() -> PermModel {
        static CELL: OnceLock<PermModel> = OnceLock::new();
        CELL.get_or_init(|| {
            let parts = [-1.0, 1.0]
                .iter()
                .enumerate()
                .map(|(i, &skill)| {
                    stage1_collect(&StudentSpec::Scripted { skill }, 150, i as u64).unwrap()
                })
                .collect();
            let corpus = perm_core::pipeline::Corpus::merge(parts).unwrap();
            let cfg = TrainConfig {
                hidden: vec![16],
                epochs: 10,
                batch_size: 32,
                ..TrainConfig::default()
            };
            train_perm_from_corpus(&corpus, &cfg, None, None).unwrap().0
        })
        .clone()
    }

    fn app(config: ServerConfig) -> (Router, Arc<AppState>) {
        let state = AppState::new(model(), config);
        (router(state.clone()), state)
    }

    async fn call(
        app: &Router,
        method: &str,
        uri: &str,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, value)
    }

    async fn create(app: &Router, condition: &str) -> Created {
        let (status, body) = call(
            app,
            "POST",
            "/sessions",
            Some(json!({ "condition": condition, "display_name": "tester" })),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        serde_json::from_value(body).unwrap()
    }

    fn fail_report() -> Value {
        json!({ "reached_goal": false, "max_tile": 1, "steps": 1, "duration_ms": 1200 })
    }

    #[tokio::test]
    async fn health_and_creation() {
        let (app, _) = app(ServerConfig::default());
        let (status, body) = call(&app, "GET", "/healthz", None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["status"], "ok");

        let a = create(&app, "perm").await;
        let b = create(&app, "perm").await;
        assert_ne!(a.session_id, b.session_id);
        assert_eq!(a.level.kind, LevelKind::Trial);
        assert_eq!(
            a.level.descriptor,
            perm_core::sim::render_descriptor(&trial_fixture_level())
        );

        let (status, body) = call(
            &app,
            "POST",
            "/sessions",
            Some(json!({ "condition": "hard" })),
        )
        .await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert!(body["error"].as_str().unwrap().contains("hard"));

        // No body: the server assigns a condition.
        let (status, body) = call(&app, "POST", "/sessions", None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }

    #[tokio::test]
    async fn condition_override_wins() {
        let (app, _) = app(ServerConfig {
            condition_override: Some(Condition::None),
            seed: 1,
        });
        let s = create(&app, "perm").await;
        assert_eq!(s.condition, Condition::None);
    }

    #[tokio::test]
    async fn unknown_sessions_are_not_found() {
        let (app, _) = app(ServerConfig::default());
        for (method, uri, body) in [
            ("POST", "/sessions/nope/attempts", Some(fail_report())),
            ("POST", "/sessions/nope/levels/next", None),
            ("GET", "/sessions/nope/summary", None),
        ] {
            let (status, _) = call(&app, method, uri, body).await;
            assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        }
    }

    #[tokio::test]
    async fn cap_closes_the_level_and_open_levels_conflict() {
        let (app, _) = app(ServerConfig::default());
        let s = create(&app, "random").await;
        let attempts = format!("/sessions/{}/attempts", s.session_id);
        let next = format!("/sessions/{}/levels/next", s.session_id);

        // Untouched level: fetching again returns the same assignment.
        let (status, body) = call(&app, "POST", &next, None).await;
        assert_eq!(status, StatusCode::OK);
        let again: NextLevel = serde_json::from_value(body).unwrap();
        assert_eq!(again, NextLevel::Level(s.level.clone()));

        for k in 1..=15 {
            let (status, body) = call(&app, "POST", &attempts, Some(fail_report())).await;
            assert_eq!(status, StatusCode::OK);
            let ack: AttemptAck = serde_json::from_value(body).unwrap();
            assert_eq!(ack.state.attempts_used, k);
            assert_eq!(ack.state.level_closed, k == 15);
            if k == 1 {
                let (status, _) = call(&app, "POST", &next, None).await;
                assert_eq!(status, StatusCode::CONFLICT);
            }
        }
        let (status, _) = call(&app, "POST", &attempts, Some(fail_report())).await;
        assert_eq!(status, StatusCode::CONFLICT);

        let (status, body) = call(&app, "POST", &next, None).await;
        assert_eq!(status, StatusCode::OK);
        let first: NextLevel = serde_json::from_value(body).unwrap();
        // Idempotent until the first attempt.
        let (_, body) = call(&app, "POST", &next, None).await;
        assert_eq!(first, serde_json::from_value::<NextLevel>(body).unwrap());
        match first {
            NextLevel::Level(a) => assert_eq!((a.kind, a.index), (LevelKind::Training, 1)),
            NextLevel::Done => panic!("session ended early"),
        }
    }

    #[tokio::test]
    async fn inconsistent_reports_are_rejected() {
        let (app, _) = app(ServerConfig::default());
        let s = create(&app, "perm").await;
        let attempts = format!("/sessions/{}/attempts", s.session_id);
        let bad = [
            json!({ "reached_goal": true, "max_tile": 20, "steps": 10 }),
            json!({ "reached_goal": false, "max_tile": 40, "steps": 3 }),
            json!({ "reached_goal": false, "max_tile": 3, "steps": 0 }),
            json!({ "reached_goal": false, "max_tile": 3, "steps": 3, "raw_reward": 0.9 }),
            json!({ "reached_goal": false, "max_tile": 5, "steps": 5, "actions": ["walk"] }),
        ];
        for report in bad {
            let (status, _) = call(&app, "POST", &attempts, Some(report.clone())).await;
            assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{report}");
        }
        // Rejected reports leave no trace.
        let (_, body) = call(
            &app,
            "GET",
            &format!("/sessions/{}/summary", s.session_id),
            None,
        )
        .await;
        let log: SessionLog = serde_json::from_value(body).unwrap();
        assert!(log.trial.unwrap().attempts.is_empty());
    }

    /// Plays the fewest-jump solution when one exists, otherwise walks.
    fn solving_report(level: &perm_core::sim::Level) -> Value {
        let actions = perm_core::sim::is_solvable(level)
            .witness
            .unwrap_or_else(|| vec![Action::Walk]);
        let r = simulate_episode(
            level,
            &mut ScriptedActions::new(actions.clone()),
            actions.len(),
        );
        json!({
            "reached_goal": r.reached_goal,
            "max_tile": r.max_tile,
            "steps": r.steps,
            "actions": actions,
            "raw_reward": r.raw_reward,
        })
    }

    #[tokio::test]
    async fn full_session_reaches_done_and_replays() {
        let (app, state) = app(ServerConfig::default());
        for condition in ["perm", "random", "none"] {
            let s = create(&app, condition).await;
            let id = &s.session_id;
            let mut assigned = vec![s.level.clone()];
            loop {
                let level = {
                    let a = assigned.last().unwrap();
                    perm_core::sim::Level::try_from(&a.descriptor).unwrap()
                };
                let (status, body) = call(
                    &app,
                    "POST",
                    &format!("/sessions/{id}/attempts"),
                    Some(solving_report(&level)),
                )
                .await;
                assert_eq!(status, StatusCode::OK, "{body}");
                let (_, body) =
                    call(&app, "POST", &format!("/sessions/{id}/levels/next"), None).await;
                match serde_json::from_value::<NextLevel>(body).unwrap() {
                    NextLevel::Done => break,
                    NextLevel::Level(a) => assigned.push(a),
                }
            }
            let kinds: Vec<_> = assigned.iter().map(|a| a.kind).collect();
            let training = if condition == "none" { 0 } else { 10 };
            assert_eq!(kinds.len(), training + 2);
            assert_eq!(*kinds.last().unwrap(), LevelKind::Test);
            assert_eq!(
                assigned.last().unwrap().descriptor,
                perm_core::sim::render_descriptor(&test_fixture_level())
            );

            let (_, body) = call(&app, "GET", &format!("/sessions/{id}/summary"), None).await;
            let log: SessionLog = serde_json::from_value(body).unwrap();
            assert_eq!(log.levels.len(), training);
            assert!(log
                .all_levels()
                .all(|l| l.completed() && l.attempts.len() == 1));
            let mut unused = StudentSpec::Learner.build();
            assert_eq!(
                replay_session(&log, &mut unused).unwrap(),
                log.attempt_results()
            );

            let (status, _) = call(
                &app,
                "POST",
                &format!("/sessions/{id}/attempts"),
                Some(fail_report()),
            )
            .await;
            assert_eq!(status, StatusCode::CONFLICT);
        }
        assert_eq!(state.summaries().len(), 3);
    }
}
