//! HTTP endpoints. Every response body carries `schema_version`; errors
//! are 404 for unknown runs, 409 for illegal state transitions, and 422
//! for invalid bodies or parameters.

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};
use uuid::Uuid;

use sdforge_core::prim::LabeledSamples;

use crate::model::{RunKind, RunParams, RunRecord, RunState, SCHEMA_VERSION};
use crate::AppState;

pub enum ApiError {
    NotFound(&'static str),
    Conflict(String),
    Unprocessable(String),
    Internal(String),
}

impl ApiError {
    fn from_core(err: sdforge_core::Error) -> Self {
        if err.is_validation() {
            ApiError::Unprocessable(err.to_string())
        } else {
            ApiError::Internal(err.to_string())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::NotFound(what) => (StatusCode::NOT_FOUND, what.to_string()),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (
            status,
            Json(json!({ "schema_version": SCHEMA_VERSION, "error": message })),
        )
            .into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn body<T>(result: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    result
        .map(|Json(v)| v)
        .map_err(|e| ApiError::Unprocessable(e.to_string()))
}

fn run_id(path: Result<Path<Uuid>, PathRejection>) -> Result<Uuid, ApiError> {
    path.map(|Path(id)| id)
        .map_err(|_| ApiError::NotFound("unknown run"))
}

#[derive(Deserialize)]
pub struct CreateRunBody {
    pub experiment: sdforge_core::experiment::ExperimentConfig,
    pub kind: RunKind,
    #[serde(default)]
    pub params: RunParams,
}

pub async fn create_run(
    State(app): State<AppState>,
    payload: Result<Json<CreateRunBody>, JsonRejection>,
) -> ApiResult {
    let payload = body(payload)?;
    payload
        .experiment
        .validate()
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let mut record = RunRecord::new(payload.kind, payload.experiment, payload.params);
    record.state = RunState::Sampling;

    let (mut record, outcome) = tokio::task::spawn_blocking(move || {
        let outcome = record.initialize();
        (record, outcome)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;

    match outcome {
        Ok(()) => {}
        Err(e) if e.is_validation() => return Err(ApiError::Unprocessable(e.to_string())),
        Err(e) => {
            record.state = RunState::Failed;
            record.error = Some(e.to_string());
            record.touch();
            let id = record.run_id;
            app.persist(&record).map_err(ApiError::from_core)?;
            app.insert(record).await;
            return Ok((
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(json!({
                    "schema_version": SCHEMA_VERSION,
                    "run_id": id,
                    "state": RunState::Failed,
                    "error": e.to_string(),
                })),
            )
                .into_response());
        }
    }

    record.touch();
    let response = json!({
        "schema_version": SCHEMA_VERSION,
        "run_id": record.run_id,
        "kind": record.kind,
        "state": record.state,
    });
    app.persist(&record).map_err(ApiError::from_core)?;
    app.insert(record).await;
    Ok((StatusCode::CREATED, Json(response)).into_response())
}

fn summary(record: &RunRecord) -> Value {
    let adaptive = record.artifacts.adaptive.as_ref();
    json!({
        "schema_version": SCHEMA_VERSION,
        "run_id": record.run_id,
        "kind": record.kind,
        "state": record.state,
        "experiment": record.experiment,
        "params": record.params,
        "created_at": record.created_at,
        "updated_at": record.updated_at,
        "error": record.error,
        "counts": {
            "n_data": record.point_data().map_or(0, LabeledSamples::len),
            "n_boxes": record.artifacts.boxes.len(),
            "n_trajectories": record.artifacts.trajectories.len(),
            "iteration": adaptive.map(|r| r.state.iteration),
            "true_calls": adaptive.map(|r| r.state.true_calls),
        },
        "cumulative_coverage": record.cumulative_coverage(),
    })
}

pub async fn get_run(
    State(app): State<AppState>,
    path: Result<Path<Uuid>, PathRejection>,
) -> ApiResult {
    let id = run_id(path)?;
    let entry = app.get(id).await.ok_or(ApiError::NotFound("unknown run"))?;
    let record = entry.lock().await;
    Ok(Json(summary(&record)).into_response())
}

#[derive(Deserialize)]
pub struct TrajectoryQuery {
    pub box_round: Option<usize>,
}

pub async fn trajectory(
    State(app): State<AppState>,
    path: Result<Path<Uuid>, PathRejection>,
    query: Result<Query<TrajectoryQuery>, QueryRejection>,
) -> ApiResult {
    let id = run_id(path)?;
    let Query(query) = query.map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let entry = app.get(id).await.ok_or(ApiError::NotFound("unknown run"))?;
    let record = entry.lock().await;
    let trajectories = &record.artifacts.trajectories;
    if trajectories.is_empty() {
        return Err(ApiError::NotFound("run has no trajectory"));
    }
    let round = query.box_round.unwrap_or(trajectories.len() - 1);
    let traj = trajectories
        .get(round)
        .ok_or(ApiError::NotFound("no such covering round"))?;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "box_round": round,
        "n_rounds": trajectories.len(),
        "selected_index": traj.selected_index,
        "steps": traj.steps,
    }))
    .into_response())
}

pub async fn points(
    State(app): State<AppState>,
    path: Result<Path<Uuid>, PathRejection>,
    query: Result<Query<std::collections::HashMap<String, String>>, QueryRejection>,
) -> ApiResult {
    let id = run_id(path)?;
    let Query(query) = query.map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let entry = app.get(id).await.ok_or(ApiError::NotFound("unknown run"))?;
    let record = entry.lock().await;

    let dims = &record.experiment.space.dims;
    let (a, b) = match query.get("projection") {
        None => (0, 1usize.min(dims.len() - 1)),
        Some(raw) => {
            let mut names = raw.split(',');
            let (first, second) = (names.next().unwrap_or(""), names.next().unwrap_or(""));
            if names.next().is_some() {
                return Err(ApiError::Unprocessable(
                    "projection takes exactly two dimension names".into(),
                ));
            }
            let index = |name: &str| {
                record.experiment.space.dim_index(name).ok_or_else(|| {
                    ApiError::Unprocessable(format!("unknown projection dimension `{name}`"))
                })
            };
            (index(first)?, index(second)?)
        }
    };

    let data = record.point_data();
    let points: Vec<Value> = data.map_or_else(Vec::new, |d| {
        d.points
            .iter()
            .zip(&d.labels)
            .map(|(p, &vulnerable)| {
                json!({
                    "x": p[a],
                    "y": p[b],
                    "vulnerable": vulnerable,
                    "in_box": record.in_box(p),
                })
            })
            .collect()
    });
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "dims": [dims[a].name, dims[b].name],
        "points": points,
    }))
    .into_response())
}

#[derive(Deserialize)]
pub struct SelectBody {
    pub step_index: usize,
}

pub async fn select(
    State(app): State<AppState>,
    path: Result<Path<Uuid>, PathRejection>,
    payload: Result<Json<SelectBody>, JsonRejection>,
) -> ApiResult {
    let id = run_id(path)?;
    let payload = body(payload)?;
    let entry = app.get(id).await.ok_or(ApiError::NotFound("unknown run"))?;
    let mut record = entry.lock().await;
    if record.kind != RunKind::Prim {
        return Err(ApiError::Conflict(format!(
            "select applies to prim runs, this run is {:?}",
            record.kind
        )));
    }
    if record.state != RunState::AwaitingSelection {
        return Err(ApiError::Conflict(format!(
            "select requires awaiting_selection, run is {:?}",
            record.state
        )));
    }
    let chosen = record
        .select(payload.step_index)
        .map_err(ApiError::from_core)?
        .clone();
    record.touch();
    app.persist(&record).map_err(ApiError::from_core)?;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "state": record.state,
        "box": chosen,
        "cumulative_coverage": record.cumulative_coverage(),
    }))
    .into_response())
}

pub async fn cover_next(
    State(app): State<AppState>,
    path: Result<Path<Uuid>, PathRejection>,
) -> ApiResult {
    let id = run_id(path)?;
    let entry = app.get(id).await.ok_or(ApiError::NotFound("unknown run"))?;
    let mut record = entry.lock().await;
    if record.kind != RunKind::Prim {
        return Err(ApiError::Conflict(format!(
            "cover-next applies to prim runs, this run is {:?}",
            record.kind
        )));
    }
    if record.state != RunState::Stepping {
        return Err(ApiError::Conflict(format!(
            "cover-next requires a selected box, run is {:?}",
            record.state
        )));
    }

    let mut working = record.clone();
    let (working, outcome) = tokio::task::spawn_blocking(move || {
        let outcome = working.cover_next();
        (working, outcome)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;

    let removed = match outcome {
        Ok(removed) => removed,
        Err(e) if e.is_validation() => return Err(ApiError::Unprocessable(e.to_string())),
        Err(e) => {
            record.state = RunState::Failed;
            record.error = Some(e.to_string());
            record.touch();
            app.persist(&record).map_err(ApiError::from_core)?;
            return Err(ApiError::Internal(e.to_string()));
        }
    };
    *record = working;
    record.touch();
    app.persist(&record).map_err(ApiError::from_core)?;

    let data = record.artifacts.data.as_ref();
    let residual_vulnerable = data.map_or(0, |d| {
        record
            .artifacts
            .residual
            .iter()
            .filter(|&&i| d.labels[i])
            .count()
    });
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "state": record.state,
        "points_removed": removed,
        "n_residual": record.artifacts.residual.len(),
        "residual_vulnerable": residual_vulnerable,
        "box_round": record.artifacts.trajectories.len() - 1,
        "cumulative_coverage": record.cumulative_coverage(),
    }))
    .into_response())
}

#[derive(Deserialize, Default)]
#[serde(default)]
pub struct AdaptiveStepBody {
    pub n: Option<usize>,
}

pub async fn adaptive_step(
    State(app): State<AppState>,
    path: Result<Path<Uuid>, PathRejection>,
    payload: Result<Json<AdaptiveStepBody>, JsonRejection>,
) -> ApiResult {
    let id = run_id(path)?;
    let n = match payload {
        Ok(Json(b)) => b.n.unwrap_or(1),
        // An empty body means a single step; anything else malformed is 422.
        Err(JsonRejection::MissingJsonContentType(_)) => 1,
        Err(e) => return Err(ApiError::Unprocessable(e.to_string())),
    };
    if n == 0 {
        return Err(ApiError::Unprocessable("n must be >= 1".into()));
    }
    let entry = app.get(id).await.ok_or(ApiError::NotFound("unknown run"))?;
    let mut record = entry.lock().await;
    if record.kind != RunKind::Adaptive {
        return Err(ApiError::Conflict(format!(
            "adaptive-step applies to adaptive runs, this run is {:?}",
            record.kind
        )));
    }
    if record.state != RunState::Ready {
        return Err(ApiError::Conflict(format!(
            "adaptive-step requires ready, run is {:?}",
            record.state
        )));
    }

    record.state = RunState::Stepping;
    let mut working = record.clone();
    let (working, outcome) = tokio::task::spawn_blocking(move || {
        let outcome = working.adaptive_step(n);
        (working, outcome)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;

    let records = match outcome {
        Ok(records) => records,
        Err(e) if e.is_validation() => {
            record.state = RunState::Ready;
            return Err(ApiError::Unprocessable(e.to_string()));
        }
        Err(e) => {
            record.state = RunState::Failed;
            record.error = Some(e.to_string());
            record.touch();
            app.persist(&record).map_err(ApiError::from_core)?;
            return Err(ApiError::Internal(e.to_string()));
        }
    };
    *record = working;
    record.touch();
    app.persist(&record).map_err(ApiError::from_core)?;

    let run = record.artifacts.adaptive.as_ref();
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "state": record.state,
        "iteration": run.map(|r| r.state.iteration),
        "remaining": run.map(|r| r.remaining()),
        "true_calls": run.map(|r| r.state.true_calls),
        "records": records,
        "n_boxes": record.artifacts.boxes.len(),
    }))
    .into_response())
}

pub async fn report(
    State(app): State<AppState>,
    path: Result<Path<Uuid>, PathRejection>,
) -> ApiResult {
    let id = run_id(path)?;
    let entry = app.get(id).await.ok_or(ApiError::NotFound("unknown run"))?;
    let record = entry.lock().await;
    let adaptive = record.artifacts.adaptive.as_ref();
    let history: Option<Vec<Value>> = adaptive.map(|run| {
        run.state
            .history
            .iter()
            .map(|r| {
                json!({
                    "iteration": r.iteration,
                    "pool_vulnerable": r.pool_vulnerable,
                    "fallback": r.fallback,
                    "selected_stats": r.selected_stats,
                    "n_new_points": r.new_points.len(),
                })
            })
            .collect()
    });
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "run": summary(&record),
        "boxes": record.artifacts.boxes,
        "tree": record.artifacts.tree,
        "history": history,
    }))
    .into_response())
}
