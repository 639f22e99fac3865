//! HTTP service for scenario discovery runs. Runs live in memory behind
//! per-run locks and are mirrored to disk after every mutation, so a
//! restarted server resumes exactly where it stopped.

pub mod api;
pub mod model;
mod ui;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tokio::sync::{Mutex, RwLock};
use uuid::Uuid;

use sdforge_core::Result;

use model::RunRecord;

struct Shared {
    data_dir: PathBuf,
    ui_dir: Option<PathBuf>,
    runs: RwLock<HashMap<Uuid, Arc<Mutex<RunRecord>>>>,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    /// Creates `data_dir` if needed and reloads every persisted run from
    /// `data_dir/<run_id>/run.json`. Unreadable records are skipped with a
    /// warning rather than aborting startup.
    pub fn open(data_dir: &Path, ui_dir: Option<PathBuf>) -> Result<Self> {
        std::fs::create_dir_all(data_dir)?;
        let mut runs = HashMap::new();
        for entry in std::fs::read_dir(data_dir)? {
            let path = entry?.path().join("run.json");
            if !path.is_file() {
                continue;
            }
            match std::fs::read_to_string(&path)
                .map_err(sdforge_core::Error::from)
                .and_then(|text| Ok(serde_json::from_str::<RunRecord>(&text)?))
            {
                Ok(record) => {
                    runs.insert(record.run_id, Arc::new(Mutex::new(record)));
                }
                Err(e) => eprintln!("skipping {}: {e}", path.display()),
            }
        }
        Ok(AppState {
            shared: Arc::new(Shared {
                data_dir: data_dir.to_path_buf(),
                ui_dir,
                runs: RwLock::new(runs),
            }),
        })
    }

    pub async fn insert(&self, record: RunRecord) {
        self.shared
            .runs
            .write()
            .await
            .insert(record.run_id, Arc::new(Mutex::new(record)));
    }

    pub async fn get(&self, id: Uuid) -> Option<Arc<Mutex<RunRecord>>> {
        self.shared.runs.read().await.get(&id).cloned()
    }

    /// Replaces `data_dir/<run_id>/run.json` via a temp file and rename so
    /// a crash mid-write never leaves a torn record.
    pub fn persist(&self, record: &RunRecord) -> Result<()> {
        let dir = self.shared.data_dir.join(record.run_id.to_string());
        std::fs::create_dir_all(&dir)?;
        let tmp = dir.join("run.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(record)?)?;
        std::fs::rename(&tmp, dir.join("run.json"))?;
        Ok(())
    }

    fn ui_dir(&self) -> Option<&Path> {
        self.shared.ui_dir.as_deref()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", post(api::create_run))
        .route("/runs/{id}", get(api::get_run))
        .route("/runs/{id}/trajectory", get(api::trajectory))
        .route("/runs/{id}/points", get(api::points))
        .route("/runs/{id}/select", post(api::select))
        .route("/runs/{id}/cover-next", post(api::cover_next))
        .route("/runs/{id}/adaptive-step", post(api::adaptive_step))
        .route("/runs/{id}/report", get(api::report))
        .fallback(ui::serve_static)
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}
