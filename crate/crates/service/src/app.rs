use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::Mutex;
use zoomseg_api::{
    prompt_count, CreateSession, EditRequest, EditResponse, MaskSliceRLE, MaskStats,
    SessionCreated, SessionSummary, VolumeInfo, DEFAULT_WL, DEFAULT_WW,
};
use zoomseg_core::backend::Backend;
use zoomseg_core::nifti::{decode_volume, encode_mask};
use zoomseg_core::pipeline::EngineConfig;
use zoomseg_core::prompts::{PointPrompt, PromptSet};
use zoomseg_core::session::Session;
use zoomseg_core::volume::{normalize_ct, IntensityVolume};

use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::store::Store;

/// An uploaded volume: raw HU for display, normalized copy made on first use.
pub struct StoredVolume {
    pub info: VolumeInfo,
    pub raw: IntensityVolume,
    normalized: OnceLock<Arc<IntensityVolume>>,
}

impl StoredVolume {
    pub fn normalized(&self) -> Arc<IntensityVolume> {
        self.normalized
            .get_or_init(|| Arc::new(normalize_ct(&self.raw)))
            .clone()
    }
}

pub struct SessionEntry {
    pub volume: Arc<StoredVolume>,
    pub session: Arc<Mutex<Session>>,
}

pub struct AppState {
    pub volumes: Store<StoredVolume>,
    pub sessions: Store<SessionEntry>,
    pub backend: Arc<dyn Backend>,
    pub engine: EngineConfig,
}

impl AppState {
    pub fn new(cfg: &ServiceConfig, backend: Arc<dyn Backend>) -> Self {
        AppState {
            volumes: Store::new(cfg.max_volumes),
            sessions: Store::new(cfg.max_sessions),
            backend,
            engine: cfg.engine.clone(),
        }
    }
}

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState, body_limit: usize) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/volumes", post(upload_volume))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/edit", post(edit_session))
        .route("/sessions/{id}/mask", get(mask_slice))
        .route("/sessions/{id}/mask.nii", get(mask_volume))
        .route("/sessions/{id}/image", get(image_slice))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> T + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

async fn upload_volume(
    State(st): State<SharedState>,
    body: Bytes,
) -> Result<Json<VolumeInfo>, ApiError> {
    let raw = blocking(move || decode_volume(&body))
        .await?
        .map_err(ApiError::upload)?;
    let meta = *raw.meta();
    let info = |volume_id| VolumeInfo {
        volume_id,
        shape: meta.shape,
        spacing: meta.spacing,
    };
    let (id, _) = st.volumes.insert_with(|id| StoredVolume {
        info: info(id),
        raw,
        normalized: OnceLock::new(),
    });
    let info = info(id);
    tracing::info!(volume_id = id, shape = ?meta.shape, "volume uploaded");
    Ok(Json(info))
}

async fn create_session(
    State(st): State<SharedState>,
    body: Bytes,
) -> Result<Json<SessionCreated>, ApiError> {
    let req: CreateSession = serde_json::from_slice(&body)?;
    let volume = st
        .volumes
        .get(req.volume_id)
        .map_err(|l| ApiError::lookup("volume", req.volume_id, l))?;
    let prompts: PromptSet = req.prompts.into();
    prompts.validate(volume.raw.shape())?;
    let st2 = st.clone();
    let v2 = volume.clone();
    let session = blocking(move || {
        Session::start_with_id(
            v2.normalized(),
            req.volume_id,
            prompts,
            st2.backend.as_ref(),
            &st2.engine,
        )
    })
    .await??;
    let roi = session.last_roi();
    let dice_counters = session.counters();
    let mask_stats = MaskStats::of(session.current_mask());
    let (id, _) = st.sessions.insert(SessionEntry {
        volume,
        session: Arc::new(Mutex::new(session)),
    });
    tracing::info!(
        session_id = id,
        volume_id = req.volume_id,
        "session started"
    );
    Ok(Json(SessionCreated {
        session_id: id,
        roi,
        dice_counters,
        mask_stats,
    }))
}

fn session_entry(st: &AppState, id: u64) -> Result<Arc<SessionEntry>, ApiError> {
    st.sessions
        .get(id)
        .map_err(|l| ApiError::lookup("session", id, l))
}

fn summary(id: u64, s: &Session) -> SessionSummary {
    let initial = s.initial_prompts().to_json();
    SessionSummary {
        session_id: id,
        volume_id: s.volume_id(),
        shape: s.current_mask().shape(),
        roi: s.last_roi(),
        dice_counters: s.counters(),
        prompt_count: prompt_count(&initial, s.edits().len()),
        initial_prompts: initial,
        edits: s.edits().to_vec(),
        mask_stats: MaskStats::of(s.current_mask()),
    }
}

async fn session_summary(
    State(st): State<SharedState>,
    Path(id): Path<u64>,
) -> Result<Json<SessionSummary>, ApiError> {
    let entry = session_entry(&st, id)?;
    let s = entry.session.lock().await;
    Ok(Json(summary(id, &s)))
}

async fn edit_session(
    State(st): State<SharedState>,
    Path(id): Path<u64>,
    body: Bytes,
) -> Result<Json<EditResponse>, ApiError> {
    let req: EditRequest = serde_json::from_slice(&body)?;
    let entry = session_entry(&st, id)?;
    // held until the edit is applied, so edits on one session are serialized
    let mut guard = entry.session.clone().lock_owned().await;
    let st2 = st.clone();
    let (guard, outcome) = blocking(move || {
        let r = match req.point.label {
            Some(label) => guard.edit(
                PointPrompt {
                    pos: req.point.xyz,
                    label,
                },
                st2.backend.as_ref(),
                &st2.engine,
            ),
            None => guard.edit_at(req.point.xyz, st2.backend.as_ref(), &st2.engine),
        };
        (guard, r)
    })
    .await?;
    let o = outcome?;
    Ok(Json(EditResponse {
        roi: o.roi,
        encode_delta: o.encode_delta,
        decode_delta: o.decode_delta,
        case: o.case,
        point: o.point,
        mask_stats: MaskStats::of(guard.current_mask()),
        prompt_count: prompt_count(&guard.initial_prompts().to_json(), guard.edits().len()),
    }))
}

#[derive(Deserialize)]
struct SliceQuery {
    z: usize,
    wl: Option<f32>,
    ww: Option<f32>,
}

fn check_z(z: usize, nz: usize) -> Result<(), ApiError> {
    if z >= nz {
        return Err(ApiError::unprocessable(format!(
            "slice {z} outside 0..{nz}"
        )));
    }
    Ok(())
}

async fn mask_slice(
    State(st): State<SharedState>,
    Path(id): Path<u64>,
    Query(q): Query<SliceQuery>,
) -> Result<Json<MaskSliceRLE>, ApiError> {
    let entry = session_entry(&st, id)?;
    let s = entry.session.lock().await;
    let m = s.current_mask();
    let [nx, ny, nz] = m.shape();
    check_z(q.z, nz)?;
    let rle = MaskSliceRLE::encode(q.z, [ny, nx], m.axial_slice(q.z))
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(rle))
}

async fn mask_volume(
    State(st): State<SharedState>,
    Path(id): Path<u64>,
) -> Result<Response, ApiError> {
    let entry = session_entry(&st, id)?;
    let mask = entry.session.lock().await.current_mask().clone();
    let bytes = blocking(move || encode_mask(&mask, true)).await?;
    Ok(([(header::CONTENT_TYPE, "application/gzip")], bytes).into_response())
}

/// Maps HU through the window `[wl − ww/2, wl + ww/2]` onto 0..=255.
pub fn window_pixel(hu: f32, wl: f32, ww: f32) -> u8 {
    let t = ((hu - (wl - ww / 2.0)) / ww).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

pub fn encode_png(width: usize, height: usize, gray: &[u8]) -> Result<Vec<u8>, ApiError> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc
        .write_header()
        .map_err(|e| ApiError::internal(e.to_string()))?;
    w.write_image_data(gray)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    w.finish().map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(out)
}

async fn image_slice(
    State(st): State<SharedState>,
    Path(id): Path<u64>,
    Query(q): Query<SliceQuery>,
) -> Result<Response, ApiError> {
    let entry = session_entry(&st, id)?;
    let raw = &entry.volume.raw;
    let [nx, ny, nz] = raw.shape();
    check_z(q.z, nz)?;
    let (wl, ww) = (q.wl.unwrap_or(DEFAULT_WL), q.ww.unwrap_or(DEFAULT_WW));
    if !(ww.is_finite() && ww > 0.0) || !wl.is_finite() {
        return Err(ApiError::unprocessable(
            "window width must be a positive number",
        ));
    }
    let gray: Vec<u8> = raw
        .axial_slice(q.z)
        .iter()
        .map(|&hu| window_pixel(hu, wl, ww))
        .collect();
    let png = encode_png(nx, ny, &gray)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
