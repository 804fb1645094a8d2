//! HTTP editing service. Each session holds one loaded avatar plus its
//! current pose, camera and lighting; every mutation bumps the session
//! revision, and frames are rendered through the same core as the command
//! line.
//!
//! | method | path                          | body                     |
//! |--------|-------------------------------|--------------------------|
//! | POST   | /sessions                     | `{"bundle": name}` or bundle bytes |
//! | GET    | /sessions/{id}                | state summary            |
//! | DELETE | /sessions/{id}                |                          |
//! | PATCH  | /sessions/{id}/params         | partial params JSON      |
//! | POST   | /sessions/{id}/texture?rect=u0,v0,u1,v1 | PNG bytes      |
//! | POST   | /sessions/{id}/hair           | `{"bundle": name}`       |
//! | GET    | /sessions/{id}/frame?revision=n | PNG, `x-revision` header |
//! | GET    | /sessions/{id}/export.ply     | PLY bytes                |
//! | GET    | /sessions/{id}/export.egava   | bundle bytes             |
//! | GET    | /sessions/{id}/live           | websocket                |
//!
//! The websocket sends a binary message per rendered revision (8-byte
//! little-endian revision, then PNG bytes) and accepts text messages with
//! the same JSON as the params endpoint. Renders coalesce: a burst of
//! updates yields a frame for the latest revision.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;

use egavatar::assets::ply::ply_bytes;
use egavatar::assets::png::{decode_png, encode_png};
use egavatar::assets::scene::{CameraEntry, FrameEntry, ParamsEntry, SceneFile};
use egavatar::assets::{load_bundle, AvatarBundle};
use egavatar::gaussgen::{AttributeCache, GaussianCloud};
use egavatar::headmodel::HeadParams;
use egavatar::pipeline::{paste_albedo, validate_uv_rect, Avatar, RenderSettings};
use egavatar::shading::ShLighting;
use egavatar::splatter::Camera;
use egavatar::Error;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Bundles addressable by name.
    pub bundle_dir: PathBuf,
    pub max_sessions: usize,
    /// Render worker threads shared by all sessions; 0 uses every core.
    pub render_threads: usize,
    pub settings: RenderSettings,
    /// Size of a new session's default camera.
    pub default_size: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bundle_dir: PathBuf::from("."),
            max_sessions: 16,
            render_threads: 0,
            settings: RenderSettings::default(),
            default_size: 512,
        }
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Gone(String),
    Conflict(String),
    Unavailable(String),
    Internal { id: String, message: String },
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Gone(_) => StatusCode::GONE,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn body(&self) -> serde_json::Value {
        match self {
            ApiError::BadRequest(m) | ApiError::Gone(m) | ApiError::Conflict(m) | ApiError::Unavailable(m) => {
                json!({ "error": m })
            }
            ApiError::Internal { id, message } => json!({ "error": message, "id": id }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Everything a render needs, copied out of the session under its lock.
#[derive(Clone)]
struct Snapshot {
    avatar: Arc<Avatar<f32>>,
    params: HeadParams<f32>,
    camera: Camera<f32>,
    lighting: ShLighting<f32>,
    cache: Option<Arc<AttributeCache<f32>>>,
    revision: u64,
    generation: u64,
}

struct SessionState {
    avatar: Arc<Avatar<f32>>,
    params: HeadParams<f32>,
    camera: Camera<f32>,
    lighting: ShLighting<f32>,
    cache: Option<Arc<AttributeCache<f32>>>,
    /// Bumped whenever the cache is invalidated (texture or hair change).
    generation: u64,
    cache_builds: u64,
    revision: u64,
    last_frame: Option<(u64, Arc<Vec<u8>>)>,
}

pub struct Session {
    id: String,
    state: Mutex<SessionState>,
    revisions: watch::Sender<u64>,
}

impl Session {
    fn lock(&self) -> MutexGuard<'_, SessionState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn snapshot(&self) -> Snapshot {
        let s = self.lock();
        Snapshot {
            avatar: s.avatar.clone(),
            params: s.params.clone(),
            camera: s.camera,
            lighting: s.lighting,
            cache: s.cache.clone(),
            revision: s.revision,
            generation: s.generation,
        }
    }

    /// Applies a mutation under the writer lock and bumps the revision.
    fn mutate(&self, f: impl FnOnce(&mut SessionState) -> ApiResult<()>) -> ApiResult<u64> {
        let mut s = self.lock();
        f(&mut s)?;
        s.revision += 1;
        let rev = s.revision;
        drop(s);
        self.revisions.send_replace(rev);
        Ok(rev)
    }

    fn invalidate(s: &mut SessionState) {
        s.cache = None;
        s.generation += 1;
    }
}

struct Inner {
    cfg: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    next_diag: AtomicU64,
    pool: rayon::ThreadPool,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Result<Self, String> {
        cfg.settings.validate().map_err(|e| e.to_string())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.render_threads)
            .thread_name(|i| format!("render-{i}"))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self(Arc::new(Inner {
            cfg,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            next_diag: AtomicU64::new(1),
            pool,
        })))
    }

    fn sessions(&self) -> MutexGuard<'_, HashMap<String, Arc<Session>>> {
        self.0.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::Gone(format!("unknown session {id}")))
    }

    fn internal(&self, what: &str, e: impl std::fmt::Display) -> ApiError {
        let id = format!("diag-{}", self.0.next_diag.fetch_add(1, Ordering::Relaxed));
        log::error!("{id}: {what}: {e}");
        ApiError::Internal {
            id,
            message: format!("{what}: {e}"),
        }
    }

    /// Loads `name` (with or without the `.egava` suffix) from the bundle
    /// directory. Names are single path components.
    fn named_bundle(&self, name: &str) -> ApiResult<AvatarBundle> {
        let bad = name.is_empty() || name.starts_with('.') || name.contains(['/', '\\']) || name.contains("..");
        if bad {
            return Err(ApiError::BadRequest(format!("invalid bundle name {name:?}")));
        }
        let file = if Path::new(name).extension().is_some_and(|e| e == "egava") {
            name.to_string()
        } else {
            format!("{name}.egava")
        };
        let path = self.0.cfg.bundle_dir.join(file);
        if !path.is_file() {
            return Err(ApiError::BadRequest(format!("no bundle named {name:?}")));
        }
        Ok(load_bundle(&path)?)
    }

    /// Renders a snapshot on the shared pool. The cache is built from the
    /// first rendered state after creation or invalidation; later renders
    /// only move positions.
    async fn render(&self, session: Arc<Session>) -> ApiResult<(u64, Arc<Vec<u8>>)> {
        {
            let s = session.lock();
            if let Some((rev, png)) = &s.last_frame {
                if *rev == s.revision {
                    return Ok((*rev, png.clone()));
                }
            }
        }
        let snap = session.snapshot();
        let this = self.clone();
        let job = {
            let snap = snap.clone();
            move || this.0.pool.install(|| render_snapshot(&snap))
        };
        let (png, built) = tokio::task::spawn_blocking(job)
            .await
            .map_err(|e| self.internal("render worker", e))?
            .map_err(|e| self.internal("render", e))?;
        let png = Arc::new(png);
        let mut s = session.lock();
        if let Some(cache) = built {
            if s.generation == snap.generation && s.cache.is_none() {
                s.cache = Some(Arc::new(cache));
                s.cache_builds += 1;
            }
        }
        if s.revision == snap.revision {
            s.last_frame = Some((snap.revision, png.clone()));
        }
        Ok((snap.revision, png))
    }

    async fn cloud(&self, snap: Snapshot) -> ApiResult<GaussianCloud<f32>> {
        let this = self.clone();
        tokio::task::spawn_blocking(move || this.0.pool.install(|| snapshot_cloud(&snap).map(|c| c.0)))
            .await
            .map_err(|e| self.internal("render worker", e))?
            .map_err(|e| self.internal("generate", e))
    }
}

/// Cloud for a snapshot, plus a freshly built cache when it had none.
fn snapshot_cloud(snap: &Snapshot) -> egavatar::Result<(GaussianCloud<f32>, Option<AttributeCache<f32>>)> {
    match &snap.cache {
        Some(c) => Ok((snap.avatar.animate(c, &snap.params)?, None)),
        None => {
            let g = snap.avatar.generate(&snap.params)?;
            let cache = snap.avatar.cache(&g)?;
            Ok((g.cloud, Some(cache)))
        }
    }
}

fn render_snapshot(snap: &Snapshot) -> egavatar::Result<(Vec<u8>, Option<AttributeCache<f32>>)> {
    let (cloud, built) = snapshot_cloud(snap)?;
    let frame = snap.avatar.render_cloud(&cloud, &snap.camera, &snap.lighting)?;
    Ok((encode_png(&frame.image)?, built))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/params", patch(set_params))
        .route("/sessions/{id}/texture", post(upload_texture))
        .route("/sessions/{id}/hair", post(swap_hair))
        .route("/sessions/{id}/frame", get(get_frame))
        .route("/sessions/{id}/export.ply", get(export_ply))
        .route("/sessions/{id}/export.egava", get(export_bundle))
        .route("/sessions/{id}/live", get(live))
        .layer(DefaultBodyLimit::max(512 << 20))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleRef {
    bundle: String,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("body: {e}")))
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Created {
    pub id: String,
    pub revision: u64,
}

async fn create_session(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    if st.sessions().len() >= st.0.cfg.max_sessions {
        return Err(ApiError::Unavailable(format!("session limit {} reached", st.0.cfg.max_sessions)));
    }
    let bundle = if is_json(&headers) {
        let r: BundleRef = parse_json(&body)?;
        st.named_bundle(&r.bundle)?
    } else {
        AvatarBundle::from_bytes(&body)?
    };
    let avatar = bundle.into_avatar(st.0.cfg.settings.clone())?;
    let n = st.0.cfg.default_size;
    let camera = avatar.orbit_camera(0.0, 0.6, n, n)?;
    let id = format!("s{}", st.0.next_id.fetch_add(1, Ordering::Relaxed));
    let session = Arc::new(Session {
        id: id.clone(),
        state: Mutex::new(SessionState {
            params: avatar.params.clone(),
            lighting: avatar.lighting,
            avatar: Arc::new(avatar),
            camera,
            cache: None,
            generation: 0,
            cache_builds: 0,
            revision: 0,
            last_frame: None,
        }),
        revisions: watch::channel(0).0,
    });
    let mut sessions = st.sessions();
    if sessions.len() >= st.0.cfg.max_sessions {
        return Err(ApiError::Unavailable(format!("session limit {} reached", st.0.cfg.max_sessions)));
    }
    sessions.insert(id.clone(), session);
    log::info!("created session {id}");
    Ok((StatusCode::CREATED, Json(Created { id, revision: 0 })))
}

/// Session summary returned by `GET /sessions/{id}`.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionInfo {
    pub id: String,
    pub revision: u64,
    pub params: HeadParams<f32>,
    pub camera: CameraEntry,
    pub lighting: Vec<f32>,
    pub cache_builds: u64,
    pub cached: bool,
}

async fn session_info(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionInfo>> {
    let session = st.session(&id)?;
    let s = session.lock();
    Ok(Json(SessionInfo {
        id: session.id.clone(),
        revision: s.revision,
        params: s.params.clone(),
        camera: CameraEntry::from_camera(&s.camera),
        lighting: s.lighting.to_flat(),
        cache_builds: s.cache_builds,
        cached: s.cache.is_some(),
    }))
}

async fn delete_session(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    st.sessions()
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::Gone(format!("unknown session {id}")))
}

/// Partial update; omitted fields keep their values.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eyes: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lighting: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Revision {
    pub revision: u64,
}

/// Validates a patch against the current state through the scene-file path,
/// so the service accepts exactly what a scene frame accepts.
fn apply_patch(s: &mut SessionState, p: ParamsPatch) -> ApiResult<()> {
    let frame = FrameEntry {
        camera: Some(p.camera.unwrap_or_else(|| CameraEntry::from_camera(&s.camera))),
        params: Some(ParamsEntry {
            identity: None,
            expression: p.expression,
            jaw: p.jaw,
            eyes: p.eyes,
        }),
        lighting: p.lighting,
    };
    let scene = SceneFile {
        width: None,
        height: None,
        frames: vec![frame],
    };
    let spec = scene
        .resolve(&s.params, &s.lighting)
        .map_err(|e| ApiError::BadRequest(e.to_string().trim_start_matches("frame 0: ").to_string()))?
        .remove(0);
    spec.params.validate(&s.avatar.rig)?;
    s.params = spec.params;
    s.camera = spec.camera;
    s.lighting = spec.lighting;
    Ok(())
}

async fn set_params(State(st): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<Revision>> {
    let session = st.session(&id)?;
    let p: ParamsPatch = parse_json(&body)?;
    let revision = session.mutate(|s| apply_patch(s, p))?;
    Ok(Json(Revision { revision }))
}

#[derive(Debug, Deserialize)]
struct RectQuery {
    rect: Option<String>,
}

fn parse_rect(q: &RectQuery) -> ApiResult<[f64; 4]> {
    let text = q
        .rect
        .as_deref()
        .ok_or_else(|| ApiError::BadRequest("query parameter rect=u0,v0,u1,v1 is required".into()))?;
    let v: Vec<f64> = text
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| ApiError::BadRequest(format!("rect {text:?} is not four numbers")))?;
    let rect: [f64; 4] = v
        .try_into()
        .map_err(|_| ApiError::BadRequest(format!("rect {text:?} is not four numbers")))?;
    validate_uv_rect(rect)?;
    Ok(rect)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TextureApplied {
    pub revision: u64,
    pub texels: usize,
}

async fn upload_texture(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RectQuery>,
    body: Bytes,
) -> ApiResult<Json<TextureApplied>> {
    let session = st.session(&id)?;
    let rect = parse_rect(&q)?;
    let patch = decode_png::<f32>(&body)?;
    let mut texels = 0;
    let revision = session.mutate(|s| {
        let mut textures = s.avatar.textures.clone();
        texels = paste_albedo(&mut textures.albedo, &patch, rect)?;
        let mut avatar = (*s.avatar).clone();
        avatar.set_textures(textures)?;
        s.avatar = Arc::new(avatar);
        Session::invalidate(s);
        Ok(())
    })?;
    Ok(Json(TextureApplied { revision, texels }))
}

async fn swap_hair(State(st): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<Revision>> {
    let session = st.session(&id)?;
    let r: BundleRef = parse_json(&body)?;
    let other = st.named_bundle(&r.bundle)?;
    let revision = session.mutate(|s| {
        let mut avatar = (*s.avatar).clone();
        avatar.set_hair(other.decoder.clone(), other.triplane.clone())?;
        s.avatar = Arc::new(avatar);
        Session::invalidate(s);
        Ok(())
    })?;
    Ok(Json(Revision { revision }))
}

#[derive(Debug, Deserialize)]
struct FrameQuery {
    revision: Option<u64>,
}

async fn get_frame(State(st): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<FrameQuery>) -> ApiResult<Response> {
    let session = st.session(&id)?;
    if let Some(want) = q.revision {
        let have = session.lock().revision;
        if want > have {
            return Err(ApiError::Conflict(format!("revision {want} not reached, current is {have}")));
        }
    }
    let (rev, png) = st.render(session).await?;
    Ok((
        [(header::CONTENT_TYPE, "image/png".to_string()), (header::HeaderName::from_static("x-revision"), rev.to_string())],
        png.as_ref().clone(),
    )
        .into_response())
}

async fn export_ply(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let session = st.session(&id)?;
    let snap = session.snapshot();
    let rev = snap.revision;
    let cloud = st.cloud(snap).await?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (header::HeaderName::from_static("x-revision"), rev.to_string()),
        ],
        ply_bytes(&cloud),
    )
        .into_response())
}

async fn export_bundle(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let session = st.session(&id)?;
    let s = session.lock();
    let mut bundle = AvatarBundle::from_avatar(&s.avatar);
    bundle.params = s.params.clone();
    bundle.lighting = s.lighting;
    let rev = s.revision;
    drop(s);
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (header::HeaderName::from_static("x-revision"), rev.to_string()),
        ],
        bundle.to_bytes(),
    )
        .into_response())
}

async fn live(State(st): State<AppState>, UrlPath(id): UrlPath<String>, ws: WebSocketUpgrade) -> ApiResult<Response> {
    let session = st.session(&id)?;
    Ok(ws.on_upgrade(move |socket| live_loop(st, session, socket)))
}

fn live_message(rev: u64, png: &[u8]) -> Message {
    let mut buf = Vec::with_capacity(8 + png.len());
    buf.extend_from_slice(&rev.to_le_bytes());
    buf.extend_from_slice(png);
    Message::Binary(buf.into())
}

async fn live_loop(st: AppState, session: Arc<Session>, mut socket: WebSocket) {
    let mut revisions = session.revisions.subscribe();
    revisions.mark_changed();
    loop {
        tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let result = parse_json::<ParamsPatch>(text.as_bytes())
                        .and_then(|p| session.mutate(|s| apply_patch(s, p)));
                    if let Err(e) = result {
                        let reply = e.body().to_string();
                        if socket.send(Message::Text(reply.into())).await.is_err() {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            changed = revisions.changed() => {
                if changed.is_err() {
                    break;
                }
                revisions.borrow_and_update();
                let msg = match st.render(session.clone()).await {
                    Ok((rev, png)) => live_message(rev, &png),
                    Err(e) => Message::Text(e.body().to_string().into()),
                };
                if socket.send(msg).await.is_err() {
                    break;
                }
            }
        }
    }
    log::debug!("live channel for {} closed", session.id);
}
