//! File formats: binary containers, avatar bundles, splat PLY, float maps,
//! PNG, scene tracks and render settings.

pub mod binio;
pub mod bundle;
pub mod hairfile;
pub mod pfm;
pub mod ply;
pub mod png;
pub mod scene;

pub use bundle::{load_bundle, save_bundle, AvatarBundle};
pub use ply::{export_ply, import_ply};
pub use scene::{load_settings, yaw_sweep, SceneFile};
