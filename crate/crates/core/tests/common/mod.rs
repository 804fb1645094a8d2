#![allow(dead_code)]

use std::sync::OnceLock;

use egavatar::desk::{desk_avatar, DeskOptions};
use egavatar::pipeline::Avatar;

pub fn small_opts(seed: u64) -> DeskOptions {
    DeskOptions {
        subdivisions: 3,
        t_tex: 64,
        t_tri: 16,
        seed,
        ..DeskOptions::default()
    }
}

/// Small f64 desk avatar shared across tests.
pub fn small_avatar() -> &'static Avatar<f64> {
    static AV: OnceLock<Avatar<f64>> = OnceLock::new();
    AV.get_or_init(|| desk_avatar(&small_opts(3)).unwrap())
}
