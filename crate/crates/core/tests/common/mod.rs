#![allow(dead_code)]

use std::path::PathBuf;

use orbitroa::model::HybridModel;
use orbitroa::ode::{find_orbit, OrbitGuess, PeriodicOrbit, ShootingOptions};

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

pub fn load(name: &str) -> (HybridModel, PeriodicOrbit) {
    let dir = models_dir();
    let model = HybridModel::load(dir.join(format!("{name}.json"))).unwrap();
    let text = std::fs::read_to_string(dir.join(format!("{name}.guess.json"))).unwrap();
    let guess: OrbitGuess = serde_json::from_str(&text).unwrap();
    let orbit = find_orbit(&model, &guess, &ShootingOptions::default()).unwrap();
    (model, orbit)
}
