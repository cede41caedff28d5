//! Loading inputs and writing artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use orbitroa::lyap::Weights;
use orbitroa::model::HybridModel;
use orbitroa::ode::{find_orbit, OrbitGuess, PeriodicOrbit, ShootingOptions};
use orbitroa::sos::{Margins, SampleOptions};
use orbitroa::surfopt::{optimize_z, SurfaceOptOptions, SurfaceOptResult};
use orbitroa::transverse::{make_surfaces, SurfaceFamily, SurfaceGrid, ZSpec};
use serde::Serialize;

use crate::{Common, ZChoice};

/// Orbits loaded from file must close to this.
const LOADED_CLOSURE_TOL: f64 = 1e-8;

pub struct Setup {
    pub model: HybridModel,
    pub orbit: PeriodicOrbit,
    pub family: SurfaceFamily,
    pub surfopt: Option<SurfaceOptResult>,
}

pub fn load_model(c: &Common) -> Result<HybridModel> {
    HybridModel::load(&c.model).with_context(|| format!("loading model {}", c.model.display()))
}

fn guess_path(c: &Common) -> PathBuf {
    c.guess.clone().unwrap_or_else(|| {
        let stem = c.model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        c.model.with_file_name(format!("{stem}.guess.json"))
    })
}

pub fn find(c: &Common, model: &HybridModel) -> Result<PeriodicOrbit> {
    let path = guess_path(c);
    let text = fs::read_to_string(&path).with_context(|| format!("reading guess {}", path.display()))?;
    let guess: OrbitGuess = serde_json::from_str(&text).with_context(|| format!("parsing guess {}", path.display()))?;
    Ok(find_orbit(model, &guess, &ShootingOptions::default())?)
}

pub fn orbit(c: &Common, model: &HybridModel) -> Result<PeriodicOrbit> {
    match &c.orbit {
        Some(p) => {
            let orbit = PeriodicOrbit::load(p).with_context(|| format!("loading orbit {}", p.display()))?;
            orbit.validate(model, LOADED_CLOSURE_TOL)?;
            Ok(orbit)
        }
        None => find(c, model),
    }
}

fn base_spec(c: &Common, orbit: &PeriodicOrbit) -> ZSpec {
    match c.z {
        ZChoice::Orthogonal => ZSpec::Orthogonal,
        ZChoice::Blended => ZSpec::Blended,
        _ if orbit.is_hybrid() => ZSpec::Blended,
        _ => ZSpec::Orthogonal,
    }
}

pub fn family(c: &Common, model: &HybridModel, orbit: &PeriodicOrbit) -> Result<(SurfaceFamily, Option<SurfaceOptResult>)> {
    match c.z {
        ZChoice::File => {
            let Some(p) = &c.surfaces else { bail!("--z file needs --surfaces") };
            let grid = SurfaceGrid::load(p).with_context(|| format!("loading surfaces {}", p.display()))?;
            Ok((make_surfaces(model, orbit, &ZSpec::Explicit(grid), c.seed)?, None))
        }
        ZChoice::Optimize => {
            let init = make_surfaces(model, orbit, &base_spec(c, orbit), c.seed)?;
            let res = optimize_z(model, orbit, &init, &surfopt_options(c))?;
            let fam = make_surfaces(model, orbit, &ZSpec::Explicit(res.grid.clone()), c.seed)?;
            Ok((fam, Some(res)))
        }
        _ => Ok((make_surfaces(model, orbit, &base_spec(c, orbit), c.seed)?, None)),
    }
}

pub fn surfopt_options(c: &Common) -> SurfaceOptOptions {
    SurfaceOptOptions { p: c.p, max_iter: c.max_iter, ..SurfaceOptOptions::default() }
}

pub fn setup(c: &Common) -> Result<Setup> {
    let model = load_model(c)?;
    let orbit = orbit(c, &model)?;
    let (family, surfopt) = family(c, &model, &orbit)?;
    Ok(Setup { model, orbit, family, surfopt })
}

pub fn margins(c: &Common) -> Result<Option<Margins>> {
    match c.deltas.as_deref() {
        None => Ok(None),
        Some([d1, d2, d3]) if [d1, d2, d3].iter().all(|d| d.is_finite() && **d >= 0.0) => {
            Ok(Some(Margins { decrease: *d1, wellposed: *d2, positive: *d3 }))
        }
        Some(_) => bail!("--deltas needs three nonnegative numbers"),
    }
}

pub fn sample_options(c: &Common, taus: usize) -> Result<SampleOptions> {
    Ok(SampleOptions { taus, taylor_degree: c.taylor, margins: margins(c)?, ..SampleOptions::default() })
}

pub fn weights(k: usize, m: usize) -> Weights {
    Weights::identity(k, m)
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    orbitroa::linalg::rows_of(m)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Pretty JSON with a trailing newline; field order is the declaration order.
pub fn write_json<T: Serialize + ?Sized>(out: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(out, name, &(text + "\n"))
}

pub fn write_text(out: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
