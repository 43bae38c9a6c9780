//! CSV and JSON artifacts. Floats are written in shortest round-trip form
//! so reruns produce identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::meanfield::{availability_distribution, MeanFieldSolution};
use crate::model::{Catalog, ReplicationProfile};
use crate::sim::SimMetrics;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ContentRow {
    content_id: usize,
    lambda: f64,
    replicas_mean: f64,
    arrivals: u64,
    losses: u64,
    loss_rate: f64,
    z_mean: f64,
}

/// `content_id,lambda,replicas_mean,arrivals,losses,loss_rate,z_mean`
pub fn write_contents_csv(path: &Path, catalog: &Catalog, m: &SimMetrics) -> Result<()> {
    let mut w = csv_writer(path)?;
    for c in 0..m.contents() {
        w.serialize(ContentRow {
            content_id: c,
            lambda: catalog.rate(c),
            replicas_mean: m.replicas_mean(c),
            arrivals: m.arrivals[c],
            losses: m.losses[c],
            loss_rate: m.loss_rate(c),
            z_mean: m.z_mean(c),
        })?;
    }
    finish(w, path)
}

/// `content_id,z,prob`, zero-probability states omitted.
pub fn write_z_hist_csv(path: &Path, m: &SimMetrics) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["content_id", "z", "prob"])?;
    for c in 0..m.contents() {
        for (z, p) in m.z_distribution(c).into_iter().enumerate() {
            if p > 0.0 {
                w.serialize((c, z, p))?;
            }
        }
    }
    finish(w, path)
}

/// `t,decile,mean_replicas`
pub fn write_trajectory_csv(path: &Path, m: &SimMetrics) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "decile", "mean_replicas"])?;
    for s in &m.snapshots {
        for (k, v) in s.decile_mean.iter().enumerate() {
            w.serialize((s.t, k, v))?;
        }
    }
    finish(w, path)
}

#[derive(Serialize)]
struct FinalRow {
    content_id: usize,
    lambda: f64,
    replicas: usize,
    replicas_mean: f64,
    losses: u64,
    virtual_losses: u64,
    loss_rate: f64,
    evictions: u64,
    creations: u64,
}

/// Per-content state at the end of an adaptive run.
pub fn write_final_state_csv(path: &Path, catalog: &Catalog, m: &SimMetrics) -> Result<()> {
    let mut w = csv_writer(path)?;
    for c in 0..m.contents() {
        w.serialize(FinalRow {
            content_id: c,
            lambda: catalog.rate(c),
            replicas: m.final_replicas[c],
            replicas_mean: m.replicas_mean(c),
            losses: m.losses[c],
            virtual_losses: m.virtual_losses[c],
            loss_rate: m.loss_rate(c),
            evictions: m.evictions[c],
            creations: m.creations[c],
        })?;
    }
    finish(w, path)
}

#[derive(Serialize)]
struct MeanFieldRow {
    content_id: usize,
    lambda: f64,
    replicas: usize,
    gamma_closed: f64,
    gamma_exact: f64,
    z_mean: f64,
    z_mode: usize,
}

/// `content_id,lambda,replicas,gamma_closed,gamma_exact,z_mean,z_mode`
pub fn write_meanfield_csv(
    path: &Path,
    catalog: &Catalog,
    profile: &ReplicationProfile,
    sol: &MeanFieldSolution,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let theta = sol.effective.theta_eff;
    for c in 0..catalog.len() {
        let dist = availability_distribution(c, catalog.rate(c), profile.get(c), theta);
        w.serialize(MeanFieldRow {
            content_id: c,
            lambda: catalog.rate(c),
            replicas: profile.get(c),
            gamma_closed: sol.gamma_closed[c],
            gamma_exact: sol.gamma_exact[c],
            z_mean: dist.mean,
            z_mode: dist.mode,
        })?;
    }
    finish(w, path)
}

/// JSON summary of a mean-field solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanFieldBrief {
    pub gamma_bar: f64,
    pub inefficiency: f64,
    pub theta_eff: f64,
    pub rho_eff: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl From<&MeanFieldSolution> for MeanFieldBrief {
    fn from(s: &MeanFieldSolution) -> Self {
        MeanFieldBrief {
            gamma_bar: s.gamma_bar,
            inefficiency: s.inefficiency,
            theta_eff: s.effective.theta_eff,
            rho_eff: s.effective.rho_eff,
            iterations: s.iterations,
            residual: s.residual,
        }
    }
}
