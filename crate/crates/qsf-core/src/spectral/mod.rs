//! Eigenvalue spectra of trained layer operators, classified into decay,
//! neutral, and growth modes relative to the unit circle, plus the CSV
//! exports behind the spectrum and ζ-trace figures.

use crate::data::checkpoint::Checkpoint;
use crate::fsio::write_atomic;
use crate::linalg::eig::eigenvalues_real;
use crate::linalg::LinalgError;
use crate::model::{hamiltonian_unitary, Stage};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("bad argument: {0}")]
    Argument(String),
    #[error("checkpoint has no layer operators to analyze: {0}")]
    Format(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("csv io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeClass {
    Decay,
    Neutral,
    Growth,
}

impl ModeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeClass::Decay => "decay",
            ModeClass::Neutral => "neutral",
            ModeClass::Growth => "growth",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModeEntry {
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
    pub class: ModeClass,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModeCounts {
    pub decay: usize,
    pub neutral: usize,
    pub growth: usize,
}

impl ModeCounts {
    pub fn total(&self) -> usize {
        self.decay + self.neutral + self.growth
    }
    fn add(&mut self, class: ModeClass) {
        match class {
            ModeClass::Decay => self.decay += 1,
            ModeClass::Neutral => self.neutral += 1,
            ModeClass::Growth => self.growth += 1,
        }
    }
}

pub struct LayerSpectrum {
    pub layer: usize,
    pub modes: Vec<ModeEntry>,
}

/// Pooled per-layer spectrum with summary counts. For the orthogonally
/// constrained stage the worst deviation of any modulus from 1 is reported as
/// a unitarity audit.
pub struct SpectrumReport {
    pub layers: Vec<LayerSpectrum>,
    pub counts: ModeCounts,
    pub neutral_tol: f64,
    pub unitarity_defect: Option<f64>,
}

/// Classify eigenvalues by modulus against the unit circle: below 1−tol is
/// decay, above 1+tol is growth, the band between is neutral.
pub fn classify_modes(lambdas: &[Complex64], tol: f64) -> Result<Vec<ModeEntry>, SpectralError> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(SpectralError::Argument(format!(
            "neutral tolerance must be positive and finite, got {tol}"
        )));
    }
    Ok(lambdas
        .iter()
        .map(|&z| {
            let modulus = z.norm();
            let class = if modulus < 1.0 - tol {
                ModeClass::Decay
            } else if modulus > 1.0 + tol {
                ModeClass::Growth
            } else {
                ModeClass::Neutral
            };
            ModeEntry {
                re: z.re,
                im: z.im,
                modulus,
                class,
            }
        })
        .collect())
}

/// Per-layer eigenvalue report of a checkpoint's operators: the learned
/// matrices for stages II/III, the orthogonal U = exp(W − Wᵀ) for stage IV.
/// Stage I has no layer operator and is a format error.
pub fn layer_spectrum(ckpt: &Checkpoint, tol: f64) -> Result<SpectrumReport, SpectralError> {
    let cfg = &ckpt.config;
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut counts = ModeCounts::default();
    let mut worst_defect = 0.0f64;
    for l in 0..cfg.layers {
        let op = match cfg.stage {
            Stage::I => {
                return Err(SpectralError::Format(
                    "stage 1 checkpoints carry no layer operator matrices".into(),
                ))
            }
            Stage::II | Stage::III => ckpt
                .params
                .value(&format!("layers.{l}.koopman"))
                .map_err(|_| {
                    SpectralError::Format(format!("missing operator tensor for layer {l}"))
                })?
                .clone(),
            Stage::IV => {
                let w = ckpt
                    .params
                    .value(&format!("layers.{l}.skew_w"))
                    .map_err(|_| {
                        SpectralError::Format(format!("missing operator tensor for layer {l}"))
                    })?;
                hamiltonian_unitary(w)?
            }
        };
        let eigs = eigenvalues_real(&op)?;
        let mut modes = classify_modes(&eigs, tol)?;
        // deterministic export order: sort by angle, then modulus
        modes.sort_by(|a, b| {
            let aa = a.im.atan2(a.re);
            let ab = b.im.atan2(b.re);
            aa.partial_cmp(&ab)
                .unwrap()
                .then(a.modulus.partial_cmp(&b.modulus).unwrap())
        });
        for m in &modes {
            counts.add(m.class);
            worst_defect = worst_defect.max((m.modulus - 1.0).abs());
        }
        layers.push(LayerSpectrum { layer: l, modes });
    }
    Ok(SpectrumReport {
        layers,
        counts,
        neutral_tol: tol,
        unitarity_defect: (cfg.stage == Stage::IV).then_some(worst_defect),
    })
}

/// Per-layer ζ values sampled at evaluation steps during training.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ZetaTrace {
    pub rows: Vec<ZetaRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ZetaRow {
    pub step: u64,
    pub zetas: Vec<f64>,
}

impl ZetaRow {
    pub fn mean(&self) -> f64 {
        self.zetas.iter().sum::<f64>() / self.zetas.len() as f64
    }
    /// population standard deviation across layers
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.zetas.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / self.zetas.len() as f64)
            .sqrt()
    }
}

impl ZetaTrace {
    pub fn push(&mut self, step: u64, zetas: Vec<f64>) {
        if let Some(first) = self.rows.first() {
            assert_eq!(
                first.zetas.len(),
                zetas.len(),
                "layer count changed mid-trace"
            );
        }
        self.rows.push(ZetaRow { step, zetas });
    }
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// `layer,re,im,modulus,class` rows in deterministic order.
pub fn export_spectrum_csv(report: &SpectrumReport, path: &Path) -> Result<(), SpectralError> {
    let mut body = String::from("layer,re,im,modulus,class\n");
    for layer in &report.layers {
        for m in &layer.modes {
            body.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{}\n",
                layer.layer,
                m.re,
                m.im,
                m.modulus,
                m.class.as_str()
            ));
        }
    }
    write_atomic(path, body.as_bytes())?;
    Ok(())
}

/// Re-read an exported spectrum CSV and rebuild the summary counts.
pub fn read_spectrum_csv(path: &Path) -> Result<ModeCounts, SpectralError> {
    let body = std::fs::read_to_string(path)?;
    let mut lines = body.lines();
    match lines.next() {
        Some("layer,re,im,modulus,class") => {}
        other => {
            return Err(SpectralError::Parse(format!(
                "unexpected spectrum header: {other:?}"
            )))
        }
    }
    let mut counts = ModeCounts::default();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(SpectralError::Parse(format!(
                "row {i} has {} fields",
                fields.len()
            )));
        }
        match fields[4] {
            "decay" => counts.decay += 1,
            "neutral" => counts.neutral += 1,
            "growth" => counts.growth += 1,
            other => return Err(SpectralError::Parse(format!("unknown class {other:?}"))),
        }
    }
    Ok(counts)
}

/// `step,layer,zeta` rows plus a `step,mean,std` summary file.
pub fn export_zeta_csv(
    trace: &ZetaTrace,
    path: &Path,
    summary_path: &Path,
) -> Result<(), SpectralError> {
    let mut body = String::from("step,layer,zeta\n");
    let mut summary = String::from("step,mean,std\n");
    for row in &trace.rows {
        for (layer, z) in row.zetas.iter().enumerate() {
            body.push_str(&format!("{},{},{:.17e}\n", row.step, layer, z));
        }
        summary.push_str(&format!(
            "{},{:.17e},{:.17e}\n",
            row.step,
            row.mean(),
            row.std()
        ));
    }
    write_atomic(path, body.as_bytes())?;
    write_atomic(summary_path, summary.as_bytes())?;
    Ok(())
}
