use super::svd::{jacobi_singular_values, randomized_singular_values};
use crate::error::{Error, Result};
use crate::model::FactFormer;
use crate::tensor::{FieldTensor, Matrix};
use crate::train::CsvSink;

pub const SPECTRUM_HEADER: &str = "layer,axis,k,b_k,k90";
pub const ENERGY_THRESHOLD: f64 = 0.9;

/// Singular-value spectrum of one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Descending singular values.
    pub sigma: Vec<f64>,
    /// Cumulative energies `b_k = sum_{i<=k} sigma_i / sum_i sigma_i`; empty when degenerate.
    pub energy: Vec<f64>,
    /// Smallest `k` (1-based) with `b_k >= 0.9`; 0 when degenerate.
    pub k90: usize,
    /// Number of singular values above `max(m, n) * eps * sigma_max`.
    pub rank: usize,
    /// All singular values are zero.
    pub degenerate: bool,
    /// Only the leading singular values were computed.
    pub truncated: bool,
}

pub fn cumulative_energy(sigma: &[f64]) -> Vec<f64> {
    let total: f64 = sigma.iter().sum();
    let mut acc = 0.0;
    sigma
        .iter()
        .map(|s| {
            acc += s;
            acc / total
        })
        .collect()
}

pub fn k90(energy: &[f64]) -> usize {
    energy.iter().position(|&b| b >= ENERGY_THRESHOLD).map_or(energy.len(), |i| i + 1)
}

impl SpectrumReport {
    pub fn from_singular_values(sigma: Vec<f64>, shape: (usize, usize), truncated: bool) -> Self {
        let smax = sigma.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return SpectrumReport {
                sigma,
                energy: Vec::new(),
                k90: 0,
                rank: 0,
                degenerate: true,
                truncated,
            };
        }
        let tol = shape.0.max(shape.1) as f64 * f64::EPSILON * smax;
        let rank = sigma.iter().filter(|&&s| s > tol).count();
        let energy = cumulative_energy(&sigma);
        SpectrumReport {
            k90: k90(&energy),
            sigma,
            energy,
            rank,
            degenerate: false,
            truncated,
        }
    }
}

/// Full spectrum by one-sided Jacobi, or the top `r` values by the
/// randomized range finder. Energies are normalized by the sum of the
/// values actually computed.
pub fn svd_spectrum(a: &Matrix, truncate: Option<usize>) -> Result<SpectrumReport> {
    let sigma = match truncate {
        None => jacobi_singular_values(a)?,
        Some(r) => randomized_singular_values(a, r, 0)?,
    };
    Ok(SpectrumReport::from_singular_values(sigma, a.shape(), truncate.is_some()))
}

/// Energy curves averaged over non-degenerate reports of equal length.
pub fn average_energy(reports: &[SpectrumReport]) -> Vec<f64> {
    let live: Vec<&SpectrumReport> = reports.iter().filter(|r| !r.degenerate).collect();
    let Some(first) = live.first() else {
        return Vec::new();
    };
    let len = live.iter().map(|r| r.energy.len()).min().unwrap_or(first.energy.len());
    (0..len)
        .map(|k| live.iter().map(|r| r.energy[k]).sum::<f64>() / live.len() as f64)
        .collect()
}

/// Spectra of one layer's kernels along one axis (or of the full kernel).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpectrum {
    pub layer: usize,
    /// `None` for the materialized full kernel of linear attention.
    pub axis: Option<usize>,
    /// Per-matrix reports over samples and heads.
    pub reports: Vec<SpectrumReport>,
    pub energy: Vec<f64>,
    pub k90: usize,
    pub max_rank: usize,
    /// Matrix extent along the axis (`S_m`, or `N` for full kernels).
    pub size: usize,
}

impl LayerSpectrum {
    fn from_reports(layer: usize, axis: Option<usize>, size: usize, reports: Vec<SpectrumReport>) -> Self {
        let energy = average_energy(&reports);
        LayerSpectrum {
            layer,
            axis,
            k90: if energy.is_empty() { 0 } else { k90(&energy) },
            max_rank: reports.iter().map(|r| r.rank).max().unwrap_or(0),
            energy,
            reports,
            size,
        }
    }

    pub fn degenerate(&self) -> bool {
        self.energy.is_empty()
    }

    pub fn truncated(&self) -> bool {
        self.reports.iter().any(|r| r.truncated)
    }
}

/// Analyzes the attention matrices of every layer over `contexts`
/// (each one model input window). Factorized layers contribute their axial
/// kernels in full; linear layers contribute their `N x N` kernels,
/// truncated to the top `full_rank` values.
pub fn attention_spectrum_sweep(
    model: &FactFormer,
    contexts: &[Vec<FieldTensor>],
    full_rank: usize,
) -> Result<Vec<LayerSpectrum>> {
    if contexts.is_empty() {
        return Err(Error::Config("spectrum sweep needs at least one sample".into()));
    }
    let depth = model.blocks.len();
    let axes = model.config().axes();
    let mut axial: Vec<Vec<Vec<SpectrumReport>>> = vec![vec![Vec::new(); axes]; depth];
    let mut full: Vec<Vec<SpectrumReport>> = vec![Vec::new(); depth];
    for ctx in contexts {
        let inputs = model.block_inputs(ctx)?;
        for (l, (block, u)) in model.blocks.iter().zip(&inputs).enumerate() {
            if let Some(set) = block.kernels(u)? {
                for (m, per_axis) in axial[l].iter_mut().enumerate() {
                    for h in 0..set.heads() {
                        per_axis.push(svd_spectrum(set.get(m, h), None)?);
                    }
                }
            } else if let Some(kernels) = block.full_kernels(u)? {
                for a in &kernels {
                    let r = full_rank.min(a.rows());
                    full[l].push(svd_spectrum(a, Some(r))?);
                }
            }
        }
    }
    let grid = &model.config().grid;
    let n = model.config().points();
    let mut out = Vec::new();
    for l in 0..depth {
        if !full[l].is_empty() {
            out.push(LayerSpectrum::from_reports(l, None, n, std::mem::take(&mut full[l])));
        }
        for (m, reports) in axial[l].iter_mut().enumerate() {
            if !reports.is_empty() {
                out.push(LayerSpectrum::from_reports(l, Some(m), grid[m], std::mem::take(reports)));
            }
        }
    }
    Ok(out)
}

/// Rows `layer,axis,k,b_k,k90` with `axis = full` for full kernels. Each
/// layer/axis group is preceded by a `#` line carrying its rank and
/// truncation flag. The sink must already carry [`SPECTRUM_HEADER`].
pub fn write_spectrum_csv(sink: &mut CsvSink, spectra: &[LayerSpectrum]) -> Result<()> {
    for s in spectra {
        let axis = s.axis.map_or("full".to_string(), |m| m.to_string());
        sink.row(&format!(
            "# layer={} axis={axis} matrices={} max_rank={} truncated={} degenerate={}",
            s.layer,
            s.reports.len(),
            s.max_rank,
            s.truncated(),
            s.degenerate()
        ))?;
        for (k, b) in s.energy.iter().enumerate() {
            sink.row(&format!("{},{axis},{},{b},{}", s.layer, k + 1, s.k90))?;
        }
    }
    Ok(())
}
