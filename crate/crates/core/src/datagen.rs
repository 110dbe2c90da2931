//! Synthetic series whose structure matches one expert family, in single-
//! and multi-domain variants, with optional spike anomalies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};
use crate::numerics::Matrix;
use crate::rng::SeededRng;
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Pca,
    Kpca,
    Nmf,
    Sdl,
    Tcpd,
}

impl GenKind {
    pub const ALL: [GenKind; 5] = [
        GenKind::Pca,
        GenKind::Kpca,
        GenKind::Nmf,
        GenKind::Sdl,
        GenKind::Tcpd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GenKind::Pca => "pca",
            GenKind::Kpca => "kpca",
            GenKind::Nmf => "nmf",
            GenKind::Sdl => "sdl",
            GenKind::Tcpd => "tcpd",
        }
    }
}

impl fmt::Display for GenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GenKind {
    type Err = CicadaError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        GenKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| CicadaError::BadConfig(format!("unknown generator kind `{s}`")))
    }
}

/// Spike anomalies added on top of the clean series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalySpec {
    /// Fraction of eligible time steps that receive a spike.
    pub rate: f64,
    /// Spike size in per-variable standard deviations.
    pub magnitude: f64,
    /// Spikes only occur at or after this fraction of the series.
    pub start_fraction: f64,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        Self {
            rate: 0.01,
            magnitude: 5.0,
            start_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub kind: GenKind,
    /// Series length `T`.
    pub length: usize,
    /// Block length of the tensor generator.
    pub window: usize,
    /// Number of latent series `p`.
    pub latent: usize,
    /// Number of observed variables `d`.
    pub dim: usize,
    pub noise_scale: f64,
    pub seed: u64,
    /// Contiguous domain fractions; empty means a single domain.
    pub domains: Vec<f64>,
    pub anomalies: Option<AnomalySpec>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::preset(GenKind::Pca)
    }
}

impl GenConfig {
    /// Standard size for each generator.
    pub fn preset(kind: GenKind) -> Self {
        let (length, window, latent) = match kind {
            GenKind::Tcpd => (8000, 10, 5),
            GenKind::Pca | GenKind::Kpca => (800, 1, 5),
            GenKind::Nmf | GenKind::Sdl => (800, 1, 10),
        };
        Self {
            kind,
            length,
            window,
            latent,
            dim: 40,
            noise_scale: 0.1,
            seed: 0,
            domains: Vec::new(),
            anomalies: None,
        }
    }

    /// Four domains covering 31.25%, 31.25%, 31.25% and 6.25% of the series.
    pub fn four_domain(kind: GenKind) -> Self {
        let mut c = Self::preset(kind);
        c.domains = vec![0.3125, 0.3125, 0.3125, 0.0625];
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CicadaError::BadConfig(m));
        if self.length == 0 || self.dim == 0 || self.latent == 0 || self.window == 0 {
            return bad("length, dim, latent and window must be positive".into());
        }
        if self.kind != GenKind::Kpca && self.latent > self.dim {
            return bad(format!("latent {} exceeds dim {}", self.latent, self.dim));
        }
        if self.kind == GenKind::Tcpd && self.length % self.window != 0 {
            return bad(format!(
                "tcpd length {} is not a multiple of the block length {}",
                self.length, self.window
            ));
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise_scale must be non-negative".into());
        }
        if !self.domains.is_empty() {
            if self.domains.iter().any(|&f| !(f > 0.0)) {
                return bad("domain fractions must be positive".into());
            }
            let total: f64 = self.domains.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("domain fractions sum to {total}, not 1"));
            }
        }
        if let Some(a) = &self.anomalies {
            if !(0.0..=1.0).contains(&a.rate) || !(0.0..1.0).contains(&a.start_fraction) {
                return bad("anomaly rate must lie in [0,1] and start_fraction in [0,1)".into());
            }
        }
        Ok(())
    }
}

/// Latent series `z ∈ ℝ^{T×p}`: for odd `j`
/// `sin(100jt/2T) + cos(sin(123t/T)) + 0.1`, for even `j`
/// `cos(100jt/2T) + sin(cos(131t/T)) + 0.1`.
pub fn gen_latent(p: usize, t_len: usize) -> Matrix {
    let tt = t_len as f64;
    Matrix::from_fn(t_len, p, |t, j| {
        let (t, jf) = (t as f64, j as f64);
        let phase = 100.0 * jf * t / (2.0 * tt);
        if j % 2 == 1 {
            phase.sin() + (123.0 * t / tt).sin().cos() + 0.1
        } else {
            phase.cos() + (131.0 * t / tt).cos().sin() + 0.1
        }
    })
}

/// Mixing matrix `d×p` for the linear generators.
fn mixing(kind: GenKind, d: usize, p: usize, rng: &mut SeededRng) -> Matrix {
    match kind {
        GenKind::Nmf => rng.uniform_matrix(d, p),
        GenKind::Sdl => {
            let mut c = rng.normal_matrix(d, p, 1.0);
            for i in 0..d {
                let keep = rng.sample_indices(p, 3);
                for j in 0..p {
                    if !keep.contains(&j) {
                        c[(i, j)] = 0.0;
                    }
                }
            }
            c
        }
        _ => rng.normal_matrix(d, p, 1.0),
    }
}

/// Rows `start..end` of one domain, drawn from `rng`.
fn gen_block(cfg: &GenConfig, z: &Matrix, start: usize, end: usize, rng: &mut SeededRng) -> Result<Matrix> {
    let d = cfg.dim;
    let rows = end - start;
    let mut out = match cfg.kind {
        GenKind::Kpca => {
            let zd = gen_latent(d, cfg.length);
            let idx: Vec<usize> = (start..end).collect();
            zd.select_rows(&idx)
        }
        GenKind::Tcpd => {
            let l = cfg.window;
            let a = rng.normal_matrix(l, cfg.latent, 1.0);
            let b = rng.normal_matrix(d, cfg.latent, 1.0);
            let mut x = Matrix::zeros(rows, d);
            for r in 0..rows {
                let t = start + r;
                let (block, lag) = (t / l, t % l);
                let zb = z.row(block);
                for v in 0..d {
                    x[(r, v)] = (0..cfg.latent).map(|q| a[(lag, q)] * zb[q] * b[(v, q)]).sum();
                }
            }
            x
        }
        kind => {
            let c = mixing(kind, d, cfg.latent, rng);
            let idx: Vec<usize> = (start..end).collect();
            z.select_rows(&idx).matmul_t(&c)?
        }
    };
    if cfg.kind != GenKind::Kpca && cfg.noise_scale > 0.0 {
        let noise = rng.normal_matrix(rows, d, cfg.noise_scale);
        out = out.add(&noise)?;
    }
    Ok(out)
}

/// Contiguous `[start, end)` ranges for the configured domain fractions.
pub fn domain_ranges(length: usize, fractions: &[f64]) -> Vec<(usize, usize)> {
    if fractions.is_empty() {
        return vec![(0, length)];
    }
    let mut out = Vec::with_capacity(fractions.len());
    let mut acc = 0.0;
    let mut start = 0;
    for (i, f) in fractions.iter().enumerate() {
        acc += f;
        let end = if i + 1 == fractions.len() {
            length
        } else {
            ((acc * length as f64).round() as usize).min(length)
        };
        out.push((start, end));
        start = end;
    }
    out
}

/// A generated series plus the domain of every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub series: TimeSeries,
    pub domains: Vec<usize>,
}

/// Generates the configured series. Each domain draws its own mixing
/// parameters from an independent substream.
pub fn generate(cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    let root = SeededRng::new(cfg.seed);
    let z = match cfg.kind {
        GenKind::Tcpd => gen_latent(cfg.latent, cfg.length / cfg.window),
        _ => gen_latent(cfg.latent, cfg.length),
    };
    let ranges = domain_ranges(cfg.length, &cfg.domains);
    let mut blocks = Vec::with_capacity(ranges.len());
    let mut domains = Vec::with_capacity(cfg.length);
    for (i, &(start, end)) in ranges.iter().enumerate() {
        let mut rng = root.substream("domain", i as u64);
        blocks.push(gen_block(cfg, &z, start, end, &mut rng)?);
        domains.extend(std::iter::repeat_n(i, end - start));
    }
    let values = Matrix::vstack(&blocks.iter().collect::<Vec<_>>())?;
    let mut series = TimeSeries::from_values(values);
    if let Some(spec) = &cfg.anomalies {
        inject_spikes(&mut series, spec, &mut root.substream("anomalies", 0));
    }
    Ok(Generated { series, domains })
}

/// Single-domain generation (domain fractions are ignored).
pub fn gen_dataset(cfg: &GenConfig) -> Result<TimeSeries> {
    let single = GenConfig {
        domains: Vec::new(),
        ..cfg.clone()
    };
    Ok(generate(&single)?.series)
}

/// Multi-domain generation; requires domain fractions.
pub fn gen_multidomain(cfg: &GenConfig) -> Result<Generated> {
    if cfg.domains.is_empty() {
        return Err(CicadaError::BadConfig("multi-domain generation needs domain fractions".into()));
    }
    generate(cfg)
}

/// Adds `magnitude·σ_v` to every variable at a random subset of time steps
/// and labels them 1.
pub fn inject_spikes(series: &mut TimeSeries, spec: &AnomalySpec, rng: &mut SeededRng) {
    let (t_len, d) = series.values.shape();
    let mut sigma = vec![0.0; d];
    for (v, s) in sigma.iter_mut().enumerate() {
        let col = series.values.col(v);
        let mean = col.iter().sum::<f64>() / t_len as f64;
        *s = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t_len as f64).sqrt();
    }
    let first = ((spec.start_fraction * t_len as f64).floor() as usize).min(t_len);
    let eligible = t_len - first;
    let count = (spec.rate * eligible as f64).round() as usize;
    let mut labels = series.labels.take().unwrap_or_else(|| vec![0; t_len]);
    for offset in rng.sample_indices(eligible, count) {
        let t = first + offset;
        for (v, s) in sigma.iter().enumerate() {
            series.values[(t, v)] += spec.magnitude * s;
        }
        labels[t] = 1;
    }
    series.labels = Some(labels);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_values() {
        let z = gen_latent(2, 10);
        assert!((z[(0, 0)] - (1.0 + 1f64.sin() + 0.1)).abs() < 1e-15);
        assert!((z[(0, 0)] - 1.94147).abs() < 1e-5);
        assert!((z[(0, 1)] - 1.1).abs() < 1e-15);
        let z = gen_latent(7, 500);
        assert!(z.as_slice().iter().all(|&v| (-1.9..=2.1).contains(&v)));
    }

    #[test]
    fn preset_shapes() {
        let s = gen_dataset(&GenConfig::preset(GenKind::Pca)).unwrap();
        assert_eq!(s.values.shape(), (800, 40));
        let s = gen_dataset(&GenConfig::preset(GenKind::Tcpd)).unwrap();
        assert_eq!(s.values.shape(), (8000, 40));
    }

    /// Rank by Gram–Schmidt with a relative tolerance.
    fn numeric_rank(m: &Matrix) -> usize {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let scale = m.max_abs().max(1.0);
        for i in 0..m.rows() {
            let mut v = m.row(i).to_vec();
            for _ in 0..2 {
                for b in &basis {
                    let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 * scale {
                basis.push(v.iter().map(|x| x / n).collect());
            }
        }
        basis.len()
    }

    #[test]
    fn noiseless_linear_data_lies_in_the_mixing_span() {
        for kind in [GenKind::Pca, GenKind::Nmf, GenKind::Sdl] {
            let mut c = GenConfig::preset(kind);
            c.noise_scale = 0.0;
            c.seed = 9;
            let s = gen_dataset(&c).unwrap();
            let mut rng = SeededRng::new(c.seed).substream("domain", 0);
            let mix = mixing(kind, c.dim, c.latent, &mut rng);
            // full column rank, and projecting onto span(C) changes nothing
            let q = crate::numerics::qr_orthonormalize(&mix).unwrap();
            let proj = s.values.matmul(&q).unwrap().matmul_t(&q).unwrap();
            let rel = s.values.sub(&proj).unwrap().frobenius() / s.values.frobenius();
            assert!(rel < 1e-12, "{kind}: {rel}");
            assert_eq!(q.cols(), c.latent);
        }
    }

    #[test]
    fn sdl_rows_have_three_nonzeros_and_nmf_is_nonnegative() {
        let mut rng = SeededRng::new(3);
        let c = mixing(GenKind::Sdl, 40, 10, &mut rng);
        for i in 0..40 {
            assert_eq!(c.row(i).iter().filter(|&&v| v != 0.0).count(), 3);
        }
        let c = mixing(GenKind::Nmf, 40, 10, &mut rng);
        assert!(c.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn seed_determinism() {
        let mut c = GenConfig::preset(GenKind::Sdl);
        c.seed = 17;
        assert_eq!(gen_dataset(&c).unwrap(), gen_dataset(&c).unwrap());
        let mut c2 = c.clone();
        c2.seed = 18;
        assert_ne!(gen_dataset(&c).unwrap(), gen_dataset(&c2).unwrap());
    }

    #[test]
    fn single_full_domain_matches_plain_generation() {
        let mut c = GenConfig::preset(GenKind::Pca);
        c.seed = 5;
        let plain = gen_dataset(&c).unwrap();
        c.domains = vec![1.0];
        let multi = gen_multidomain(&c).unwrap();
        assert_eq!(plain, multi.series);
        assert!(multi.domains.iter().all(|&d| d == 0));
    }

    #[test]
    fn four_domain_labels_align_with_sixteen_segments() {
        let g = gen_multidomain(&GenConfig::four_domain(GenKind::Pca)).unwrap();
        assert_eq!(g.domains.len(), 800);
        let per_segment: Vec<usize> = (0..16).map(|s| g.domains[s * 50]).collect();
        let mut expected = vec![0; 5];
        expected.extend([1; 5]);
        expected.extend([2; 5]);
        expected.push(3);
        assert_eq!(per_segment, expected);
        for s in 0..16 {
            assert!(g.domains[s * 50..(s + 1) * 50].iter().all(|&d| d == per_segment[s]));
        }
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let mut c = GenConfig::preset(GenKind::Pca);
        c.domains = vec![0.5, 0.4];
        assert!(matches!(gen_multidomain(&c), Err(CicadaError::BadConfig(_))));
    }

    #[test]
    fn spikes_are_labelled() {
        let mut c = GenConfig::preset(GenKind::Sdl);
        c.anomalies = Some(AnomalySpec {
            start_fraction: 0.5,
            ..AnomalySpec::default()
        });
        let s = gen_dataset(&c).unwrap();
        let labels = s.labels.unwrap();
        assert_eq!(labels.iter().filter(|&&y| y == 1).count(), 4);
        assert!(labels[..400].iter().all(|&y| y == 0));
    }

    #[test]
    fn tcpd_blocks_are_low_rank_without_noise() {
        let mut c = GenConfig::preset(GenKind::Tcpd);
        c.length = 200;
        c.noise_scale = 0.0;
        let s = gen_dataset(&c).unwrap();
        // every row is a combination of the latent-weighted columns of B
        assert_eq!(numeric_rank(&s.values), c.latent);
    }
}
