//! Synthetic diode-RC corpus: simulation, sweeps, splitting, normalization and file I/O.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solve::{rk4_solve, SolveConfig};

/// One sampled excitation/response record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub id: String,
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub amplitude: f64,
    pub frequency: f64,
}

impl Waveform {
    pub fn new(
        id: impl Into<String>,
        times: Vec<f64>,
        u: Vec<f64>,
        y: Vec<f64>,
        amplitude: f64,
        frequency: f64,
    ) -> Result<Self> {
        let w = Waveform { id: id.into(), times, u, y, amplitude, frequency };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("waveform {}: need at least 2 samples", self.id)));
        }
        if self.u.len() != n || self.y.len() != n {
            return Err(Error::InvalidInput(format!(
                "waveform {}: length mismatch (t {}, u {}, y {})",
                self.id,
                n,
                self.u.len(),
                self.y.len()
            )));
        }
        let all = self.times.iter().chain(&self.u).chain(&self.y);
        if !all.clone().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!("waveform {}: non-finite sample", self.id)));
        }
        if self.times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidInput(format!(
                "waveform {}: times must be strictly increasing",
                self.id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Series resistor feeding a capacitor shunted by a diode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Circuit {
    pub r: f64,
    pub c: f64,
    pub i_s: f64,
    pub v_t: f64,
}

impl Default for Circuit {
    fn default() -> Self {
        Circuit { r: 1.0, c: 1.0, i_s: 1e-3, v_t: 0.25 }
    }
}

impl Circuit {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.r) || !ok(self.c) || !ok(self.v_t) {
            return Err(Error::InvalidInput("circuit R, C and V_t must be positive".into()));
        }
        if !self.i_s.is_finite() || self.i_s < 0.0 {
            return Err(Error::InvalidInput("saturation current must be non-negative".into()));
        }
        Ok(())
    }

    fn dv_dt(&self, u: f64, v: f64) -> f64 {
        ((u - v) / self.r - self.i_s * ((v / self.v_t).exp() - 1.0)) / self.c
    }
}

/// Sinusoidal source `u(t) = A sin(2 pi f t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Excitation {
    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * t).sin()
    }
}

pub const MIN_OVERSAMPLE: usize = 32;

/// Integrates the circuit from rest over `grid` with `oversample` RK4 steps per sample interval.
pub fn simulate_ground_truth(
    circuit: &Circuit,
    excitation: &Excitation,
    grid: &[f64],
    oversample: usize,
) -> Result<Waveform> {
    circuit.validate()?;
    if grid.len() < 2 {
        return Err(Error::InvalidInput("simulation grid needs at least 2 points".into()));
    }
    if oversample < MIN_OVERSAMPLE {
        return Err(Error::InvalidInput(format!(
            "oversample must be at least {MIN_OVERSAMPLE}, got {oversample}"
        )));
    }
    if !excitation.amplitude.is_finite() || !excitation.frequency.is_finite() {
        return Err(Error::InvalidInput("non-finite excitation".into()));
    }
    let cfg = SolveConfig::new(oversample)?;
    let field = (1usize, |t: f64, x: &[f64], out: &mut [f64]| {
        out[0] = circuit.dv_dt(excitation.at(t), x[0]);
    });
    let mut v = vec![0.0];
    let mut u = Vec::with_capacity(grid.len());
    let mut y = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        if k > 0 {
            v = rk4_solve(&field, &v, grid[k - 1], t, &cfg)?;
        }
        let uk = excitation.at(t);
        u.push(uk);
        y.push((uk - v[0]) / circuit.r);
    }
    let id = format!("a{:.6}_f{:.6}", excitation.amplitude, excitation.frequency);
    Waveform::new(id, grid.to_vec(), u, y, excitation.amplitude, excitation.frequency)
}

/// `n` equispaced points covering one period `[0, 1/f]`.
pub fn period_grid(frequency: f64, n: usize) -> Vec<f64> {
    let period = 1.0 / frequency;
    let last = (n - 1) as f64;
    (0..n)
        .map(|k| if k + 1 == n { period } else { period * k as f64 / last })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub count: usize,
    pub amplitude_range: [f64; 2],
    pub frequency_range: [f64; 2],
    pub samples: usize,
    pub circuit: Circuit,
    pub oversample: usize,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            count: 160,
            amplitude_range: [0.3, 2.0],
            frequency_range: [0.1, 1.0],
            samples: 128,
            circuit: Circuit::default(),
            oversample: MIN_OVERSAMPLE,
            split_ratio: 0.8,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::InvalidInput("corpus count must be at least 2".into()));
        }
        for (name, [lo, hi]) in [("amplitude", self.amplitude_range), ("frequency", self.frequency_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
                return Err(Error::InvalidInput(format!(
                    "{name} range must be positive and ordered, got [{lo}, {hi}]"
                )));
            }
        }
        if self.samples < 2 {
            return Err(Error::InvalidInput("samples per waveform must be at least 2".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidInput("split ratio must lie in (0, 1)".into()));
        }
        self.circuit.validate()
    }

    /// Factor `count` into (amplitude levels, frequency levels), amplitude side the larger.
    pub fn grid_shape(&self) -> (usize, usize) {
        let mut nf = (self.count as f64).sqrt().floor() as usize;
        while nf > 1 && self.count % nf != 0 {
            nf -= 1;
        }
        (self.count / nf, nf)
    }

    /// (A, f) pairs in frequency-major order.
    pub fn excitations(&self) -> Vec<Excitation> {
        let (na, nf) = self.grid_shape();
        let levels = |[lo, hi]: [f64; 2], n: usize| -> Vec<f64> {
            if n == 1 {
                return vec![lo];
            }
            (0..n)
                .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
                .collect()
        };
        let amps = levels(self.amplitude_range, na);
        let freqs = levels(self.frequency_range, nf);
        freqs
            .iter()
            .flat_map(|&f| amps.iter().map(move |&a| Excitation { amplitude: a, frequency: f }))
            .collect()
    }
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<Waveform>> {
    config.validate()?;
    config
        .excitations()
        .into_par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let grid = period_grid(ex.frequency, config.samples);
            let mut w = simulate_ground_truth(&config.circuit, &ex, &grid, config.oversample)?;
            w.id = format!("w{i:03}");
            Ok(w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(count: usize, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n_train = (ratio * count as f64).round() as usize;
    if n_train == 0 || n_train >= count {
        return Err(Error::InvalidInput(format!(
            "split of {count} at {ratio} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    Ok(Split { train: idx, test })
}

pub fn split_corpus(corpus: &[Waveform], ratio: f64, seed: u64) -> Result<(Vec<Waveform>, Vec<Waveform>)> {
    let s = split_indices(corpus.len(), ratio, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| corpus[i].clone()).collect();
    Ok((pick(&s.train), pick(&s.test)))
}

/// Affine maps `v -> (v - offset) / scale` for each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub u_offset: f64,
    pub u_scale: f64,
    pub y_offset: f64,
    pub y_scale: f64,
    pub time_scale: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats { u_offset: 0.0, u_scale: 1.0, y_offset: 0.0, y_scale: 1.0, time_scale: 1.0 }
    }
}

fn range_map(values: impl Iterator<Item = f64>, what: &str) -> Result<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(hi - lo > 0.0) || !(hi - lo).is_finite() {
        return Err(Error::InvalidInput(format!("{what} channel has zero range")));
    }
    Ok(((hi + lo) / 2.0, (hi - lo) / 2.0))
}

impl NormStats {
    /// Maps the given waveforms' u and y ranges onto [-1, 1].
    pub fn fit(waveforms: &[Waveform]) -> Result<Self> {
        let (u_offset, u_scale) = range_map(waveforms.iter().flat_map(|w| w.u.iter().copied()), "u")?;
        let (y_offset, y_scale) = range_map(waveforms.iter().flat_map(|w| w.y.iter().copied()), "y")?;
        Ok(NormStats { u_offset, u_scale, y_offset, y_scale, time_scale: 1.0 })
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.u_offset, self.u_scale, self.y_offset, self.y_scale, self.time_scale];
        if fields.iter().any(|v| !v.is_finite()) || self.u_scale <= 0.0 || self.y_scale <= 0.0 || self.time_scale <= 0.0 {
            return Err(Error::InvalidInput("normalization scales must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn norm_u(&self, u: f64) -> f64 {
        (u - self.u_offset) / self.u_scale
    }
    pub fn denorm_u(&self, u: f64) -> f64 {
        u * self.u_scale + self.u_offset
    }
    pub fn norm_y(&self, y: f64) -> f64 {
        (y - self.y_offset) / self.y_scale
    }
    pub fn denorm_y(&self, y: f64) -> f64 {
        y * self.y_scale + self.y_offset
    }

    pub fn normalize(&self, w: &Waveform) -> Waveform {
        Waveform {
            id: w.id.clone(),
            times: w.times.iter().map(|t| t / self.time_scale).collect(),
            u: w.u.iter().map(|&v| self.norm_u(v)).collect(),
            y: w.y.iter().map(|&v| self.norm_y(v)).collect(),
            amplitude: w.amplitude,
            frequency: w.frequency,
        }
    }

    pub fn denormalize(&self, w: &Waveform) -> Waveform {
        Waveform {
            id: w.id.clone(),
            times: w.times.iter().map(|t| t * self.time_scale).collect(),
            u: w.u.iter().map(|&v| self.denorm_u(v)).collect(),
            y: w.y.iter().map(|&v| self.denorm_y(v)).collect(),
            amplitude: w.amplitude,
            frequency: w.frequency,
        }
    }
}

/// Normalizes every waveform with statistics taken from the `train` indices only.
pub fn normalize_corpus(corpus: &[Waveform], train: &[usize]) -> Result<(Vec<Waveform>, NormStats)> {
    let mut fit_set = Vec::with_capacity(train.len());
    for &i in train {
        fit_set.push(
            corpus
                .get(i)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("train index {i} out of range")))?,
        );
    }
    let stats = NormStats::fit(&fit_set)?;
    Ok((corpus.iter().map(|w| stats.normalize(w)).collect(), stats))
}

pub fn write_waveform_csv(path: &Path, w: &Waveform) -> Result<()> {
    let mut wr = csv::Writer::from_path(path).map_err(csv_err)?;
    wr.write_record(["t", "u", "y"]).map_err(csv_err)?;
    for k in 0..w.len() {
        wr.write_record([
            format!("{:.16e}", w.times[k]),
            format!("{:.16e}", w.u[k]),
            format!("{:.16e}", w.y[k]),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_waveform_csv(path: &Path, id: &str, amplitude: f64, frequency: f64) -> Result<Waveform> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rd.headers().map_err(csv_err)?;
    if header.iter().collect::<Vec<_>>() != ["t", "u", "y"] {
        return Err(Error::InvalidInput(format!("{}: expected header t,u,y", path.display())));
    }
    let (mut t, mut u, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidInput(format!("{}: bad value at row {}", path.display(), row + 2)))
        };
        t.push(field(0)?);
        u.push(field(1)?);
        y.push(field(2)?);
    }
    Waveform::new(id, t, u, y, amplitude, frequency)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub amplitude: f64,
    pub frequency: f64,
    pub split: SplitSide,
}

/// Corpus index written next to the per-waveform CSV files (which hold raw, unnormalized data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorpusConfig,
    pub norm: NormStats,
    pub waveforms: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn split(&self) -> Split {
        let mut s = Split { train: Vec::new(), test: Vec::new() };
        for (i, e) in self.waveforms.iter().enumerate() {
            match e.split {
                SplitSide::Train => s.train.push(i),
                SplitSide::Test => s.test.push(i),
            }
        }
        s
    }
}

/// Raw corpus plus its split and train-fitted statistics.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub waveforms: Vec<Waveform>,
    pub split: Split,
    pub norm: NormStats,
}

impl Corpus {
    pub fn generate(config: &CorpusConfig) -> Result<Self> {
        let waveforms = generate_corpus(config)?;
        let split = split_indices(waveforms.len(), config.split_ratio, config.seed)?;
        let (_, norm) = normalize_corpus(&waveforms, &split.train)?;
        Ok(Corpus { config: config.clone(), waveforms, split, norm })
    }

    pub fn normalized(&self, indices: &[usize]) -> Vec<Waveform> {
        indices.iter().map(|&i| self.norm.normalize(&self.waveforms[i])).collect()
    }

    pub fn train(&self) -> Vec<Waveform> {
        self.normalized(&self.split.train)
    }

    pub fn test(&self) -> Vec<Waveform> {
        self.normalized(&self.split.test)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.waveforms.len());
        let mut side = vec![SplitSide::Train; self.waveforms.len()];
        for &i in &self.split.test {
            side[i] = SplitSide::Test;
        }
        for (w, s) in self.waveforms.iter().zip(side) {
            let file = format!("{}.csv", w.id);
            write_waveform_csv(&dir.join(&file), w)?;
            entries.push(ManifestEntry {
                id: w.id.clone(),
                file,
                amplitude: w.amplitude,
                frequency: w.frequency,
                split: s,
            });
        }
        let manifest = Manifest { config: self.config.clone(), norm: self.norm, waveforms: entries };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }

    /// Loads from a manifest path or from a directory containing one.
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let dir = path.parent().unwrap_or(Path::new("."));
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        manifest.norm.validate()?;
        let waveforms = manifest
            .waveforms
            .iter()
            .map(|e| read_waveform_csv(&dir.join(&e.file), &e.id, e.amplitude, e.frequency))
            .collect::<Result<Vec<_>>>()?;
        let split = manifest.split();
        if split.train.is_empty() || split.test.is_empty() {
            return Err(Error::InvalidInput("manifest split has an empty side".into()));
        }
        Ok(Corpus { config: manifest.config, waveforms, split, norm: manifest.norm })
    }
}
