use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::fieldfile::{read_field_file, write_trajectory_file};
use super::spectral::{evolve, sample_initial};
use crate::error::{Error, Result};
use crate::tensor::FieldTensor;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Parameters of the toy advection-diffusion family.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub grid: usize,
    pub frames: usize,
    pub dt: f64,
    pub nu: f64,
    pub c: [f64; 2],
    pub alpha: f64,
    pub k_max: usize,
    pub seed: u64,
    pub train: usize,
    pub test: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            grid: 32,
            frames: 30,
            dt: 0.05,
            nu: 0.01,
            c: [1.0, 0.5],
            alpha: 2.5,
            k_max: 8,
            seed: 0,
            train: 200,
            test: 20,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid < 2 || self.grid % 2 != 0 {
            return bad(format!("grid must be even and >= 2, got {}", self.grid));
        }
        if self.k_max > self.grid / 2 {
            return bad(format!("kmax {} exceeds grid/2 = {}", self.k_max, self.grid / 2));
        }
        if self.frames == 0 {
            return bad("frames must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be non-negative, got {}", self.nu));
        }
        if !self.c.iter().chain([&self.alpha]).all(|v| v.is_finite()) {
            return bad("velocity and alpha must be finite".into());
        }
        Ok(())
    }

    /// Frames `u(0), u(dt), ..., u((T-1) dt)` for one initial-condition seed.
    pub fn trajectory(&self, seed: u64) -> Result<Vec<FieldTensor>> {
        let u0 = sample_initial(seed, self.grid, self.alpha, self.k_max)?;
        Ok((0..self.frames)
            .map(|t| evolve(&u0, self.nu, self.c, t as f64 * self.dt).to_physical())
            .collect())
    }
}

/// Plain-text index of a dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: GenerateConfig,
    /// `(file name relative to the manifest, initial-condition seed)`.
    pub entries: Vec<(String, u64)>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let c = &self.config;
        let mut s = String::from("# factformer toy dataset\n");
        for (k, v) in [
            ("nu", c.nu.to_string()),
            ("cx", c.c[0].to_string()),
            ("cy", c.c[1].to_string()),
            ("dt", c.dt.to_string()),
            ("seed", c.seed.to_string()),
            ("grid", c.grid.to_string()),
            ("frames", c.frames.to_string()),
            ("alpha", c.alpha.to_string()),
            ("kmax", c.k_max.to_string()),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        for (i, (file, seed)) in self.entries.iter().enumerate() {
            let _ = writeln!(s, "traj.{i:04}={file}");
            let _ = writeln!(s, "seed.{i:04}={seed}");
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Manifest> {
        let fail = |line: usize, m: String| Error::format(path, format!("line {line}: {m}"));
        let mut c = GenerateConfig {
            train: 0,
            test: 0,
            ..GenerateConfig::default()
        };
        let mut files: Vec<Option<String>> = Vec::new();
        let mut seeds: Vec<Option<u64>> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let no = no + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(no, format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| fail(no, format!("{k}: bad number {v:?}")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| fail(no, format!("{k}: bad integer {v:?}")));
            let slot = |key: &str, prefix: &str| -> Result<Option<usize>> {
                match key.strip_prefix(prefix) {
                    Some(i) => i.parse::<usize>().map(Some).map_err(|_| fail(no, format!("bad index in {key}"))),
                    None => Ok(None),
                }
            };
            match k {
                "nu" => c.nu = num(v)?,
                "cx" => c.c[0] = num(v)?,
                "cy" => c.c[1] = num(v)?,
                "dt" => c.dt = num(v)?,
                "alpha" => c.alpha = num(v)?,
                "seed" => c.seed = int(v)?,
                "grid" => c.grid = int(v)? as usize,
                "frames" => c.frames = int(v)? as usize,
                "kmax" => c.k_max = int(v)? as usize,
                _ => {
                    if let Some(i) = slot(k, "traj.")? {
                        if files.len() <= i {
                            files.resize(i + 1, None);
                        }
                        files[i] = Some(v.to_string());
                    } else if let Some(i) = slot(k, "seed.")? {
                        if seeds.len() <= i {
                            seeds.resize(i + 1, None);
                        }
                        seeds[i] = Some(int(v)?);
                    } else {
                        return Err(fail(no, format!("unknown key {k:?}")));
                    }
                }
            }
        }
        if files.len() != seeds.len() {
            return Err(Error::format(path, format!("{} trajectory entries but {} seeds", files.len(), seeds.len())));
        }
        let mut entries = Vec::with_capacity(files.len());
        for (i, (f, s)) in files.into_iter().zip(seeds).enumerate() {
            match (f, s) {
                (Some(f), Some(s)) => entries.push((f, s)),
                _ => return Err(Error::format(path, format!("trajectory {i} is missing its file or seed"))),
            }
        }
        c.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(Manifest { config: c, entries })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub frames: Vec<FieldTensor>,
}

/// A loaded dataset split: trajectories sharing one grid and channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub manifest: Manifest,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn frame_shape(&self) -> &[usize] {
        self.trajectories[0].frames[0].shape()
    }

    pub fn dt(&self) -> f64 {
        self.manifest.config.dt
    }

    pub fn min_frames(&self) -> usize {
        self.trajectories.iter().map(|t| t.frames.len()).min().unwrap_or(0)
    }

    /// Fails unless every trajectory has at least `needed` frames.
    pub fn require_frames(&self, needed: usize) -> Result<()> {
        if self.min_frames() < needed {
            return Err(Error::Config(format!(
                "dataset trajectories have {} frames, {needed} needed",
                self.min_frames()
            )));
        }
        Ok(())
    }
}

/// Writes one split: a trajectory file per seed plus the manifest.
/// Trajectories are computed `threads` at a time and written in seed order;
/// `progress` is called after each file with its index and path.
pub fn generate_split(
    cfg: &GenerateConfig,
    seeds: &[u64],
    dir: &Path,
    threads: usize,
    progress: &mut dyn FnMut(usize, &Path),
) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(seeds.len());
    for (c, chunk) in seeds.chunks(threads.max(1)).enumerate() {
        let frames: Vec<Result<Vec<FieldTensor>>> = if chunk.len() == 1 {
            vec![cfg.trajectory(chunk[0])]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk.iter().map(|&s| scope.spawn(move || cfg.trajectory(s))).collect();
                handles.into_iter().map(|h| h.join().expect("generation worker panicked")).collect()
            })
        };
        for (j, (traj, &seed)) in frames.into_iter().zip(chunk).enumerate() {
            let i = c * threads.max(1) + j;
            let name = format!("traj_{i:04}.ffld");
            let path = dir.join(&name);
            write_trajectory_file(&path, &traj?)?;
            progress(i, &path);
            entries.push((name, seed));
        }
    }
    let manifest = Manifest {
        config: cfg.clone(),
        entries,
    };
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest.render()).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Writes `out/train` and `out/test`. Train seeds are `seed, seed+1, ...`;
/// test seeds continue after the last train seed.
pub fn generate_dataset(
    cfg: &GenerateConfig,
    out: &Path,
    threads: usize,
    progress: &mut dyn FnMut(&str, usize, &Path),
) -> Result<(PathBuf, PathBuf)> {
    cfg.validate()?;
    let train_seeds: Vec<u64> = (0..cfg.train as u64).map(|i| cfg.seed + i).collect();
    let test_seeds: Vec<u64> = (0..cfg.test as u64).map(|i| cfg.seed + cfg.train as u64 + i).collect();
    let (train, test) = (out.join("train"), out.join("test"));
    generate_split(cfg, &train_seeds, &train, threads, &mut |i, p| progress("train", i, p))?;
    generate_split(cfg, &test_seeds, &test, threads, &mut |i, p| progress("test", i, p))?;
    Ok((train, test))
}

/// Loads a split directory, or a manifest file directly.
pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let mpath = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let dir = mpath.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest = Manifest::parse(&text, &mpath)?;
    if manifest.entries.is_empty() {
        return Err(Error::format(&mpath, "manifest lists no trajectories"));
    }
    let mut trajectories = Vec::with_capacity(manifest.entries.len());
    for (file, seed) in &manifest.entries {
        let fpath = dir.join(file);
        let frames = read_field_file(&fpath)?.into_frames();
        trajectories.push(Trajectory { seed: *seed, frames });
    }
    let shape = trajectories[0].frames[0].shape().to_vec();
    for (i, t) in trajectories.iter().enumerate() {
        if let Some(f) = t.frames.iter().find(|f| f.shape() != shape.as_slice()) {
            return Err(Error::format(
                dir.join(&manifest.entries[i].0),
                format!("frame shape {:?} differs from dataset shape {shape:?}", f.shape()),
            ));
        }
    }
    Ok(TrajectoryDataset {
        manifest,
        trajectories,
    })
}
