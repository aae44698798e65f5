//! Synthetic datasets and their on-disk formats.
//!
//! Train and validation splits only ever receive normal samples; anomalies
//! are generated separately and appear in the anomaly test split alone.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::training::rng_stream;

const STREAM_NORMAL: u64 = 10;
const STREAM_SPLIT: u64 = 11;
const STREAM_ANOMALY: u64 = 12;

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];
pub const CDAT_MAGIC: &[u8; 5] = b"CDAT1";
pub const SPLIT_NAMES: [&str; 4] = ["train", "valid", "test_normal", "test_anomaly"];

#[derive(Clone, Debug, PartialEq)]
pub enum DataKind {
    HalfMoon { noise: f64 },
    ImbalancedModes { weight: f64 },
    Texture { side: usize, noise: f64 },
}

impl DataKind {
    pub fn name(&self) -> &'static str {
        match self {
            DataKind::HalfMoon { .. } => "half_moon",
            DataKind::ImbalancedModes { .. } => "imbalanced_modes",
            DataKind::Texture { .. } => "texture",
        }
    }

    pub fn side(&self) -> Option<usize> {
        match self {
            DataKind::Texture { side, .. } => Some(*side),
            _ => None,
        }
    }
}

/// Everything a dataset is a pure function of.
#[derive(Clone, Debug, PartialEq)]
pub struct DataParams {
    pub kind: DataKind,
    /// Number of normal samples before splitting.
    pub n: usize,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl DataParams {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DataKind::HalfMoon { noise } | DataKind::Texture { noise, .. } if !(noise >= 0.0) => {
                return Err(Error::Config(format!("data.noise must be >= 0, got {noise}")));
            }
            DataKind::HalfMoon { .. } if self.n < 10 => {
                return Err(Error::Config("half_moon needs data.n >= 10".into()));
            }
            DataKind::ImbalancedModes { weight } if !(weight > 0.5 && weight < 1.0) => {
                return Err(Error::Config(format!("data.weight must lie in (0.5, 1), got {weight}")));
            }
            DataKind::Texture { side, .. } if !(8..=32).contains(&side) => {
                return Err(Error::Config(format!("data.side must lie in [8, 32], got {side}")));
            }
            _ => {}
        }
        if self.n == 0 {
            return Err(Error::Config("data.n must be positive".into()));
        }
        check_ratios(&self.ratios)
    }

    /// `key = value` lines describing this dataset.
    pub fn descriptor(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "generator = {}", self.kind.name());
        let _ = writeln!(s, "n = {}", self.n);
        match &self.kind {
            DataKind::HalfMoon { noise } => {
                let _ = writeln!(s, "noise = {noise}");
            }
            DataKind::ImbalancedModes { weight } => {
                let _ = writeln!(s, "weight = {weight}");
            }
            DataKind::Texture { side, noise } => {
                let _ = writeln!(s, "side = {side}");
                let _ = writeln!(s, "noise = {noise}");
            }
        }
        let r = self.ratios;
        let _ = writeln!(s, "ratios = {},{},{}", r[0], r[1], r[2]);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn parse_descriptor(text: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("descriptor line without '=': {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Data(format!("descriptor lacks {k:?}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Data(format!("descriptor value {k} = {v:?} is not a number")))
        }
        let kind = match get("generator")? {
            "half_moon" => DataKind::HalfMoon {
                noise: num("noise", get("noise")?)?,
            },
            "imbalanced_modes" => DataKind::ImbalancedModes {
                weight: num("weight", get("weight")?)?,
            },
            "texture" => DataKind::Texture {
                side: num("side", get("side")?)?,
                noise: num("noise", get("noise")?)?,
            },
            other => return Err(Error::Data(format!("unknown generator {other:?} in descriptor"))),
        };
        let r: Vec<f64> = get("ratios")?
            .split(',')
            .map(|v| num("ratios", v.trim()))
            .collect::<Result<_>>()?;
        let ratios: [f64; 3] = r
            .try_into()
            .map_err(|_| Error::Data("descriptor ratios need three values".into()))?;
        Ok(Self {
            kind,
            n: num("n", get("n")?)?,
            ratios,
            seed: num("seed", get("seed")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Tensor,
    pub valid: Tensor,
    pub test_normal: Tensor,
    pub test_anomaly: Tensor,
    pub params: DataParams,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.train.shape()[1]
    }

    pub fn side(&self) -> Option<usize> {
        self.params.kind.side()
    }

    pub fn splits(&self) -> [(&'static str, &Tensor); 4] {
        [
            (SPLIT_NAMES[0], &self.train),
            (SPLIT_NAMES[1], &self.valid),
            (SPLIT_NAMES[2], &self.test_normal),
            (SPLIT_NAMES[3], &self.test_anomaly),
        ]
    }

    pub fn split(&self, name: &str) -> Result<&Tensor> {
        self.splits()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("unknown split {name:?}; expected one of {SPLIT_NAMES:?}")))
    }
}

fn check_ratios(r: &[f64; 3]) -> Result<()> {
    if r.iter().any(|&v| !(v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {r:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Shuffled index partition of `0..n` into sizes `round(n·r0)`,
/// `round(n·r1)` and the remainder.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    check_ratios(&ratios)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_stream(seed, STREAM_SPLIT));
    let a = ((n as f64 * ratios[0]).round() as usize).min(n);
    let b = ((n as f64 * ratios[1]).round() as usize).min(n - a);
    let test = idx.split_off(a + b);
    let valid = idx.split_off(a);
    Ok([idx, valid, test])
}

fn rows_tensor(rows: &[Vec<f64>], dim: usize) -> Tensor {
    Tensor::from_parts(vec![rows.len(), dim], rows.concat())
}

fn assemble(params: &DataParams, normals: Vec<Vec<f64>>, anomalies: Vec<Vec<f64>>, dim: usize) -> Result<Dataset> {
    let [tr, va, te] = split_indices(normals.len(), params.ratios, params.seed)?;
    let pick = |idx: &[usize]| rows_tensor(&idx.iter().map(|&i| normals[i].clone()).collect::<Vec<_>>(), dim);
    Ok(Dataset {
        train: pick(&tr),
        valid: pick(&va),
        test_normal: pick(&te),
        test_anomaly: rows_tensor(&anomalies, dim),
        params: params.clone(),
    })
}

/// Anomaly test set size: as many anomalies as normal test samples.
fn anomaly_count(params: &DataParams) -> Result<usize> {
    Ok(split_indices(params.n, params.ratios, params.seed)?[2].len())
}

pub fn generate(params: &DataParams) -> Result<Dataset> {
    params.validate()?;
    let mut rng = rng_stream(params.seed, STREAM_NORMAL);
    let mut arng = rng_stream(params.seed, STREAM_ANOMALY);
    let n_anom = anomaly_count(params)?;
    match params.kind {
        DataKind::HalfMoon { noise } => {
            let normals = (0..params.n).map(|_| half_moon_point(noise, &mut rng).to_vec()).collect();
            let anomalies = (0..n_anom).map(|_| half_moon_anomaly(&mut arng).to_vec()).collect();
            assemble(params, normals, anomalies, 2)
        }
        DataKind::ImbalancedModes { weight } => {
            let normals = (0..params.n).map(|_| imbalanced_point(weight, &mut rng).to_vec()).collect();
            let anomalies = (0..n_anom).map(|_| imbalanced_anomaly(&mut arng).to_vec()).collect();
            assemble(params, normals, anomalies, 2)
        }
        DataKind::Texture { side, noise } => {
            let normals = (0..params.n).map(|_| texture_normal(side, noise, &mut rng).1).collect();
            let anomalies = (0..n_anom).map(|_| texture_anomaly(side, noise, &mut arng).1).collect();
            assemble(params, normals, anomalies, side * side)
        }
    }
}

pub fn gen_flipped_half_moon(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    generate(&DataParams {
        kind: DataKind::HalfMoon { noise },
        n,
        ratios: DEFAULT_RATIOS,
        seed,
    })
}

pub fn gen_imbalanced_modes(n: usize, weight: f64, seed: u64) -> Result<Dataset> {
    generate(&DataParams {
        kind: DataKind::ImbalancedModes { weight },
        n,
        ratios: DEFAULT_RATIOS,
        seed,
    })
}

pub fn gen_texture_anomaly(n: usize, side: usize, seed: u64) -> Result<Dataset> {
    generate(&DataParams {
        kind: DataKind::Texture { side, noise: TEXTURE_NOISE },
        n,
        ratios: DEFAULT_RATIOS,
        seed,
    })
}

// ---------------------------------------------------------------- half moon

/// Upper arc: unit circle about `(−0.25, −0.25)` over `x ∈ [−1, 0.5]`.
pub const UPPER_CENTER: [f64; 2] = [-0.25, -0.25];
/// Lower (flipped) arc: unit circle about `(0.5, 0.5)` over `x ∈ [0, 1]`.
pub const LOWER_CENTER: [f64; 2] = [0.5, 0.5];

pub fn upper_arc(x: f64) -> f64 {
    UPPER_CENTER[1] + (1.0 - (x - UPPER_CENTER[0]).powi(2)).sqrt()
}

pub fn lower_arc(x: f64) -> f64 {
    LOWER_CENTER[1] - (1.0 - (x - LOWER_CENTER[0]).powi(2)).sqrt()
}

/// `x` uniform over the union of both arcs' domains (lengths 1.5 and 1),
/// then isotropic Gaussian noise.
pub fn half_moon_point<R: Rng + ?Sized>(noise: f64, rng: &mut R) -> [f64; 2] {
    let upper = rng.random_bool(0.6);
    let (x, y) = if upper {
        let x = rng.random_range(-1.0..=0.5);
        (x, upper_arc(x))
    } else {
        let x = rng.random_range(0.0..=1.0);
        (x, lower_arc(x))
    };
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    [x + noise * nx, y + noise * ny]
}

/// Distance to the union of both arcs.
pub fn manifold_distance(p: [f64; 2]) -> f64 {
    // Arc angle ranges follow from the x-domains.
    let upper = arc_distance(p, UPPER_CENTER, (0.75f64).acos(), (-0.75f64).acos());
    let lower = arc_distance(p, LOWER_CENTER, -(-0.5f64).acos(), -(0.5f64).acos());
    upper.min(lower)
}

fn arc_distance(p: [f64; 2], c: [f64; 2], theta0: f64, theta1: f64) -> f64 {
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    let theta = dy.atan2(dx);
    if (theta0..=theta1).contains(&theta) {
        return (dx.hypot(dy) - 1.0).abs();
    }
    [theta0, theta1]
        .iter()
        .map(|t| (p[0] - c[0] - t.cos()).hypot(p[1] - c[1] - t.sin()))
        .fold(f64::INFINITY, f64::min)
}

/// Uniform in `[−1.5, 1.5]²`, rejected unless farther than 0.3 from both arcs.
pub fn half_moon_anomaly<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    loop {
        let p = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        if manifold_distance(p) > 0.3 {
            return p;
        }
    }
}

// --------------------------------------------------------- imbalanced modes

pub const MODE_CENTERS: [[f64; 2]; 2] = [[-2.0, 0.0], [2.0, 0.0]];
pub const MODE_SIGMA: f64 = 0.3;

/// The dominant mode (index 0) is drawn with probability `weight`.
pub fn imbalanced_point<R: Rng + ?Sized>(weight: f64, rng: &mut R) -> [f64; 2] {
    let c = if rng.random_bool(weight) { MODE_CENTERS[0] } else { MODE_CENTERS[1] };
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    [c[0] + MODE_SIGMA * nx, c[1] + MODE_SIGMA * ny]
}

pub fn imbalanced_anomaly<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    loop {
        let p = [rng.random_range(-4.0..=4.0), rng.random_range(-4.0..=4.0)];
        if MODE_CENTERS
            .iter()
            .all(|c| (p[0] - c[0]).hypot(p[1] - c[1]) > 1.0)
        {
            return p;
        }
    }
}

// ------------------------------------------------------------------ texture

pub const TEXTURE_NOISE: f64 = 0.05;
pub const BLOB_DROP: f64 = 0.5;

/// Horizontal grating with two periods over the image height.
pub fn grating(side: usize, phase: f64) -> Vec<f64> {
    let period = side as f64 / 2.0;
    let mut img = Vec::with_capacity(side * side);
    for r in 0..side {
        let v = 0.5 + 0.35 * (2.0 * PI * r as f64 / period + phase).sin();
        img.extend(std::iter::repeat_n(v, side));
    }
    img
}

/// `(clean grating, noisy image)`.
pub fn texture_normal<R: Rng + ?Sized>(side: usize, noise: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let clean = grating(side, rng.random_range(0.0..2.0 * PI));
    let img = clean
        .iter()
        .map(|&v| {
            let e: f64 = rng.sample(StandardNormal);
            (v + noise * e).clamp(0.0, 1.0)
        })
        .collect();
    (clean, img)
}

/// `(clean grating, defective image)`: a normal image with 1–3 dark
/// elliptical blobs. Redrawn until some pixel deviates from the clean
/// grating by more than 0.3.
pub fn texture_anomaly<R: Rng + ?Sized>(side: usize, noise: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    loop {
        let (clean, mut img) = texture_normal(side, noise, rng);
        let mut mask = vec![false; side * side];
        for _ in 0..rng.random_range(1..=3) {
            let cy = rng.random_range(0.0..side as f64);
            let cx = rng.random_range(0.0..side as f64);
            let ry: f64 = rng.random_range(1.0..=3.0);
            let rx: f64 = rng.random_range(1.0..=3.0);
            for r in 0..side {
                for c in 0..side {
                    let u = (r as f64 + 0.5 - cy) / ry;
                    let v = (c as f64 + 0.5 - cx) / rx;
                    if u * u + v * v <= 1.0 {
                        mask[r * side + c] = true;
                    }
                }
            }
        }
        for (p, m) in img.iter_mut().zip(&mask) {
            if *m {
                *p = (*p - BLOB_DROP).max(0.0);
            }
        }
        if img.iter().zip(&clean).any(|(a, b)| (a - b).abs() > 0.3) {
            return (clean, img);
        }
    }
}

// ---------------------------------------------------------------------- I/O

pub const DESCRIPTOR_FILE: &str = "dataset.txt";
pub const POINTS_FILE: &str = "data.csv";

/// Writes the sidecar descriptor plus `data.csv` (point data) or one
/// `<split>.cdat` file per split (images).
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let desc = dir.join(DESCRIPTOR_FILE);
    fs::write(&desc, ds.params.descriptor()).map_err(|e| Error::io(&desc, e))?;
    match ds.side() {
        Some(side) => {
            for (name, t) in ds.splits() {
                let path = dir.join(format!("{name}.cdat"));
                fs::write(&path, encode_cdat(t, side)).map_err(|e| Error::io(&path, e))?;
            }
        }
        None => {
            let path = dir.join(POINTS_FILE);
            fs::write(&path, encode_csv(ds)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn encode_csv(ds: &Dataset) -> String {
    let d = ds.dim();
    let mut s = String::from("split");
    for j in 0..d {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (name, t) in ds.splits() {
        for r in 0..t.shape()[0] {
            s.push_str(name);
            for v in t.row(r) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

pub fn encode_cdat(t: &Tensor, side: usize) -> Vec<u8> {
    let count = t.shape()[0];
    let mut buf = Vec::with_capacity(21 + 8 * t.len());
    buf.extend_from_slice(CDAT_MAGIC);
    buf.extend_from_slice(&(count as u64).to_le_bytes());
    buf.extend_from_slice(&(side as u64).to_le_bytes());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_cdat(bytes: &[u8]) -> Result<(Tensor, usize)> {
    if bytes.len() < 21 || &bytes[..5] != CDAT_MAGIC {
        return Err(Error::Data("missing CDAT1 header".into()));
    }
    let count = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let side = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let body = &bytes[21..];
    let expected = count
        .checked_mul(side * side)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::Data("CDAT1 header sizes overflow".into()))?;
    if side == 0 || body.len() != expected {
        return Err(Error::Data(format!(
            "CDAT1 body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((Tensor::from_parts(vec![count, side * side], data), side))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let desc_path = dir.join(DESCRIPTOR_FILE);
    let desc = fs::read_to_string(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
    let params = DataParams::parse_descriptor(&desc)?;
    let mut splits: Vec<Tensor> = Vec::with_capacity(4);
    match params.kind.side() {
        Some(side) => {
            for name in SPLIT_NAMES {
                let path = dir.join(format!("{name}.cdat"));
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let (t, s) = decode_cdat(&bytes)?;
                if s != side {
                    return Err(Error::Data(format!(
                        "{}: side {s} disagrees with descriptor side {side}",
                        path.display()
                    )));
                }
                splits.push(t);
            }
        }
        None => {
            let path = dir.join(POINTS_FILE);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            splits = decode_csv(&text).map_err(|m| Error::Data(format!("{}: {m}", path.display())))?;
        }
    }
    let test_anomaly = splits.pop().unwrap();
    let test_normal = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset {
        train,
        valid,
        test_normal,
        test_anomaly,
        params,
    })
}

fn decode_csv(text: &str) -> std::result::Result<Vec<Tensor>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let d = header.split(',').count().checked_sub(1).filter(|&d| d > 0).ok_or("header has no value columns")?;
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or_default();
        let which = SPLIT_NAMES
            .iter()
            .position(|s| *s == name)
            .ok_or_else(|| format!("line {}: unknown split {name:?}", i + 2))?;
        let vals: Vec<f64> = fields
            .map(|f| f.trim().parse::<f64>().map_err(|_| format!("line {}: bad number {f:?}", i + 2)))
            .collect::<std::result::Result<_, _>>()?;
        if vals.len() != d {
            return Err(format!("line {}: expected {d} values, got {}", i + 2, vals.len()));
        }
        rows[which].extend(vals);
    }
    Ok(rows
        .into_iter()
        .map(|r| Tensor::from_parts(vec![r.len() / d, d], r))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_sizes_and_disjointness() {
        let [a, b, c] = split_indices(100, DEFAULT_RATIOS, 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, DEFAULT_RATIOS, 3).unwrap()[0], a);
        assert!(split_indices(100, [0.5, 0.1, 0.1], 3).is_err());
    }

    #[test]
    fn noiseless_half_moon_lies_on_arcs() {
        let ds = gen_flipped_half_moon(300, 0.0, 1).unwrap();
        for t in [&ds.train, &ds.valid, &ds.test_normal] {
            for r in 0..t.shape()[0] {
                let p = t.row(r);
                assert!(manifold_distance([p[0], p[1]]) < 1e-12, "{p:?}");
            }
        }
    }

    #[test]
    fn half_moon_overlap_has_both_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<[f64; 2]> = (0..200).map(|_| half_moon_point(0.0, &mut rng)).collect();
        let band = |p: &&[f64; 2]| p[0] > 0.0 && p[0] < 0.5;
        assert!(pts.iter().filter(band).any(|p| p[1] > 0.0));
        assert!(pts.iter().filter(band).any(|p| p[1] < 0.0));
    }

    #[test]
    fn manifold_distance_hand_cases() {
        assert!(manifold_distance([-0.25, 0.75]) < 1e-15);
        assert!((manifold_distance([-0.25, 1.0]) - 0.25).abs() < 1e-12);
        // nearest point is the upper arc's right endpoint (0.5, y)
        let end = [0.5, upper_arc(0.5)];
        assert!((manifold_distance([0.9, end[1]]) - 0.4).abs() < 1e-12);
        for p in [[0.0, 0.0], [1.0, 1.0], [-1.0, -1.0]] {
            assert!(manifold_distance(p) > 0.0);
        }
    }

    #[test]
    fn anomalies_respect_exclusions() {
        let ds = gen_imbalanced_modes(1000, 0.9, 4).unwrap();
        let t = &ds.test_anomaly;
        assert_eq!(t.shape()[0], ds.test_normal.shape()[0]);
        for r in 0..t.shape()[0] {
            let p = t.row(r);
            for c in MODE_CENTERS {
                assert!((p[0] - c[0]).hypot(p[1] - c[1]) > 1.0);
            }
        }
        let h = gen_flipped_half_moon(200, 0.05, 5).unwrap();
        for r in 0..h.test_anomaly.shape()[0] {
            let p = h.test_anomaly.row(r);
            assert!(manifold_distance([p[0], p[1]]) > 0.3);
        }
    }

    #[test]
    fn texture_without_noise_is_the_grating() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (clean, img) = texture_normal(16, 0.0, &mut rng);
        assert_eq!(clean, img);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        for (_, img) in (0..50).map(|_| texture_anomaly(16, 0.05, &mut rng)) {
            assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(gen_flipped_half_moon(9, 0.1, 1).is_err());
        assert!(gen_imbalanced_modes(100, 0.5, 1).is_err());
        assert!(gen_texture_anomaly(100, 7, 1).is_err());
        assert!(gen_texture_anomaly(100, 33, 1).is_err());
    }

    #[test]
    fn io_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pts = gen_imbalanced_modes(50, 0.8, 7).unwrap();
        write_dataset(&dir.path().join("p"), &pts).unwrap();
        assert_eq!(read_dataset(&dir.path().join("p")).unwrap(), pts);
        let img = gen_texture_anomaly(20, 8, 8).unwrap();
        write_dataset(&dir.path().join("i"), &img).unwrap();
        assert_eq!(read_dataset(&dir.path().join("i")).unwrap(), img);
        let bytes = fs::read(dir.path().join("i/train.cdat")).unwrap();
        assert_eq!(bytes.len(), 21 + 16 * 64 * 8);
        assert!(decode_cdat(&bytes[..bytes.len() - 1]).is_err());
    }
}
