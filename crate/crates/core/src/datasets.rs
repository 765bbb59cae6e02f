//! Synthetic 2-D segmentation data and its on-disk layout.
//!
//! A dataset directory holds `manifest.json` and one `samples/<id>.cvbm`
//! file per sample. Sample files are `"CVBM1"`, four little-endian `u32`
//! (C, H, W, K), `C·H·W` little-endian `f32` image values, then `H·W` label
//! bytes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelVolume, Raster};

pub const SAMPLE_MAGIC: &[u8; 5] = b"CVBM1";
const HEADER_LEN: usize = 5 + 16;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_DIR: &str = "samples";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Raster,
    pub label: LabelVolume,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Raster, label: LabelVolume) -> Result<Self> {
        if image.height() != label.height() || image.width() != label.width() {
            return Err(Error::domain(format!(
                "image is {}x{} but label is {}x{}",
                image.height(),
                image.width(),
                label.height(),
                label.width()
            )));
        }
        Ok(Sample {
            id: id.into(),
            image,
            label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub class_count: usize,
    pub labeled_ids: Vec<String>,
    pub unlabeled_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub generator_seed: u64,
    pub shape: [usize; 3],
}

impl DatasetManifest {
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.labeled_ids.iter().chain(&self.unlabeled_ids).chain(&self.test_ids)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.all_ids().any(|i| i == id)
    }

    pub fn splits_disjoint(&self) -> bool {
        let mut all: Vec<&String> = self.all_ids().collect();
        let n = all.len();
        all.sort();
        all.dedup();
        all.len() == n
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::corrupt(&path, e.to_string()))?;
        if !m.splits_disjoint() {
            return Err(Error::corrupt(&path, "splits overlap"));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// One foreground class.
    Single,
    /// Three non-overlapping foreground classes.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub mode: TargetMode,
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    /// Standard deviation of the additive texture noise.
    pub noise_sigma: f64,
    /// Gaussian blur applied to object edges, in cells.
    pub blur_sigma: f64,
    /// Range of the foreground/background intensity gap.
    pub contrast_min: f64,
    pub contrast_max: f64,
    /// Peak amplitude of the smooth intensity bias field.
    pub bias_amplitude: f64,
    /// Upper bound on bright background blobs per image.
    pub max_distractors: usize,
    /// Upper bound on untextured decoy objects, labeled background.
    pub max_decoys: usize,
    /// Amplitude of the grating inside target objects, relative to the contrast.
    pub texture_amplitude: f64,
    /// Largest amplitude of smooth background clutter, relative to the contrast.
    pub clutter_max: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            height: 32,
            width: 32,
            channels: 1,
            mode: TargetMode::Single,
            labeled: 4,
            unlabeled: 36,
            test: 10,
            noise_sigma: 0.07,
            blur_sigma: 0.6,
            contrast_min: 0.25,
            contrast_max: 0.45,
            bias_amplitude: 0.15,
            max_distractors: 2,
            max_decoys: 3,
            texture_amplitude: 0.6,
            clutter_max: 0.0,
        }
    }
}

impl GeneratorConfig {
    pub fn class_count(&self) -> usize {
        match self.mode {
            TargetMode::Single => 2,
            TargetMode::Multi => 4,
        }
    }

    pub fn total(&self) -> usize {
        self.labeled + self.unlabeled + self.test
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 || self.channels == 0 {
            return Err(Error::config(format!(
                "shape {}x{}x{} too small (need C>=1, H,W>=8)",
                self.channels, self.height, self.width
            )));
        }
        if self.labeled == 0 || self.unlabeled == 0 || self.test == 0 {
            return Err(Error::config("every split needs at least one sample"));
        }
        if self.total() > 1_000_000 {
            return Err(Error::config("too many samples"));
        }
        let finite = [
            self.noise_sigma,
            self.blur_sigma,
            self.contrast_min,
            self.contrast_max,
            self.bias_amplitude,
            self.clutter_max,
            self.texture_amplitude,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("generator intensities must be finite and non-negative"));
        }
        if self.contrast_min > self.contrast_max || self.contrast_max > 0.8 {
            return Err(Error::config("contrast range must satisfy min <= max <= 0.8"));
        }
        Ok(())
    }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:04}")
}

fn sample_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(SAMPLES_DIR).join(format!("{id}.cvbm"))
}

/// Rasterized object: a predicate over continuous coordinates.
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Star { cy: f64, cx: f64, radii: Vec<f64>, phase: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Ellipse { cy, cx, ry, rx, angle } => {
                let (s, c) = angle.sin_cos();
                let dy = y - cy;
                let dx = x - cx;
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Star { cy, cx, radii, phase } => {
                let dy = y - cy;
                let dx = x - cx;
                let r = (dy * dy + dx * dx).sqrt();
                let n = radii.len();
                let t = ((dy.atan2(dx) - phase).rem_euclid(2.0 * PI)) / (2.0 * PI) * n as f64;
                let k = t.floor() as usize % n;
                let f = t - t.floor();
                r <= radii[k] * (1.0 - f) + radii[(k + 1) % n] * f
            }
        }
    }

    fn random<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, r_min: f64, r_max: f64) -> Shape {
        let margin = r_max * 0.6 + 1.0;
        let cy = rng.random_range(margin..(h as f64 - margin).max(margin + 1e-3));
        let cx = rng.random_range(margin..(w as f64 - margin).max(margin + 1e-3));
        if rng.random::<bool>() {
            Shape::Ellipse {
                cy,
                cx,
                ry: rng.random_range(r_min..r_max),
                rx: rng.random_range(r_min..r_max),
                angle: rng.random_range(0.0..PI),
            }
        } else {
            let n = rng.random_range(5..9);
            Shape::Star {
                cy,
                cx,
                radii: (0..n).map(|_| rng.random_range(r_min..r_max)).collect(),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        }
    }

    fn cells(&self, h: usize, w: usize) -> Vec<bool> {
        let mut out = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = self.contains(y as f64 + 0.5, x as f64 + 0.5);
            }
        }
        out
    }
}

fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * plane[y * w + clamp(x as isize + i as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[clamp(y as isize + i as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

/// Deterministic sample `index` of the dataset drawn with `seed`.
pub fn synthesize_sample(config: &GeneratorConfig, seed: u64, index: usize) -> Result<Sample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let (h, w) = (config.height, config.width);
    let scale = h.min(w) as f64 / 32.0;
    let mut label = LabelVolume::zeros(h, w);
    let object_count = match config.mode {
        TargetMode::Single => 1,
        TargetMode::Multi => 3,
    };
    let (r_min, r_max) = match config.mode {
        TargetMode::Single => (5.0 * scale, 10.0 * scale),
        TargetMode::Multi => (3.5 * scale, 6.5 * scale),
    };
    let mut class = 1u8;
    let mut attempts = 0;
    while (class as usize) <= object_count {
        attempts += 1;
        let shape = Shape::random(&mut rng, h, w, r_min, r_max);
        let cells = shape.cells(h, w);
        let area = cells.iter().filter(|&&c| c).count();
        // keep a one-cell gap between objects
        let clash = (0..h * w).any(|i| {
            cells[i] && {
                let (y, x) = (i / w, i % w);
                (y.saturating_sub(1)..(y + 2).min(h))
                    .any(|yy| (x.saturating_sub(1)..(x + 2).min(w)).any(|xx| label.get(yy, xx) != 0))
            }
        });
        if area < 4 || (clash && attempts < 200) {
            continue;
        }
        for (i, &c) in cells.iter().enumerate() {
            if c && label.data()[i] == 0 {
                label.data_mut()[i] = class;
            }
        }
        class += 1;
    }

    let decoys = rng.random_range(0..=config.max_decoys);
    let mut decoy_cells = vec![false; h * w];
    for _ in 0..decoys {
        for _ in 0..200 {
            let cells = Shape::random(&mut rng, h, w, r_min, r_max).cells(h, w);
            let clash = (0..h * w).any(|i| {
                cells[i] && {
                    let (y, x) = (i / w, i % w);
                    (y.saturating_sub(1)..(y + 2).min(h)).any(|yy| {
                        (x.saturating_sub(1)..(x + 2).min(w))
                            .any(|xx| label.get(yy, xx) != 0 || decoy_cells[yy * w + xx])
                    })
                }
            });
            if !clash {
                for (d, c) in decoy_cells.iter_mut().zip(cells) {
                    *d |= c;
                }
                break;
            }
        }
    }

    let background = rng.random_range(0.15..0.35);
    let contrast = rng.random_range(config.contrast_min..=config.contrast_max);
    let mut levels = vec![background; h * w];
    for (i, &l) in label.data().iter().enumerate() {
        if l > 0 {
            // multi-target classes get distinct, ordered brightness
            let step = if object_count > 1 { 0.6 + 0.2 * (l - 1) as f64 } else { 1.0 };
            levels[i] = background + contrast * step;
        }
    }
    if config.texture_amplitude > 0.0 {
        let amp = config.texture_amplitude * contrast;
        let period = rng.random_range(3.0..5.0) * scale;
        let theta = rng.random_range(0.0..PI);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (ky, kx) = (theta.sin() * 2.0 * PI / period, theta.cos() * 2.0 * PI / period);
        for (i, &l) in label.data().iter().enumerate() {
            if l > 0 {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                levels[i] += amp * (ky * y + kx * x + phase).sin();
            }
        }
    }
    for (l, &d) in levels.iter_mut().zip(&decoy_cells) {
        if d {
            *l = background + contrast;
        }
    }
    let distractors = rng.random_range(0..=config.max_distractors);
    for _ in 0..distractors {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let r = rng.random_range(1.2..2.2) * scale;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                if d2 <= r * r && label.data()[i] == 0 {
                    levels[i] = background + contrast;
                }
            }
        }
    }

    if config.clutter_max > 0.0 {
        // low-frequency texture whose strength and scale vary per image
        let amp = rng.random_range(0.0..=config.clutter_max) * contrast;
        let scale_c = rng.random_range(1.0..3.0) * scale;
        let white = Normal::new(0.0, 1.0).expect("unit normal");
        let field: Vec<f64> = (0..h * w).map(|_| white.sample(&mut rng)).collect();
        let smooth = gaussian_blur(&field, h, w, scale_c);
        let sd = (smooth.iter().map(|v| v * v).sum::<f64>() / (h * w) as f64).sqrt().max(1e-12);
        for (l, v) in levels.iter_mut().zip(&smooth) {
            *l += amp * v / sd;
        }
    }
    let blurred = gaussian_blur(&levels, h, w, config.blur_sigma);
    let gy = rng.random_range(-1.0..1.0) * config.bias_amplitude;
    let gx = rng.random_range(-1.0..1.0) * config.bias_amplitude;
    let noise = Normal::new(0.0, config.noise_sigma.max(1e-12)).expect("finite sigma");
    let mut data = Vec::with_capacity(config.channels * h * w);
    for c in 0..config.channels {
        let gain = 1.0 - 0.1 * c as f64;
        for y in 0..h {
            for x in 0..w {
                let bias = gy * (y as f64 / h as f64 - 0.5) + gx * (x as f64 / w as f64 - 0.5);
                let mut v = gain * blurred[y * w + x] + bias;
                if config.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                data.push(v.clamp(0.0, 1.0) as f32 as f64);
            }
        }
    }
    let image = Raster::from_vec(config.channels, h, w, data)?;
    Sample::new(sample_id(index), image, label)
}

/// Writes every sample and the manifest under `dir`.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let samples_dir = dir.join(SAMPLES_DIR);
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    (0..config.total())
        .into_par_iter()
        .try_for_each(|i| write_sample(dir, &synthesize_sample(config, seed, i)?, config.class_count()))?;
    let ids: Vec<String> = (0..config.total()).map(sample_id).collect();
    let (labeled, rest) = ids.split_at(config.labeled);
    let (unlabeled, test) = rest.split_at(config.unlabeled);
    let manifest = DatasetManifest {
        class_count: config.class_count(),
        labeled_ids: labeled.to_vec(),
        unlabeled_ids: unlabeled.to_vec(),
        test_ids: test.to_vec(),
        generator_seed: seed,
        shape: [config.channels, config.height, config.width],
    };
    manifest.save(dir)?;
    Ok(manifest)
}

pub fn encode_sample(sample: &Sample, class_count: usize) -> Vec<u8> {
    let (c, h, w) = sample.image.shape();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * c * h * w + h * w);
    bytes.extend_from_slice(SAMPLE_MAGIC);
    for v in [c, h, w, class_count.saturating_sub(1)] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in sample.image.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes.extend_from_slice(sample.label.data());
    bytes
}

pub fn write_sample(dir: &Path, sample: &Sample, class_count: usize) -> Result<()> {
    let path = sample_path(dir, &sample.id);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, encode_sample(sample, class_count)).map_err(|e| Error::io(&path, e))
}

/// Parses a sample file; `expected` is `(shape, K)` from the manifest.
pub fn decode_sample(id: &str, bytes: &[u8], path: &Path, expected: Option<([usize; 3], usize)>) -> Result<Sample> {
    if bytes.len() < HEADER_LEN || &bytes[..5] != SAMPLE_MAGIC {
        return Err(Error::corrupt(path, "bad magic or short header"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (c, h, w, k) = (field(0), field(1), field(2), field(3));
    if let Some((shape, kk)) = expected {
        if shape != [c, h, w] || kk != k {
            return Err(Error::corrupt(
                path,
                format!("header ({c},{h},{w},K={k}) disagrees with manifest ({shape:?},K={kk})"),
            ));
        }
    }
    let n = c.checked_mul(h).and_then(|v| v.checked_mul(w));
    let want = n.and_then(|n| n.checked_mul(4)).and_then(|v| v.checked_add(HEADER_LEN + h * w));
    let Some(want) = want else {
        return Err(Error::corrupt(path, "header dimensions overflow"));
    };
    if bytes.len() != want {
        return Err(Error::corrupt(path, format!("expected {want} bytes, found {}", bytes.len())));
    }
    let n = c * h * w;
    let body = &bytes[HEADER_LEN..];
    let image: Vec<f64> = body[..4 * n]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let labels = body[4 * n..].to_vec();
    if labels.iter().any(|&l| l as usize > k) {
        return Err(Error::corrupt(path, format!("label value above K={k}")));
    }
    Sample::new(id, Raster::from_vec(c, h, w, image)?, LabelVolume::new(h, w, labels)?)
}

/// Loads `id` from a dataset directory, checking it against the manifest.
pub fn load_sample(dir: &Path, manifest: &DatasetManifest, id: &str) -> Result<Sample> {
    if !manifest.contains(id) {
        return Err(Error::NotFound(format!("sample id {id} is not in the manifest")));
    }
    let path = sample_path(dir, id);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_sample(id, &bytes, &path, Some((manifest.shape, manifest.class_count - 1)))
}

pub fn load_split(dir: &Path, manifest: &DatasetManifest, ids: &[String]) -> Result<Vec<Sample>> {
    ids.par_iter().map(|id| load_sample(dir, manifest, id)).collect()
}

/// `(misclassified, total)` over cells with a 4-neighbour of another class,
/// thresholding the first channel midway between interior class means.
pub fn boundary_ambiguity(sample: &Sample) -> (usize, usize) {
    let (h, w) = (sample.label.height(), sample.label.width());
    let lab = |y: usize, x: usize| sample.label.get(y, x) > 0;
    let img = sample.image.channel(0);
    let neighbours = |y: usize, x: usize| {
        let mut v = Vec::with_capacity(8);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if (dy != 0 || dx != 0) && yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    v.push((yy as usize, xx as usize, dy == 0 || dx == 0));
                }
            }
        }
        v
    };
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if neighbours(y, x).iter().all(|&(yy, xx, _)| lab(yy, xx) == lab(y, x)) {
                if lab(y, x) {
                    fg += img[y * w + x];
                    nf += 1;
                } else {
                    bg += img[y * w + x];
                    nb += 1;
                }
            }
        }
    }
    if nf == 0 || nb == 0 {
        return (0, 0);
    }
    let threshold = 0.5 * (fg / nf as f64 + bg / nb as f64);
    let (mut wrong, mut total) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            if neighbours(y, x).iter().any(|&(yy, xx, four)| four && lab(yy, xx) != lab(y, x)) {
                total += 1;
                if (img[y * w + x] >= threshold) != lab(y, x) {
                    wrong += 1;
                }
            }
        }
    }
    (wrong, total)
}
