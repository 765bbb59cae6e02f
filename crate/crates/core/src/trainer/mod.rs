//! Teacher pre-training, student self-training, and evaluation.

pub mod config;
pub mod optim;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::RunConfig;
pub use optim::Sgd;

use crate::augment::{dihedral, make_mask, mix_pair, mix_supervision, random_dihedral, MixMask, Orientation};
use crate::datasets::{load_split, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::labels::{background_target, foreground_target, prediction_channels};
use crate::losses::{
    lambda_schedule, pair_bcl, region_wide_loss, seg_loss_grad, teacher_losses, LossBreakdown, PairGrads,
    PairTargets, Region, TeacherLosses,
};
use crate::metrics::{MetricReport, MetricRow};
use crate::network::{
    backward, ema_update, forward_cached, forward_fg_only, load_checkpoint, save_checkpoint, ArchSpec, Branches,
    ModelState, PredictionGrads, Predictions, Role,
};
use crate::raster::Raster;

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const TEACHER_FINAL_CKPT: &str = "teacher_final.ckpt";
pub const PRETRAIN_LOSSES_CSV: &str = "pretrain_losses.csv";
pub const LOSSES_CSV: &str = "losses.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CONFIG_ECHO: &str = "config.json";

/// Stream offsets keep the two phases' random draws independent.
const PRETRAIN_STREAM: u64 = 1;
const STUDENT_STREAM: u64 = 2;
const SUPERVISED_STREAM: u64 = 3;

/// A training sample after normalization, with both targets precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub x: Raster,
    pub y_fg: Raster,
    pub y_bg: Raster,
}

impl Prepared {
    pub fn new(sample: &Sample, class_count: usize) -> Result<Self> {
        Ok(Prepared {
            id: sample.id.clone(),
            x: sample.image.standardized(),
            y_fg: foreground_target(&sample.label, class_count)?,
            y_bg: background_target(&sample.label, class_count)?,
        })
    }

    fn transformed(&self, k: u8) -> Result<Prepared> {
        if k == 0 {
            return Ok(self.clone());
        }
        Ok(Prepared {
            id: self.id.clone(),
            x: dihedral(&self.x, k)?,
            y_fg: dihedral(&self.y_fg, k)?,
            y_bg: dihedral(&self.y_bg, k)?,
        })
    }
}

/// Training and test splits held in memory.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub class_count: usize,
    pub input_channels: usize,
    pub labeled: Vec<Prepared>,
    pub unlabeled: Vec<Prepared>,
    pub test: Vec<Sample>,
}

impl TrainData {
    pub fn from_samples(class_count: usize, labeled: &[Sample], unlabeled: &[Sample], test: Vec<Sample>) -> Result<Self> {
        let input_channels = labeled
            .first()
            .or(unlabeled.first())
            .map(|s| s.image.channels())
            .ok_or_else(|| Error::config("dataset has no training samples"))?;
        let prep = |v: &[Sample]| v.iter().map(|s| Prepared::new(s, class_count)).collect::<Result<Vec<_>>>();
        Ok(TrainData {
            class_count,
            input_channels,
            labeled: prep(labeled)?,
            unlabeled: prep(unlabeled)?,
            test,
        })
    }

    /// Loads the configured dataset, applying `labeled_ratio` if set.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let dir = &cfg.data.path;
        let manifest = DatasetManifest::load(dir)?;
        let (labeled_ids, unlabeled_ids) = split_ids(&manifest, cfg.data.labeled_ratio);
        let labeled = load_split(dir, &manifest, &labeled_ids)?;
        let unlabeled = load_split(dir, &manifest, &unlabeled_ids)?;
        let test = load_split(dir, &manifest, &manifest.test_ids)?;
        Self::from_samples(manifest.class_count, &labeled, &unlabeled, test)
    }

    pub fn arch(&self, cfg: &RunConfig) -> ArchSpec {
        cfg.network.arch(self.input_channels, prediction_channels(self.class_count))
    }

    fn shape(&self) -> (usize, usize) {
        let x = &self.labeled.first().or(self.unlabeled.first()).expect("non-empty").x;
        (x.height(), x.width())
    }
}

/// Labeled and unlabeled ids, re-split from the pooled training ids when a ratio is given.
pub fn split_ids(manifest: &DatasetManifest, ratio: Option<f64>) -> (Vec<String>, Vec<String>) {
    match ratio {
        None => (manifest.labeled_ids.clone(), manifest.unlabeled_ids.clone()),
        Some(r) => {
            let pool: Vec<String> = manifest.labeled_ids.iter().chain(&manifest.unlabeled_ids).cloned().collect();
            let n = ((r * pool.len() as f64).round() as usize).clamp(1, pool.len().saturating_sub(1).max(1));
            (pool[..n].to_vec(), pool[n..].to_vec())
        }
    }
}

fn teacher_branches(cfg: &RunConfig) -> Branches {
    Branches {
        bg: cfg.trainer.use_bg_branch,
        mix: cfg.trainer.use_bg_branch && cfg.trainer.use_mix_layer,
    }
}

fn student_branches(cfg: &RunConfig) -> Branches {
    let t = &cfg.trainer;
    Branches {
        bg: t.use_bg_branch,
        // the student's mix head is only supervised through the consistency loss
        mix: t.use_bg_branch && t.use_mix_layer && t.use_bcl,
    }
}

fn draw_transform(rng: &mut ChaCha8Rng, cfg: &RunConfig, h: usize, w: usize) -> u8 {
    if cfg.augment.flips_rotations {
        random_dihedral(rng, h, w)
    } else {
        0
    }
}

/// Forward both mixed inputs, score them, and back-propagate.
fn pair_gradient<L>(
    model: &ModelState,
    xa: &Raster,
    xb: &Raster,
    branches: Branches,
    score: impl FnOnce(&Predictions, &Predictions) -> Result<(L, PairGrads)>,
) -> Result<(L, Vec<f64>)> {
    let (pa, ca) = forward_cached(model, xa, branches)?;
    let (pb, cb) = forward_cached(model, xb, branches)?;
    let (losses, grads) = score(&pa, &pb)?;
    let mut g = backward(model, &ca, &grads.a)?;
    for (acc, v) in g.iter_mut().zip(backward(model, &cb, &grads.b)?) {
        *acc += v;
    }
    Ok((losses, g))
}

fn sum_in_order(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Pre-training losses logged per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainRecord {
    pub step: u64,
    pub losses: TeacherLosses,
}

pub const PRETRAIN_CSV_HEADER: &str = "step,l_fg,l_bg,l_m,l_total";

pub fn pretrain_csv(log: &[PretrainRecord]) -> String {
    let mut s = String::from(PRETRAIN_CSV_HEADER);
    s.push('\n');
    for r in log {
        let l = &r.losses;
        s.push_str(&format!("{},{},{},{},{}\n", r.step, l.l_fg, l.l_bg, l.l_m, l.total()));
    }
    s
}

/// Trains a teacher on cut-mixed labeled pairs for `steps` steps.
///
/// Each batch entry pairs a random labeled sample with a different one.
pub fn pretrain_on(cfg: &RunConfig, data: &TrainData, steps: u64) -> Result<(ModelState, Vec<PretrainRecord>)> {
    cfg.validate()?;
    let n = data.labeled.len();
    if n < 2 {
        return Err(Error::config(format!("teacher pre-training needs at least 2 labeled samples, have {n}")));
    }
    let arch = data.arch(cfg);
    let mut model = ModelState::init(arch, Role::Teacher, cfg.seed)?;
    let t = &cfg.trainer;
    let mut opt = Sgd::new(model.param_count(), t.lr, t.momentum, t.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(PRETRAIN_STREAM);
    let (h, w) = data.shape();
    let branches = teacher_branches(cfg);
    let batch = t.labeled_batch;
    let weight = 1.0 / batch as f64;
    let mut log = Vec::with_capacity(steps as usize);
    for step in 1..=steps {
        let mut jobs = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = rng.random_range(0..n);
            let j = (i + 1 + rng.random_range(0..n - 1)) % n;
            let ka = draw_transform(&mut rng, cfg, h, w);
            let kb = draw_transform(&mut rng, cfg, h, w);
            let mask = make_mask((h, w), cfg.augment.beta, &mut rng)?;
            jobs.push((i, j, ka, kb, mask));
        }
        let results: Vec<(TeacherLosses, Vec<f64>)> = jobs
            .par_iter()
            .map(|(i, j, ka, kb, mask)| {
                let a = data.labeled[*i].transformed(*ka)?;
                let b = data.labeled[*j].transformed(*kb)?;
                let (xa, xb) = mix_pair(&a.x, &b.x, mask)?;
                let (fg_a, fg_b) = mix_pair(&a.y_fg, &b.y_fg, mask)?;
                let (bg_a, bg_b) = mix_pair(&a.y_bg, &b.y_bg, mask)?;
                let y = PairTargets { fg_a, fg_b, bg_a, bg_b };
                pair_gradient(&model, &xa, &xb, branches, |pa, pb| {
                    teacher_losses(pa, pb, &y, mask, &cfg.losses.seg, weight)
                })
            })
            .collect::<Result<_>>()?;
        let mut mean = TeacherLosses::default();
        let mut grads = Vec::with_capacity(batch);
        for (l, g) in results {
            mean.l_fg += l.l_fg * weight;
            mean.l_bg += l.l_bg * weight;
            mean.l_m += l.l_m * weight;
            grads.push(g);
        }
        let g = sum_in_order(grads, model.param_count());
        opt.step(model.params_mut(), &g)?;
        model.step = step;
        log.push(PretrainRecord { step, losses: mean });
    }
    Ok((model, log))
}

/// Plain supervised training of the foreground branch on whole labeled
/// images (flips and rotations only, no cut-mix).
pub fn train_supervised(cfg: &RunConfig, data: &TrainData, steps: u64) -> Result<ModelState> {
    cfg.validate()?;
    let n = data.labeled.len();
    if n == 0 {
        return Err(Error::config("supervised training needs at least 1 labeled sample"));
    }
    let mut model = ModelState::init(data.arch(cfg), Role::Teacher, cfg.seed)?;
    let t = &cfg.trainer;
    let mut opt = Sgd::new(model.param_count(), t.lr, t.momentum, t.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SUPERVISED_STREAM);
    let (h, w) = data.shape();
    let weight = 1.0 / t.labeled_batch as f64;
    for step in 1..=steps {
        let jobs: Vec<(usize, u8)> = (0..t.labeled_batch)
            .map(|_| (rng.random_range(0..n), draw_transform(&mut rng, cfg, h, w)))
            .collect();
        let grads: Vec<Vec<f64>> = jobs
            .par_iter()
            .map(|&(i, k)| {
                let s = data.labeled[i].transformed(k)?;
                let (p, cache) = forward_cached(&model, &s.x, Branches::FG_ONLY)?;
                let (_, d) = seg_loss_grad(&p.q_fg, &s.y_fg, Region::Full, &cfg.losses.seg)?;
                let dq = PredictionGrads { d_fg: d.map(|v| v * weight), d_bg: None, d_mix: None };
                backward(&model, &cache, &dq)
            })
            .collect::<Result<_>>()?;
        let g = sum_in_order(grads, model.param_count());
        opt.step(model.params_mut(), &g)?;
        model.step = step;
    }
    Ok(model)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Pre-trains the teacher and writes `teacher.ckpt` and `pretrain_losses.csv`.
///
/// The returned state equals what loading the checkpoint yields.
pub fn pretrain_teacher(cfg: &RunConfig) -> Result<ModelState> {
    let data = TrainData::load(cfg)?;
    let (mut teacher, log) = pretrain_on(cfg, &data, cfg.trainer.pretrain_steps)?;
    teacher.quantize_f32();
    let out = &cfg.output_dir;
    save_checkpoint(&teacher, &out.join(TEACHER_CKPT))?;
    write_file(&out.join(PRETRAIN_LOSSES_CSV), &pretrain_csv(&log))?;
    Ok(teacher)
}

/// Binarized teacher predictions used as supervision on unlabeled data.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelPair {
    pub p_fg: Raster,
    pub p_bg: Raster,
    pub source_step: u64,
}

/// `1` where `q >= threshold`, else `0`; ties go to the positive side.
pub fn binarize(q: &Raster, threshold: f64) -> Raster {
    q.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

fn pseudo_labels_with(teacher: &ModelState, x_u: &Raster, with_bg: bool, threshold: f64) -> Result<PseudoLabelPair> {
    let branches = Branches { bg: with_bg, mix: false };
    let (p, _) = forward_cached(teacher, x_u, branches)?;
    let p_fg = binarize(&p.q_fg, threshold);
    let p_bg = match p.q_bg {
        Some(q) => binarize(&q, threshold),
        None => p_fg.map(|v| 1.0 - v),
    };
    Ok(PseudoLabelPair {
        p_fg,
        p_bg,
        source_step: teacher.step,
    })
}

/// Pseudo-labels from the teacher's foreground and background heads at threshold 0.5.
pub fn make_pseudo_labels(teacher: &ModelState, x_u: &Raster) -> Result<PseudoLabelPair> {
    pseudo_labels_with(teacher, x_u, true, 0.5)
}

/// State handed to a per-step observer during self-training.
pub struct StepView<'a> {
    pub step: u64,
    pub student: &'a ModelState,
    pub teacher: &'a ModelState,
    pub breakdown: &'a LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    pub student: ModelState,
    pub teacher: ModelState,
    pub log: Vec<LossBreakdown>,
}

pub fn losses_csv(log: &[LossBreakdown]) -> String {
    let mut s = format!("step,{}\n", LossBreakdown::CSV_COLUMNS.join(","));
    for (i, b) in log.iter().enumerate() {
        s.push_str(&(i + 1).to_string());
        for v in b.values() {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

/// Parses `losses.csv` back into breakdown rows.
pub fn parse_losses_csv(text: &str) -> Result<Vec<LossBreakdown>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != format!("step,{}", LossBreakdown::CSV_COLUMNS.join(",")) {
        return Err(Error::domain("unexpected losses.csv header"));
    }
    lines
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .skip(1)
                .map(|f| f.parse::<f64>().map_err(|e| Error::domain(format!("bad value {f:?}: {e}"))))
                .collect::<Result<_>>()?;
            LossBreakdown::from_values(&v)
        })
        .collect()
}

struct StudentJob {
    labeled: usize,
    unlabeled: usize,
    kl: u8,
    ku: u8,
    mask: MixMask,
}

/// Self-trains a student initialized from `teacher`, updating the teacher by EMA.
pub fn train_student_on(
    cfg: &RunConfig,
    data: &TrainData,
    teacher: ModelState,
    mut observer: impl FnMut(&StepView<'_>),
) -> Result<StudentRun> {
    cfg.validate()?;
    if data.labeled.is_empty() || data.unlabeled.is_empty() {
        return Err(Error::config("self-training needs labeled and unlabeled samples"));
    }
    let arch = data.arch(cfg);
    if *teacher.arch() != arch {
        return Err(Error::config("teacher architecture does not match the configured network"));
    }
    let t = &cfg.trainer;
    let mut teacher = teacher;
    teacher.role = Role::Teacher;
    let mut student = ModelState::from_params(arch, Role::Student, 0, teacher.params().to_vec())?;
    let mut opt = Sgd::new(student.param_count(), t.lr, t.momentum, t.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STUDENT_STREAM);
    let (h, w) = data.shape();
    let branches = student_branches(cfg);
    let pairs = t.labeled_batch.max(t.unlabeled_batch);
    let weight = 1.0 / pairs as f64;
    let alpha = cfg.losses.alpha;
    let t_max = t.train_steps;
    let mut log = Vec::with_capacity(t_max as usize);
    for step in 1..=t_max {
        let lambda_t = lambda_schedule(step, t_max)?;
        let li: Vec<usize> = (0..t.labeled_batch).map(|_| rng.random_range(0..data.labeled.len())).collect();
        let ui: Vec<usize> = (0..t.unlabeled_batch).map(|_| rng.random_range(0..data.unlabeled.len())).collect();
        let mut jobs = Vec::with_capacity(pairs);
        for k in 0..pairs {
            let kl = draw_transform(&mut rng, cfg, h, w);
            let ku = draw_transform(&mut rng, cfg, h, w);
            let mask = make_mask((h, w), cfg.augment.beta, &mut rng)?;
            jobs.push(StudentJob {
                labeled: li[k % li.len()],
                unlabeled: ui[k % ui.len()],
                kl,
                ku,
                mask,
            });
        }
        let results: Vec<([f64; 6], Vec<f64>)> = jobs
            .par_iter()
            .map(|job| {
                let l = data.labeled[job.labeled].transformed(job.kl)?;
                let xu = dihedral(&data.unlabeled[job.unlabeled].x, job.ku)?;
                let pl = pseudo_labels_with(&teacher, &xu, t.use_bg_branch, t.pseudo_threshold)?;
                let m = &job.mask;
                let (xa, xb) = mix_pair(&l.x, &xu, m)?;
                let yhat = PairTargets {
                    fg_a: mix_supervision(&l.y_fg, &pl.p_fg, m, Orientation::Fg)?,
                    fg_b: mix_supervision(&l.y_fg, &pl.p_fg, m, Orientation::Bg)?,
                    bg_a: mix_supervision(&l.y_bg, &pl.p_bg, m, Orientation::Fg)?,
                    bg_b: mix_supervision(&l.y_bg, &pl.p_bg, m, Orientation::Bg)?,
                };
                pair_gradient(&student, &xa, &xb, branches, |pa, pb| {
                    let (rw, mut g) = region_wide_loss(pa, pb, &yhat, m, alpha, &cfg.losses.seg, weight)?;
                    let mut bcl = [0.0, 0.0];
                    if t.use_bcl {
                        let (ta, tb, gb) = pair_bcl(pa, pb, weight * lambda_t)?;
                        bcl = [ta.value(), tb.value()];
                        g = add_pair_grads(g, gb);
                    }
                    Ok(([rw.l_fg_l, rw.l_bg_l, rw.l_fg_u, rw.l_bg_u, bcl[0], bcl[1]], g))
                })
            })
            .collect::<Result<_>>()?;
        let mut mean = [0.0; 6];
        let mut grads = Vec::with_capacity(pairs);
        for (v, g) in results {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x * weight;
            }
            grads.push(g);
        }
        let b = LossBreakdown::compose(mean[0], mean[1], mean[2], mean[3], mean[4], mean[5], lambda_t, alpha);
        let g = sum_in_order(grads, student.param_count());
        opt.step(student.params_mut(), &g)?;
        student.step = step;
        ema_update(&mut teacher, &student, t.ema_momentum)?;
        teacher.step = teacher.step.max(step);
        observer(&StepView {
            step,
            student: &student,
            teacher: &teacher,
            breakdown: &b,
        });
        log.push(b);
    }
    Ok(StudentRun { student, teacher, log })
}

fn add_raster(a: &mut Raster, b: &Raster) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

fn add_opt(a: &mut Option<Raster>, b: Option<Raster>) {
    if let (Some(x), Some(y)) = (a.as_mut(), b.as_ref()) {
        add_raster(x, y);
    }
}

fn add_pair_grads(mut g: PairGrads, h: PairGrads) -> PairGrads {
    add_raster(&mut g.a.d_fg, &h.a.d_fg);
    add_raster(&mut g.b.d_fg, &h.b.d_fg);
    add_opt(&mut g.a.d_bg, h.a.d_bg);
    add_opt(&mut g.b.d_bg, h.b.d_bg);
    add_opt(&mut g.a.d_mix, h.a.d_mix);
    add_opt(&mut g.b.d_mix, h.b.d_mix);
    g
}

/// Self-trains from a teacher state and writes `losses.csv`, `student.ckpt`,
/// and `teacher_final.ckpt` under the output directory.
pub fn train_student(cfg: &RunConfig, teacher: ModelState) -> Result<(ModelState, ModelState)> {
    let data = TrainData::load(cfg)?;
    let mut run = train_student_on(cfg, &data, teacher, |_| {})?;
    run.student.quantize_f32();
    run.teacher.quantize_f32();
    let out = &cfg.output_dir;
    write_file(&out.join(LOSSES_CSV), &losses_csv(&run.log))?;
    save_checkpoint(&run.student, &out.join(STUDENT_CKPT))?;
    save_checkpoint(&run.teacher, &out.join(TEACHER_FINAL_CKPT))?;
    Ok((run.student, run.teacher))
}

/// Loads `teacher.ckpt` from the output directory and self-trains from it.
pub fn train_student_from_checkpoint(cfg: &RunConfig) -> Result<(ModelState, ModelState)> {
    let path = cfg.output_dir.join(TEACHER_CKPT);
    if !path.is_file() {
        return Err(Error::NotFound(format!("teacher checkpoint {} (run pretrain first)", path.display())));
    }
    let teacher = load_checkpoint(&path)?;
    train_student(cfg, teacher)
}

/// Per-class binary predictions: threshold for one channel, argmax otherwise.
pub fn predict_classes(q: &Raster, class_count: usize) -> Vec<(u8, Raster)> {
    if q.channels() == 1 {
        return vec![(1, binarize(q, 0.5))];
    }
    let plane = q.plane_len();
    let mut winners = vec![0usize; plane];
    for (i, win) in winners.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for c in 0..q.channels() {
            let v = q.data()[c * plane + i];
            if v > best {
                best = v;
                *win = c;
            }
        }
    }
    (1..class_count)
        .map(|k| {
            let data = winners.iter().map(|&c| if c == k { 1.0 } else { 0.0 }).collect();
            (k as u8, Raster::from_vec(1, q.height(), q.width(), data).expect("plane shape"))
        })
        .collect()
}

/// Metrics of the foreground branch on `samples`.
pub fn evaluate_samples(cfg: &RunConfig, model: &ModelState, samples: &[Sample], class_count: usize) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::domain("evaluation split is empty"));
    }
    let per_sample: Vec<Vec<MetricRow>> = samples
        .par_iter()
        .map(|s| {
            let q = forward_fg_only(model, &s.image.standardized())?;
            predict_classes(&q, class_count)
                .into_iter()
                .map(|(k, pred)| MetricRow::compute(&s.id, k, &pred, &s.label.class_mask(k), cfg.metrics.surface))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport::from_rows(per_sample.into_iter().flatten().collect()))
}

/// Loads the listed ids from the configured dataset and evaluates on them.
pub fn evaluate(cfg: &RunConfig, model: &ModelState, ids: &[String]) -> Result<MetricReport> {
    if ids.is_empty() {
        return Err(Error::domain("evaluation split is empty"));
    }
    let manifest = DatasetManifest::load(&cfg.data.path)?;
    let samples = load_split(&cfg.data.path, &manifest, ids)?;
    evaluate_samples(cfg, model, &samples, manifest.class_count)
}

pub fn write_metrics(cfg: &RunConfig, report: &MetricReport) -> Result<()> {
    write_file(&cfg.output_dir.join(METRICS_CSV), &report.to_csv())
}

pub fn write_config_echo(cfg: &RunConfig) -> Result<()> {
    write_file(&cfg.output_dir.join(CONFIG_ECHO), &cfg.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synthesize_sample, GeneratorConfig};

    fn tiny_cfg() -> RunConfig {
        let mut c = RunConfig::default();
        c.network.encoder_widths = vec![2, 3, 4];
        c.trainer.labeled_batch = 2;
        c.trainer.unlabeled_batch = 2;
        c
    }

    fn tiny_data(n_l: usize) -> TrainData {
        let g = GeneratorConfig { height: 16, width: 16, ..GeneratorConfig::default() };
        let s: Vec<Sample> = (0..n_l + 5).map(|i| synthesize_sample(&g, 3, i).unwrap()).collect();
        TrainData::from_samples(2, &s[..n_l], &s[n_l..n_l + 3], s[n_l + 3..].to_vec()).unwrap()
    }

    #[test]
    fn binarize_ties_to_foreground() {
        let q = Raster::from_vec(1, 1, 3, vec![0.5, 0.4999999, 0.9]).unwrap();
        assert_eq!(binarize(&q, 0.5).data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn pretrain_needs_two_labeled() {
        let r = pretrain_on(&tiny_cfg(), &tiny_data(1), 2);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn fg_only_pretrain_logs_zero_bg_terms() {
        let mut c = tiny_cfg();
        c.trainer.use_bg_branch = false;
        c.trainer.use_mix_layer = false;
        let (_, log) = pretrain_on(&c, &tiny_data(3), 3).unwrap();
        assert!(log.iter().all(|r| r.losses.l_bg == 0.0 && r.losses.l_m == 0.0 && r.losses.l_fg > 0.0));
    }

    #[test]
    fn student_log_matches_schedule_and_identities() {
        let mut c = tiny_cfg();
        c.trainer.train_steps = 4;
        let data = tiny_data(2);
        let (teacher, _) = pretrain_on(&c, &data, 2).unwrap();
        let run = train_student_on(&c, &data, teacher, |_| {}).unwrap();
        for (i, b) in run.log.iter().enumerate() {
            assert_eq!(b.lambda_t, lambda_schedule(i as u64 + 1, 4).unwrap());
            assert!(b.identities_hold());
        }
        let parsed = parse_losses_csv(&losses_csv(&run.log)).unwrap();
        assert_eq!(parsed, run.log);
    }

    #[test]
    fn predict_classes_argmax() {
        let q = Raster::from_vec(3, 1, 2, vec![0.9, 0.1, 0.05, 0.2, 0.05, 0.7]).unwrap();
        let p = predict_classes(&q, 3);
        assert_eq!(p[0].1.data(), &[0.0, 0.0]);
        assert_eq!(p[1].1.data(), &[0.0, 1.0]);
    }

    #[test]
    fn split_ratio() {
        let m = DatasetManifest {
            class_count: 2,
            labeled_ids: vec!["a".into()],
            unlabeled_ids: (0..9).map(|i| format!("u{i}")).collect(),
            test_ids: vec![],
            generator_seed: 0,
            shape: [1, 8, 8],
        };
        let (l, u) = split_ids(&m, Some(0.2));
        assert_eq!((l.len(), u.len()), (2, 8));
        assert_eq!(split_ids(&m, None).0, vec!["a".to_string()]);
    }
}
