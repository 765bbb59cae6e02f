use cvbm::datasets::{synthesize_sample, GeneratorConfig, Sample};
use cvbm::network::{ModelState, Role};
use cvbm::trainer::{
    evaluate_samples, make_pseudo_labels, pretrain_on, train_student_on, train_supervised, RunConfig, TrainData,
};
use cvbm::Raster;

fn small_cfg() -> RunConfig {
    let mut c = RunConfig::default();
    c.network.encoder_widths = vec![4, 6, 8];
    c.trainer.labeled_batch = 2;
    c.trainer.unlabeled_batch = 2;
    c
}

fn plain_generator() -> GeneratorConfig {
    GeneratorConfig {
        height: 16,
        width: 16,
        max_decoys: 0,
        texture_amplitude: 0.0,
        ..GeneratorConfig::default()
    }
}

fn data(g: &GeneratorConfig, labeled: usize, unlabeled: usize, test: usize) -> TrainData {
    let s: Vec<Sample> = (0..labeled + unlabeled + test).map(|i| synthesize_sample(g, 9, i).unwrap()).collect();
    TrainData::from_samples(2, &s[..labeled], &s[labeled..labeled + unlabeled], s[labeled + unlabeled..].to_vec())
        .unwrap()
}

fn set_tensor(model: &mut ModelState, name: &str, value: f64) {
    let spec = model.tensors().iter().find(|t| t.name == name).unwrap().clone();
    let len: usize = spec.shape.iter().product();
    model.params_mut()[spec.offset..spec.offset + len].fill(value);
}

#[test]
fn pretraining_reduces_the_combined_loss() {
    let d = data(&plain_generator(), 4, 2, 2);
    let (_, log) = pretrain_on(&small_cfg(), &d, 150).unwrap();
    let mean = |r: &[cvbm::trainer::PretrainRecord]| r.iter().map(|x| x.losses.total()).sum::<f64>() / r.len() as f64;
    let (head, tail) = (mean(&log[..15]), mean(&log[log.len() - 15..]));
    assert!(tail < head, "{tail} !< {head}");
}

#[test]
fn constant_teacher_pseudo_labels() {
    let d = data(&plain_generator(), 2, 2, 1);
    let mut t = ModelState::init(d.arch(&small_cfg()), Role::Teacher, 1).unwrap();
    set_tensor(&mut t, "fg.head.weight", 0.0);
    set_tensor(&mut t, "fg.head.bias", 9f64.ln());
    set_tensor(&mut t, "bg.head.weight", 0.0);
    set_tensor(&mut t, "bg.head.bias", -(9f64.ln()));
    let p = make_pseudo_labels(&t, &d.unlabeled[0].x).unwrap();
    assert!(p.p_fg.data().iter().all(|&v| v == 1.0));
    assert!(p.p_bg.data().iter().all(|&v| v == 0.0));
}

#[test]
fn branches_can_disagree() {
    let d = data(&plain_generator(), 2, 2, 1);
    // independent random heads rarely agree everywhere; search a few seeds
    let found = (0..20u64).any(|seed| {
        let t = ModelState::init(d.arch(&small_cfg()), Role::Teacher, seed).unwrap();
        let p = make_pseudo_labels(&t, &d.unlabeled[0].x).unwrap();
        p.p_fg.data().iter().zip(p.p_bg.data()).any(|(f, b)| f + b != 1.0)
    });
    assert!(found);
}

#[test]
fn teacher_follows_ema_recurrence() {
    let cfg = {
        let mut c = small_cfg();
        c.trainer.train_steps = 10;
        c
    };
    let d = data(&plain_generator(), 3, 3, 1);
    let (teacher0, _) = pretrain_on(&cfg, &d, 5).unwrap();
    let mut students: Vec<Vec<f64>> = Vec::new();
    let mut teachers: Vec<Vec<f64>> = Vec::new();
    train_student_on(&cfg, &d, teacher0.clone(), |v| {
        students.push(v.student.params().to_vec());
        teachers.push(v.teacher.params().to_vec());
    })
    .unwrap();
    assert_eq!(students.len(), 10);
    let m = cfg.trainer.ema_momentum;
    let mut replay = teacher0.params().to_vec();
    for (s, t) in students.iter().zip(&teachers) {
        for (r, v) in replay.iter_mut().zip(s) {
            *r = m * *r + (1.0 - m) * v;
        }
        let worst = replay.iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-12, "replay deviates by {worst}");
    }
}

#[test]
fn fg_only_total_is_labeled_plus_weighted_unlabeled() {
    let mut cfg = small_cfg();
    cfg.trainer.use_bg_branch = false;
    cfg.trainer.use_mix_layer = false;
    cfg.trainer.use_bcl = false;
    cfg.trainer.train_steps = 6;
    let d = data(&plain_generator(), 3, 3, 1);
    let (teacher, _) = pretrain_on(&cfg, &d, 3).unwrap();
    let run = train_student_on(&cfg, &d, teacher, |_| {}).unwrap();
    for b in &run.log {
        assert_eq!(b.l_bg_l, 0.0);
        assert_eq!(b.l_bg_u, 0.0);
        assert_eq!(b.l_bcl, 0.0);
        assert_eq!(b.l_total, b.l_fg_l + b.alpha * b.l_fg_u);
    }
}

#[test]
fn memorized_training_labels_score_near_one() {
    let mut cfg = small_cfg();
    cfg.augment.flips_rotations = false;
    let d = data(&plain_generator(), 2, 1, 1);
    let model = train_supervised(&cfg, &d, 600).unwrap();
    let train: Vec<Sample> = (0..2).map(|i| synthesize_sample(&plain_generator(), 9, i).unwrap()).collect();
    let report = evaluate_samples(&cfg, &model, &train, 2).unwrap();
    assert!(report.mean.dsc > 0.95, "dsc {}", report.mean.dsc);
}

#[test]
fn report_means_aggregate_rows() {
    let d = data(&plain_generator(), 4, 1, 6);
    let (model, _) = pretrain_on(&small_cfg(), &d, 40).unwrap();
    let r = evaluate_samples(&small_cfg(), &model, &d.test, 2).unwrap();
    assert_eq!(r.rows.len(), 6);
    let n = r.rows.len() as f64;
    let dsc: f64 = r.rows.iter().map(|x| x.dsc).sum::<f64>() / n;
    let jac: f64 = r.rows.iter().map(|x| x.jaccard).sum::<f64>() / n;
    assert!((dsc - r.mean.dsc).abs() < 1e-12);
    assert!((jac - r.mean.jaccard).abs() < 1e-12);
    let defined: Vec<f64> = r.rows.iter().filter_map(|x| x.hd95).collect();
    if !defined.is_empty() {
        let hd = defined.iter().sum::<f64>() / defined.len() as f64;
        assert!((hd - r.mean.hd95).abs() < 1e-12);
    }
    assert_eq!(r.mean.excluded, r.rows.len() - defined.len());
}

#[test]
fn rasters_stay_binary_after_pseudo_labeling() {
    let d = data(&plain_generator(), 2, 2, 1);
    let t = ModelState::init(d.arch(&small_cfg()), Role::Teacher, 4).unwrap();
    let p = make_pseudo_labels(&t, &d.unlabeled[1].x).unwrap();
    let binary = |r: &Raster| r.data().iter().all(|&v| v == 0.0 || v == 1.0);
    assert!(binary(&p.p_fg) && binary(&p.p_bg));
}
