//! Segmentation, region-wide, and bidirectional consistency losses.
//!
//! Every loss returns its value together with the gradient with respect to
//! the probabilities it consumes, so the network's reverse pass can be driven
//! directly from these functions.

use serde::{Deserialize, Serialize};

use crate::augment::MixMask;
use crate::error::{Error, Result};
use crate::network::{PredictionGrads, Predictions};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegLossConfig {
    pub dice_weight: f64,
    pub ce_weight: f64,
    pub dice_smooth: f64,
    pub prob_clamp: f64,
}

impl Default for SegLossConfig {
    fn default() -> Self {
        SegLossConfig {
            dice_weight: 0.5,
            ce_weight: 0.5,
            dice_smooth: 1e-5,
            prob_clamp: 1e-7,
        }
    }
}

/// Cells over which a masked loss is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Full,
    /// Cells where M = 1.
    Inside(&'a MixMask),
    /// Cells where M = 0.
    Outside(&'a MixMask),
}

impl Region<'_> {
    #[inline]
    fn active(&self, i: usize) -> bool {
        match self {
            Region::Full => true,
            Region::Inside(m) => m.is_one(i),
            Region::Outside(m) => !m.is_one(i),
        }
    }

    fn check(&self, r: &Raster) -> Result<()> {
        match self {
            Region::Full => Ok(()),
            Region::Inside(m) | Region::Outside(m) => {
                if m.height() != r.height() || m.width() != r.width() {
                    Err(Error::domain("loss region does not match prediction shape"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegLoss {
    pub value: f64,
    /// Set when the region held no cells; the value is then 0.
    pub degenerate: bool,
}

/// Weighted Dice + cross-entropy over the active region, averaged over channels.
pub fn seg_loss(pred: &Raster, target: &Raster, region: Region<'_>, cfg: &SegLossConfig) -> Result<SegLoss> {
    seg_loss_grad(pred, target, region, cfg).map(|(l, _)| l)
}

pub fn seg_loss_grad(
    pred: &Raster,
    target: &Raster,
    region: Region<'_>,
    cfg: &SegLossConfig,
) -> Result<(SegLoss, Raster)> {
    pred.ensure_same_shape(target, "seg_loss")?;
    region.check(pred)?;
    let (c, h, w) = pred.shape();
    let plane = h * w;
    let mut grad = Raster::zeros(c, h, w);
    let active = (0..plane).filter(|&i| region.active(i)).count();
    if active == 0 {
        return Ok((
            SegLoss {
                value: 0.0,
                degenerate: true,
            },
            grad,
        ));
    }
    let n = active as f64;
    let (lo, hi) = (cfg.prob_clamp, 1.0 - cfg.prob_clamp);
    let s = cfg.dice_smooth;
    let mut total = 0.0;
    for ch in 0..c {
        let p = pred.channel(ch);
        let t = target.channel(ch);
        let (mut inter, mut psum, mut tsum, mut ce) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..plane {
            if !region.active(i) {
                continue;
            }
            inter += p[i] * t[i];
            psum += p[i];
            tsum += t[i];
            let pc = p[i].clamp(lo, hi);
            ce -= t[i] * pc.ln() + (1.0 - t[i]) * (1.0 - pc).ln();
        }
        let num = 2.0 * inter + s;
        let den = psum + tsum + s;
        let dice = 1.0 - num / den;
        ce /= n;
        total += cfg.dice_weight * dice + cfg.ce_weight * ce;

        let g = grad.channel_mut(ch);
        let scale = 1.0 / c as f64;
        for i in 0..plane {
            if !region.active(i) {
                continue;
            }
            let d_dice = -(2.0 * t[i] * den - num) / (den * den);
            let d_ce = if p[i] > lo && p[i] < hi {
                (-t[i] / p[i] + (1.0 - t[i]) / (1.0 - p[i])) / n
            } else {
                0.0
            };
            g[i] = scale * (cfg.dice_weight * d_dice + cfg.ce_weight * d_ce);
        }
    }
    Ok((
        SegLoss {
            value: total / c as f64,
            degenerate: false,
        },
        grad,
    ))
}

/// The two consistency terms of one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BclTerms {
    /// MSE(q_mix, q_fg).
    pub direct: f64,
    /// MSE(1 − q_bg, q_fg).
    pub inverse: f64,
}

impl BclTerms {
    pub fn value(&self) -> f64 {
        self.direct + self.inverse
    }
}

pub fn bcl_loss(q_fg: &Raster, q_bg: &Raster, q_mix: &Raster) -> Result<f64> {
    Ok(bcl_loss_grad(q_fg, Some(q_bg), Some(q_mix))?.0.value())
}

/// Consistency terms with gradients `(d_fg, d_bg, d_mix)`; a missing branch
/// drops its term.
#[allow(clippy::type_complexity)]
pub fn bcl_loss_grad(
    q_fg: &Raster,
    q_bg: Option<&Raster>,
    q_mix: Option<&Raster>,
) -> Result<(BclTerms, Raster, Option<Raster>, Option<Raster>)> {
    let n = q_fg.data().len() as f64;
    let mut d_fg = Raster::zeros(q_fg.channels(), q_fg.height(), q_fg.width());
    let mut terms = BclTerms {
        direct: 0.0,
        inverse: 0.0,
    };
    let d_mix = match q_mix {
        Some(m) => {
            m.ensure_same_shape(q_fg, "bcl_loss")?;
            let mut d = d_fg.clone();
            for i in 0..q_fg.data().len() {
                let r = m.data()[i] - q_fg.data()[i];
                terms.direct += r * r;
                d.data_mut()[i] = 2.0 * r / n;
                d_fg.data_mut()[i] -= 2.0 * r / n;
            }
            terms.direct /= n;
            Some(d)
        }
        None => None,
    };
    let d_bg = match q_bg {
        Some(b) => {
            b.ensure_same_shape(q_fg, "bcl_loss")?;
            let mut d = d_fg.clone();
            for i in 0..q_fg.data().len() {
                let r = 1.0 - b.data()[i] - q_fg.data()[i];
                terms.inverse += r * r;
                d.data_mut()[i] = -2.0 * r / n;
                d_fg.data_mut()[i] -= 2.0 * r / n;
            }
            terms.inverse /= n;
            Some(d)
        }
        None => None,
    };
    Ok((terms, d_fg, d_bg, d_mix))
}

/// Gaussian warm-up `0.1·exp(−5(1 − t/t_max)²)`.
pub fn lambda_schedule(t: u64, t_max: u64) -> Result<f64> {
    if t_max == 0 || t > t_max {
        return Err(Error::domain(format!("lambda_schedule: t={t} outside [0, {t_max}]")));
    }
    let r = 1.0 - t as f64 / t_max as f64;
    Ok(0.1 * (-5.0 * r * r).exp())
}

fn zero_like(r: &Raster) -> Raster {
    Raster::zeros(r.channels(), r.height(), r.width())
}

fn add_scaled(acc: &mut Raster, g: &Raster, k: f64) {
    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += k * b;
    }
}

fn empty_grads(p: &Predictions) -> PredictionGrads {
    PredictionGrads {
        d_fg: zero_like(&p.q_fg),
        d_bg: p.q_bg.as_ref().map(zero_like),
        d_mix: p.q_mix.as_ref().map(zero_like),
    }
}

/// Gradients for the `a` and `b` inputs of a cut-mixed pair.
#[derive(Debug, Clone)]
pub struct PairGrads {
    pub a: PredictionGrads,
    pub b: PredictionGrads,
}

impl PairGrads {
    fn zeros(a: &Predictions, b: &Predictions) -> Self {
        PairGrads {
            a: empty_grads(a),
            b: empty_grads(b),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Branch {
    Fg,
    Bg,
    Mix,
}

fn branch_of(p: &Predictions, br: Branch) -> Option<&Raster> {
    match br {
        Branch::Fg => Some(&p.q_fg),
        Branch::Bg => p.q_bg.as_ref(),
        Branch::Mix => p.q_mix.as_ref(),
    }
}

fn grad_of(g: &mut PredictionGrads, br: Branch) -> &mut Raster {
    match br {
        Branch::Fg => &mut g.d_fg,
        Branch::Bg => g.d_bg.as_mut().expect("branch present"),
        Branch::Mix => g.d_mix.as_mut().expect("branch present"),
    }
}

/// `seg(a, ya) over first_region(a) + seg(b, yb) over the complement`, with
/// gradients accumulated into `grads` scaled by `weight`.
#[allow(clippy::too_many_arguments)]
fn masked_pair_term(
    a: &Predictions,
    b: &Predictions,
    branch: Branch,
    ya: &Raster,
    yb: &Raster,
    mask: &MixMask,
    a_inside: bool,
    cfg: &SegLossConfig,
    weight: f64,
    grads: &mut PairGrads,
) -> Result<f64> {
    let (Some(qa), Some(qb)) = (branch_of(a, branch), branch_of(b, branch)) else {
        return Ok(0.0);
    };
    let (ra, rb) = if a_inside {
        (Region::Inside(mask), Region::Outside(mask))
    } else {
        (Region::Outside(mask), Region::Inside(mask))
    };
    let (la, ga) = seg_loss_grad(qa, ya, ra, cfg)?;
    let (lb, gb) = seg_loss_grad(qb, yb, rb, cfg)?;
    add_scaled(grad_of(&mut grads.a, branch), &ga, weight);
    add_scaled(grad_of(&mut grads.b, branch), &gb, weight);
    Ok(la.value + lb.value)
}

/// Teacher pre-training losses for one cut-mixed labeled pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TeacherLosses {
    pub l_fg: f64,
    pub l_bg: f64,
    pub l_m: f64,
}

impl TeacherLosses {
    pub fn total(&self) -> f64 {
        self.l_fg + self.l_bg + self.l_m
    }
}

/// Supervision for a cut-mixed pair: foreground and background targets for each input.
#[derive(Debug, Clone)]
pub struct PairTargets {
    pub fg_a: Raster,
    pub fg_b: Raster,
    pub bg_a: Raster,
    pub bg_b: Raster,
}

/// Foreground, background, and mixed losses; absent branches contribute 0.
/// Gradients are those of `weight · (l_fg + l_bg + l_m)`.
pub fn teacher_losses(
    out_a: &Predictions,
    out_b: &Predictions,
    y: &PairTargets,
    mask: &MixMask,
    cfg: &SegLossConfig,
    weight: f64,
) -> Result<(TeacherLosses, PairGrads)> {
    let mut grads = PairGrads::zeros(out_a, out_b);
    let l_fg = masked_pair_term(out_a, out_b, Branch::Fg, &y.fg_a, &y.fg_b, mask, true, cfg, weight, &mut grads)?;
    let l_bg = masked_pair_term(out_a, out_b, Branch::Bg, &y.bg_a, &y.bg_b, mask, true, cfg, weight, &mut grads)?;
    let l_m = masked_pair_term(out_a, out_b, Branch::Mix, &y.fg_a, &y.fg_b, mask, true, cfg, weight, &mut grads)?;
    Ok((TeacherLosses { l_fg, l_bg, l_m }, grads))
}

/// Labeled and unlabeled parts of the region-wide loss for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegionWide {
    pub l_fg_l: f64,
    pub l_bg_l: f64,
    pub l_fg_u: f64,
    pub l_bg_u: f64,
    pub l_rw: f64,
}

/// Region-wide loss. Labeled cells are M in `a` and 1−M in `b`; unlabeled
/// cells are the complements. Gradients are those of `weight · l_rw`.
pub fn region_wide_loss(
    student_a: &Predictions,
    student_b: &Predictions,
    yhat: &PairTargets,
    mask: &MixMask,
    alpha: f64,
    cfg: &SegLossConfig,
    weight: f64,
) -> Result<(RegionWide, PairGrads)> {
    if alpha < 0.0 {
        return Err(Error::domain("alpha must be non-negative"));
    }
    let (a, b) = (student_a, student_b);
    let mut g = PairGrads::zeros(a, b);
    let l_fg_l = masked_pair_term(a, b, Branch::Fg, &yhat.fg_a, &yhat.fg_b, mask, true, cfg, weight, &mut g)?;
    let l_bg_l = masked_pair_term(a, b, Branch::Bg, &yhat.bg_a, &yhat.bg_b, mask, true, cfg, weight, &mut g)?;
    let wu = weight * alpha;
    let l_fg_u = masked_pair_term(a, b, Branch::Fg, &yhat.fg_a, &yhat.fg_b, mask, false, cfg, wu, &mut g)?;
    let l_bg_u = masked_pair_term(a, b, Branch::Bg, &yhat.bg_a, &yhat.bg_b, mask, false, cfg, wu, &mut g)?;
    let l_rw = l_fg_l + l_bg_l + alpha * (l_fg_u + l_bg_u);
    Ok((
        RegionWide {
            l_fg_l,
            l_bg_l,
            l_fg_u,
            l_bg_u,
            l_rw,
        },
        g,
    ))
}

/// Consistency loss of both pair inputs, gradients scaled by `weight`.
pub fn pair_bcl(a: &Predictions, b: &Predictions, weight: f64) -> Result<(BclTerms, BclTerms, PairGrads)> {
    let mut g = PairGrads::zeros(a, b);
    let one = |p: &Predictions, out: &mut PredictionGrads| -> Result<BclTerms> {
        let (terms, dfg, dbg, dmix) = bcl_loss_grad(&p.q_fg, p.q_bg.as_ref(), p.q_mix.as_ref())?;
        add_scaled(&mut out.d_fg, &dfg, weight);
        if let (Some(acc), Some(d)) = (out.d_bg.as_mut(), dbg) {
            add_scaled(acc, &d, weight);
        }
        if let (Some(acc), Some(d)) = (out.d_mix.as_mut(), dmix) {
            add_scaled(acc, &d, weight);
        }
        Ok(terms)
    };
    let ta = one(a, &mut g.a)?;
    let tb = one(b, &mut g.b)?;
    Ok((ta, tb, g))
}

/// Per-step student loss record.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_fg_l: f64,
    pub l_bg_l: f64,
    pub l_fg_u: f64,
    pub l_bg_u: f64,
    pub l_rw: f64,
    pub l_bcl_a: f64,
    pub l_bcl_b: f64,
    pub l_bcl: f64,
    pub l_total: f64,
    pub lambda_t: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    pub const CSV_COLUMNS: [&'static str; 11] = [
        "l_fg_l", "l_bg_l", "l_fg_u", "l_bg_u", "l_rw", "l_bcl_a", "l_bcl_b", "l_bcl", "l_total", "lambda_t",
        "alpha",
    ];

    /// Fills the derived fields from the primary components.
    #[allow(clippy::too_many_arguments)]
    pub fn compose(
        l_fg_l: f64,
        l_bg_l: f64,
        l_fg_u: f64,
        l_bg_u: f64,
        l_bcl_a: f64,
        l_bcl_b: f64,
        lambda_t: f64,
        alpha: f64,
    ) -> Self {
        let l_rw = l_fg_l + l_bg_l + alpha * (l_fg_u + l_bg_u);
        let l_bcl = l_bcl_a + l_bcl_b;
        LossBreakdown {
            l_fg_l,
            l_bg_l,
            l_fg_u,
            l_bg_u,
            l_rw,
            l_bcl_a,
            l_bcl_b,
            l_bcl,
            l_total: l_rw + lambda_t * l_bcl,
            lambda_t,
            alpha,
        }
    }

    pub fn values(&self) -> [f64; 11] {
        [
            self.l_fg_l,
            self.l_bg_l,
            self.l_fg_u,
            self.l_bg_u,
            self.l_rw,
            self.l_bcl_a,
            self.l_bcl_b,
            self.l_bcl,
            self.l_total,
            self.lambda_t,
            self.alpha,
        ]
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 11 {
            return Err(Error::domain("loss row needs 11 values"));
        }
        Ok(LossBreakdown {
            l_fg_l: v[0],
            l_bg_l: v[1],
            l_fg_u: v[2],
            l_bg_u: v[3],
            l_rw: v[4],
            l_bcl_a: v[5],
            l_bcl_b: v[6],
            l_bcl: v[7],
            l_total: v[8],
            lambda_t: v[9],
            alpha: v[10],
        })
    }

    /// True when the three decomposition identities hold bit-exactly.
    pub fn identities_hold(&self) -> bool {
        self.l_rw == self.l_fg_l + self.l_bg_l + self.alpha * (self.l_fg_u + self.l_bg_u)
            && self.l_bcl == self.l_bcl_a + self.l_bcl_b
            && self.l_total == self.l_rw + self.lambda_t * self.l_bcl
            && self.values()[..9].iter().all(|&v| v >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{make_mask, ZeroBlock};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn r(c: usize, h: usize, w: usize, d: &[f64]) -> Raster {
        Raster::from_vec(c, h, w, d.to_vec()).unwrap()
    }

    fn rand_prob(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Raster {
        Raster::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(0.02..0.98)).collect()).unwrap()
    }

    fn rand_bin(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Raster {
        Raster::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(0..2) as f64).collect()).unwrap()
    }

    /// Plain per-cell re-derivation of the masked Dice + CE value.
    fn oracle_seg(p: &[f64], t: &[f64], active: &[bool]) -> f64 {
        let idx: Vec<usize> = (0..p.len()).filter(|&i| active[i]).collect();
        let inter: f64 = idx.iter().map(|&i| p[i] * t[i]).sum();
        let ps: f64 = idx.iter().map(|&i| p[i]).sum();
        let ts: f64 = idx.iter().map(|&i| t[i]).sum();
        let dice = 1.0 - (2.0 * inter + 1e-5) / (ps + ts + 1e-5);
        let ce: f64 = idx
            .iter()
            .map(|&i| -(t[i] * p[i].ln() + (1.0 - t[i]) * (1.0 - p[i]).ln()))
            .sum::<f64>()
            / idx.len() as f64;
        0.5 * dice + 0.5 * ce
    }

    #[test]
    fn two_by_two_hand_value() {
        let pred = r(1, 2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let target = r(1, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let l = seg_loss(&pred, &target, Region::Full, &SegLossConfig::default()).unwrap();
        // dice = 1 - (3.6 + s)/(4 + s); ce = -ln 0.9
        let s = 1e-5;
        let expected = 0.5 * (1.0 - (3.6 + s) / (4.0 + s)) + 0.5 * -(0.9f64.ln());
        assert!((l.value - expected).abs() < 1e-15);
        assert!((l.value - 0.1026802).abs() < 1e-6);
    }

    #[test]
    fn perfect_and_inverted_predictions() {
        let cfg = SegLossConfig::default();
        let t = r(1, 2, 3, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let perfect = seg_loss(&t, &t, Region::Full, &cfg).unwrap();
        assert!(perfect.value < 1e-3);
        let inv = t.map(|v| 1.0 - v);
        let worst = seg_loss(&inv, &t, Region::Full, &cfg).unwrap();
        assert!(worst.value > 0.5 * 0.999 + 0.5 * 10.0);
    }

    #[test]
    fn empty_region_is_degenerate() {
        let m = MixMask::ones(2, 2);
        let t = r(1, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let l = seg_loss(&t, &t, Region::Outside(&m), &SegLossConfig::default()).unwrap();
        assert!(l.degenerate);
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn shape_mismatch_is_domain_error() {
        let cfg = SegLossConfig::default();
        assert!(seg_loss(&Raster::zeros(1, 2, 2), &Raster::zeros(1, 2, 3), Region::Full, &cfg).is_err());
        assert!(bcl_loss(&Raster::zeros(1, 2, 2), &Raster::zeros(1, 2, 3), &Raster::zeros(1, 2, 2)).is_err());
    }

    #[test]
    fn masked_value_matches_per_cell_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = SegLossConfig::default();
        for _ in 0..30 {
            let p = rand_prob(&mut rng, 1, 6, 7);
            let t = rand_bin(&mut rng, 1, 6, 7);
            let m = make_mask((6, 7), 0.5, &mut rng).unwrap();
            let inside: Vec<bool> = (0..42).map(|i| m.is_one(i)).collect();
            let outside: Vec<bool> = inside.iter().map(|&b| !b).collect();
            let li = seg_loss(&p, &t, Region::Inside(&m), &cfg).unwrap().value;
            let lo = seg_loss(&p, &t, Region::Outside(&m), &cfg).unwrap().value;
            assert!((li - oracle_seg(p.data(), t.data(), &inside)).abs() < 1e-12);
            assert!((lo - oracle_seg(p.data(), t.data(), &outside)).abs() < 1e-12);
        }
    }

    #[test]
    fn seg_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SegLossConfig::default();
        let p = rand_prob(&mut rng, 2, 4, 4);
        let t = rand_bin(&mut rng, 2, 4, 4);
        let m = make_mask((4, 4), 0.5, &mut rng).unwrap();
        let (_, g) = seg_loss_grad(&p, &t, Region::Inside(&m), &cfg).unwrap();
        let h = 1e-6;
        for i in 0..p.data().len() {
            let mut pp = p.clone();
            pp.data_mut()[i] += h;
            let mut pm = p.clone();
            pm.data_mut()[i] -= h;
            let fd = (seg_loss(&pp, &t, Region::Inside(&m), &cfg).unwrap().value
                - seg_loss(&pm, &t, Region::Inside(&m), &cfg).unwrap().value)
                / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-7, "cell {i}: {fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn seg_loss_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = SegLossConfig::default();
        let p = rand_prob(&mut rng, 1, 1, 30);
        let t = rand_bin(&mut rng, 1, 1, 30);
        let mut perm: Vec<usize> = (0..30).collect();
        for i in (1..30).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pp = r(1, 1, 30, &perm.iter().map(|&i| p.data()[i]).collect::<Vec<_>>());
        let tp = r(1, 1, 30, &perm.iter().map(|&i| t.data()[i]).collect::<Vec<_>>());
        let a = seg_loss(&p, &t, Region::Full, &cfg).unwrap().value;
        let b = seg_loss(&pp, &tp, Region::Full, &cfg).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bcl_examples() {
        let c = |v| Raster::filled(1, 3, 3, v);
        assert_eq!(bcl_loss(&c(0.5), &c(0.5), &c(0.5)).unwrap(), 0.0);
        let v = bcl_loss(&c(0.8), &c(0.8), &c(0.8)).unwrap();
        assert!((v - 0.36).abs() < 1e-12);
        let fg = r(1, 1, 3, &[0.25, 0.75, 0.5]);
        assert_eq!(bcl_loss(&fg, &fg.map(|v| 1.0 - v), &fg).unwrap(), 0.0);
    }

    #[test]
    fn bcl_zero_only_when_consistent() {
        let fg = r(1, 1, 3, &[0.1, 0.7, 0.4]);
        let mut mix = fg.clone();
        mix.data_mut()[1] = 0.70001;
        assert!(bcl_loss(&fg, &fg.map(|v| 1.0 - v), &mix).unwrap() > 0.0);
        let mut bg = fg.map(|v| 1.0 - v);
        bg.data_mut()[2] += 1e-3;
        assert!(bcl_loss(&fg, &bg, &fg).unwrap() > 0.0);
    }

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_schedule(100, 100).unwrap(), 0.1);
        assert!((lambda_schedule(0, 100).unwrap() - 0.1 * (-5.0f64).exp()).abs() < 1e-18);
        assert!((lambda_schedule(50, 100).unwrap() - 0.028650479686019).abs() < 1e-12);
        assert!(lambda_schedule(101, 100).is_err());
        assert!(lambda_schedule(0, 0).is_err());
        let mut prev = 0.0;
        for t in 0..=100 {
            let l = lambda_schedule(t, 100).unwrap();
            assert!(l >= prev);
            prev = l;
        }
    }

    fn preds(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, full: bool) -> Predictions {
        Predictions {
            q_fg: rand_prob(rng, c, h, w),
            q_bg: full.then(|| rand_prob(rng, c, h, w)),
            q_mix: full.then(|| rand_prob(rng, c, h, w)),
        }
    }

    fn targets(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> PairTargets {
        PairTargets {
            fg_a: rand_bin(rng, c, h, w),
            fg_b: rand_bin(rng, c, h, w),
            bg_a: rand_bin(rng, c, h, w),
            bg_b: rand_bin(rng, c, h, w),
        }
    }

    #[test]
    fn alpha_zero_drops_unlabeled_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (preds(&mut rng, 1, 6, 6, true), preds(&mut rng, 1, 6, 6, true));
        let y = targets(&mut rng, 1, 6, 6);
        let m = make_mask((6, 6), 2.0 / 3.0, &mut rng).unwrap();
        let (rw, _) = region_wide_loss(&a, &b, &y, &m, 0.0, &SegLossConfig::default(), 1.0).unwrap();
        assert_eq!(rw.l_rw, rw.l_fg_l + rw.l_bg_l);
        assert!(region_wide_loss(&a, &b, &y, &m, -1.0, &SegLossConfig::default(), 1.0).is_err());
    }

    #[test]
    fn labeled_and_unlabeled_regions_partition_the_grid() {
        // With a one-cell-wide block, flipping each cell of the a-prediction
        // must change exactly one of l_fg_l and l_fg_u.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = SegLossConfig::default();
        let a = preds(&mut rng, 1, 4, 4, false);
        let b = preds(&mut rng, 1, 4, 4, false);
        let y = targets(&mut rng, 1, 4, 4);
        let m = MixMask::with_block(4, 4, ZeroBlock { top: 1, left: 1, height: 2, width: 2 }, 0.5).unwrap();
        let (base, _) = region_wide_loss(&a, &b, &y, &m, 0.5, &cfg, 1.0).unwrap();
        for i in 0..16 {
            let mut a2 = a.clone();
            a2.q_fg.data_mut()[i] = 1.0 - a2.q_fg.data()[i];
            let (rw, _) = region_wide_loss(&a2, &b, &y, &m, 0.5, &cfg, 1.0).unwrap();
            let changed = [rw.l_fg_l != base.l_fg_l, rw.l_fg_u != base.l_fg_u];
            assert_eq!(changed.iter().filter(|&&c| c).count(), 1, "cell {i}");
            assert_eq!(changed[0], m.is_one(i));
        }
    }

    #[test]
    fn teacher_losses_ones_mask_reduces_to_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SegLossConfig::default();
        let a = preds(&mut rng, 1, 4, 4, true);
        let b = preds(&mut rng, 1, 4, 4, true);
        let y = targets(&mut rng, 1, 4, 4);
        let m = MixMask::ones(4, 4);
        let (t, _) = teacher_losses(&a, &b, &y, &m, &cfg, 1.0).unwrap();
        assert_eq!(t.l_fg, seg_loss(&a.q_fg, &y.fg_a, Region::Full, &cfg).unwrap().value);
        assert_eq!(t.l_bg, seg_loss(a.q_bg.as_ref().unwrap(), &y.bg_a, Region::Full, &cfg).unwrap().value);
        assert_eq!(t.l_m, seg_loss(a.q_mix.as_ref().unwrap(), &y.fg_a, Region::Full, &cfg).unwrap().value);
    }

    #[test]
    fn teacher_losses_perfect_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = targets(&mut rng, 1, 4, 4);
        let mk = |fg: &Raster, bg: &Raster| Predictions {
            q_fg: fg.clone(),
            q_bg: Some(bg.clone()),
            q_mix: Some(fg.clone()),
        };
        let m = make_mask((4, 4), 0.5, &mut rng).unwrap();
        let (t, _) = teacher_losses(&mk(&y.fg_a, &y.bg_a), &mk(&y.fg_b, &y.bg_b), &y, &m, &SegLossConfig::default(), 1.0)
            .unwrap();
        assert!(t.l_fg < 1e-3 && t.l_bg < 1e-3 && t.l_m < 1e-3);
    }

    #[test]
    fn breakdown_identities() {
        let b = LossBreakdown::compose(0.3, 0.2, 0.11, 0.07, 0.013, 0.021, 0.05, 0.5);
        assert!(b.identities_hold());
        assert_eq!(LossBreakdown::from_values(&b.values()).unwrap(), b);
    }
}
