//! Numerical checks of the entropy bounds for dual-foreground versus
//! foreground/background decoder pairs, and of the entropy-descent condition.
//!
//! Logarithms are natural throughout. The slack function `f(ε) = √ε·ln√ε`
//! is strictly negative and decreasing on `(0, e⁻²)`, which is the regime the
//! gap check accepts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest slack accepted by the scenario type.
pub const MAX_SLACK: f64 = 0.25;

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {v} must lie strictly inside (0,1)")))
    }
}

fn check_slack(name: &str, eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= MAX_SLACK {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {eps} must lie in (0, {MAX_SLACK}]")))
    }
}

/// Binary entropy in nats.
pub fn entropy(mu: f64) -> Result<f64> {
    check_fraction("mu", mu)?;
    Ok(-(mu * mu.ln() + (1.0 - mu) * (1.0 - mu).ln()))
}

/// `dH/dμ = ln((1−μ)/μ)`.
pub fn entropy_derivative(mu: f64) -> Result<f64> {
    check_fraction("mu", mu)?;
    Ok(((1.0 - mu) / mu).ln())
}

/// `√ε·ln√ε`.
pub fn slack_term(eps: f64) -> f64 {
    let r = eps.sqrt();
    r * r.ln()
}

/// Lower bound on the dual-foreground architecture's entropy.
pub fn bound_a(mu: f64, eps1: f64) -> Result<f64> {
    check_slack("eps1", eps1)?;
    Ok(2.0 * entropy(mu)? - slack_term(eps1))
}

/// Upper bound on the foreground/background architecture's entropy.
pub fn bound_b(mu: f64, eps2: f64) -> Result<f64> {
    check_slack("eps2", eps2)?;
    Ok(2.0 * entropy(mu)? + slack_term(eps2))
}

/// `√ε₂ln√ε₂ + √ε₁ln√ε₁`; negative for admissible slacks.
pub fn theorem1_gap(eps1: f64, eps2: f64) -> Result<f64> {
    let limit = (-2.0f64).exp();
    for (name, e) in [("eps1", eps1), ("eps2", eps2)] {
        if !(e > 0.0 && e < limit) {
            return Err(Error::domain(format!("{name} = {e} must lie in (0, e^-2)")));
        }
    }
    Ok(slack_term(eps2) + slack_term(eps1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyScenario {
    /// Foreground prediction μ.
    pub mu: f64,
    /// Background prediction q.
    pub q: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// ∂L_task/∂μ.
    pub grad_task: f64,
    /// Step size of the gradient update (distinct from the loss weight alpha).
    pub lr: f64,
}

impl EntropyScenario {
    pub fn validate(&self) -> Result<()> {
        check_fraction("mu", self.mu)?;
        check_fraction("q", self.q)?;
        check_slack("eps1", self.eps1)?;
        check_slack("eps2", self.eps2)?;
        if !(self.lr > 0.0) || !self.grad_task.is_finite() {
            return Err(Error::domain("lr must be positive and grad_task finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    /// sign(∂L_task/∂μ) = sign(μ + q − 1).
    pub sign_condition: bool,
    /// |q − 0.5| > |μ − 0.5|.
    pub deviation_condition: bool,
    /// q lies on the other side of 0.5 from μ, as inverse consistency implies.
    pub complementary_side: bool,
    pub conditions_hold: bool,
    pub grad_total: f64,
    pub mu_new: f64,
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub crossed_half: bool,
    pub entropy_decreased: bool,
    /// Descent is asserted only when the conditions hold and 0.5 is not crossed.
    pub descent_asserted: bool,
}

impl VerdictRecord {
    pub fn violates(&self) -> bool {
        self.descent_asserted && !self.entropy_decreased
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// One gradient step `μ ← μ − lr·(grad_task + 2(μ + q − 1))` and its entropy verdict.
pub fn check_theorem2(s: &EntropyScenario) -> Result<VerdictRecord> {
    s.validate()?;
    let consistency = s.mu + s.q - 1.0;
    let sign_condition = sign(s.grad_task) == sign(consistency) && sign(consistency) != 0;
    let deviation_condition = (s.q - 0.5).abs() > (s.mu - 0.5).abs();
    let complementary_side = (s.mu - 0.5) * (s.q - 0.5) <= 0.0;
    let conditions_hold = sign_condition && deviation_condition && complementary_side;
    let grad_total = s.grad_task + 2.0 * consistency;
    let mu_new = s.mu - s.lr * grad_total;
    if !(mu_new > 0.0 && mu_new < 1.0) {
        return Err(Error::StepTooLarge { mu_new });
    }
    let entropy_before = entropy(s.mu)?;
    let entropy_after = entropy(mu_new)?;
    let crossed_half = (s.mu - 0.5) * (mu_new - 0.5) < 0.0;
    let entropy_decreased = entropy_after < entropy_before;
    Ok(VerdictRecord {
        sign_condition,
        deviation_condition,
        complementary_side,
        conditions_hold,
        grad_total,
        mu_new,
        entropy_before,
        entropy_after,
        crossed_half,
        entropy_decreased,
        descent_asserted: conditions_hold && !crossed_half,
    })
}

/// Sampling ranges for the Monte-Carlo sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub scenarios: usize,
    pub counterexample_draws: usize,
    pub seed: u64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub grad_min: f64,
    pub grad_max: f64,
    pub mu_margin: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            scenarios: 100_000,
            counterexample_draws: 10_000,
            seed: 2024,
            lr_min: 1e-4,
            lr_max: 1e-2,
            grad_min: 1e-2,
            grad_max: 2.0,
            mu_margin: 1e-3,
        }
    }
}

/// Draws a scenario for which all descent conditions hold by construction.
pub fn sample_conditioned<R: Rng + ?Sized>(rng: &mut R, cfg: &TheoryConfig) -> EntropyScenario {
    loop {
        let mu = rng.random_range(cfg.mu_margin..1.0 - cfg.mu_margin);
        let dev = (mu - 0.5).abs();
        // q on the opposite side of 0.5 and further from it than mu
        let q_dev = rng.random_range(dev..0.5 - cfg.mu_margin * 0.5);
        if q_dev <= dev {
            continue;
        }
        let q = if mu < 0.5 {
            0.5 + q_dev
        } else if mu > 0.5 {
            0.5 - q_dev
        } else if rng.random::<bool>() {
            0.5 + q_dev
        } else {
            0.5 - q_dev
        };
        let consistency = mu + q - 1.0;
        if consistency == 0.0 {
            continue;
        }
        let mag = rng.random_range(cfg.grad_min..cfg.grad_max);
        let s = EntropyScenario {
            mu,
            q,
            eps1: 1e-4,
            eps2: 1e-4,
            grad_task: mag * consistency.signum(),
            lr: rng.random_range(cfg.lr_min..=cfg.lr_max),
        };
        let mu_new = mu - s.lr * (s.grad_task + 2.0 * consistency);
        if mu_new > 0.0 && mu_new < 1.0 {
            return s;
        }
    }
}

/// Draws an unconstrained scenario.
pub fn sample_free<R: Rng + ?Sized>(rng: &mut R, cfg: &TheoryConfig) -> EntropyScenario {
    let mag = rng.random_range(cfg.grad_min..cfg.grad_max);
    EntropyScenario {
        mu: rng.random_range(cfg.mu_margin..1.0 - cfg.mu_margin),
        q: rng.random_range(cfg.mu_margin..1.0 - cfg.mu_margin),
        eps1: 1e-4,
        eps2: 1e-4,
        grad_task: if rng.random::<bool>() { mag } else { -mag },
        lr: rng.random_range(cfg.lr_min..=cfg.lr_max),
    }
}

/// One row of the bound grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub mu: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub bound_a: f64,
    pub bound_b: f64,
    pub gap: f64,
    /// |bound_b − (bound_a + gap)|.
    pub identity_residual: f64,
    /// Exact dual-foreground entropy at the worst admissible second decoder,
    /// minus `bound_a` (negative means the bound is not met exactly).
    pub exact_a_margin: f64,
    /// `bound_b` minus the exact foreground/background entropy at the worst
    /// admissible background decoder.
    pub exact_b_margin: f64,
}

pub const SLACK_GRID: [f64; 3] = [1e-6, 1e-4, 1e-2];

pub fn mu_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

fn exact_worst_a(mu: f64, eps1: f64) -> f64 {
    let r = eps1.sqrt();
    [mu + r, mu - r]
        .into_iter()
        .filter(|&v| v > 0.0 && v < 1.0)
        .map(|v| entropy(mu).unwrap() + entropy(v).unwrap())
        .fold(f64::INFINITY, f64::min)
}

fn exact_worst_b(mu: f64, eps2: f64) -> f64 {
    let r = eps2.sqrt();
    [1.0 - mu + r, 1.0 - mu - r]
        .into_iter()
        .filter(|&v| v > 0.0 && v < 1.0)
        .map(|v| entropy(mu).unwrap() + entropy(v).unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn bound_grid() -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for mu in mu_grid() {
        for &eps1 in &SLACK_GRID {
            for &eps2 in &SLACK_GRID {
                let a = bound_a(mu, eps1)?;
                let b = bound_b(mu, eps2)?;
                let gap = theorem1_gap(eps1, eps2)?;
                rows.push(BoundRow {
                    mu,
                    eps1,
                    eps2,
                    bound_a: a,
                    bound_b: b,
                    gap,
                    identity_residual: (b - (a + gap)).abs(),
                    exact_a_margin: exact_worst_a(mu, eps1) - a,
                    exact_b_margin: b - exact_worst_b(mu, eps2),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub grid_rows: usize,
    pub gap_negative_rows: usize,
    pub max_identity_residual: f64,
    pub worst_exact_a_margin: f64,
    pub worst_exact_b_margin: f64,
    pub conditioned_scenarios: usize,
    pub descent_asserted: usize,
    pub descent_confirmed: usize,
    pub descent_failures: usize,
    /// Smallest entropy decrease among asserted rows.
    pub min_descent_margin: f64,
    pub free_draws: usize,
    pub violating_draws: usize,
    pub counterexamples: usize,
}

#[derive(Debug, Clone)]
pub struct TheoryRun {
    pub grid: Vec<BoundRow>,
    pub scenarios: Vec<(EntropyScenario, VerdictRecord)>,
    pub summary: TheorySummary,
}

/// Bound grid, conditioned Monte-Carlo, and counterexample search.
pub fn verify(cfg: &TheoryConfig) -> Result<TheoryRun> {
    let grid = bound_grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scenarios = Vec::with_capacity(cfg.scenarios);
    for _ in 0..cfg.scenarios {
        let s = sample_conditioned(&mut rng, cfg);
        let v = check_theorem2(&s)?;
        scenarios.push((s, v));
    }
    let mut violating = 0;
    let mut counterexamples = 0;
    for _ in 0..cfg.counterexample_draws {
        let s = sample_free(&mut rng, cfg);
        let Ok(v) = check_theorem2(&s) else { continue };
        if !(v.sign_condition && v.deviation_condition) {
            violating += 1;
            if v.entropy_after > v.entropy_before {
                counterexamples += 1;
            }
        }
    }
    let asserted: Vec<&VerdictRecord> = scenarios.iter().map(|(_, v)| v).filter(|v| v.descent_asserted).collect();
    let summary = TheorySummary {
        grid_rows: grid.len(),
        gap_negative_rows: grid.iter().filter(|r| r.gap < 0.0).count(),
        max_identity_residual: grid.iter().map(|r| r.identity_residual).fold(0.0, f64::max),
        worst_exact_a_margin: grid.iter().map(|r| r.exact_a_margin).fold(f64::INFINITY, f64::min),
        worst_exact_b_margin: grid.iter().map(|r| r.exact_b_margin).fold(f64::INFINITY, f64::min),
        conditioned_scenarios: scenarios.len(),
        descent_asserted: asserted.len(),
        descent_confirmed: asserted.iter().filter(|v| v.entropy_decreased).count(),
        descent_failures: asserted.iter().filter(|v| v.violates()).count(),
        min_descent_margin: asserted
            .iter()
            .map(|v| v.entropy_before - v.entropy_after)
            .fold(f64::INFINITY, f64::min),
        free_draws: cfg.counterexample_draws,
        violating_draws: violating,
        counterexamples,
    };
    Ok(TheoryRun {
        grid,
        scenarios,
        summary,
    })
}

pub const THEORY_REPORT_HEADER: &str = "mu,q,eps1,eps2,grad_task,lr,sign_condition,deviation_condition,complementary_side,conditions_hold,grad_total,mu_new,entropy_before,entropy_after,crossed_half,entropy_decreased,descent_asserted";

pub const BOUND_GRID_HEADER: &str = "mu,eps1,eps2,bound_a,bound_b,gap,identity_residual,exact_a_margin,exact_b_margin";

impl TheoryRun {
    pub fn report_csv(&self) -> String {
        let mut s = String::with_capacity(200 * self.scenarios.len() + 200);
        s.push_str(THEORY_REPORT_HEADER);
        s.push('\n');
        for (sc, v) in &self.scenarios {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                sc.mu,
                sc.q,
                sc.eps1,
                sc.eps2,
                sc.grad_task,
                sc.lr,
                v.sign_condition,
                v.deviation_condition,
                v.complementary_side,
                v.conditions_hold,
                v.grad_total,
                v.mu_new,
                v.entropy_before,
                v.entropy_after,
                v.crossed_half,
                v.entropy_decreased,
                v.descent_asserted
            ));
        }
        s
    }

    pub fn grid_csv(&self) -> String {
        let mut s = String::from(BOUND_GRID_HEADER);
        s.push('\n');
        for r in &self.grid {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.mu, r.eps1, r.eps2, r.bound_a, r.bound_b, r.gap, r.identity_residual, r.exact_a_margin, r.exact_b_margin
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_basics() {
        assert!((entropy(0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        for mu in [0.01, 0.2, 0.37, 0.8] {
            assert!((entropy(mu).unwrap() - entropy(1.0 - mu).unwrap()).abs() < 1e-15);
            assert!(entropy(mu).unwrap() < entropy(0.5).unwrap());
        }
        assert!(entropy(0.0).is_err());
        assert!(entropy(1.0).is_err());
    }

    #[test]
    fn derivative_matches_central_differences() {
        let h = 1e-6;
        for mu in mu_grid() {
            let fd = (entropy(mu + h).unwrap() - entropy(mu - h).unwrap()) / (2.0 * h);
            assert!((fd - entropy_derivative(mu).unwrap()).abs() < 1e-8, "mu={mu}");
        }
    }

    #[test]
    fn bound_values() {
        // 0.01 ln 0.01 = -0.0460517...
        assert!((slack_term(1e-4) + 0.046051701859881).abs() < 1e-12);
        assert!((bound_a(0.5, 1e-4).unwrap() - 1.432346).abs() < 1e-6);
        assert!((bound_b(0.5, 1e-4).unwrap() - 1.3402427).abs() < 1e-6);
        assert!(bound_a(0.5, 0.0).is_err());
        assert!(bound_b(0.5, -1.0).is_err());
        for mu in mu_grid() {
            let tiny = 1e-300;
            assert!((bound_a(mu, tiny).unwrap() - 2.0 * entropy(mu).unwrap()).abs() < 1e-140);
            assert!(bound_b(mu, 1e-4).unwrap() < bound_a(mu, 1e-4).unwrap());
        }
    }

    #[test]
    fn gap_values() {
        assert!((theorem1_gap(1e-4, 1e-4).unwrap() + 0.092103).abs() < 1e-6);
        assert_eq!(theorem1_gap(1e-6, 1e-2).unwrap(), theorem1_gap(1e-2, 1e-6).unwrap());
        assert!(theorem1_gap(1e-12, 1e-12).unwrap().abs() < 1e-4);
        assert!(theorem1_gap(0.2, 1e-4).is_err());
        assert!(theorem1_gap(0.0, 1e-4).is_err());
    }

    #[test]
    fn theorem2_worked_examples() {
        let v = check_theorem2(&EntropyScenario { mu: 0.4, q: 0.8, eps1: 1e-4, eps2: 1e-4, grad_task: 0.5, lr: 0.01 }).unwrap();
        assert!(v.conditions_hold);
        assert!((v.mu_new - 0.391).abs() < 1e-15);
        assert!(v.entropy_decreased && !v.violates());

        let v = check_theorem2(&EntropyScenario { mu: 0.6, q: 0.3, eps1: 1e-4, eps2: 1e-4, grad_task: -0.4, lr: 0.01 }).unwrap();
        assert!(v.conditions_hold);
        assert!(v.mu_new > 0.6);
        assert!(v.entropy_decreased);

        for q in [0.1, 0.3, 0.7, 0.95] {
            let g = if q > 0.5 { 0.3 } else { -0.3 };
            let v = check_theorem2(&EntropyScenario { mu: 0.5, q, eps1: 1e-4, eps2: 1e-4, grad_task: g, lr: 0.005 }).unwrap();
            assert!(v.conditions_hold);
            assert!(v.entropy_decreased);
        }
    }

    #[test]
    fn same_side_background_breaks_descent() {
        // both stated conditions hold, but q sits on mu's side of 0.5
        let v = check_theorem2(&EntropyScenario { mu: 0.4, q: 0.05, eps1: 1e-4, eps2: 1e-4, grad_task: -0.5, lr: 0.01 }).unwrap();
        assert!(v.sign_condition && v.deviation_condition);
        assert!(!v.complementary_side);
        assert!(!v.entropy_decreased);
        assert!(!v.descent_asserted);
    }

    #[test]
    fn step_too_large() {
        let r = check_theorem2(&EntropyScenario { mu: 0.01, q: 0.99, eps1: 1e-4, eps2: 1e-4, grad_task: 2.0, lr: 0.5 });
        assert!(matches!(r, Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn small_verify_run() {
        let cfg = TheoryConfig { scenarios: 2000, counterexample_draws: 2000, ..TheoryConfig::default() };
        let run = verify(&cfg).unwrap();
        assert_eq!(run.summary.descent_failures, 0);
        assert_eq!(run.summary.descent_asserted, 2000);
        assert!(run.summary.counterexamples >= 1);
        assert_eq!(run.summary.gap_negative_rows, run.summary.grid_rows);
        assert!(run.report_csv().lines().count() == 2001);
    }
}
