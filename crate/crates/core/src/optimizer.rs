//! Box-constrained maximization by projected nonlinear conjugate gradient.
//!
//! The search direction is Polak–Ribière+ on the projected gradient, with
//! coordinates pinned at a bound masked out when the gradient pushes past
//! it. Steps are projected back onto the box and accepted under an Armijo
//! condition that also demands a strict increase, so the objective trace
//! is monotone. The direction restarts from steepest ascent whenever the
//! active set changes, every `restart_interval` iterations, or when the
//! conjugate direction stops being an ascent direction.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capacity::{analyze, capacity_from_logdet, CapacityReport, SnrParams};
use crate::fdfd::ForwardModel;
use crate::par;
use crate::scene::{DesignVector, Scene};
use crate::{Error, Result};

/// A smooth objective on a box `lo ≤ x ≤ hi`.
pub trait BoxObjective: Sync {
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Clamps `x` into `[lo, hi]` componentwise.
pub fn project_box(x: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    if x.len() != lo.len() || x.len() != hi.len() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, bounds have {} and {}",
            x.len(),
            lo.len(),
            hi.len()
        )));
    }
    x.iter()
        .zip(lo.iter().zip(hi))
        .enumerate()
        .map(|(i, (&v, (&l, &h)))| {
            if !(l <= h) {
                return Err(Error::InvalidInput(format!(
                    "empty box at coordinate {i}: [{l}, {h}]"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite coordinate {i}")));
            }
            Ok(v.clamp(l, h))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop when the first-order gain across the box, `‖P∇f‖∞ · max width`,
    /// falls below `grad_tol · max(|f|, 1)`.
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack_shrink: f64,
    pub max_backtracks: usize,
    /// Forced steepest-ascent restart period; the dimension when unset.
    pub restart_interval: Option<usize>,
    /// First trial step moves the largest direction entry by this fraction
    /// of the narrowest box side.
    pub step_fraction: f64,
    /// Step doublings tried after an immediately accepted trial step.
    pub max_expansions: usize,
    pub num_starts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-6,
            armijo_c1: 1e-4,
            backtrack_shrink: 0.5,
            max_backtracks: 40,
            restart_interval: None,
            step_fraction: 0.1,
            max_expansions: 3,
            num_starts: 5,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("optimizer: {what}")));
        if !(self.grad_tol >= 0.0) {
            return bad("grad_tol must be non-negative");
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("armijo_c1 must lie in (0, 1)");
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return bad("backtrack_shrink must lie in (0, 1)");
        }
        if !(self.step_fraction > 0.0) {
            return bad("step_fraction must be positive");
        }
        if self.restart_interval == Some(0) {
            return bad("restart_interval must be at least 1");
        }
        if self.num_starts == 0 {
            return bad("num_starts must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Projected gradient below tolerance.
    Converged,
    MaxIterations,
    /// No ascent step found even along the projected steepest direction.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    /// `‖P∇f‖∞` at the iterate.
    pub pgrad_norm: f64,
    /// Accepted step length along the search direction; zero at iteration 0.
    pub step: f64,
    /// Coordinates sitting on a bound.
    pub active_count: usize,
    pub restarted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRun {
    pub x: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<IterRecord>,
    /// Accepted iterates, starting with the projected `x0`.
    pub iterates: Vec<Vec<f64>>,
    pub termination: Termination,
    pub value_evals: usize,
    pub gradient_evals: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tolerance for treating a coordinate as sitting on its bound.
fn bound_eps(lo: f64, hi: f64) -> f64 {
    1e-12 * (hi - lo).abs().max(1.0)
}

fn at_lower(x: f64, lo: f64, hi: f64) -> bool {
    x <= lo + bound_eps(lo, hi)
}

fn at_upper(x: f64, lo: f64, hi: f64) -> bool {
    x >= hi - bound_eps(lo, hi)
}

/// Projected gradient for maximization and the active-set mask.
fn projected(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut pg = g.to_vec();
    let mut active = vec![false; x.len()];
    for i in 0..x.len() {
        let blocked = (at_lower(x[i], lo[i], hi[i]) && g[i] < 0.0)
            || (at_upper(x[i], lo[i], hi[i]) && g[i] > 0.0);
        if blocked || lo[i] == hi[i] {
            pg[i] = 0.0;
            active[i] = true;
        }
    }
    (pg, active)
}

/// Maximizes `obj` over its box starting from `x0` (projected first).
pub fn maximize_box<O: BoxObjective + ?Sized>(
    obj: &O,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<BoxRun> {
    cfg.validate()?;
    let (lo, hi) = obj.bounds();
    let n = lo.len();
    let mut x = project_box(x0, &lo, &hi)?;
    let restart_every = cfg.restart_interval.unwrap_or(n.max(1));
    let max_width = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
    let stationary =
        |pg: &[f64], f: f64| inf_norm(pg) * max_width <= cfg.grad_tol * f.abs().max(1.0);
    let min_width = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| h - l)
        .filter(|w| *w > 0.0)
        .fold(f64::INFINITY, f64::min);

    let (mut f, mut g) = obj.value_and_gradient(&x)?;
    let mut value_evals = 0;
    let mut gradient_evals = 1;
    let (mut pg, mut active) = projected(&x, &g, &lo, &hi);
    let g0 = inf_norm(&pg);
    let mut trace = vec![IterRecord {
        iter: 0,
        objective: f,
        pgrad_norm: g0,
        step: 0.0,
        active_count: active.iter().filter(|a| **a).count(),
        restarted: true,
    }];
    let mut iterates = vec![x.clone()];
    let mut d = pg.clone();
    let mut restarted = true;
    let mut termination = Termination::MaxIterations;

    for iter in 1..=cfg.max_iters {
        if !min_width.is_finite() || stationary(&pg, f) {
            termination = Termination::Converged;
            break;
        }

        let mut step = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if restarted {
                    break;
                }
                d = pg.clone();
                restarted = true;
            }
            for i in 0..n {
                if active[i] {
                    d[i] = 0.0;
                }
            }
            if dot(&d, &pg) <= 0.0 {
                d = pg.clone();
                restarted = true;
            }
            let (found, evals) = line_search(obj, &x, f, &g, &d, &lo, &hi, min_width, cfg)?;
            value_evals += evals;
            if found.is_some() {
                step = found;
                break;
            }
        }
        let Some((alpha, x_new)) = step else {
            termination = Termination::LineSearchFailed;
            break;
        };

        let (f_new, g_new) = obj.value_and_gradient(&x_new)?;
        gradient_evals += 1;
        let (pg_new, active_new) = projected(&x_new, &g_new, &lo, &hi);
        let denom = dot(&pg, &pg);
        let mut beta = if denom > 0.0 {
            (dot(&pg_new, &pg_new) - dot(&pg_new, &pg)) / denom
        } else {
            0.0
        }
        .max(0.0);
        let reset = active_new != active || iter % restart_every == 0;
        if reset {
            beta = 0.0;
        }

        trace.push(IterRecord {
            iter,
            objective: f_new,
            pgrad_norm: inf_norm(&pg_new),
            step: alpha,
            active_count: active_new.iter().filter(|a| **a).count(),
            restarted,
        });
        d = pg_new.iter().zip(&d).map(|(p, di)| p + beta * di).collect();
        restarted = beta == 0.0;
        iterates.push(x_new.clone());
        x = x_new;
        f = f_new;
        g = g_new;
        pg = pg_new;
        active = active_new;
    }
    if termination == Termination::MaxIterations && stationary(&pg, f) {
        termination = Termination::Converged;
    }

    Ok(BoxRun {
        x,
        objective: f,
        trace,
        iterates,
        termination,
        value_evals,
        gradient_evals,
    })
}

/// Accepted step length and the projected point it reaches.
type Accepted = (f64, Vec<f64>);

/// Backtracking (with optional expansion) along the projected path
/// `P(x + α d)`. Returns the accepted `(α, x_new)` and the number of
/// objective evaluations.
#[allow(clippy::too_many_arguments)]
fn line_search<O: BoxObjective + ?Sized>(
    obj: &O,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    lo: &[f64],
    hi: &[f64],
    min_width: f64,
    cfg: &OptimizerConfig,
) -> Result<(Option<Accepted>, usize)> {
    let dn = inf_norm(d);
    if dn == 0.0 {
        return Ok((None, 0));
    }
    let trial = |alpha: f64| -> Result<Vec<f64>> {
        let moved: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        project_box(&moved, lo, hi)
    };
    let accepts = |x_new: &[f64], f_new: f64| {
        let delta: Vec<f64> = x_new.iter().zip(x).map(|(a, b)| a - b).collect();
        f_new > f && f_new >= f + cfg.armijo_c1 * dot(g, &delta)
    };

    let mut evals = 0;
    let mut alpha = cfg.step_fraction * min_width / dn;
    for k in 0..=cfg.max_backtracks {
        let x_new = trial(alpha)?;
        if x_new.as_slice() == x {
            break;
        }
        let f_new = obj.value(&x_new)?;
        evals += 1;
        if f_new.is_finite() && accepts(&x_new, f_new) {
            let mut best = (alpha, x_new, f_new);
            if k == 0 {
                for _ in 0..cfg.max_expansions {
                    let a2 = 2.0 * best.0;
                    let x2 = trial(a2)?;
                    if x2 == best.1 {
                        break;
                    }
                    let f2 = obj.value(&x2)?;
                    evals += 1;
                    if !(f2.is_finite() && f2 > best.2 && accepts(&x2, f2)) {
                        break;
                    }
                    best = (a2, x2, f2);
                }
            }
            return Ok((Some((best.0, best.1)), evals));
        }
        alpha *= cfg.backtrack_shrink;
    }
    Ok((None, evals))
}

/// `ln det(G(x)ᴴG(x))` as a [`BoxObjective`] over the flat design layout.
pub struct SceneObjective<'a> {
    model: &'a ForwardModel,
    template: DesignVector,
    solves: AtomicUsize,
}

impl<'a> SceneObjective<'a> {
    pub fn new(model: &'a ForwardModel) -> Self {
        Self {
            model,
            template: DesignVector::uniform(model.scene(), 1.0),
            solves: AtomicUsize::new(0),
        }
    }

    pub fn design(&self, flat: &[f64]) -> Result<DesignVector> {
        Ok(self.template.with_flat(flat)?)
    }

    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
}

impl BoxObjective for SceneObjective<'_> {
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        DesignVector::flat_bounds(self.model.scene())
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let v = match self.model.objective(&self.design(x)?) {
            Err(Error::RankDeficient { .. }) => f64::NEG_INFINITY,
            other => other?,
        };
        self.solves
            .fetch_add(self.model.scene().num_channels(), Ordering::Relaxed);
        Ok(v)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.model.grad_logdet(&self.design(x)?)?;
        self.solves.fetch_add(r.solves, Ordering::Relaxed);
        Ok((r.objective, r.gradient))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective_nats: f64,
    pub capacity_bits: f64,
    pub pgrad_norm: f64,
    pub step: f64,
    pub active_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptRunReport {
    pub initial_design: DesignVector,
    pub final_design: DesignVector,
    pub initial: CapacityReport,
    #[serde(rename = "final")]
    pub final_report: CapacityReport,
    pub trace: Vec<TraceRecord>,
    /// Accepted designs, one per trace row.
    #[serde(skip)]
    pub iterates: Vec<DesignVector>,
    pub termination: Termination,
    pub iterations: usize,
    pub solves: usize,
    /// Not serialized, so report files stay reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Maximizes `ln det(GᴴG)` from `x0`.
pub fn maximize(scene: &Scene, x0: &DesignVector, cfg: &OptimizerConfig) -> Result<OptRunReport> {
    let model = ForwardModel::new(scene)?;
    maximize_with(&model, x0, cfg)
}

pub fn maximize_with(
    model: &ForwardModel,
    x0: &DesignVector,
    cfg: &OptimizerConfig,
) -> Result<OptRunReport> {
    let start = Instant::now();
    let scene = model.scene();
    if x0.num_pixels() != scene.scatterers().len() || x0.channels() != scene.channels() {
        return Err(Error::DimensionMismatch(
            "initial design does not match the scene".into(),
        ));
    }
    let obj = SceneObjective::new(model);
    let run = maximize_box(&obj, &x0.to_flat(), cfg)?;
    let initial_design = obj.design(&project_box(
        &x0.to_flat(),
        &obj.bounds().0,
        &obj.bounds().1,
    )?)?;
    let final_design = obj.design(&run.x)?;
    let snr = SnrParams::default();
    let initial = analyze(&model.green(&initial_design)?, snr);
    let final_report = analyze(&model.green(&final_design)?, snr);
    let channels = scene.num_channels();
    let trace = run
        .trace
        .iter()
        .map(|r| TraceRecord {
            iter: r.iter,
            objective_nats: r.objective,
            capacity_bits: capacity_from_logdet(r.objective, channels, snr),
            pgrad_norm: r.pgrad_norm,
            step: r.step,
            active_count: r.active_count,
        })
        .collect();
    let iterates = run
        .iterates
        .iter()
        .map(|v| obj.design(v))
        .collect::<Result<Vec<_>>>()?;
    Ok(OptRunReport {
        iterates,
        initial_design,
        final_design,
        initial,
        final_report,
        trace,
        termination: run.termination,
        iterations: run.trace.len() - 1,
        solves: obj.solves() + 2 * channels,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultistartReport {
    pub runs: Vec<OptRunReport>,
    /// Index of the run with the largest final objective (lowest index on ties).
    pub best: usize,
}

impl MultistartReport {
    pub fn best_run(&self) -> &OptRunReport {
        &self.runs[self.best]
    }
}

/// Starting designs drawn uniformly in the box from a seeded ChaCha8 stream.
pub fn starting_points(scene: &Scene, num_starts: usize, seed: u64) -> Vec<DesignVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_starts)
        .map(|_| DesignVector::random(scene, &mut rng))
        .collect()
}

/// `cfg.num_starts` independent runs from random starting designs.
pub fn multistart(scene: &Scene, cfg: &OptimizerConfig) -> Result<MultistartReport> {
    cfg.validate()?;
    let model = ForwardModel::new(scene)?;
    let starts = starting_points(scene, cfg.num_starts, cfg.seed);
    let runs = par::try_map(&starts, |x0| maximize_with(&model, x0, cfg))?;
    let best = runs.iter().enumerate().fold(0, |b, (i, r)| {
        if r.final_report.logdet_gramian > runs[b].final_report.logdet_gramian {
            i
        } else {
            b
        }
    });
    Ok(MultistartReport { runs, best })
}
