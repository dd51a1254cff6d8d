//! Optimal pump power under phase jitter, pump sweeps and the best-squeezing
//! surface over (phase jitter, intracavity loss).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::opomodel::{predict, DetectionChain, LossModel, OpoParams, Prediction};

/// Upper end of the search interval; `x = 1` itself is the threshold.
pub const X_EDGE: f64 = 1.0 - 1e-6;

/// Which squeezed level the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Target {
    /// After jitter mixing and the detector circuit noise.
    #[default]
    Observed,
    /// After jitter mixing, before the circuit noise.
    PreFloor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub coarse_points: usize,
    pub x_tolerance: f64,
    pub target: Target,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { coarse_points: 65, x_tolerance: 1e-6, target: Target::Observed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimumReport {
    pub x_opt: f64,
    pub best_squeezed_db: f64,
    pub bracket: (f64, f64),
    pub evaluations: usize,
}

/// Result of [`find_x_opt`]. A monotone objective has no interior optimum;
/// the best level is then only approached as `x → 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimum {
    Interior(OptimumReport),
    Boundary { x_edge: f64, squeezed_db: f64, evaluations: usize },
}

impl Optimum {
    pub fn interior(&self) -> Option<&OptimumReport> {
        match self {
            Optimum::Interior(r) => Some(r),
            Optimum::Boundary { .. } => None,
        }
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self, Optimum::Boundary { .. })
    }

    /// Where the best level is attained (the edge for boundary optima).
    pub fn x(&self) -> f64 {
        match self {
            Optimum::Interior(r) => r.x_opt,
            Optimum::Boundary { x_edge, .. } => *x_edge,
        }
    }

    pub fn squeezed_db(&self) -> f64 {
        match self {
            Optimum::Interior(r) => r.best_squeezed_db,
            Optimum::Boundary { squeezed_db, .. } => *squeezed_db,
        }
    }
}

fn objective(params: &OpoParams, chain: &DetectionChain, target: Target, x: f64) -> Result<f64> {
    let p = predict(params, chain, x)?;
    Ok(match target {
        Target::Observed => p.observed.squeezed.db(),
        Target::PreFloor => p.mixed.squeezed.db(),
    })
}

/// Minimizes `f` on `[lo, hi]` until the bracket is narrower than `tol`.
/// Returns `(x, f(x), evaluations)`.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut evals = 2;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
        evals += 1;
    }
    Ok(if f1 <= f2 { (x1, f1, evals) } else { (x2, f2, evals) })
}

pub fn find_x_opt(params: &OpoParams, chain: &DetectionChain) -> Result<Optimum> {
    find_x_opt_with(params, chain, &OptimizerSettings::default())
}

/// Coarse uniform scan over `[0, X_EDGE]` to pick the global bracket, then
/// golden-section refinement inside it.
pub fn find_x_opt_with(
    params: &OpoParams,
    chain: &DetectionChain,
    settings: &OptimizerSettings,
) -> Result<Optimum> {
    let n = settings.coarse_points;
    if n < 3 {
        return Err(Error::invalid(format!("coarse scan needs at least 3 points, got {n}")));
    }
    if !(settings.x_tolerance > 0.0) {
        return Err(Error::invalid("x tolerance must be positive"));
    }
    let grid: Vec<f64> = (0..n).map(|k| X_EDGE * k as f64 / (n - 1) as f64).collect();
    let values = grid
        .iter()
        .map(|&x| objective(params, chain, settings.target, x))
        .collect::<Result<Vec<f64>>>()?;
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);

    if best == n - 1 {
        return Ok(Optimum::Boundary { x_edge: X_EDGE, squeezed_db: values[n - 1], evaluations: n });
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[best + 1];
    let (x_opt, best_db, evals) = golden_section(
        |x| objective(params, chain, settings.target, x),
        lo,
        hi,
        settings.x_tolerance,
    )?;
    Ok(Optimum::Interior(OptimumReport {
        x_opt,
        best_squeezed_db: best_db,
        bracket: (lo, hi),
        evaluations: n + evals,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
}

impl Axis {
    /// Values must be finite and strictly increasing.
    pub fn new(name: impl Into<String>, unit: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.is_empty() {
            return Err(Error::invalid(format!("axis `{name}` is empty")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("axis `{name}` has non-finite values")));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!("axis `{name}` is not strictly increasing")));
        }
        Ok(Self { name, unit: unit.into(), values })
    }

    /// `steps` evenly spaced values from `start` to `end` inclusive.
    pub fn linspace(
        name: impl Into<String>,
        unit: impl Into<String>,
        start: f64,
        end: f64,
        steps: usize,
    ) -> Result<Self> {
        let values = match steps {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..steps)
                .map(|i| {
                    let t = i as f64 / (steps - 1) as f64;
                    start * (1.0 - t) + end * t
                })
                .collect(),
        };
        Self::new(name, unit, values)
    }
}

/// Levels at one grid point. For surfaces the levels are taken at the
/// cell's optimum pump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub squeezed_db: f64,
    pub antisqueezed_db: f64,
    pub generated_squeezed_db: f64,
    pub generated_antisqueezed_db: f64,
    pub x_opt: Option<f64>,
    pub boundary: bool,
}

/// Optimum along the pump-dependent loss line at one phase jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub theta_deg: f64,
    pub x_opt: f64,
    pub loss: f64,
    pub squeezed_db: f64,
    pub boundary: bool,
}

/// Grid of predicted levels. Cells are stored row-major in axis order
/// (the last axis varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axes: Vec<Axis>,
    pub cells: Vec<SweepCell>,
    pub path: Vec<PathPoint>,
    pub metadata: Vec<(String, String)>,
}

impl SweepTable {
    fn new(axes: Vec<Axis>, cells: Vec<SweepCell>, metadata: Vec<(String, String)>) -> Result<Self> {
        let expected: usize = axes.iter().map(|a| a.values.len()).product();
        if cells.len() != expected {
            return Err(Error::invalid(format!("{} cells for a grid of {expected}", cells.len())));
        }
        let finite = |c: &SweepCell| {
            [c.squeezed_db, c.antisqueezed_db, c.generated_squeezed_db, c.generated_antisqueezed_db]
                .iter()
                .all(|v| v.is_finite())
        };
        if !cells.iter().all(finite) {
            return Err(Error::InvalidModel("sweep produced non-finite levels".into()));
        }
        Ok(Self { axes, cells, path: Vec::new(), metadata })
    }

    /// Axis coordinates of cell `index`.
    pub fn coordinates(&self, mut index: usize) -> Vec<f64> {
        let mut coords = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            let len = axis.values.len();
            coords[k] = axis.values[index % len];
            index /= len;
        }
        coords
    }

    pub fn cell(&self, indices: &[usize]) -> Option<&SweepCell> {
        if indices.len() != self.axes.len() {
            return None;
        }
        let mut flat = 0;
        for (i, axis) in indices.iter().zip(&self.axes) {
            if *i >= axis.values.len() {
                return None;
            }
            flat = flat * axis.values.len() + i;
        }
        self.cells.get(flat)
    }
}

/// Resolved model parameters as key/value pairs.
pub fn describe(params: &OpoParams, chain: &DetectionChain) -> Vec<(String, String)> {
    let mut out = vec![
        ("transmittance".to_string(), params.transmittance().to_string()),
        ("round_trip_length_m".to_string(), params.round_trip_length_m().to_string()),
    ];
    match params.loss_model() {
        LossModel::Fixed(l) => out.push(("loss_fixed".into(), l.to_string())),
        LossModel::Line(line) => {
            out.push(("loss_intercept".into(), line.intercept().to_string()));
            out.push(("loss_slope".into(), line.slope().to_string()));
        }
    }
    if let Some(p) = params.threshold_w() {
        out.push(("threshold_w".into(), p.to_string()));
    }
    out.extend([
        ("eta".to_string(), chain.eta().to_string()),
        ("xi".to_string(), chain.xi().to_string()),
        ("zeta".to_string(), chain.zeta().to_string()),
        ("circuit_noise_db".to_string(), chain.circuit_floor().level_db().to_string()),
        ("phase_rms_deg".to_string(), chain.theta_rms_deg().to_string()),
        ("measurement_freq_hz".to_string(), chain.measurement_freq_hz().to_string()),
        ("freq_convention".to_string(), chain.convention().to_string()),
    ]);
    out
}

fn cell_from(p: &Prediction, target: Target, x_opt: Option<f64>, boundary: bool) -> SweepCell {
    let shown = match target {
        Target::Observed => p.observed,
        Target::PreFloor => p.mixed,
    };
    SweepCell {
        squeezed_db: shown.squeezed.db(),
        antisqueezed_db: shown.antisqueezed.db(),
        generated_squeezed_db: p.generated.squeezed.db(),
        generated_antisqueezed_db: p.generated.antisqueezed.db(),
        x_opt,
        boundary,
    }
}

/// Observed and generated levels at each pump power in `x_values`.
pub fn sweep_pump(params: &OpoParams, chain: &DetectionChain, x_values: &[f64]) -> Result<SweepTable> {
    let axis = Axis::new("x", "1", x_values.to_vec())?;
    let cells = x_values
        .iter()
        .map(|&x| predict(params, chain, x).map(|p| cell_from(&p, Target::Observed, None, false)))
        .collect::<Result<Vec<_>>>()?;
    SweepTable::new(vec![axis], cells, describe(params, chain))
}

/// How the loss axis of a surface is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Each cell uses its loss-axis value as a pump-independent loss.
    #[default]
    Fixed,
    /// As `Fixed`, and the table also carries the optimum along the
    /// template's pump-dependent loss line for every phase-jitter value.
    FollowLine,
}

fn optimum_cell(
    params: &OpoParams,
    chain: &DetectionChain,
    settings: &OptimizerSettings,
) -> Result<(Optimum, Prediction)> {
    let opt = find_x_opt_with(params, chain, settings)?;
    let p = predict(params, chain, opt.x())?;
    Ok((opt, p))
}

/// Best achievable squeezing on a (phase jitter in degrees) × (loss) grid.
pub fn sweep_surface(
    params_template: &OpoParams,
    chain_template: &DetectionChain,
    theta_axis_deg: &[f64],
    loss_axis: &[f64],
    loss_mode: LossMode,
    settings: &OptimizerSettings,
) -> Result<SweepTable> {
    let theta_axis = Axis::new("theta_deg", "deg", theta_axis_deg.to_vec())?;
    let loss_axis = Axis::new("loss", "1", loss_axis.to_vec())?;
    let line = match (loss_mode, params_template.loss_model()) {
        (LossMode::FollowLine, LossModel::Line(line)) => Some(line),
        (LossMode::FollowLine, LossModel::Fixed(_)) => {
            return Err(Error::InvalidModel("follow-line surface needs a loss line in the template".into()))
        }
        (LossMode::Fixed, _) => None,
    };
    let chains = theta_axis
        .values
        .iter()
        .map(|&t| chain_template.with_theta_deg(t))
        .collect::<Result<Vec<_>>>()?;
    let losses = loss_axis
        .values
        .iter()
        .map(|&l| params_template.with_loss(LossModel::fixed(l)?))
        .collect::<Result<Vec<_>>>()?;

    let n_loss = losses.len();
    let cells = (0..chains.len() * n_loss)
        .into_par_iter()
        .map(|i| {
            let (chain, params) = (&chains[i / n_loss], &losses[i % n_loss]);
            let (opt, p) = optimum_cell(params, chain, settings)?;
            Ok(cell_from(&p, settings.target, Some(opt.x()), opt.is_boundary()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = SweepTable::new(vec![theta_axis, loss_axis], cells, describe(params_template, chain_template))?;
    if let Some(line) = line {
        let params = params_template.with_loss(LossModel::Line(line))?;
        table.path = chains
            .par_iter()
            .map(|chain| {
                let (opt, p) = optimum_cell(&params, chain, settings)?;
                let shown = match settings.target {
                    Target::Observed => p.observed,
                    Target::PreFloor => p.mixed,
                };
                Ok(PathPoint {
                    theta_deg: chain.theta_rms_deg(),
                    x_opt: opt.x(),
                    loss: p.loss,
                    squeezed_db: shown.squeezed.db(),
                    boundary: opt.is_boundary(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(table)
}
