//! Γ sweeps with replication quantiles, and the design sensitivity of a
//! policy comparison: the smallest posited confounding level at which one
//! policy's lower bound meets another's upper bound.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::autism::AutismError;
use crate::behavior::{FitError, PolicyRepr};
use crate::bounds::{
    BoundComponents, BoundDiagnostics, BoundError, BoundEstimate, BoundProblem, ConfoundingSpec,
    EstimatorOptions, KappaSpec,
};
use crate::core::{CoreError, Dataset, Policy};
use crate::exec;
use crate::sepsis::SepsisError;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("{0}")]
    Bound(#[from] BoundError),
    #[error("{0}")]
    Fit(#[from] FitError),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{0}")]
    Sepsis(#[from] SepsisError),
    #[error("{0}")]
    Autism(#[from] AutismError),
    #[error("gamma grid invalid: {0}")]
    BadGrid(String),
    #[error("policy {0:?} not present in the curve")]
    UnknownPolicy(String),
    #[error("policies are not separated at gamma = 1, design sensitivity undefined")]
    NotSeparatedAtGammaOne,
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Parses `"start:end:step"` into an inclusive ascending grid; a bare number
/// is a one-point grid.
pub fn parse_gamma_grid(text: &str) -> Result<Vec<f64>, SweepError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = |msg: &str| SweepError::BadGrid(format!("{text:?}: {msg}"));
    match parts.as_slice() {
        [single] => {
            let g: f64 = single.parse().map_err(|_| bad("not a number"))?;
            validate_grid(&[g])?;
            Ok(vec![g])
        }
        [start, end, step] => {
            let start: f64 = start.parse().map_err(|_| bad("bad start"))?;
            let end: f64 = end.parse().map_err(|_| bad("bad end"))?;
            let step: f64 = step.parse().map_err(|_| bad("bad step"))?;
            if step <= 0.0 || end < start {
                return Err(bad("need end >= start and step > 0"));
            }
            let count = ((end - start) / step).round() as usize;
            let mut grid: Vec<f64> = (0..=count).map(|i| start + step * i as f64).collect();
            if let Some(last) = grid.last_mut() {
                if (*last - end).abs() < step * 1e-9 {
                    *last = end;
                }
            }
            grid.retain(|&g| g <= end + step * 1e-9);
            validate_grid(&grid)?;
            Ok(grid)
        }
        _ => Err(bad("expected start:end:step")),
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<(), SweepError> {
    if grid.is_empty() {
        return Err(SweepError::BadGrid("empty".to_string()));
    }
    if grid[0] < 1.0 {
        return Err(SweepError::BadGrid(format!(
            "first point {} below 1",
            grid[0]
        )));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SweepError::BadGrid("not strictly increasing".to_string()));
    }
    Ok(())
}

/// One replication's inputs: a dataset, the fitted behavior policy, and the
/// named evaluation policies.
pub struct ScenarioData {
    pub dataset: Dataset,
    pub behavior: PolicyRepr,
    pub evaluations: Vec<(String, Arc<dyn Policy>)>,
}

/// A data-generating scenario that can be replicated end to end: fresh data,
/// fresh fits. Implementations live in [`crate::experiment`].
pub trait Scenario: Sync {
    fn t_star(&self) -> usize;
    fn kappa_spec(&self) -> KappaSpec;
    fn estimator(&self) -> EstimatorOptions;
    /// Evaluation-policy names, in the order `replicate` returns them.
    fn policy_names(&self) -> Vec<String>;
    fn replicate(&self, rep: u64) -> Result<ScenarioData, SweepError>;
}

/// Aggregated cell of a sweep: replication means in `estimate`, replication
/// quantiles alongside.
#[derive(Clone, Debug, Serialize)]
pub struct CurveCell {
    pub estimate: BoundEstimate,
    pub lower_q_lo: f64,
    pub lower_q_hi: f64,
    pub upper_q_lo: f64,
    pub upper_q_hi: f64,
}

/// Per-policy lower/upper curves over a Γ grid.
#[derive(Clone, Debug, Serialize)]
pub struct SensitivityCurve {
    pub gammas: Vec<f64>,
    pub policies: Vec<String>,
    cells: BTreeMap<String, Vec<CurveCell>>,
}

impl SensitivityCurve {
    pub fn from_parts(
        gammas: Vec<f64>,
        cells: BTreeMap<String, Vec<CurveCell>>,
    ) -> SensitivityCurve {
        let policies = cells.keys().cloned().collect();
        SensitivityCurve {
            gammas,
            policies,
            cells,
        }
    }

    pub fn cells(&self, policy: &str) -> Option<&[CurveCell]> {
        self.cells.get(policy).map(|c| c.as_slice())
    }

    pub fn lower(&self, policy: &str) -> Option<Vec<f64>> {
        self.cells
            .get(policy)
            .map(|c| c.iter().map(|cell| cell.estimate.lower).collect())
    }

    pub fn upper(&self, policy: &str) -> Option<Vec<f64>> {
        self.cells
            .get(policy)
            .map(|c| c.iter().map(|cell| cell.estimate.upper).collect())
    }
}

/// A sweep's output: the loss-minimization curves and the naive curves on
/// the same data.
#[derive(Clone, Debug, Serialize)]
pub struct SweepOutput {
    pub main: SensitivityCurve,
    pub naive: SensitivityCurve,
    pub replications: usize,
}

#[derive(Copy, Clone, Debug)]
pub struct SweepOptions {
    pub replications: usize,
    /// Replication quantiles reported next to the mean curves.
    pub q_lo: f64,
    pub q_hi: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            replications: 1,
            q_lo: 0.025,
            q_hi: 0.975,
        }
    }
}

struct RepResult {
    /// per policy, per gamma
    main: Vec<Vec<BoundEstimate>>,
    naive: Vec<Vec<(f64, f64)>>,
    point_is: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs `replications` end-to-end replications of `scenario` and evaluates
/// both estimators over the grid. Replication `r` is fully determined by the
/// scenario's seed and `r`; the merge is by (policy, gamma) index, so output
/// does not depend on scheduling.
pub fn sweep(
    scenario: &dyn Scenario,
    grid: &[f64],
    opts: &SweepOptions,
) -> Result<SweepOutput, SweepError> {
    validate_grid(grid)?;
    if opts.replications == 0 {
        return Err(SweepError::BadGrid("need at least one replication".to_string()));
    }
    let estimator = scenario.estimator();
    let reps: Vec<RepResult> =
        exec::try_map_range(estimator.exec, opts.replications, |rep| {
            let data = scenario.replicate(rep as u64)?;
            let mut main = Vec::new();
            let mut naive = Vec::new();
            let mut point_is = Vec::new();
            for (_, eval) in &data.evaluations {
                let problem = BoundProblem::new(
                    &data.dataset,
                    &data.behavior,
                    eval.as_ref(),
                    scenario.t_star(),
                    scenario.kappa_spec(),
                    &estimator,
                )?;
                let estimates = problem.final_bound_sweep(grid)?;
                let naive_bounds: Vec<(f64, f64)> = grid
                    .iter()
                    .map(|&g| problem.naive(&ConfoundingSpec::single(scenario.t_star(), g)))
                    .collect();
                point_is.push(problem.point_is());
                main.push(estimates);
                naive.push(naive_bounds);
            }
            Ok::<RepResult, SweepError>(RepResult {
                main,
                naive,
                point_is,
            })
        })?;

    let names = scenario.policy_names();
    let n_rep = reps.len() as f64;
    let mut main_cells: BTreeMap<String, Vec<CurveCell>> = BTreeMap::new();
    let mut naive_cells: BTreeMap<String, Vec<CurveCell>> = BTreeMap::new();
    for (pi, name) in names.iter().enumerate() {
        let mut main_col = Vec::with_capacity(grid.len());
        let mut naive_col = Vec::with_capacity(grid.len());
        for (gi, &gamma) in grid.iter().enumerate() {
            let lowers: Vec<f64> = reps.iter().map(|r| r.main[pi][gi].lower).collect();
            let uppers: Vec<f64> = reps.iter().map(|r| r.main[pi][gi].upper).collect();
            let n_lowers: Vec<f64> = reps.iter().map(|r| r.naive[pi][gi].0).collect();
            let n_uppers: Vec<f64> = reps.iter().map(|r| r.naive[pi][gi].1).collect();
            let is_vals: Vec<f64> = reps.iter().map(|r| r.point_is[pi]).collect();
            let mean = |v: &[f64]| exec::pairwise_mean(v);
            let sd = |v: &[f64]| {
                if v.len() < 2 {
                    return 0.0;
                }
                let m = mean(v);
                (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0))
                    .sqrt()
            };
            let sorted = |v: &[f64]| {
                let mut s = v.to_vec();
                s.sort_by(f64::total_cmp);
                s
            };
            let mut components = BoundComponents::default();
            components.kappa_term_lower = mean(
                &reps
                    .iter()
                    .map(|r| r.main[pi][gi].components.kappa_term_lower)
                    .collect::<Vec<_>>(),
            );
            components.kappa_term_upper = mean(
                &reps
                    .iter()
                    .map(|r| r.main[pi][gi].components.kappa_term_upper)
                    .collect::<Vec<_>>(),
            );
            components.direct_term = mean(
                &reps
                    .iter()
                    .map(|r| r.main[pi][gi].components.direct_term)
                    .collect::<Vec<_>>(),
            );
            let se_div = n_rep.sqrt();
            let slo = sorted(&lowers);
            let sup = sorted(&uppers);
            main_col.push(CurveCell {
                estimate: BoundEstimate {
                    gamma,
                    t_star: reps[0].main[pi][gi].t_star,
                    lower: mean(&lowers),
                    upper: mean(&uppers),
                    point_is: mean(&is_vals),
                    components,
                    n_used: reps[0].main[pi][gi].n_used,
                    diagnostics: reps[0].main[pi][gi].diagnostics.clone(),
                    se_lower: (reps.len() > 1).then(|| sd(&lowers) / se_div),
                    se_upper: (reps.len() > 1).then(|| sd(&uppers) / se_div),
                },
                lower_q_lo: quantile(&slo, opts.q_lo),
                lower_q_hi: quantile(&slo, opts.q_hi),
                upper_q_lo: quantile(&sup, opts.q_lo),
                upper_q_hi: quantile(&sup, opts.q_hi),
            });
            let snlo = sorted(&n_lowers);
            let snup = sorted(&n_uppers);
            naive_col.push(CurveCell {
                estimate: BoundEstimate {
                    gamma,
                    t_star: reps[0].main[pi][gi].t_star,
                    lower: mean(&n_lowers),
                    upper: mean(&n_uppers),
                    point_is: mean(&is_vals),
                    components: BoundComponents::default(),
                    n_used: reps[0].main[pi][gi].n_used,
                    diagnostics: BoundDiagnostics::default(),
                    se_lower: (reps.len() > 1).then(|| sd(&n_lowers) / se_div),
                    se_upper: (reps.len() > 1).then(|| sd(&n_uppers) / se_div),
                },
                lower_q_lo: quantile(&snlo, opts.q_lo),
                lower_q_hi: quantile(&snlo, opts.q_hi),
                upper_q_lo: quantile(&snup, opts.q_lo),
                upper_q_hi: quantile(&snup, opts.q_hi),
            });
        }
        main_cells.insert(name.clone(), main_col);
        naive_cells.insert(name.clone(), naive_col);
    }
    Ok(SweepOutput {
        main: SensitivityCurve::from_parts(grid.to_vec(), main_cells),
        naive: SensitivityCurve::from_parts(grid.to_vec(), naive_cells),
        replications: opts.replications,
    })
}

/// Smallest Γ at which `policy_a`'s lower bound meets `policy_b`'s upper
/// bound, linearly interpolated between grid points; +∞ if they never meet
/// on the grid.
///
/// Requires the grid to start at Γ = 1 and the policies to be separated
/// there, otherwise the comparison is undetermined at baseline.
pub fn design_sensitivity(
    curve: &SensitivityCurve,
    policy_a: &str,
    policy_b: &str,
) -> Result<f64, SweepError> {
    if curve.gammas.is_empty() || (curve.gammas[0] - 1.0).abs() > 1e-9 {
        return Err(SweepError::BadGrid(
            "design sensitivity needs a grid starting at gamma = 1".to_string(),
        ));
    }
    let lower_a = curve
        .lower(policy_a)
        .ok_or_else(|| SweepError::UnknownPolicy(policy_a.to_string()))?;
    let upper_b = curve
        .upper(policy_b)
        .ok_or_else(|| SweepError::UnknownPolicy(policy_b.to_string()))?;
    let gap: Vec<f64> = lower_a
        .iter()
        .zip(&upper_b)
        .map(|(l, u)| l - u)
        .collect();
    if gap[0] <= 0.0 {
        return Err(SweepError::NotSeparatedAtGammaOne);
    }
    for i in 1..gap.len() {
        if gap[i] <= 0.0 {
            let g0 = curve.gammas[i - 1];
            let g1 = curve.gammas[i];
            let frac = gap[i - 1] / (gap[i - 1] - gap[i]);
            return Ok(g0 + frac * (g1 - g0));
        }
    }
    Ok(f64::INFINITY)
}

/// Writes a sweep as CSV rows
/// `gamma,policy,lower,upper,lower_q025,lower_q975,upper_q025,upper_q975`;
/// the naive estimator appears under `<policy>:naive`.
pub fn write_sweep_csv(output: &SweepOutput, path: &Path) -> Result<(), SweepError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "gamma,policy,lower,upper,lower_q025,lower_q975,upper_q025,upper_q975"
    )?;
    for (curve, suffix) in [(&output.main, ""), (&output.naive, ":naive")] {
        for policy in &curve.policies {
            let cells = curve.cells(policy).expect("policy listed");
            for (gi, cell) in cells.iter().enumerate() {
                writeln!(
                    out,
                    "{},{}{},{},{},{},{},{},{}",
                    curve.gammas[gi],
                    policy,
                    suffix,
                    cell.estimate.lower,
                    cell.estimate.upper,
                    cell.lower_q_lo,
                    cell.lower_q_hi,
                    cell.upper_q_lo,
                    cell.upper_q_hi,
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_curve(
        gammas: Vec<f64>,
        policies: &[(&str, Vec<f64>, Vec<f64>)],
    ) -> SensitivityCurve {
        let mut cells = BTreeMap::new();
        for (name, lower, upper) in policies {
            let col: Vec<CurveCell> = lower
                .iter()
                .zip(upper)
                .zip(&gammas)
                .map(|((&l, &u), &g)| CurveCell {
                    estimate: BoundEstimate {
                        gamma: g,
                        t_star: 1,
                        lower: l,
                        upper: u,
                        point_is: 0.0,
                        components: BoundComponents::default(),
                        n_used: 0,
                        diagnostics: BoundDiagnostics::default(),
                        se_lower: None,
                        se_upper: None,
                    },
                    lower_q_lo: l,
                    lower_q_hi: l,
                    upper_q_lo: u,
                    upper_q_hi: u,
                })
                .collect();
            cells.insert(name.to_string(), col);
        }
        SensitivityCurve::from_parts(gammas, cells)
    }

    #[test]
    fn no_crossing_is_infinite() {
        let curve = synthetic_curve(
            vec![1.0, 4.0, 10.0],
            &[
                ("a", vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]),
                ("b", vec![-1.0, -1.0, -1.0], vec![0.0, 0.0, 0.0]),
            ],
        );
        assert_eq!(design_sensitivity(&curve, "a", "b").unwrap(), f64::INFINITY);
    }

    #[test]
    fn linear_curves_cross_where_algebra_says() {
        // lower_a = 2 - g, upper_b = g - 2: crossing at g = 2.
        let gammas = vec![1.0, 1.5, 2.5, 3.0];
        let lower_a: Vec<f64> = gammas.iter().map(|g| 2.0 - g).collect();
        let upper_b: Vec<f64> = gammas.iter().map(|g| g - 2.0).collect();
        let curve = synthetic_curve(
            gammas,
            &[
                ("a", lower_a, vec![9.0; 4]),
                ("b", vec![-9.0; 4], upper_b),
            ],
        );
        let ds = design_sensitivity(&curve, "a", "b").unwrap();
        assert!((ds - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unseparated_baseline_is_an_error() {
        let curve = synthetic_curve(
            vec![1.0, 2.0],
            &[
                ("a", vec![0.0, -1.0], vec![1.0, 2.0]),
                ("b", vec![-1.0, -2.0], vec![0.5, 1.0]),
            ],
        );
        assert!(matches!(
            design_sensitivity(&curve, "a", "b"),
            Err(SweepError::NotSeparatedAtGammaOne)
        ));
    }

    #[test]
    fn refinement_moves_the_crossing_by_less_than_a_step() {
        // Nonlinear gap: lower_a = 1/g, upper_b = g/4 - 0.1; true crossing
        // where 1/g = g/4 - 0.1.
        let make = |step: f64| {
            let n = ((4.0 - 1.0) / step).round() as usize;
            let gammas: Vec<f64> = (0..=n).map(|i| 1.0 + step * i as f64).collect();
            let lower_a: Vec<f64> = gammas.iter().map(|g| 1.0 / g).collect();
            let upper_b: Vec<f64> = gammas.iter().map(|g| g / 4.0 - 0.1).collect();
            synthetic_curve(
                gammas,
                &[
                    ("a", lower_a, vec![9.0; n + 1]),
                    ("b", vec![-9.0; n + 1], upper_b),
                ],
            )
        };
        let coarse = design_sensitivity(&make(0.5), "a", "b").unwrap();
        let fine = design_sensitivity(&make(0.25), "a", "b").unwrap();
        assert!((coarse - fine).abs() < 0.25);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_gamma_grid("1:2:0.5").unwrap(), vec![1.0, 1.5, 2.0]);
        assert_eq!(parse_gamma_grid("3").unwrap(), vec![3.0]);
        let grid = parse_gamma_grid("1:6:0.25").unwrap();
        assert_eq!(grid.len(), 21);
        assert!((grid[20] - 6.0).abs() < 1e-12);
        assert!(parse_gamma_grid("0.5:2:0.5").is_err());
        assert!(parse_gamma_grid("2:1:0.5").is_err());
        assert!(parse_gamma_grid("abc").is_err());
    }
}
