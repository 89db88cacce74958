//! Scenario-grid experiment harness.
//!
//! Five experiments, each mapping a grid of synthetic scenario pairs to
//! plot-ready tables: stitching asymmetry, family-capacity monotonicity,
//! metric alignment, task-hierarchy dominance, and the sufficiency curve.
//! Each run is reproducible — (grid, seed) fixes the output bytes exactly —
//! and worker count never changes results, only wall time.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::symmetric_rep_similarity;
use crate::data::{FamilyKind, PredictiveFamily, RepresentationSet};
use crate::error::{Error, Result};
use crate::functional::{
    coarsen_labels, directed_func_similarity, stitch_directed, symmetric_func_similarity,
    TrainConfig,
};
use crate::metrics::{linear_cka, pearson, rsa, spearman, svcca, MetricConfig};
use crate::numeric::{fmt_f64, pairwise_sum};
use crate::synthetic::{generate, ScenarioData, ScenarioKind, ScenarioSpec};

/// Slack for the family-capacity ordering check: a pair counts as a
/// violation only when a lower-capacity score exceeds a higher-capacity one
/// by more than this.
pub const MONOTONICITY_SLACK: f64 = 1e-9;

/// Slack for the hierarchy dominance check (coarse ≥ fine − slack); absorbs
/// stitcher optimization noise.
pub const HIERARCHY_SLACK: f64 = 0.03;

/// Representational-similarity level above which a pair sits in the top
/// band of the sufficiency analysis.
pub const REP_TOP_BAND: f64 = 0.98;

const SUFFICIENCY_BINS: usize = 10;
const RIBBON_BINS: usize = 100;
const HIST_BINS: usize = 20;

/// The five built-in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Asymmetry,
    Monotonicity,
    Alignment,
    Hierarchy,
    Sufficiency,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Asymmetry,
        Experiment::Monotonicity,
        Experiment::Alignment,
        Experiment::Hierarchy,
        Experiment::Sufficiency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Asymmetry => "asymmetry",
            Experiment::Monotonicity => "monotonicity",
            Experiment::Alignment => "alignment",
            Experiment::Hierarchy => "hierarchy",
            Experiment::Sufficiency => "sufficiency",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asymmetry" => Ok(Experiment::Asymmetry),
            "monotonicity" => Ok(Experiment::Monotonicity),
            "alignment" => Ok(Experiment::Alignment),
            "hierarchy" => Ok(Experiment::Hierarchy),
            "sufficiency" => Ok(Experiment::Sufficiency),
            other => Err(Error::InvalidSpec(format!(
                "unknown experiment '{other}'; expected one of \
                 asymmetry|monotonicity|alignment|hierarchy|sufficiency"
            ))),
        }
    }
}

/// A full experiment grid: the scenario pairs to evaluate, the families to
/// evaluate them under, and the functional-similarity threshold used by the
/// sufficiency analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub seed: u64,
    #[serde(default = "default_families")]
    pub families: Vec<FamilyKind>,
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default = "default_func_threshold")]
    pub func_threshold: f64,
}

fn default_families() -> Vec<FamilyKind> {
    vec![
        FamilyKind::Orthogonal,
        FamilyKind::OrthogonalScale,
        FamilyKind::Affine,
    ]
}

fn default_func_threshold() -> f64 {
    0.95
}

/// The standard scenario mix: exact twins through increasingly loose
/// transforms, an information-losing projection, a nuisance augmentation, a
/// nonlinear warp, and an unrelated pair.
fn standard_kinds(d: usize) -> Vec<ScenarioKind> {
    vec![
        ScenarioKind::OrthoTwin,
        ScenarioKind::ScaleTwin,
        ScenarioKind::AffineTwin,
        ScenarioKind::Projection { keep: d / 2 },
        ScenarioKind::NuisanceAugment { extra: d },
        ScenarioKind::NonlinearWarp { depth: 2 },
        ScenarioKind::IndependentPair,
    ]
}

struct BlockShape {
    reps: usize,
    n: usize,
    d: usize,
    classes: usize,
    fine_per_coarse: usize,
}

fn grid_block(
    kinds: &[ScenarioKind],
    shape: &BlockShape,
    noise_cycle: &[f64],
    seed: u64,
) -> Vec<ScenarioSpec> {
    let mut out = Vec::new();
    for kind in kinds {
        for rep in 0..shape.reps {
            let mut spec = ScenarioSpec::new(
                kind.clone(),
                shape.n,
                shape.d,
                shape.classes,
                seed.wrapping_add(out.len() as u64),
            );
            spec.fine_per_coarse = shape.fine_per_coarse;
            spec.noise_sigma = noise_cycle[rep % noise_cycle.len()];
            out.push(spec);
        }
    }
    out
}

impl GridSpec {
    /// The built-in default grid for an experiment. Sizes are chosen so the
    /// whole battery stays in desk-scale runtime while each experiment has
    /// enough pairs for its headline check.
    pub fn default_for(experiment: Experiment, seed: u64) -> Self {
        const NOISE_CYCLE: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.4];
        const GENTLE_NOISE: [f64; 5] = [0.0, 0.02, 0.05, 0.1, 0.2];
        let scenarios = match experiment {
            // 7 kinds × 45 seeds = 315 pairs; closed-form fits keep this fast.
            Experiment::Monotonicity => grid_block(
                &standard_kinds(12),
                &BlockShape { reps: 45, n: 200, d: 12, classes: 4, fine_per_coarse: 1 },
                &NOISE_CYCLE,
                seed,
            ),
            Experiment::Asymmetry => grid_block(
                &standard_kinds(16),
                &BlockShape { reps: 5, n: 400, d: 16, classes: 4, fine_per_coarse: 1 },
                &[0.0],
                seed,
            ),
            Experiment::Alignment => grid_block(
                &standard_kinds(12),
                &BlockShape { reps: 5, n: 300, d: 12, classes: 4, fine_per_coarse: 1 },
                &NOISE_CYCLE,
                seed,
            ),
            Experiment::Hierarchy => grid_block(
                &[
                    ScenarioKind::NonlinearWarp { depth: 1 },
                    ScenarioKind::NonlinearWarp { depth: 2 },
                    ScenarioKind::OrthoTwin,
                    ScenarioKind::AffineTwin,
                ],
                &BlockShape { reps: 5, n: 1000, d: 16, classes: 20, fine_per_coarse: 5 },
                &[0.0],
                seed,
            ),
            Experiment::Sufficiency => grid_block(
                &standard_kinds(16),
                &BlockShape { reps: 5, n: 400, d: 16, classes: 4, fine_per_coarse: 1 },
                &GENTLE_NOISE,
                seed,
            ),
        };
        GridSpec {
            seed,
            families: default_families(),
            scenarios,
            func_threshold: default_func_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::InvalidSpec("grid has no scenarios".into()));
        }
        if self.families.is_empty() {
            return Err(Error::InvalidSpec("grid has no families".into()));
        }
        if !(self.func_threshold > 0.0 && self.func_threshold <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "func_threshold must lie in (0, 1], got {}",
                self.func_threshold
            )));
        }
        Ok(())
    }

    /// Families in canonical (capacity) order, deduplicated.
    fn sorted_families(&self) -> Vec<FamilyKind> {
        let mut fams = self.families.clone();
        fams.sort_by_key(|k| PredictiveFamily::new(*k).capacity_rank());
        fams.dedup();
        fams
    }
}

/// The in-memory result of one experiment: rendered output files plus the
/// headline numbers. Writing the files to disk is the caller's job.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub experiment: Experiment,
    /// (file name, file bytes), in a fixed order.
    pub files: Vec<(String, Vec<u8>)>,
    pub pairs_run: usize,
    pub violations: usize,
    pub summary_line: String,
}

/// Runs one experiment over a grid.
pub fn run_experiment(experiment: Experiment, grid: &GridSpec) -> Result<ExperimentRun> {
    match experiment {
        Experiment::Asymmetry => run_asymmetry(grid),
        Experiment::Monotonicity => run_monotonicity(grid),
        Experiment::Alignment => run_metric_alignment(grid),
        Experiment::Hierarchy => run_hierarchy(grid),
        Experiment::Sufficiency => run_sufficiency(grid),
    }
}

/// Worker pool honoring the USIM_THREADS cap (unset or 0 = one worker per
/// core). Results are keyed by job index, so the pool size never affects
/// output bytes.
fn pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var("USIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidSpec(format!("could not build worker pool: {e}")))
}

// ---------------------------------------------------------------------------
// Pair-level evaluations (public so single pairs can be scored without a grid)
// ---------------------------------------------------------------------------

/// Symmetric representational similarity of one pair under each family,
/// in the given order.
pub fn rep_scores(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    families: &[FamilyKind],
) -> Result<Vec<(FamilyKind, f64)>> {
    families
        .iter()
        .map(|&k| symmetric_rep_similarity(src, dst, PredictiveFamily::new(k)).map(|s| (k, s)))
        .collect()
}

/// Directed functional similarity of one generated pair in both directions:
/// (src→dst, dst→src) raw accuracy ratios.
pub fn asymmetry_pair(
    data: &ScenarioData,
    family: FamilyKind,
    train_seed: u64,
) -> Result<(f64, f64)> {
    let fam = PredictiveFamily::new(family);
    let head_cfg = TrainConfig::head(train_seed);
    let stitch_cfg = TrainConfig::stitcher(train_seed);
    let fwd = stitch_directed(&data.src, &data.dst, fam, &head_cfg, &stitch_cfg)?;
    let bwd = stitch_directed(&data.dst, &data.src, fam, &head_cfg, &stitch_cfg)?;
    Ok((
        directed_func_similarity(&fwd)?,
        directed_func_similarity(&bwd)?,
    ))
}

/// One row of the metric-alignment table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentRow {
    pub cka: f64,
    pub rsa: f64,
    pub svcca: f64,
    /// Symmetric representational similarity under orthogonal+scale.
    pub s_rep: f64,
}

/// Baseline metrics next to the orthogonal+scale representational score for
/// one pair.
pub fn alignment_pair(data: &ScenarioData) -> Result<AlignmentRow> {
    let cfg = MetricConfig::default();
    Ok(AlignmentRow {
        cka: linear_cka(&data.src, &data.dst)?,
        rsa: rsa(&data.src, &data.dst)?,
        svcca: svcca(&data.src, &data.dst, &cfg)?,
        s_rep: symmetric_rep_similarity(
            &data.src,
            &data.dst,
            PredictiveFamily::orthogonal_scale(),
        )?,
    })
}

/// Symmetric functional similarity of a labeled pair on the fine task and on
/// its coarsened version: (fine, coarse).
pub fn hierarchy_pair(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    grouping: &[usize],
    family: FamilyKind,
    train_seed: u64,
) -> Result<(f64, f64)> {
    let fine = functional_symmetric(src, dst, family, train_seed)?;
    let labels = src
        .labels()
        .ok_or_else(|| Error::MissingLabels("hierarchy evaluation needs labels".into()))?;
    let coarse_labels = coarsen_labels(labels, grouping)?;
    let src_c = src.with_labels(coarse_labels.clone())?;
    let dst_c = dst.with_labels(coarse_labels)?;
    let coarse = functional_symmetric(&src_c, &dst_c, family, train_seed)?;
    Ok((fine, coarse))
}

/// (symmetric representational, symmetric functional) similarity of one
/// generated pair under one family.
pub fn sufficiency_pair(
    data: &ScenarioData,
    family: FamilyKind,
    train_seed: u64,
) -> Result<(f64, f64)> {
    let rep = symmetric_rep_similarity(&data.src, &data.dst, PredictiveFamily::new(family))?;
    let func = functional_symmetric(&data.src, &data.dst, family, train_seed)?;
    Ok((rep, func))
}

fn functional_symmetric(
    src: &RepresentationSet,
    dst: &RepresentationSet,
    family: FamilyKind,
    train_seed: u64,
) -> Result<f64> {
    let fam = PredictiveFamily::new(family);
    let head_cfg = TrainConfig::head(train_seed);
    let stitch_cfg = TrainConfig::stitcher(train_seed);
    let fwd = stitch_directed(src, dst, fam, &head_cfg, &stitch_cfg)?;
    let bwd = stitch_directed(dst, src, fam, &head_cfg, &stitch_cfg)?;
    Ok(symmetric_func_similarity(
        directed_func_similarity(&fwd)?,
        directed_func_similarity(&bwd)?,
    ))
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

type RowResult<T> = std::result::Result<T, String>;

fn code_of(e: Error) -> String {
    e.code().to_string()
}

/// Per-family forward/backward accuracy ratios over the grid.
///
/// The default grid mixes lossless twins with information-losing scenarios;
/// a grid without a Projection or NuisanceAugment scenario still runs, but
/// its diff distribution says little about asymmetry.
pub fn run_asymmetry(grid: &GridSpec) -> Result<ExperimentRun> {
    grid.validate()?;
    let fams = grid.sorted_families();
    if !grid.scenarios.iter().any(|s| {
        matches!(
            s.kind,
            ScenarioKind::Projection { .. } | ScenarioKind::NuisanceAugment { .. }
        )
    }) {
        log::warn!("asymmetry grid has no information-losing scenario");
    }
    let results: Vec<Vec<(FamilyKind, RowResult<(f64, f64)>)>> = pool()?.install(|| {
        grid.scenarios
            .par_iter()
            .map(|spec| match generate(spec) {
                Ok(data) => fams
                    .iter()
                    .map(|&k| (k, asymmetry_pair(&data, k, spec.seed).map_err(code_of)))
                    .collect(),
                Err(e) => {
                    let code = code_of(e);
                    fams.iter().map(|&k| (k, Err(code.clone()))).collect()
                }
            })
            .collect()
    });

    let header = [
        "pair", "scenario", "scenario_seed", "family", "fwd", "bwd", "diff", "error",
    ];
    let mut rows = Vec::new();
    let mut diffs = Vec::new();
    let mut failed = 0usize;
    for (i, (spec, fam_rows)) in grid.scenarios.iter().zip(&results).enumerate() {
        for (kind, res) in fam_rows {
            let mut row = vec![
                i.to_string(),
                spec.kind.slug().to_string(),
                spec.seed.to_string(),
                kind.name().to_string(),
            ];
            match res {
                Ok((fwd, bwd)) => {
                    diffs.push(fwd - bwd);
                    row.extend([fmt_f64(*fwd), fmt_f64(*bwd), fmt_f64(fwd - bwd)]);
                    row.push(String::new());
                }
                Err(code) => {
                    failed += 1;
                    row.extend([String::new(), String::new(), String::new()]);
                    row.push(code.clone());
                }
            }
            rows.push(row);
        }
    }

    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let metrics = serde_json::json!({
        "mean_diff": nan_null(mean(&diffs)),
        "mean_abs_diff": nan_null(mean(&abs)),
        "p95_abs_diff": nan_null(percentile(&abs, 0.95)),
        "max_abs_diff": nan_null(abs.iter().copied().fold(f64::NAN, f64::max)),
        "failed_rows": failed,
    });

    let files = vec![
        ("asymmetry.csv".to_string(), csv_bytes(&header, &rows)?),
        (
            "asymmetry_hist.csv".to_string(),
            histogram_csv(&diffs, HIST_BINS)?,
        ),
        (
            "asymmetry_summary.json".to_string(),
            summary_json(Experiment::Asymmetry, grid, metrics, 0)?,
        ),
    ];
    Ok(ExperimentRun {
        experiment: Experiment::Asymmetry,
        files,
        pairs_run: grid.scenarios.len(),
        violations: 0,
        summary_line: summary_line(Experiment::Asymmetry, grid.scenarios.len(), 0),
    })
}

/// Symmetric representational similarity per pair under every family, with
/// the capacity-ordering violation count and an equal-count-binned ribbon.
pub fn run_monotonicity(grid: &GridSpec) -> Result<ExperimentRun> {
    grid.validate()?;
    let fams = grid.sorted_families();
    let results: Vec<RowResult<Vec<f64>>> = pool()?.install(|| {
        grid.scenarios
            .par_iter()
            .map(|spec| {
                generate(spec)
                    .and_then(|data| rep_scores(&data.src, &data.dst, &fams))
                    .map(|scores| scores.into_iter().map(|(_, s)| s).collect())
                    .map_err(code_of)
            })
            .collect()
    });

    let mut header = vec![
        "pair".to_string(),
        "scenario".to_string(),
        "scenario_seed".to_string(),
        "noise".to_string(),
    ];
    header.extend(fams.iter().map(|k| format!("s_{}", k.name())));
    header.push("violation".to_string());
    header.push("error".to_string());

    let mut rows = Vec::new();
    let mut ok_scores: Vec<Vec<f64>> = Vec::new();
    let mut violations = 0usize;
    let mut failed = 0usize;
    for (i, (spec, res)) in grid.scenarios.iter().zip(&results).enumerate() {
        let mut row = vec![
            i.to_string(),
            spec.kind.slug().to_string(),
            spec.seed.to_string(),
            fmt_f64(spec.noise_sigma),
        ];
        match res {
            Ok(scores) => {
                let viol = chain_violation(scores);
                if viol {
                    violations += 1;
                }
                row.extend(scores.iter().map(|s| fmt_f64(*s)));
                row.push(if viol { "1" } else { "0" }.to_string());
                row.push(String::new());
                ok_scores.push(scores.clone());
            }
            Err(code) => {
                failed += 1;
                row.extend(std::iter::repeat(String::new()).take(fams.len() + 1));
                row.push(code.clone());
            }
        }
        rows.push(row);
    }

    let metrics = serde_json::json!({
        "violations": violations,
        "slack": MONOTONICITY_SLACK,
        "failed_rows": failed,
    });
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let files = vec![
        ("monotonicity.csv".to_string(), csv_bytes(&header_refs, &rows)?),
        (
            "monotonicity_ribbon.csv".to_string(),
            ribbon_csv(&fams, &ok_scores)?,
        ),
        (
            "monotonicity_summary.json".to_string(),
            summary_json(Experiment::Monotonicity, grid, metrics, violations)?,
        ),
    ];
    Ok(ExperimentRun {
        experiment: Experiment::Monotonicity,
        files,
        pairs_run: grid.scenarios.len(),
        violations,
        summary_line: summary_line(Experiment::Monotonicity, grid.scenarios.len(), violations),
    })
}

/// True when a lower-capacity family beats a higher-capacity one beyond the
/// slack. `scores` must already be in capacity order.
fn chain_violation(scores: &[f64]) -> bool {
    scores
        .windows(2)
        .any(|w| w[0] > w[1] + MONOTONICITY_SLACK)
}

/// Baseline metrics against the orthogonal+scale representational score,
/// with grid-level Pearson/Spearman agreement.
pub fn run_metric_alignment(grid: &GridSpec) -> Result<ExperimentRun> {
    grid.validate()?;
    let results: Vec<RowResult<AlignmentRow>> = pool()?.install(|| {
        grid.scenarios
            .par_iter()
            .map(|spec| {
                generate(spec)
                    .and_then(|data| alignment_pair(&data))
                    .map_err(code_of)
            })
            .collect()
    });

    let header = [
        "pair", "scenario", "scenario_seed", "noise", "cka", "rsa", "svcca", "s_rep", "error",
    ];
    let mut rows = Vec::new();
    let mut ok_rows: Vec<AlignmentRow> = Vec::new();
    let mut failed = 0usize;
    for (i, (spec, res)) in grid.scenarios.iter().zip(&results).enumerate() {
        let mut row = vec![
            i.to_string(),
            spec.kind.slug().to_string(),
            spec.seed.to_string(),
            fmt_f64(spec.noise_sigma),
        ];
        match res {
            Ok(r) => {
                row.extend([fmt_f64(r.cka), fmt_f64(r.rsa), fmt_f64(r.svcca), fmt_f64(r.s_rep)]);
                row.push(String::new());
                ok_rows.push(*r);
            }
            Err(code) => {
                failed += 1;
                row.extend(std::iter::repeat(String::new()).take(4));
                row.push(code.clone());
            }
        }
        rows.push(row);
    }

    let s_rep: Vec<f64> = ok_rows.iter().map(|r| r.s_rep).collect();
    let mut degenerate = false;
    let mut correlations = serde_json::Map::new();
    for (name, values) in [
        ("cka", ok_rows.iter().map(|r| r.cka).collect::<Vec<_>>()),
        ("rsa", ok_rows.iter().map(|r| r.rsa).collect()),
        ("svcca", ok_rows.iter().map(|r| r.svcca).collect()),
    ] {
        let entry = correlation_entry(&values, &s_rep);
        if entry.is_null() {
            degenerate = true;
        }
        correlations.insert(name.to_string(), entry);
    }
    let metrics = serde_json::json!({
        "correlations": correlations,
        "degenerate_grid": degenerate,
        "failed_rows": failed,
    });

    let files = vec![
        ("alignment.csv".to_string(), csv_bytes(&header, &rows)?),
        (
            "alignment_summary.json".to_string(),
            summary_json(Experiment::Alignment, grid, metrics, 0)?,
        ),
    ];
    Ok(ExperimentRun {
        experiment: Experiment::Alignment,
        files,
        pairs_run: grid.scenarios.len(),
        violations: 0,
        summary_line: summary_line(Experiment::Alignment, grid.scenarios.len(), 0),
    })
}

/// Pearson/Spearman agreement of one metric against the representational
/// score, or null when either column is (numerically) constant.
fn correlation_entry(metric: &[f64], s_rep: &[f64]) -> serde_json::Value {
    if metric.len() < 2 || std_dev(metric) < 1e-9 || std_dev(s_rep) < 1e-9 {
        return serde_json::Value::Null;
    }
    match (pearson(metric, s_rep), spearman(metric, s_rep)) {
        (Ok(p), Ok(s)) => serde_json::json!({ "pearson": p, "spearman": s }),
        _ => serde_json::Value::Null,
    }
}

/// Fine- and coarse-task symmetric functional similarity per (pair, family),
/// sorted by (family, fine score); dominance violations counted at
/// [`HIERARCHY_SLACK`].
pub fn run_hierarchy(grid: &GridSpec) -> Result<ExperimentRun> {
    grid.validate()?;
    let fams = grid.sorted_families();
    let results: Vec<Vec<(FamilyKind, RowResult<(f64, f64)>)>> = pool()?.install(|| {
        grid.scenarios
            .par_iter()
            .map(|spec| match generate(spec) {
                Ok(data) => fams
                    .iter()
                    .map(|&k| {
                        let res =
                            hierarchy_pair(&data.src, &data.dst, &data.grouping, k, spec.seed)
                                .map_err(code_of);
                        (k, res)
                    })
                    .collect(),
                Err(e) => {
                    let code = code_of(e);
                    fams.iter().map(|&k| (k, Err(code.clone()))).collect()
                }
            })
            .collect()
    });

    struct HierRow {
        pair: usize,
        scenario: &'static str,
        seed: u64,
        fam_rank: u8,
        family: &'static str,
        res: RowResult<(f64, f64)>,
    }
    let mut collected = Vec::new();
    for (i, (spec, fam_rows)) in grid.scenarios.iter().zip(&results).enumerate() {
        for (kind, res) in fam_rows {
            collected.push(HierRow {
                pair: i,
                scenario: spec.kind.slug(),
                seed: spec.seed,
                fam_rank: PredictiveFamily::new(*kind).capacity_rank(),
                family: kind.name(),
                res: res.clone(),
            });
        }
    }
    // Canonical order: family, then fine score; failures sink to the end.
    collected.sort_by(|a, b| {
        let fa = a.res.as_ref().map(|r| r.0).unwrap_or(f64::INFINITY);
        let fb = b.res.as_ref().map(|r| r.0).unwrap_or(f64::INFINITY);
        a.fam_rank
            .cmp(&b.fam_rank)
            .then(fa.total_cmp(&fb))
            .then(a.pair.cmp(&b.pair))
    });

    let header = [
        "family", "pair", "scenario", "scenario_seed", "fine", "coarse", "violation", "error",
    ];
    let mut rows = Vec::new();
    let mut violations = 0usize;
    let mut scored = 0usize;
    let mut failed = 0usize;
    for r in &collected {
        let mut row = vec![
            r.family.to_string(),
            r.pair.to_string(),
            r.scenario.to_string(),
            r.seed.to_string(),
        ];
        match &r.res {
            Ok((fine, coarse)) => {
                scored += 1;
                let viol = *fine > coarse + HIERARCHY_SLACK;
                if viol {
                    violations += 1;
                }
                row.extend([fmt_f64(*fine), fmt_f64(*coarse)]);
                row.push(if viol { "1" } else { "0" }.to_string());
                row.push(String::new());
            }
            Err(code) => {
                failed += 1;
                row.extend([String::new(), String::new(), String::new()]);
                row.push(code.clone());
            }
        }
        rows.push(row);
    }

    let metrics = serde_json::json!({
        "violations": violations,
        "violation_rate": if scored == 0 { serde_json::Value::Null } else {
            serde_json::json!(violations as f64 / scored as f64)
        },
        "slack": HIERARCHY_SLACK,
        "failed_rows": failed,
    });
    let files = vec![
        ("hierarchy.csv".to_string(), csv_bytes(&header, &rows)?),
        (
            "hierarchy_summary.json".to_string(),
            summary_json(Experiment::Hierarchy, grid, metrics, violations)?,
        ),
    ];
    Ok(ExperimentRun {
        experiment: Experiment::Hierarchy,
        files,
        pairs_run: grid.scenarios.len(),
        violations,
        summary_line: summary_line(Experiment::Hierarchy, grid.scenarios.len(), violations),
    })
}

/// Per-(pair, family) representational vs functional similarity, plus the
/// binned conditional curve P(functional > threshold | representational bin).
pub fn run_sufficiency(grid: &GridSpec) -> Result<ExperimentRun> {
    grid.validate()?;
    let fams = grid.sorted_families();
    let results: Vec<Vec<(FamilyKind, RowResult<(f64, f64)>)>> = pool()?.install(|| {
        grid.scenarios
            .par_iter()
            .map(|spec| match generate(spec) {
                Ok(data) => fams
                    .iter()
                    .map(|&k| (k, sufficiency_pair(&data, k, spec.seed).map_err(code_of)))
                    .collect(),
                Err(e) => {
                    let code = code_of(e);
                    fams.iter().map(|&k| (k, Err(code.clone()))).collect()
                }
            })
            .collect()
    });

    let header = [
        "pair", "scenario", "scenario_seed", "family", "rep_sym", "func_sym", "high_func", "error",
    ];
    let mut rows = Vec::new();
    // Per family: (count, high count) per bin, plus the top-band tally.
    let mut curves: Vec<[(usize, usize); SUFFICIENCY_BINS]> =
        vec![[(0, 0); SUFFICIENCY_BINS]; fams.len()];
    let mut top_band: Vec<(usize, usize)> = vec![(0, 0); fams.len()];
    let mut failed = 0usize;
    for (i, (spec, fam_rows)) in grid.scenarios.iter().zip(&results).enumerate() {
        for (fi, (kind, res)) in fam_rows.iter().enumerate() {
            let mut row = vec![
                i.to_string(),
                spec.kind.slug().to_string(),
                spec.seed.to_string(),
                kind.name().to_string(),
            ];
            match res {
                Ok((rep, func)) => {
                    let high = *func > grid.func_threshold;
                    let bin = sufficiency_bin(*rep);
                    curves[fi][bin].0 += 1;
                    curves[fi][bin].1 += usize::from(high);
                    if *rep >= REP_TOP_BAND {
                        top_band[fi].0 += 1;
                        top_band[fi].1 += usize::from(high);
                    }
                    row.extend([fmt_f64(*rep), fmt_f64(*func)]);
                    row.push(if high { "1" } else { "0" }.to_string());
                    row.push(String::new());
                }
                Err(code) => {
                    failed += 1;
                    row.extend([String::new(), String::new(), String::new()]);
                    row.push(code.clone());
                }
            }
            rows.push(row);
        }
    }

    let curve_header = ["family", "bin_lo", "bin_hi", "count", "high_count", "p_high"];
    let mut curve_rows = Vec::new();
    for (fi, kind) in fams.iter().enumerate() {
        for (b, &(count, high)) in curves[fi].iter().enumerate() {
            let lo = b as f64 / SUFFICIENCY_BINS as f64;
            let hi = (b + 1) as f64 / SUFFICIENCY_BINS as f64;
            curve_rows.push(vec![
                kind.name().to_string(),
                fmt_f64(lo),
                fmt_f64(hi),
                count.to_string(),
                high.to_string(),
                if count == 0 {
                    String::new()
                } else {
                    fmt_f64(high as f64 / count as f64)
                },
            ]);
        }
    }

    let mut band_metrics = serde_json::Map::new();
    for (fi, kind) in fams.iter().enumerate() {
        let (count, high) = top_band[fi];
        band_metrics.insert(
            kind.name().to_string(),
            serde_json::json!({
                "count": count,
                "p_high": if count == 0 { serde_json::Value::Null } else {
                    serde_json::json!(high as f64 / count as f64)
                },
            }),
        );
    }
    let metrics = serde_json::json!({
        "threshold": grid.func_threshold,
        "top_band_min_rep": REP_TOP_BAND,
        "top_band": band_metrics,
        "failed_rows": failed,
    });

    let files = vec![
        ("sufficiency.csv".to_string(), csv_bytes(&header, &rows)?),
        (
            "sufficiency_curve.csv".to_string(),
            csv_bytes(&curve_header, &curve_rows)?,
        ),
        (
            "sufficiency_summary.json".to_string(),
            summary_json(Experiment::Sufficiency, grid, metrics, 0)?,
        ),
    ];
    Ok(ExperimentRun {
        experiment: Experiment::Sufficiency,
        files,
        pairs_run: grid.scenarios.len(),
        violations: 0,
        summary_line: summary_line(Experiment::Sufficiency, grid.scenarios.len(), 0),
    })
}

/// Bin index over [0, 1]; out-of-range scores clamp into the edge bins.
fn sufficiency_bin(rep: f64) -> usize {
    if !rep.is_finite() || rep < 0.0 {
        return 0;
    }
    ((rep * SUFFICIENCY_BINS as f64) as usize).min(SUFFICIENCY_BINS - 1)
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn summary_line(experiment: Experiment, pairs: usize, violations: usize) -> String {
    format!("{}: {} pairs, {} violations", experiment.name(), pairs, violations)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn summary_json(
    experiment: Experiment,
    grid: &GridSpec,
    metrics: serde_json::Value,
    violations: usize,
) -> Result<Vec<u8>> {
    let v = serde_json::json!({
        "experiment": experiment.name(),
        "grid": grid,
        "seed": grid.seed,
        "metrics": metrics,
        "violations": violations,
    });
    let mut bytes =
        serde_json::to_vec_pretty(&v).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Equal-count binned means of each score column, rows sorted by the last
/// (highest-capacity) column. 100 bins, or one per pair when fewer.
fn ribbon_csv(fams: &[FamilyKind], ok_scores: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut header = vec!["bin".to_string(), "count".to_string()];
    header.extend(fams.iter().map(|k| format!("mean_s_{}", k.name())));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

    let n = ok_scores.len();
    if n == 0 {
        return csv_bytes(&header_refs, &[]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ka = *ok_scores[a].last().expect("non-empty score row");
        let kb = *ok_scores[b].last().expect("non-empty score row");
        ka.total_cmp(&kb).then(a.cmp(&b))
    });
    let bins = n.min(RIBBON_BINS);
    let mut sums = vec![vec![0.0f64; fams.len()]; bins];
    let mut counts = vec![0usize; bins];
    for (pos, &idx) in order.iter().enumerate() {
        let b = pos * bins / n;
        counts[b] += 1;
        for (j, v) in ok_scores[idx].iter().enumerate() {
            sums[b][j] += v;
        }
    }
    let mut rows = Vec::with_capacity(bins);
    for b in 0..bins {
        let mut row = vec![b.to_string(), counts[b].to_string()];
        for j in 0..fams.len() {
            row.push(if counts[b] == 0 {
                String::new()
            } else {
                fmt_f64(sums[b][j] / counts[b] as f64)
            });
        }
        rows.push(row);
    }
    csv_bytes(&header_refs, &rows)
}

/// Fixed-width histogram over the observed range.
fn histogram_csv(values: &[f64], bins: usize) -> Result<Vec<u8>> {
    let header = ["bin_lo", "bin_hi", "count"];
    if values.is_empty() {
        return csv_bytes(&header, &[]);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let row = vec![fmt_f64(lo), fmt_f64(hi), values.len().to_string()];
        return csv_bytes(&header, &[row]);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let rows: Vec<Vec<String>> = (0..bins)
        .map(|b| {
            vec![
                fmt_f64(lo + b as f64 * width),
                fmt_f64(lo + (b + 1) as f64 * width),
                counts[b].to_string(),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&sq) / xs.len() as f64).sqrt()
}

/// q-th percentile (0 < q ≤ 1) by the nearest-rank rule.
fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn nan_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}
