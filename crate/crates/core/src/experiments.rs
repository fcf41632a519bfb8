//! Experiment protocols built on the ensemble: subset ablation, one-at-a-time
//! hyperparameter sweeps, provenance listings and a synthetic corpus
//! generator that stands in for real model outputs.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::{Dataset, QuestionRecord};
use crate::ensemble::{naive_blend_runs, Ensemble, EnsembleConfig, MergedRanking, Provenance};
use crate::metrics::{evaluate, evaluate_question, EvalOptions, MetricsReport};
use crate::rankings::{ModelRun, RunSet};
use crate::{Error, Result};

/// Merges every question and evaluates the result. The report carries the
/// average first-step set size.
pub fn evaluate_two_step(
    ds: &Dataset,
    runs: &RunSet,
    config: &EnsembleConfig,
    opts: &EvalOptions,
) -> Result<(Vec<MergedRanking>, MetricsReport)> {
    let ensemble = Ensemble::new(config, runs)?;
    let rows = ds
        .questions()
        .par_iter()
        .map(|q| -> Result<_> {
            let merged = ensemble.two_step_rank(&q.question_id)?;
            let outcome = evaluate_question(&merged.to_rank_vector(), q, opts)?;
            Ok((merged, outcome))
        })
        .collect::<Result<Vec<_>>>()?;
    let (merged, outcomes): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let mut report = MetricsReport::from_outcomes(&outcomes, opts)?;
    let total: usize = merged.iter().map(|m| m.mrr_set_size).sum();
    report.avg_mrr_set_size = Some(total as f64 / merged.len() as f64);
    Ok((merged, report))
}

/// Evaluates the alpha blend of the primary MRR model and the NDCG model.
pub fn evaluate_blend(
    ds: &Dataset,
    runs: &RunSet,
    config: &EnsembleConfig,
    alpha: f64,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let mrr_run = runs.get(&config.primary_mrr_model)?;
    let ndcg_run = runs.get(&config.ndcg_model_id)?;
    let outcomes = ds
        .questions()
        .par_iter()
        .map(|q| -> Result<_> {
            let ranks = naive_blend_runs(mrr_run, ndcg_run, alpha, &q.question_id)?;
            Ok(evaluate_question(&ranks, q, opts)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_outcomes(&outcomes, opts)?)
}

/// Evaluates a single model's own ranking.
pub fn evaluate_run(ds: &Dataset, run: &ModelRun, opts: &EvalOptions) -> Result<MetricsReport> {
    Ok(evaluate(run, ds, opts)?)
}

/// Subset toggles `(H, T, N)` in ablation-table order.
pub const ABLATION_ROWS: [(bool, bool, bool); 7] = [
    (true, false, false),
    (false, true, false),
    (false, false, true),
    (false, true, true),
    (true, false, true),
    (true, true, false),
    (true, true, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub enable_h: bool,
    pub enable_t: bool,
    pub enable_n: bool,
    pub report: MetricsReport,
}

pub fn run_ablation(
    ds: &Dataset,
    runs: &RunSet,
    base: &EnsembleConfig,
    opts: &EvalOptions,
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    ABLATION_ROWS
        .par_iter()
        .map(|&(h, t, n)| {
            let config = EnsembleConfig {
                enable_h: h,
                enable_t: t,
                enable_n: n,
                ..base.clone()
            };
            let (_, report) = evaluate_two_step(ds, runs, &config, opts)?;
            Ok(AblationRow {
                enable_h: h,
                enable_t: t,
                enable_n: n,
                report,
            })
        })
        .collect()
}

fn metric_columns(opts: &EvalOptions) -> String {
    let mut header = String::from("mrr");
    for k in &opts.recall_cutoffs {
        let _ = write!(header, ",r@{k}");
    }
    header.push_str(",mean_rank,ndcg,avg_set_size");
    header
}

fn metric_fields(report: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut row = format!("{:.6}", report.mrr);
    for v in report.recall_at.values() {
        let _ = write!(row, ",{v:.6}");
    }
    let _ = write!(
        row,
        ",{:.6},{},{}",
        report.mean_rank,
        opt(report.ndcg),
        opt(report.avg_mrr_set_size)
    );
    row
}

pub fn ablation_csv(rows: &[AblationRow], opts: &EvalOptions) -> String {
    let flag = |b: bool| if b { "1" } else { "0" };
    let mut out = format!("h,t,n,{}\n", metric_columns(opts));
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            flag(row.enable_h),
            flag(row.enable_t),
            flag(row.enable_n),
            metric_fields(&row.report)
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParameter {
    RhoH,
    RhoT,
    RhoNn,
    RhoNm,
    P,
    Alpha,
}

impl SweepParameter {
    /// The five two-step hyperparameters, one sweep panel each.
    pub const HYPERPARAMETERS: [SweepParameter; 5] =
        [Self::RhoH, Self::RhoT, Self::RhoNn, Self::RhoNm, Self::P];

    pub fn name(self) -> &'static str {
        match self {
            Self::RhoH => "rho_h",
            Self::RhoT => "rho_t",
            Self::RhoNn => "rho_nn",
            Self::RhoNm => "rho_nm",
            Self::P => "p",
            Self::Alpha => "alpha",
        }
    }

    fn is_count(self) -> bool {
        matches!(self, Self::RhoH | Self::RhoT | Self::RhoNn | Self::RhoNm)
    }

    /// Grid used when the caller gives no values.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Self::RhoH | Self::RhoT => (0..=10).map(f64::from).collect(),
            Self::RhoNn | Self::RhoNm => (0..=20).map(f64::from).collect(),
            Self::P => (1..=12).map(|i| f64::from(i) / 2.0).collect(),
            Self::Alpha => (0..=20).map(|i| f64::from(i) / 20.0).collect(),
        }
    }
}

impl std::fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rho_h" => Ok(Self::RhoH),
            "rho_t" => Ok(Self::RhoT),
            "rho_nn" => Ok(Self::RhoNn),
            "rho_nm" => Ok(Self::RhoNm),
            "p" => Ok(Self::P),
            "alpha" => Ok(Self::Alpha),
            other => Err(format!(
                "unknown sweep parameter {other:?}; expected rho_h, rho_t, rho_nn, rho_nm, p or alpha"
            )),
        }
    }
}

/// Weights for picking the best sweep point: `w_mrr * MRR + w_ndcg * NDCG`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub w_mrr: f64,
    pub w_ndcg: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            w_mrr: 0.5,
            w_ndcg: 0.5,
        }
    }
}

impl Objective {
    pub fn score(&self, report: &MetricsReport) -> f64 {
        self.w_mrr * report.mrr + self.w_ndcg * report.ndcg.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub base: EnsembleConfig,
    pub objective: Objective,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Spec(msg));
        if self.values.is_empty() {
            return bad("sweep needs at least one value".into());
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sweep values must be strictly increasing".into());
        }
        let (w_mrr, w_ndcg) = (self.objective.w_mrr, self.objective.w_ndcg);
        if !(w_mrr >= 0.0 && w_ndcg >= 0.0 && w_mrr + w_ndcg > 0.0) {
            return bad(format!(
                "objective weights ({w_mrr}, {w_ndcg}) must be nonnegative with a positive sum"
            ));
        }
        for &v in &self.values {
            let ok = match self.parameter {
                p if p.is_count() => v >= 0.0 && v.fract() == 0.0,
                SweepParameter::P => v.is_finite() && v > 0.0,
                _ => (0.0..=1.0).contains(&v),
            };
            if !ok {
                return bad(format!("{v} is not a valid value for {}", self.parameter));
            }
        }
        self.base.validate()?;
        Ok(())
    }

    fn config_at(&self, value: f64) -> EnsembleConfig {
        let mut config = self.base.clone();
        match self.parameter {
            SweepParameter::RhoH => config.rho_h = value as usize,
            SweepParameter::RhoT => config.rho_t = value as usize,
            SweepParameter::RhoNn => config.rho_nn = value as usize,
            SweepParameter::RhoNm => config.rho_nm = value as usize,
            SweepParameter::P => config.p = value,
            SweepParameter::Alpha => {}
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub points: Vec<SweepPoint>,
    /// Index of the first point maximizing the objective.
    pub best: usize,
}

impl SweepResult {
    pub fn best_point(&self) -> &SweepPoint {
        &self.points[self.best]
    }

    /// Header `value,mrr,r@1,r@5,r@10,mean_rank,ndcg,avg_set_size`.
    pub fn to_csv(&self, opts: &EvalOptions) -> String {
        let mut out = format!("value,{}\n", metric_columns(opts));
        for point in &self.points {
            let _ = writeln!(out, "{},{}", point.value, metric_fields(&point.report));
        }
        out
    }
}

/// Evaluates each value of one parameter with the others held at the base.
/// Alpha sweeps evaluate the naive blend instead of the two-step merge.
pub fn run_sweep(
    ds: &Dataset,
    runs: &RunSet,
    spec: &SweepSpec,
    opts: &EvalOptions,
) -> Result<SweepResult> {
    spec.validate()?;
    let points = spec
        .values
        .par_iter()
        .map(|&value| {
            let report = if spec.parameter == SweepParameter::Alpha {
                evaluate_blend(ds, runs, &spec.base, value, opts)?
            } else {
                evaluate_two_step(ds, runs, &spec.config_at(value), opts)?.1
            };
            Ok(SweepPoint { value, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, point) in points.iter().enumerate() {
        if spec.objective.score(&point.report) > spec.objective.score(&points[best].report) {
            best = i;
        }
    }
    Ok(SweepResult {
        parameter: spec.parameter,
        points,
        best,
    })
}

pub const DEFAULT_REMAINDER_DEPTH: usize = 10;

/// Text listing of the ranked first-step set with `[H]`/`[T]`/`[N]` tags,
/// followed by the next `remainder_depth` second-step candidates.
pub fn provenance_report(
    ds: &Dataset,
    runs: &RunSet,
    config: &EnsembleConfig,
    question_ids: &[String],
    remainder_depth: usize,
) -> Result<String> {
    let ensemble = Ensemble::new(config, runs)?;
    let mut out = String::new();
    for (i, question_id) in question_ids.iter().enumerate() {
        let question = ds.get(question_id).ok_or_else(|| {
            Error::Rank(crate::rankings::RankError::UnknownQuestion(
                question_id.clone(),
            ))
        })?;
        let merged = ensemble.two_step_rank(question_id)?;
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "Question: {question_id}");
        let (head, tail) = merged.order.split_at(merged.mrr_set_size);
        if !head.is_empty() {
            let _ = writeln!(out, "MRR candidate set");
            for (pos, &c) in head.iter().enumerate() {
                let tag = merged.provenance[c].tag();
                let _ = writeln!(out, "  {}. {tag} {}", pos + 1, question.label(c));
            }
        }
        let shown = &tail[..remainder_depth.min(tail.len())];
        let _ = writeln!(
            out,
            "Top {} from the remaining NDCG candidates",
            shown.len()
        );
        for (pos, &c) in shown.iter().enumerate() {
            debug_assert_eq!(merged.provenance[c], Provenance::Remainder);
            let _ = writeln!(out, "  {}. {}", pos + 1, question.label(c));
        }
    }
    Ok(out)
}

/// Parameters for the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub d: usize,
    pub n: usize,
    pub n_m: usize,
    /// Probability that an MRR model ranks the human answer first.
    pub mrr_fidelity: f64,
    /// Weight of relevance (vs. noise) in the NDCG model's scores.
    pub ndcg_fidelity: f64,
    pub seed: u64,
}

/// Chance that a non-answer candidate is marked relevant at all.
const POSITIVE_RATE: f64 = 0.1;
/// Weight of relevance in the MRR models' scores.
const MRR_RELEVANCE_WEIGHT: f64 = 0.5;
/// When an MRR model misses, the answer lands uniformly in ranks 2..=this.
const MISS_DEPTH: usize = 10;

pub const SYNTH_NDCG_MODEL: &str = "ndcg";

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.n_m == 0 {
            return Err(Error::Spec("d, n and n_m must all be at least 1".into()));
        }
        for (name, v) in [
            ("mrr_fidelity", self.mrr_fidelity),
            ("ndcg_fidelity", self.ndcg_fidelity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Spec(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn mrr_model_ids(&self) -> Vec<String> {
        (0..self.n_m).map(|i| format!("mrr_{i}")).collect()
    }

    /// Default ensemble config over the generated runs.
    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig::new(self.mrr_model_ids(), SYNTH_NDCG_MODEL)
    }
}

/// Builds a corpus with dense relevance, `n_m` score-kind MRR runs and one
/// score-kind NDCG run. The output is a pure function of `spec`.
///
/// * The human answer always has relevance 1; every other candidate is
///   relevant with probability 0.1, at 1/3, 2/3 or 1.
/// * Each MRR model scores `0.5 * rel + z`; the answer is then lifted to the
///   top with probability `mrr_fidelity`, or else slotted at a uniform rank
///   in `2..=10`.
/// * The NDCG model scores `f * rel + (1 - f) * z` with `f = ndcg_fidelity`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Dataset, RunSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = (spec.d - 1).to_string().len();
    let mut questions = Vec::with_capacity(spec.d);
    let mut mrr_scores: Vec<Vec<(String, Vec<f64>)>> = vec![Vec::with_capacity(spec.d); spec.n_m];
    let mut ndcg_scores = Vec::with_capacity(spec.d);

    for i in 0..spec.d {
        let question_id = format!("q{i:0width$}");
        let gt = rng.random_range(0..spec.n);
        let relevance: Vec<f64> = (0..spec.n)
            .map(|c| {
                if c == gt {
                    1.0
                } else if rng.random_bool(POSITIVE_RATE) {
                    f64::from(rng.random_range(1u8..=3)) / 3.0
                } else {
                    0.0
                }
            })
            .collect();

        for model in mrr_scores.iter_mut() {
            let mut scores: Vec<f64> = relevance
                .iter()
                .map(|r| MRR_RELEVANCE_WEIGHT * r + rng.sample::<f64, _>(StandardNormal))
                .collect();
            place_answer(&mut scores, gt, spec.mrr_fidelity, &mut rng);
            model.push((question_id.clone(), scores));
        }

        let f = spec.ndcg_fidelity;
        let scores = relevance
            .iter()
            .map(|r| f * r + (1.0 - f) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ndcg_scores.push((question_id.clone(), scores));

        questions.push(QuestionRecord {
            question_id,
            candidate_count: spec.n,
            gt_index: gt,
            relevance: Some(relevance),
            candidates: None,
        });
    }

    let mut runs = RunSet::default();
    for (id, per_question) in spec.mrr_model_ids().into_iter().zip(mrr_scores) {
        runs.push(ModelRun::from_scores(id, per_question)?)?;
    }
    runs.push(ModelRun::from_scores(SYNTH_NDCG_MODEL, ndcg_scores)?)?;
    Ok((Dataset::from_records(questions)?, runs))
}

/// Rewrites the answer's score so it ranks first with probability `hit`,
/// otherwise at a uniform rank in `2..=min(n, MISS_DEPTH)`.
fn place_answer(scores: &mut [f64], gt: usize, hit: f64, rng: &mut ChaCha8Rng) {
    let mut others: Vec<f64> = scores
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != gt)
        .map(|(_, &s)| s)
        .collect();
    if others.is_empty() {
        return;
    }
    others.sort_by(|a, b| b.total_cmp(a));
    if rng.random_bool(hit) {
        scores[gt] = others[0] + 1.0;
        return;
    }
    let target = rng.random_range(2..=MISS_DEPTH.min(others.len() + 1));
    // Between the (target-1)-th and target-th best of the others.
    let above = others[target - 2];
    scores[gt] = match others.get(target - 1) {
        Some(&below) => (above + below) / 2.0,
        None => above - 1.0,
    };
}
