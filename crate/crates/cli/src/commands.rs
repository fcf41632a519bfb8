use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rankmerge::dataset::{load_dataset, validate_run_against_dataset};
use rankmerge::ensemble::{naive_blend_runs, Ensemble, EnsembleConfig, Provenance};
use rankmerge::experiments::{
    ablation_csv, evaluate_run, generate_synthetic, provenance_report, run_ablation, run_sweep,
    SweepParameter, SweepSpec, SynthSpec,
};
use rankmerge::metrics::{evaluate, MetricsReport};
use rankmerge::rankings::{load_run, RankVector};
use rankmerge::{Dataset, Error, EvalOptions, ModelRun, RunKind, RunSet};
use serde::{Deserialize, Serialize};

use crate::args::{
    AblateCmd, BlendCmd, Command, EnsembleArgs, EnsembleCmd, EvaluateArgs, Mode, ReportCmd,
    SweepCmd, SweepTarget, SynthArgs,
};
use crate::error::CliError;
use crate::output::{write_atomic, Output};

/// Alpha used by `blend` when neither flag nor config file sets one.
const DEFAULT_ALPHA: f64 = 0.8;
const DEFAULT_REPORT_QUESTIONS: usize = 5;

pub fn run(command: Command, verbose: u8) -> Result<(), CliError> {
    match command {
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Ensemble(cmd) => ensemble_cmd(cmd, verbose),
        Command::Blend(cmd) => blend_cmd(cmd, verbose),
        Command::Sweep(cmd) => sweep_cmd(cmd, verbose),
        Command::Ablate(cmd) => ablate_cmd(cmd, verbose),
        Command::Report(cmd) => report_cmd(cmd, verbose),
        Command::Synth(args) => synth_cmd(args),
    }
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{what} {}: {e}", path.display())))
}

fn load_annotations(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(open(path, "annotations file")?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_prediction(path: &Path, ds: &Dataset) -> Result<ModelRun, CliError> {
    let run = load_run(open(path, "prediction file")?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    validate_run_against_dataset(&run, ds)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(run)
}

/// Everything the ensemble-based subcommands need.
struct Inputs {
    ds: Dataset,
    runs: RunSet,
    config: EnsembleConfig,
    alpha: Option<f64>,
}

fn load_inputs(
    args: &EnsembleArgs,
    alpha_flag: Option<f64>,
    verbose: u8,
) -> Result<Inputs, CliError> {
    // Resolve flags and config before touching data files.
    let hp = args.hyperparams(alpha_flag)?;
    let ds = load_annotations(&args.annotations)?;
    let mut runs = RunSet::default();
    let mut add = |path: &PathBuf| -> Result<String, CliError> {
        let run = load_prediction(path, &ds)?;
        if verbose > 0 && run.kind() == RunKind::Scores {
            eprintln!(
                "{}: {} of {} questions contain tied scores",
                run.model_id(),
                run.questions_with_ties(),
                run.len()
            );
        }
        let id = run.model_id().to_string();
        runs.push(run)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(id)
    };
    let mrr_model_ids = args
        .mrr_runs
        .iter()
        .map(&mut add)
        .collect::<Result<Vec<_>, _>>()?;
    let ndcg_model_id = add(&args.ndcg_run)?;
    let mut config = EnsembleConfig::new(mrr_model_ids, ndcg_model_id);
    config.rho_h = hp.rho_h;
    config.rho_t = hp.rho_t;
    config.rho_nn = hp.rho_nn;
    config.rho_nm = hp.rho_nm;
    config.p = hp.p;
    config.enable_h = hp.enable_h;
    config.enable_t = hp.enable_t;
    config.enable_n = hp.enable_n;
    if let Some(primary) = hp.primary_mrr {
        config.primary_mrr_model = primary;
    }
    config
        .validate()
        .map_err(|e| CliError::from_lib("", Error::Ensemble(e)))?;
    if verbose > 0 && config.ndcg_only() {
        eprintln!("all subsets disabled: ranking by the NDCG step alone");
    }
    Ok(Inputs {
        ds,
        runs,
        config,
        alpha: hp.alpha,
    })
}

#[derive(Serialize)]
struct MergedRecord<'a> {
    question_id: &'a str,
    order: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<&'a [Provenance]>,
}

#[derive(Deserialize)]
struct MergedRecordIn {
    question_id: String,
    order: Vec<usize>,
    #[serde(default)]
    provenance: Option<Vec<Provenance>>,
}

fn jsonl_line<T: Serialize>(out: &mut String, value: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push_str(&line);
    out.push('\n');
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<(), CliError> {
    let opts = args.metrics.eval_options()?;
    if args.runs.is_empty() && args.merged.is_empty() {
        return Err(CliError::Usage(
            "evaluate needs at least one --run or --merged file".into(),
        ));
    }
    let ds = load_annotations(&args.annotations)?;
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for path in &args.runs {
        let run = load_prediction(path, &ds)?;
        let report = evaluate_run(&ds, &run, &opts)
            .map_err(|e| CliError::from_lib(&path.display().to_string(), e))?;
        reports.push((run.model_id().to_string(), report));
    }
    for path in &args.merged {
        reports.push((
            path.display().to_string(),
            evaluate_merged(path, &ds, &opts)?,
        ));
    }

    let mut out = String::new();
    for (i, (label, report)) in reports.iter().enumerate() {
        if args.json {
            let mut record = report.to_json_record();
            record["source"] = label.clone().into();
            jsonl_line(&mut out, &record)?;
        } else {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("== {label} ==\n"));
            out.push_str(&report.to_table());
        }
    }
    Output::from(args.output).emit(out.as_bytes())
}

fn evaluate_merged(
    path: &Path,
    ds: &Dataset,
    opts: &EvalOptions,
) -> Result<MetricsReport, CliError> {
    use std::io::BufRead;
    let data_err = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut rankings = BTreeMap::new();
    let mut set_sizes = Vec::new();
    for (i, line) in open(path, "merged ranking file")?.lines().enumerate() {
        let line = line.map_err(|e| data_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MergedRecordIn =
            serde_json::from_str(&line).map_err(|e| data_err(format!("line {}: {e}", i + 1)))?;
        let rv = RankVector::from_order(record.order)
            .map_err(|e| data_err(format!("line {}: {e}", i + 1)))?;
        if let Some(tags) = &record.provenance {
            set_sizes.push(tags.iter().filter(|t| **t != Provenance::Remainder).count());
        }
        if rankings.insert(record.question_id.clone(), rv).is_some() {
            return Err(data_err(format!(
                "duplicate question_id {:?}",
                record.question_id
            )));
        }
    }
    if let Some(extra) = rankings.keys().find(|id| !ds.contains(id)) {
        return Err(data_err(format!(
            "question {extra:?} is not in the dataset"
        )));
    }
    let mut report = evaluate(&rankings, ds, opts).map_err(|e| data_err(e.to_string()))?;
    if !set_sizes.is_empty() && set_sizes.len() == rankings.len() {
        report.avg_mrr_set_size =
            Some(set_sizes.iter().sum::<usize>() as f64 / set_sizes.len() as f64);
    }
    Ok(report)
}

fn two_step_jsonl(inputs: &Inputs) -> Result<String, CliError> {
    let ensemble = Ensemble::new(&inputs.config, &inputs.runs)
        .map_err(|e| CliError::from_lib("", e.into()))?;
    let merged = ensemble
        .merge_dataset(&inputs.ds)
        .map_err(|e| CliError::from_lib("", e.into()))?;
    let mut out = String::new();
    for (q, m) in inputs.ds.questions().iter().zip(&merged) {
        jsonl_line(
            &mut out,
            &MergedRecord {
                question_id: &q.question_id,
                order: &m.order,
                provenance: Some(&m.provenance),
            },
        )?;
    }
    Ok(out)
}

fn blend_jsonl(inputs: &Inputs) -> Result<String, CliError> {
    let alpha = inputs.alpha.unwrap_or(DEFAULT_ALPHA);
    let mrr_run = inputs
        .runs
        .get(&inputs.config.primary_mrr_model)
        .map_err(|e| CliError::from_lib("", e.into()))?;
    let ndcg_run = inputs
        .runs
        .get(&inputs.config.ndcg_model_id)
        .map_err(|e| CliError::from_lib("", e.into()))?;
    let mut out = String::new();
    for q in inputs.ds.questions() {
        let ranks = naive_blend_runs(mrr_run, ndcg_run, alpha, &q.question_id)
            .map_err(|e| CliError::from_lib("", e.into()))?;
        jsonl_line(
            &mut out,
            &MergedRecord {
                question_id: &q.question_id,
                order: ranks.order(),
                provenance: None,
            },
        )?;
    }
    Ok(out)
}

fn ensemble_cmd(cmd: EnsembleCmd, verbose: u8) -> Result<(), CliError> {
    let inputs = load_inputs(&cmd.common, cmd.alpha, verbose)?;
    let out = match cmd.mode {
        Mode::TwoStep => two_step_jsonl(&inputs)?,
        Mode::Blend => blend_jsonl(&inputs)?,
    };
    Output::from(cmd.output).emit(out.as_bytes())
}

fn blend_cmd(cmd: BlendCmd, verbose: u8) -> Result<(), CliError> {
    let inputs = load_inputs(&cmd.common, cmd.alpha, verbose)?;
    let out = blend_jsonl(&inputs)?;
    Output::from(cmd.output).emit(out.as_bytes())
}

fn sweep_cmd(cmd: SweepCmd, verbose: u8) -> Result<(), CliError> {
    let opts = cmd.common.metrics.eval_options()?;
    let parameters: Vec<SweepParameter> = match cmd.parameter {
        SweepTarget::One(p) => vec![p],
        SweepTarget::All => {
            if cmd.output_dir.is_none() {
                return Err(CliError::Usage(
                    "--parameter all requires --output-dir".into(),
                ));
            }
            if cmd.values.is_some() {
                return Err(CliError::Usage(
                    "--values cannot be combined with --parameter all".into(),
                ));
            }
            SweepParameter::HYPERPARAMETERS.to_vec()
        }
    };
    let inputs = load_inputs(&cmd.common, None, verbose)?;
    for parameter in parameters {
        let spec = SweepSpec {
            parameter,
            values: cmd
                .values
                .clone()
                .unwrap_or_else(|| parameter.default_grid()),
            base: inputs.config.clone(),
            objective: cmd.objective,
        };
        let result = run_sweep(&inputs.ds, &inputs.runs, &spec, &opts)
            .map_err(|e| CliError::from_lib(&format!("sweep {parameter}"), e))?;
        let best = result.best_point();
        eprintln!(
            "best {parameter} = {} (objective {:.6})",
            best.value,
            spec.objective.score(&best.report)
        );
        let csv = result.to_csv(&opts);
        match &cmd.output_dir {
            Some(dir) => {
                create_dir(dir)?;
                write_atomic(&dir.join(format!("sweep_{parameter}.csv")), csv.as_bytes())?;
            }
            None => Output::from(cmd.output.clone()).emit(csv.as_bytes())?,
        }
    }
    Ok(())
}

fn ablate_cmd(cmd: AblateCmd, verbose: u8) -> Result<(), CliError> {
    let opts = cmd.common.metrics.eval_options()?;
    let inputs = load_inputs(&cmd.common, None, verbose)?;
    let rows = run_ablation(&inputs.ds, &inputs.runs, &inputs.config, &opts)
        .map_err(|e| CliError::from_lib("ablation", e))?;
    Output::from(cmd.output).emit(ablation_csv(&rows, &opts).as_bytes())
}

fn report_cmd(cmd: ReportCmd, verbose: u8) -> Result<(), CliError> {
    let inputs = load_inputs(&cmd.common, None, verbose)?;
    let questions = if cmd.questions.is_empty() {
        inputs
            .ds
            .questions()
            .iter()
            .take(DEFAULT_REPORT_QUESTIONS)
            .map(|q| q.question_id.clone())
            .collect()
    } else {
        cmd.questions
    };
    let text = provenance_report(
        &inputs.ds,
        &inputs.runs,
        &inputs.config,
        &questions,
        cmd.depth,
    )
    .map_err(|e| CliError::from_lib("report", e))?;
    Output::from(cmd.output).emit(text.as_bytes())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Internal(format!("creating {}: {e}", dir.display())))
}

fn synth_cmd(args: SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        d: args.d,
        n: args.n,
        n_m: args.n_m,
        mrr_fidelity: args.mrr_fidelity,
        ndcg_fidelity: args.ndcg_fidelity,
        seed: args.seed,
    };
    let (ds, runs) = generate_synthetic(&spec).map_err(|e| CliError::from_lib("synth", e))?;
    create_dir(&args.output_dir)?;
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    files.push((args.output_dir.join("annotations.jsonl"), buf));
    for run in runs.iter() {
        let mut buf = Vec::new();
        run.write_jsonl(&mut buf)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        files.push((
            args.output_dir.join(format!("{}.jsonl", run.model_id())),
            buf,
        ));
    }
    for (path, bytes) in files {
        write_atomic(&path, &bytes)?;
    }
    Ok(())
}
