use cowcka_core::montecarlo::{Comparison, SlotOutcome};
use cowcka_core::{
    bounds_row, compare_with_analytic, conference_key_rate, empirical_key_rate,
    folding_equivalence_stats, grid_oracle, optimize, run_protocol, run_protocol_recorded, sweep,
    ExperimentParams, FoldingComparison, FreeParams, OptimizerError, Optimum, RateBreakdown,
    SimError, TranscriptStats,
};
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::output::{fmt12, json_string};
use crate::{CliError, Command, Method};

pub const SWEEP_HEADER: [&str; 7] = [
    "distance_km",
    "t",
    "mu",
    "rate",
    "rate_unclamped",
    "eta_lim",
    "repeaterless",
];

pub fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<String, CliError> {
    match cmd {
        Command::Rate => rate(cfg),
        Command::Sweep => sweep_cmd(cfg),
        Command::Optimize { method } => optimize_cmd(cfg, *method),
        Command::Simulate { transcript } => simulate(cfg, transcript.as_deref()),
        Command::Equivalence => equivalence(cfg),
        Command::Bounds => bounds(cfg),
    }
}

fn from_opt(e: OptimizerError) -> CliError {
    match e {
        OptimizerError::Distances => CliError::Usage(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn from_sim(e: SimError) -> CliError {
    match e {
        SimError::InsufficientStatistics(what) => CliError::InsufficientStatistics(what.into()),
        other => CliError::Validation(other.to_string()),
    }
}

fn csv_table(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn nums(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|&x| fmt12(x)).collect()
}

#[derive(Serialize)]
struct RateReport<'a> {
    distance_km: f64,
    free: &'a FreeParams,
    breakdown: RateBreakdown,
}

fn rate(cfg: &RunConfig) -> Result<String, CliError> {
    let b = conference_key_rate(&cfg.free, &cfg.experiment);
    match cfg.format.unwrap_or(Format::Json) {
        Format::Json => Ok(json_string(&RateReport {
            distance_km: cfg.experiment.total_distance_km(),
            free: &cfg.free,
            breakdown: b,
        })),
        Format::Csv => csv_table(
            &[
                "distance_km",
                "t",
                "mu",
                "eta",
                "q_0a",
                "q_a0",
                "q_00",
                "q_aa",
                "e_t",
                "visibility",
                "q_mu",
                "e_mu",
                "zeta",
                "rate",
                "rate_unclamped",
            ],
            [nums(&[
                cfg.experiment.total_distance_km(),
                cfg.free.send_probability(),
                cfg.free.intensity(),
                b.eta,
                b.q_0a,
                b.q_a0,
                b.q_00,
                b.q_aa,
                b.e_t,
                b.visibility,
                b.q_mu,
                b.e_mu,
                b.zeta,
                b.rate,
                b.rate_unclamped,
            ])],
        ),
    }
}

fn sweep_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let distances = cfg.distances.points()?;
    let rows = sweep(&cfg.experiment, &distances, &cfg.optimizer).map_err(from_opt)?;
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Json => Ok(json_string(&rows)),
        Format::Csv => csv_table(
            &SWEEP_HEADER,
            rows.iter().map(|r| {
                nums(&[
                    r.distance_km,
                    r.best_t,
                    r.best_mu,
                    r.rate,
                    r.rate_unclamped,
                    r.eta_lim,
                    r.repeaterless,
                ])
            }),
        ),
    }
}

#[derive(Serialize)]
struct OptimizeReport {
    distance_km: f64,
    method: &'static str,
    #[serde(flatten)]
    optimum: Optimum,
}

fn optimize_cmd(cfg: &RunConfig, method: Method) -> Result<String, CliError> {
    let ep = &cfg.experiment;
    let (name, best) = match method {
        Method::Ga => ("ga", optimize(ep, &cfg.optimizer)),
        Method::Grid => ("grid", grid_oracle(ep, &cfg.optimizer)),
    };
    let best = best.map_err(from_opt)?;
    match cfg.format.unwrap_or(Format::Json) {
        Format::Json => Ok(json_string(&OptimizeReport {
            distance_km: ep.total_distance_km(),
            method: name,
            optimum: best,
        })),
        Format::Csv => {
            let b = bounds_row(ep);
            csv_table(
                &SWEEP_HEADER,
                [nums(&[
                    b.distance_km,
                    best.params.send_probability(),
                    best.params.intensity(),
                    best.breakdown.rate,
                    best.breakdown.rate_unclamped,
                    b.eta_lim,
                    b.repeaterless,
                ])],
            )
        }
    }
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    experiment: &'a ExperimentParams,
    n_slots: u64,
    seed: u64,
    comparisons: Vec<Comparison>,
    all_within_3_sigma: bool,
    empirical_rate: f64,
    analytic_rate: f64,
    counts: &'a TranscriptStats,
}

fn simulate(cfg: &RunConfig, transcript: Option<&std::path::Path>) -> Result<String, CliError> {
    let sim = cfg.simulation;
    let stats = match transcript {
        Some(path) => {
            let (stats, outcomes) =
                run_protocol_recorded(&cfg.free, &cfg.experiment, sim.n_slots, sim.seed)
                    .map_err(from_sim)?;
            write_transcript(path, &outcomes)?;
            stats
        }
        None => {
            run_protocol(&cfg.free, &cfg.experiment, sim.n_slots, sim.seed).map_err(from_sim)?
        }
    };
    let comparisons = compare_with_analytic(&stats, &cfg.experiment).map_err(from_sim)?;
    let all_within_3_sigma = comparisons.iter().all(|c| c.within_3_sigma);
    match cfg.format.unwrap_or(Format::Json) {
        Format::Json => Ok(json_string(&SimulationReport {
            experiment: &cfg.experiment,
            n_slots: sim.n_slots,
            seed: sim.seed,
            all_within_3_sigma,
            empirical_rate: empirical_key_rate(&stats, &cfg.experiment).map_err(from_sim)?,
            analytic_rate: conference_key_rate(&cfg.free, &cfg.experiment).rate,
            comparisons,
            counts: &stats,
        })),
        Format::Csv => csv_table(
            &[
                "quantity",
                "empirical",
                "std_error",
                "analytic",
                "z_score",
                "within_3_sigma",
            ],
            comparisons.iter().map(|c| {
                let mut row = vec![c.quantity.clone()];
                row.extend(nums(&[c.empirical, c.std_error, c.analytic, c.z_score]));
                row.push(c.within_3_sigma.to_string());
                row
            }),
        ),
    }
}

fn write_transcript(path: &std::path::Path, outcomes: &[SlotOutcome]) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for o in outcomes {
        w.serialize(o).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EquivalenceReport {
    n_slots: u64,
    seed: u64,
    #[serde(flatten)]
    comparison: FoldingComparison,
}

fn equivalence(cfg: &RunConfig) -> Result<String, CliError> {
    if cfg.format == Some(Format::Csv) {
        return Err(CliError::Usage(
            "equivalence only supports --format json".into(),
        ));
    }
    let sim = cfg.simulation;
    let comparison = folding_equivalence_stats(&cfg.free, &cfg.experiment, sim.n_slots, sim.seed)
        .map_err(from_sim)?;
    Ok(json_string(&EquivalenceReport {
        n_slots: sim.n_slots,
        seed: sim.seed,
        comparison,
    }))
}

fn bounds(cfg: &RunConfig) -> Result<String, CliError> {
    let rows = cfg
        .distances
        .points()?
        .into_iter()
        .map(|d| cfg.experiment.with_distance(d).map(|ep| bounds_row(&ep)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Json => Ok(json_string(&rows)),
        Format::Csv => csv_table(
            &["distance_km", "eta_lim", "repeaterless"],
            rows.iter()
                .map(|r| nums(&[r.distance_km, r.eta_lim, r.repeaterless])),
        ),
    }
}
