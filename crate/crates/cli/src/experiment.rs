use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use qkdsim::channel::PartyId;
use qkdsim::protocols::auth::{run_auth_init, run_auth_session, CenterState};
use qkdsim::protocols::bb84::run_bb84;
use qkdsim::protocols::epr::run_epr;
use qkdsim::protocols::{ProtocolError, SessionReport};
use qkdsim::rng::SeedTree;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AttackLink, ExperimentConfig, Format, Metric, Protocol};
use crate::demo::{self, DemoRow};

/// Column order of `runs.csv`.
pub const CSV_COLUMNS: [&str; 19] = [
    "seed",
    "protocol",
    "rounds",
    "delivered",
    "sifted_len",
    "qber",
    "sifted_qber",
    "s",
    "bell_verdict",
    "alice_verified",
    "bob_verified",
    "matching_positions",
    "reconciled_len",
    "leak_budget",
    "security_s",
    "final_len",
    "keys_match",
    "aborted",
    "abort_reason",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var =
            if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Some(Self { count: values.len(), mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub runs: usize,
    pub aborted: usize,
    pub metrics: BTreeMap<&'static str, Stat>,
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Summary {
    fn from_reports(reports: &[SessionReport]) -> Self {
        let collect = |f: &dyn Fn(&SessionReport) -> Option<f64>| reports.iter().filter_map(f).collect::<Vec<_>>();
        let mut metrics = BTreeMap::new();
        let mut put = |m: Metric, values: Vec<f64>| {
            if let Some(s) = Stat::of(&values) {
                metrics.insert(m.name(), s);
            }
        };
        put(Metric::QberMean, collect(&|r| r.sifted_qber));
        put(Metric::EstimatedQberMean, collect(&|r| r.qber));
        put(Metric::SMean, collect(&|r| r.bell.as_ref().map(|b| b.s)));
        put(Metric::AbsSMean, collect(&|r| r.bell.as_ref().map(|b| b.s.abs())));
        put(Metric::KeyMatchRate, collect(&|r| (!r.aborted).then(|| indicator(r.keys_match()))));
        put(
            Metric::MutualVerificationRate,
            collect(&|r| r.bob_verified.map(|bob| indicator(bob && r.alice_verified == Some(true)))),
        );
        put(Metric::AbortRate, collect(&|r| Some(indicator(r.aborted))));
        put(Metric::FinalLenMean, collect(&|r| (!r.aborted).then(|| r.final_len() as f64)));
        Self { runs: reports.len(), aborted: reports.iter().filter(|r| r.aborted).count(), metrics }
    }

    fn from_demo(rows: &[DemoRow]) -> Self {
        let mut metrics = BTreeMap::new();
        for row in rows {
            let (metric, value) = match row.scenario {
                demo::PLAIN => (Metric::EveSuccessRate, row.eve_key_recovery_rate),
                _ => (Metric::ImpostorRejectionRate, row.rejection_rate),
            };
            metrics.insert(metric.name(), Stat { count: row.runs, mean: value, std: 0.0 });
        }
        Self { runs: rows.iter().map(|r| r.runs).sum(), aborted: 0, metrics }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Acceptance {
    pub metric: &'static str,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub value: Option<f64>,
    pub pass: bool,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config: &'a ExperimentConfig,
    input_hash: String,
    summary: &'a Summary,
    acceptance: &'a Option<Acceptance>,
}

#[derive(Serialize)]
struct ReportFile<'a, T: Serialize> {
    config: &'a ExperimentConfig,
    input_hash: String,
    runs: &'a [T],
    summary: &'a Summary,
    acceptance: &'a Option<Acceptance>,
}

#[derive(Debug)]
pub enum ExperimentError {
    Protocol(ProtocolError),
    Io(std::io::Error),
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e)
    }
}

impl From<ProtocolError> for ExperimentError {
    fn from(e: ProtocolError) -> Self {
        ExperimentError::Protocol(e)
    }
}

pub struct Outcome {
    pub summary: Summary,
    pub acceptance: Option<Acceptance>,
}

/// One seeded session. For `auth_session` the initial phase runs first on
/// attack-free links; if it aborts, its report is returned instead.
pub fn run_once(config: &ExperimentConfig, seed: u64) -> Result<SessionReport, ProtocolError> {
    match config.protocol {
        Protocol::Bb84 => run_bb84(&config.bb84(), &config.channel(), seed),
        Protocol::Epr => run_epr(&config.epr(), &config.channel(), seed),
        Protocol::AuthInit => {
            let (attacked, honest) = (config.channel(), config.honest_channel());
            let (a, b) = match config.attack_link {
                AttackLink::Alice => (&attacked, &honest),
                AttackLink::Bob => (&honest, &attacked),
            };
            Ok(run_auth_init(&config.auth_init(config.num_rounds), &mut center(), a, b, seed)?.report)
        }
        Protocol::AuthSession => {
            let honest = config.honest_channel();
            let init_seed = SeedTree::new(seed).child(1).master();
            let init =
                run_auth_init(&config.auth_init(config.init_rounds), &mut center(), &honest, &honest, init_seed)?;
            let (Some(mut ka), Some(mut kb)) = (init.alice_key, init.bob_key) else { return Ok(init.report) };
            Ok(run_auth_session(&config.auth_session(), &mut ka, &mut kb, &config.channel(), seed)?.report)
        }
        Protocol::MitmDemo => unreachable!("handled by the demo runner"),
    }
}

fn center() -> CenterState {
    let mut c = CenterState::new();
    c.register(PartyId::Alice);
    c.register(PartyId::Bob);
    c
}

fn seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.repetitions as u64).map(|i| config.seed.wrapping_add(i)).collect()
}

fn check(config: &ExperimentConfig, summary: &Summary) -> Option<Acceptance> {
    let metric = config.expect_metric?;
    let value = summary.metrics.get(metric.name()).map(|s| s.mean);
    let pass =
        value.is_some_and(|v| config.expect_min.is_none_or(|m| v >= m) && config.expect_max.is_none_or(|m| v <= m));
    Some(Acceptance { metric: metric.name(), min: config.expect_min, max: config.expect_max, value, pass })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(r: &SessionReport) -> Vec<String> {
    let protocol = serde_json::to_value(r.protocol).unwrap().as_str().unwrap().to_string();
    let verdict = r.bell.as_ref().map(|b| serde_json::to_value(b.verdict).unwrap().as_str().unwrap().to_string());
    let reason =
        r.abort_reason.as_ref().map(|a| serde_json::to_value(a).unwrap()["reason"].as_str().unwrap().to_string());
    vec![
        r.seed.to_string(),
        protocol,
        r.rounds.to_string(),
        r.delivered.to_string(),
        r.sifted_len.to_string(),
        opt(r.qber),
        opt(r.sifted_qber),
        opt(r.bell.as_ref().map(|b| b.s)),
        opt(verdict),
        opt(r.alice_verified),
        opt(r.bob_verified),
        opt(r.matching_positions),
        r.reconciled_len.to_string(),
        r.leak_budget.to_string(),
        r.security_s.to_string(),
        r.final_len().to_string(),
        opt((!r.aborted).then(|| r.keys_match())),
        r.aborted.to_string(),
        opt(reason),
    ]
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn run(config: &ExperimentConfig, out: &Path) -> Result<Outcome, ExperimentError> {
    fs::create_dir_all(out)?;
    let hash = config.content_hash();
    if config.protocol == Protocol::MitmDemo {
        let rows = demo::run_demo(
            config.repetitions,
            config.seed,
            &config.epr(),
            &config.auth_init(config.init_rounds),
            &config.auth_session(),
            &config.honest_channel(),
        )?;
        let summary = Summary::from_demo(&rows);
        let acceptance = check(config, &summary);
        write_outputs(config, out, &hash, &rows, &summary, &acceptance, |w| demo::write_csv(w, &rows))?;
        return Ok(Outcome { summary, acceptance });
    }

    let mut runs: Vec<(u64, SessionReport)> = seeds(config)
        .into_par_iter()
        .map(|seed| run_once(config, seed).map(|r| (seed, r)))
        .collect::<Result<_, _>>()?;
    runs.sort_by_key(|(seed, _)| *seed);
    let reports: Vec<SessionReport> = runs.into_iter().map(|(_, r)| r).collect();

    if config.transcripts {
        let dir = out.join("transcripts");
        fs::create_dir_all(&dir)?;
        for r in &reports {
            fs::write(dir.join(format!("seed-{}.jsonl", r.seed)), r.transcript.to_jsonl())?;
            let events: String =
                r.transcript.quantum_events().iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
            fs::write(dir.join(format!("seed-{}.events.jsonl", r.seed)), events)?;
        }
    }

    let summary = Summary::from_reports(&reports);
    let acceptance = check(config, &summary);
    write_outputs(config, out, &hash, &reports, &summary, &acceptance, |w| {
        w.write_record(CSV_COLUMNS)?;
        for r in &reports {
            w.write_record(csv_row(r))?;
        }
        Ok(())
    })?;
    Ok(Outcome { summary, acceptance })
}

fn write_outputs<T: Serialize>(
    config: &ExperimentConfig,
    out: &Path,
    hash: &str,
    runs: &[T],
    summary: &Summary,
    acceptance: &Option<Acceptance>,
    csv_body: impl FnOnce(&mut csv::Writer<fs::File>) -> csv::Result<()>,
) -> std::io::Result<()> {
    match config.format {
        Format::Json => write_json(
            &out.join("report.json"),
            &ReportFile { config, input_hash: hash.to_string(), runs, summary, acceptance },
        ),
        Format::Csv => {
            let mut w = csv::Writer::from_path(out.join("runs.csv"))?;
            csv_body(&mut w).map_err(std::io::Error::other)?;
            w.flush()?;
            write_json(
                &out.join("summary.json"),
                &SummaryFile { config, input_hash: hash.to_string(), summary, acceptance },
            )
        }
    }
}
