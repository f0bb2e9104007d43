//! Side-by-side man-in-the-middle comparison: plain EPR against the
//! authenticated session.

use std::fs;
use std::io::Write;
use std::path::Path;

use qkdsim::adversary::{mitm_auth, mitm_epr};
use qkdsim::channel::{PartyId, QuantumChannelConfig};
use qkdsim::protocols::auth::{run_auth_init, AuthInitConfig, AuthSessionConfig, CenterState};
use qkdsim::protocols::epr::EprConfig;
use qkdsim::protocols::ProtocolError;
use qkdsim::rng::SeedTree;
use rayon::prelude::*;
use serde::Serialize;

pub const PLAIN: &str = "plain_epr";
pub const AUTHENTICATED: &str = "authenticated";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoRow {
    pub scenario: &'static str,
    pub runs: usize,
    /// Runs in which Eve ends up holding both parties' final keys.
    pub eve_key_recovery_rate: f64,
    /// Runs in which the impostor was rejected on both sides.
    pub rejection_rate: f64,
    /// Basis-matching check positions seen by Alice, authenticated row only.
    pub k_min: Option<usize>,
    pub k_mean: Option<f64>,
}

struct AuthRun {
    recovered: bool,
    rejected: bool,
    k: usize,
}

pub fn run_demo(
    runs: usize,
    seed: u64,
    epr: &EprConfig,
    init: &AuthInitConfig,
    session: &AuthSessionConfig,
    channel: &QuantumChannelConfig,
) -> Result<Vec<DemoRow>, ProtocolError> {
    let tree = SeedTree::new(seed);
    let plain: Vec<bool> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let out = mitm_epr(epr, channel, tree.child(2 * i).master())?;
            Ok(!out.alice_side.aborted
                && !out.bob_side.aborted
                && out.eve.k_ae.as_ref() == Some(&out.alice_side.final_key_alice)
                && out.eve.k_eb.as_ref() == Some(&out.bob_side.final_key_bob))
        })
        .collect::<Result<_, ProtocolError>>()?;

    let auth: Vec<AuthRun> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let sub = tree.child(2 * i + 1);
            let mut center = CenterState::new();
            center.register(PartyId::Alice);
            center.register(PartyId::Bob);
            let k1 = run_auth_init(init, &mut center, channel, channel, sub.child(0).master())?;
            let (Some(mut ka), Some(mut kb)) = (k1.alice_key, k1.bob_key) else {
                return Err(ProtocolError::InvalidConfig("initial phase aborted".into()));
            };
            let out = mitm_auth(session, &mut ka, &mut kb, channel, sub.child(1).master())?;
            Ok(AuthRun {
                recovered: out.eve.k_ae.is_some() && out.eve.k_eb.is_some(),
                rejected: out.alice_side.bob_verified == Some(false) && out.bob_side.alice_verified == Some(false),
                k: out.alice_side.matching_positions.unwrap_or(0),
            })
        })
        .collect::<Result<_, ProtocolError>>()?;

    let rate = |hits: usize| hits as f64 / runs as f64;
    let plain_hits = plain.iter().filter(|&&ok| ok).count();
    Ok(vec![
        DemoRow {
            scenario: PLAIN,
            runs,
            eve_key_recovery_rate: rate(plain_hits),
            rejection_rate: 0.0,
            k_min: None,
            k_mean: None,
        },
        DemoRow {
            scenario: AUTHENTICATED,
            runs,
            eve_key_recovery_rate: rate(auth.iter().filter(|r| r.recovered).count()),
            rejection_rate: rate(auth.iter().filter(|r| r.rejected).count()),
            k_min: auth.iter().map(|r| r.k).min(),
            k_mean: Some(auth.iter().map(|r| r.k as f64).sum::<f64>() / runs as f64),
        },
    ])
}

pub fn write_csv<W: Write>(w: &mut csv::Writer<W>, rows: &[DemoRow]) -> csv::Result<()> {
    w.write_record(["scenario", "runs", "eve_key_recovery_rate", "rejection_rate", "k_min", "k_mean"])?;
    for r in rows {
        w.write_record([
            r.scenario.to_string(),
            r.runs.to_string(),
            r.eve_key_recovery_rate.to_string(),
            r.rejection_rate.to_string(),
            r.k_min.map(|k| k.to_string()).unwrap_or_default(),
            r.k_mean.map(|k| k.to_string()).unwrap_or_default(),
        ])?;
    }
    Ok(())
}

pub fn table(rows: &[DemoRow]) -> String {
    let mut s = format!(
        "{:<14} {:>5} {:>17} {:>10} {:>6} {:>7}\n",
        "scenario", "runs", "eve_key_recovery", "rejection", "k_min", "k_mean"
    );
    for r in rows {
        s += &format!(
            "{:<14} {:>5} {:>17.2} {:>10.2} {:>6} {:>7}\n",
            r.scenario,
            r.runs,
            r.eve_key_recovery_rate,
            r.rejection_rate,
            r.k_min.map_or("-".to_string(), |k| k.to_string()),
            r.k_mean.map_or("-".to_string(), |k| format!("{k:.1}")),
        );
    }
    s
}

pub fn write_files(out: &Path, rows: &[DemoRow]) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(&rows).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(out.join("attack_demo.json"), text)?;
    let mut w = csv::Writer::from_path(out.join("attack_demo.csv"))?;
    write_csv(&mut w, rows).map_err(std::io::Error::other)?;
    w.flush()
}
