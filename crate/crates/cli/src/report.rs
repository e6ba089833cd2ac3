//! CSV emission. Every file starts with a header; undefined values are empty
//! cells. Numbers use Rust's shortest round-trip formatting, so identical
//! runs give identical bytes.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use fedsim::heterogeneity::{ClientVariationReport, ProfileRow};

use crate::experiment::RunRecord;

pub const ROUNDS_HEADER: [&str; 8] = [
    "round",
    "strategy",
    "clients_per_round",
    "centralized_wer",
    "mean_client_loss",
    "delta_norm",
    "mean_client_wer",
    "clients_used",
];
pub const CLIENTS_HEADER: [&str; 7] = ["strategy", "clients_per_round", "rank", "client_id", "samples", "eval_split", "wer"];
pub const SUMMARY_HEADER: [&str; 7] = [
    "strategy",
    "clients_per_round",
    "rounds",
    "initial_wer",
    "final_wer",
    "best_wer",
    "empty_rounds",
];
pub const COMPARISON_HEADER: [&str; 4] = ["feature", "statistic", "corpus_a", "corpus_b"];
pub const PROFILES_HEADER: [&str; 8] = [
    "corpus",
    "utterance_id",
    "client_id",
    "loudness_db",
    "log_hnr_db",
    "perm_entropy",
    "blind_snr_db",
    "voiced_fraction",
];

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Writes a header and rows into an in-memory CSV.
pub fn to_csv<S: AsRef<[u8]>>(header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| anyhow::Error::new(e).context(format!("writing {}", path.display())))
}

/// One row per round per run, with round 0 holding the initial model.
pub fn rounds_csv(runs: &[RunRecord]) -> anyhow::Result<Vec<u8>> {
    let mut rows = Vec::new();
    for r in runs {
        let (s, k) = (r.strategy.short_name().to_string(), r.clients_per_round.to_string());
        rows.push(vec!["0".into(), s.clone(), k.clone(), num(r.initial_wer), String::new(), num(0.0), String::new(), "0".into()]);
        for row in &r.rounds {
            rows.push(vec![
                row.round.to_string(),
                s.clone(),
                k.clone(),
                num(row.centralized_wer),
                opt(row.mean_client_loss),
                num(row.delta_norm),
                opt(row.mean_client_wer),
                row.used_clients.len().to_string(),
            ]);
        }
    }
    to_csv(&ROUNDS_HEADER, rows)
}

pub fn clients_csv(runs: &[RunRecord]) -> anyhow::Result<Vec<u8>> {
    let rows = runs.iter().flat_map(|r| {
        r.clients.iter().enumerate().map(move |(rank, c)| {
            vec![
                r.strategy.short_name().to_string(),
                r.clients_per_round.to_string(),
                (rank + 1).to_string(),
                c.client_id.to_string(),
                c.samples.to_string(),
                c.eval_split.clone(),
                num(c.wer),
            ]
        })
    });
    to_csv(&CLIENTS_HEADER, rows)
}

pub fn summary_csv(runs: &[RunRecord]) -> anyhow::Result<Vec<u8>> {
    let rows = runs.iter().map(|r| {
        let best = r
            .rounds
            .iter()
            .map(|x| x.centralized_wer)
            .fold(r.initial_wer, f64::min);
        vec![
            r.strategy.short_name().to_string(),
            r.clients_per_round.to_string(),
            r.rounds.len().to_string(),
            num(r.initial_wer),
            num(r.final_wer),
            num(best),
            r.rounds.iter().filter(|x| x.empty_round).count().to_string(),
        ]
    });
    to_csv(&SUMMARY_HEADER, rows)
}

/// Statistic rows for one feature's variation report.
pub fn variation_rows(feature: &str, a: Option<&ClientVariationReport>, b: Option<&ClientVariationReport>) -> Vec<Vec<String>> {
    type Pick = fn(&ClientVariationReport) -> Option<f64>;
    let stats: [(&str, Pick); 6] = [
        ("clients", |r| Some(r.clients as f64)),
        ("mean_of_means", |r| Some(r.mean_of_means)),
        ("std_of_means", |r| Some(r.std_of_means)),
        ("mean_of_stds", |r| r.mean_of_stds),
        ("std_of_stds", |r| r.std_of_stds),
        ("kurtosis_of_means", |r| r.kurtosis_of_means),
    ];
    stats
        .iter()
        .map(|(name, pick)| {
            vec![
                feature.to_string(),
                name.to_string(),
                opt(a.and_then(pick)),
                opt(b.and_then(pick)),
            ]
        })
        .collect()
}

pub fn profile_rows<'a>(corpus: &'a str, rows: &'a [ProfileRow]) -> impl Iterator<Item = Vec<String>> + 'a {
    rows.iter().map(move |r| {
        vec![
            corpus.to_string(),
            r.utterance_id.clone(),
            r.client_id.clone(),
            num(r.profile.loudness_db),
            opt(r.profile.log_hnr_db),
            opt(r.profile.perm_entropy),
            opt(r.profile.blind_snr_db),
            num(r.profile.voiced_fraction),
        ]
    })
}
