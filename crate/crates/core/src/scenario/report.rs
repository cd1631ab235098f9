//! Result emission: plot-ready long-format CSV, box statistics, Welch
//! p-value tables and the run record. Output bytes depend only on the run's
//! samples, never on timing or thread interleaving.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{ranked_welch_test, summarize_box, BoxStats, LogLikSamples, Sided};

use super::runners::ScenarioOutput;
use super::ScenarioKind;

#[derive(Debug, Serialize)]
struct GroupSummary {
    n: usize,
    mean: f64,
    #[serde(flatten)]
    box_stats: BoxStats,
}

/// Values pooled over repeats, keyed by (party, arm, detail).
type Grouped = BTreeMap<(String, String, String), Vec<f64>>;

fn group(samples: &[LogLikSamples]) -> Grouped {
    let mut grouped: Grouped = BTreeMap::new();
    for s in samples {
        grouped
            .entry((s.party.clone(), s.arm.clone(), s.detail.clone()))
            .or_default()
            .extend(s.values.iter().copied());
    }
    grouped
}

/// Writes `samples.csv`, `box_stats.json`, `welch_tests.csv` and
/// `run_record.json` into `dir`.
pub fn write_reports(output: &ScenarioOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_samples_csv(&output.samples, &dir.join("samples.csv"))?;
    write_box_stats(&output.samples, &dir.join("box_stats.json"))?;
    write_welch_tests(output, &dir.join("welch_tests.csv"))?;
    let record = serde_json::to_string_pretty(&output.record)?;
    std::fs::write(dir.join("run_record.json"), record)?;
    Ok(())
}

fn write_samples_csv(samples: &[LogLikSamples], path: &Path) -> Result<()> {
    let mut sorted: Vec<&LogLikSamples> = samples.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.party, &a.arm, &a.detail, a.repeat, a.seed).cmp(&(
            &b.party, &b.arm, &b.detail, b.repeat, b.seed,
        ))
    });
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "scenario,party,arm,detail,repeat,draw,value")?;
    for s in sorted {
        for (i, v) in s.values.iter().enumerate() {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                s.scenario, s.party, s.arm, s.detail, s.repeat, i, v
            )?;
        }
    }
    f.flush()?;
    Ok(())
}

fn write_box_stats(samples: &[LogLikSamples], path: &Path) -> Result<()> {
    let grouped = group(samples);
    let mut out: BTreeMap<String, GroupSummary> = BTreeMap::new();
    for ((party, arm, detail), values) in &grouped {
        let key = format!("{party}|{arm}|{detail}");
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        out.insert(
            key,
            GroupSummary {
                n: values.len(),
                mean,
                box_stats: summarize_box(values)?,
            },
        );
    }
    let text = serde_json::to_string_pretty(&out)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// One row per comparison. Baseline/size compare combined against local per
/// party (one-sided), the sequential table tests each step against its
/// predecessor per party, and the skew sweep compares the arms two-sided per
/// skew level.
fn write_welch_tests(output: &ScenarioOutput, path: &Path) -> Result<()> {
    let grouped = group(&output.samples);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "party,comparison,detail,sided,t,df,p")?;

    let kind = output.record.config.kind;
    let mut rows: Vec<(String, String, String, Sided)> = Vec::new();
    match kind {
        ScenarioKind::BaselineSharing | ScenarioKind::SizeSweep => {
            // combined > local per (party, detail)
            for (party, arm, detail) in grouped.keys() {
                if arm == "combined"
                    && grouped.contains_key(&(party.clone(), "local".into(), detail.clone()))
                {
                    rows.push((
                        party.clone(),
                        "combined>local".into(),
                        detail.clone(),
                        Sided::OneGreater,
                    ));
                }
            }
        }
        ScenarioKind::SequentialSharing => {
            // step s > step s-1 per party
            for (party, arm, detail) in grouped.keys() {
                if arm != "combined" {
                    continue;
                }
                if let Some(step) = detail.strip_prefix("step=").and_then(|s| s.parse::<usize>().ok())
                {
                    if step >= 1
                        && grouped.contains_key(&(
                            party.clone(),
                            "combined".into(),
                            format!("step={}", step - 1),
                        ))
                    {
                        rows.push((
                            party.clone(),
                            format!("{}>{}", step, step - 1),
                            detail.clone(),
                            Sided::OneGreater,
                        ));
                    }
                }
            }
        }
        ScenarioKind::SkewSweep => {
            for (party, arm, detail) in grouped.keys() {
                if arm == "combined"
                    && grouped.contains_key(&(party.clone(), "local".into(), detail.clone()))
                {
                    rows.push((
                        party.clone(),
                        "combined-vs-local".into(),
                        detail.clone(),
                        Sided::Two,
                    ));
                }
            }
        }
    }

    for (party, comparison, detail, sided) in rows {
        let (a, b) = match (kind, sided) {
            (ScenarioKind::SequentialSharing, _) => {
                let step: usize = detail
                    .strip_prefix("step=")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Scenario(format!("bad step detail {detail:?}")))?;
                let a = grouped
                    .get(&(party.clone(), "combined".into(), detail.clone()))
                    .expect("row key exists");
                let b = grouped
                    .get(&(party.clone(), "combined".into(), format!("step={}", step - 1)))
                    .expect("checked above");
                (a, b)
            }
            _ => {
                let a = grouped
                    .get(&(party.clone(), "combined".into(), detail.clone()))
                    .expect("row key exists");
                let b = grouped
                    .get(&(party.clone(), "local".into(), detail.clone()))
                    .expect("checked above");
                (a, b)
            }
        };
        match ranked_welch_test(a, b, sided) {
            Ok(res) => {
                let sided_label = match sided {
                    Sided::OneGreater => "one_greater",
                    Sided::Two => "two",
                };
                writeln!(
                    f,
                    "{party},{comparison},{detail},{sided_label},{},{},{}",
                    res.t, res.df, res.p
                )?;
            }
            Err(e) => {
                writeln!(f, "{party},{comparison},{detail},error,,,{e}")?;
            }
        }
    }
    f.flush()?;
    Ok(())
}
