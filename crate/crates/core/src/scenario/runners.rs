//! The four scenario runners.
//!
//! All randomness flows from the master seed through labelled paths, so any
//! (party, repeat, permutation) slice reproduces in isolation and reruns are
//! bit-identical regardless of thread count. Work units are independent;
//! results are collected in deterministic order.

use rayon::prelude::*;

use crate::dpvi::{train, DpviConfig};
use crate::error::{Error, Result};
use crate::eval::{sample_ll_distribution, CoefficientGaussian, LogLikSamples};
use crate::glm::{fit_dataset, RegressionFit};
use crate::pooling::{assemble_combined_sets, pool_fits, AccountantSummary, SyntheticRelease};
use crate::rng::{derive_seed, rng_from};
use crate::tabular::{synthesize_population, Dataset};

use super::audit::{DataVault, PartyData, BASELINE_ACCESSOR};
use super::{RunRecord, ScenarioConfig, ScenarioKind};

/// A finished run: the record for persistence plus the raw sample sets.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub record: RunRecord,
    pub samples: Vec<LogLikSamples>,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutput> {
    match config.kind {
        ScenarioKind::BaselineSharing => run_baseline_sharing(config),
        ScenarioKind::SequentialSharing => run_sequential_sharing(config),
        ScenarioKind::SizeSweep => run_size_sweep(config),
        ScenarioKind::SkewSweep => run_skew_sweep(config),
    }
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

/// Splits every party 80/20 (or per config), subsamples the training side,
/// and pools the test splits into the shared evaluation set. Data
/// preparation is fixed across repeats; repeats only reseed inference.
struct Prepared {
    vault: DataVault,
    global_test: Dataset,
}

fn prepare(config: &ScenarioConfig, subsample_fraction: f64) -> Result<Prepared> {
    let population = synthesize_population(
        &config.population,
        derive_seed(config.master_seed, &["population"]),
    )?;
    let mut parties = Vec::with_capacity(population.len());
    let mut tests = Vec::new();
    for (name, ds) in population {
        let (train, test) = ds.train_test_split(
            config.train_fraction,
            derive_seed(config.master_seed, &["split", &name]),
        )?;
        let train = if subsample_fraction < 1.0 {
            train.subsample(
                subsample_fraction,
                derive_seed(
                    config.master_seed,
                    &["subsample", &name, &format!("{subsample_fraction}")],
                ),
            )?
        } else {
            train
        };
        parties.push(PartyData {
            name,
            train,
            test: test.clone(),
        });
        tests.push(test);
    }
    let global_test = tests[0].concat(tests[1..].iter())?;
    Ok(Prepared {
        vault: DataVault::new(parties),
        global_test,
    })
}

fn dpvi_config(config: &ScenarioConfig, seed: u64) -> DpviConfig {
    let mut c = DpviConfig {
        epsilon: config.epsilon,
        seed,
        ..DpviConfig::default()
    };
    let o = &config.dpvi;
    if let Some(v) = o.iterations {
        c.iterations = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = o.clip_norm {
        c.clip_norm = v;
    }
    if let Some(v) = o.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = o.mc_samples {
        c.mc_samples = v;
    }
    if let Some(v) = o.prior_std {
        c.prior_std = v;
    }
    if let Some(v) = o.components {
        c.components = v;
    }
    c
}

/// Trains one party's generator and samples its K-set release. Each set uses
/// a fresh posterior draw so between-set variation reflects parameter
/// uncertainty, which is what Rubin's rules assume.
fn train_release(
    config: &ScenarioConfig,
    vault: &DataVault,
    party: &str,
    repeat: usize,
    stage: &str,
) -> Result<SyntheticRelease> {
    let local = vault.train(party, party)?;
    let rep = repeat.to_string();
    let train_seed = derive_seed(config.master_seed, &[stage, "train", party, &rep]);
    let out = train(local, &dpvi_config(config, train_seed))?;
    let n_m = local.len();
    let mut sets = Vec::with_capacity(config.k_sets);
    for k in 0..config.k_sets {
        let kl = k.to_string();
        let params = out
            .posterior
            .draw_generator(derive_seed(config.master_seed, &[stage, "draw", party, &rep, &kl]))?;
        let set = params
            .sample(
                n_m,
                derive_seed(config.master_seed, &[stage, "sample", party, &rep, &kl]),
            )
            .with_party_label(party.to_string());
        sets.push(set);
    }
    let accountant = AccountantSummary {
        party: party.to_string(),
        n: n_m,
        subsample_rate: out.accountant.subsample_rate,
        noise_multiplier: out.accountant.noise_multiplier,
        steps: out.accountant.steps,
        epsilon_spent: out.epsilon_spent,
        delta: out.delta,
        budget_epsilon: config.epsilon,
        seed: train_seed,
    };
    SyntheticRelease::new(party.to_string(), sets, accountant)
}

/// Per-(party, repeat) products of the sharing pipeline.
struct ArmResults {
    samples: Vec<LogLikSamples>,
    accountants: Vec<AccountantSummary>,
    flags: Vec<String>,
}

/// The full sharing pipeline at one subsample level: per repeat every party
/// releases synthetic twins, then every party fits its local-only arm and
/// its combined arm and both are scored on the shared test set.
fn sharing_pipeline(
    config: &ScenarioConfig,
    prep: &Prepared,
    detail: &str,
    stage: &str,
) -> Result<ArmResults> {
    let names = prep.vault.party_names();
    let scenario = config.kind.name();
    let mut all = ArmResults {
        samples: Vec::new(),
        accountants: Vec::new(),
        flags: Vec::new(),
    };

    for repeat in 0..config.repeats {
        let releases: Vec<SyntheticRelease> = names
            .par_iter()
            .map(|party| train_release(config, &prep.vault, party, repeat, stage))
            .collect::<Result<Vec<_>>>()?;
        for r in &releases {
            all.accountants.push(r.accountant.clone());
        }

        let per_party: Vec<(Vec<LogLikSamples>, Vec<String>)> = names
            .par_iter()
            .map(|party| -> Result<(Vec<LogLikSamples>, Vec<String>)> {
                let mut samples = Vec::new();
                let mut flags = Vec::new();
                let rep = repeat.to_string();
                let local = prep.vault.train(party, party)?;

                match fit_dataset(local) {
                    Ok(fit) if fit.converged => {
                        samples.push(sample_ll_distribution(
                            &CoefficientGaussian::from_fit(&fit),
                            &prep.global_test,
                            config.n_draws,
                            true,
                            derive_seed(config.master_seed, &[stage, "ll_local", party, &rep]),
                            scenario,
                            party,
                            "local",
                            detail,
                            repeat,
                        )?);
                    }
                    Ok(_) => flags.push(format!(
                        "repeat={repeat} party={party} arm=local{detail_sep}{detail}: fit did not converge",
                        detail_sep = if detail.is_empty() { "" } else { " " }
                    )),
                    Err(e) => flags.push(format!(
                        "repeat={repeat} party={party} arm=local: {e}"
                    )),
                }

                let others: Vec<SyntheticRelease> = releases
                    .iter()
                    .filter(|r| r.party != *party)
                    .cloned()
                    .collect();
                let combined_sets = assemble_combined_sets(local, &others, config.k_sets)?;
                let fits: Vec<RegressionFit> = combined_sets
                    .iter()
                    .map(fit_dataset)
                    .collect::<Result<Vec<_>>>()?;
                match pool_fits(fits) {
                    Ok((pooled, dropped)) => {
                        if dropped > 0 {
                            flags.push(format!(
                                "repeat={repeat} party={party} arm=combined: dropped {dropped} non-converged fits"
                            ));
                        }
                        samples.push(sample_ll_distribution(
                            &CoefficientGaussian::from_pooled(&pooled),
                            &prep.global_test,
                            config.n_draws,
                            true,
                            derive_seed(config.master_seed, &[stage, "ll_combined", party, &rep]),
                            scenario,
                            party,
                            "combined",
                            detail,
                            repeat,
                        )?);
                    }
                    Err(e) => flags.push(format!(
                        "repeat={repeat} party={party} arm=combined: {e}"
                    )),
                }
                Ok((samples, flags))
            })
            .collect::<Result<Vec<_>>>()?;

        for (samples, flags) in per_party {
            all.samples.extend(samples);
            all.flags.extend(flags);
        }
    }
    Ok(all)
}

/// Privacy-agnostic ideal: one regression over all parties' pooled raw
/// training data, the dashed reference line of the figures.
fn pooled_real_arm(
    config: &ScenarioConfig,
    prep: &Prepared,
    detail: &str,
) -> Result<Option<LogLikSamples>> {
    let names = prep.vault.party_names();
    let mut parts = Vec::with_capacity(names.len());
    for name in &names {
        parts.push(prep.vault.train(name, BASELINE_ACCESSOR)?.clone());
    }
    let pooled = parts[0].concat(parts[1..].iter())?;
    let fit = match fit_dataset(&pooled) {
        Ok(f) if f.converged => f,
        _ => return Ok(None),
    };
    Ok(Some(sample_ll_distribution(
        &CoefficientGaussian::from_fit(&fit),
        &prep.global_test,
        config.n_draws,
        true,
        derive_seed(config.master_seed, &["pooled_real"]),
        config.kind.name(),
        "all",
        "pooled_real",
        detail,
        0,
    )?))
}

fn finish(
    config: &ScenarioConfig,
    results: ArmResults,
    prep_audits: &[&DataVault],
    started: std::time::Instant,
) -> ScenarioOutput {
    let raw_accesses: usize = prep_audits.iter().map(|v| v.audit().total()).sum();
    let cross: usize = prep_audits.iter().map(|v| v.audit().cross_party()).sum();
    let record = RunRecord {
        scenario: config.kind.name().to_string(),
        config: config.clone(),
        accountants: results.accountants,
        sample_sets: RunRecord::summarize(&results.samples),
        flagged_local_fits: results.flags,
        raw_accesses,
        cross_party_raw_accesses: cross,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    ScenarioOutput {
        record,
        samples: results.samples,
    }
}

/// Every party shares with every other party; local-only, combined, and the
/// pooled-real ideal are scored on the shared test set.
pub fn run_baseline_sharing(config: &ScenarioConfig) -> Result<ScenarioOutput> {
    config.validate()?;
    if config.population.parties.len() < 2 {
        return Err(Error::Scenario("baseline sharing needs at least 2 parties".into()));
    }
    let started = std::time::Instant::now();
    with_pool(config.threads, || {
        let prep = prepare(config, config.subsample_fraction)?;
        let mut results = sharing_pipeline(config, &prep, "", "baseline")?;
        if let Some(s) = pooled_real_arm(config, &prep, "")? {
            results.samples.push(s);
        }
        Ok(finish(config, results, &[&prep.vault], started))
    })
}

/// From each focal party's perspective, other parties' releases arrive one
/// by one in random orders; the analysis is rerun at every prefix length.
/// Releases are trained once per repeat and reused across permutations.
pub fn run_sequential_sharing(config: &ScenarioConfig) -> Result<ScenarioOutput> {
    config.validate()?;
    if config.population.parties.len() < 2 {
        return Err(Error::Scenario("sequential sharing needs at least 2 parties".into()));
    }
    if config.permutations == 0 {
        return Err(Error::Scenario("permutations must be at least 1".into()));
    }
    let started = std::time::Instant::now();
    with_pool(config.threads, || {
        let prep = prepare(config, config.subsample_fraction)?;
        let names = prep.vault.party_names();
        let scenario = config.kind.name();
        let mut all = ArmResults {
            samples: Vec::new(),
            accountants: Vec::new(),
            flags: Vec::new(),
        };

        for repeat in 0..config.repeats {
            let releases: Vec<SyntheticRelease> = names
                .par_iter()
                .map(|party| train_release(config, &prep.vault, party, repeat, "sequential"))
                .collect::<Result<Vec<_>>>()?;
            for r in &releases {
                all.accountants.push(r.accountant.clone());
            }

            let per_party: Vec<(Vec<LogLikSamples>, Vec<String>)> = names
                .par_iter()
                .map(|party| -> Result<(Vec<LogLikSamples>, Vec<String>)> {
                    let mut samples = Vec::new();
                    let mut flags = Vec::new();
                    let rep = repeat.to_string();
                    let local = prep.vault.train(party, party)?;
                    let local_fit = match fit_dataset(local) {
                        Ok(f) if f.converged => Some(f),
                        _ => {
                            flags.push(format!(
                                "repeat={repeat} party={party}: local fit unavailable, step 0 skipped"
                            ));
                            None
                        }
                    };
                    let others: Vec<&SyntheticRelease> =
                        releases.iter().filter(|r| r.party != *party).collect();

                    for perm in 0..config.permutations {
                        let pl = perm.to_string();
                        let mut order: Vec<usize> = (0..others.len()).collect();
                        use rand::seq::SliceRandom;
                        order.shuffle(&mut rng_from(derive_seed(
                            config.master_seed,
                            &["sequential", "order", party, &rep, &pl],
                        )));

                        for step in 0..=others.len() {
                            let detail = format!("step={step}");
                            let estimate = if step == 0 {
                                match &local_fit {
                                    Some(f) => CoefficientGaussian::from_fit(f),
                                    None => continue,
                                }
                            } else {
                                let prefix: Vec<SyntheticRelease> = order[..step]
                                    .iter()
                                    .map(|&i| others[i].clone())
                                    .collect();
                                let sets =
                                    assemble_combined_sets(local, &prefix, config.k_sets)?;
                                let fits: Vec<RegressionFit> = sets
                                    .iter()
                                    .map(fit_dataset)
                                    .collect::<Result<Vec<_>>>()?;
                                match pool_fits(fits) {
                                    Ok((pooled, _)) => CoefficientGaussian::from_pooled(&pooled),
                                    Err(e) => {
                                        flags.push(format!(
                                            "repeat={repeat} party={party} perm={perm} step={step}: {e}"
                                        ));
                                        continue;
                                    }
                                }
                            };
                            samples.push(sample_ll_distribution(
                                &estimate,
                                &prep.global_test,
                                config.n_draws,
                                true,
                                derive_seed(
                                    config.master_seed,
                                    &["sequential", "ll", party, &rep, &pl, &step.to_string()],
                                ),
                                scenario,
                                party,
                                "combined",
                                &detail,
                                repeat,
                            )?);
                        }
                    }
                    Ok((samples, flags))
                })
                .collect::<Result<Vec<_>>>()?;

            for (samples, flags) in per_party {
                all.samples.extend(samples);
                all.flags.extend(flags);
            }
        }
        if let Some(s) = pooled_real_arm(config, &prep, "")? {
            all.samples.push(s);
        }
        Ok(finish(config, all, &[&prep.vault], started))
    })
}

/// The full sharing pipeline at each training-data fraction.
pub fn run_size_sweep(config: &ScenarioConfig) -> Result<ScenarioOutput> {
    config.validate()?;
    if config.population.parties.len() < 2 {
        return Err(Error::Scenario("size sweep needs at least 2 parties".into()));
    }
    if config.fractions.is_empty() {
        return Err(Error::Scenario("size sweep needs at least one fraction".into()));
    }
    let started = std::time::Instant::now();
    with_pool(config.threads, || {
        let mut all = ArmResults {
            samples: Vec::new(),
            accountants: Vec::new(),
            flags: Vec::new(),
        };
        let mut vaults: Vec<Prepared> = Vec::new();
        for &fraction in &config.fractions {
            let prep = prepare(config, fraction)?;
            let detail = format!("fraction={fraction}");
            let stage = format!("size:{fraction}");
            let results = sharing_pipeline(config, &prep, &detail, &stage)?;
            all.samples.extend(results.samples);
            all.accountants.extend(results.accountants);
            all.flags.extend(results.flags);
            vaults.push(prep);
        }
        // the ideal pools the full training data, independent of fraction
        let full = prepare(config, 1.0)?;
        if let Some(s) = pooled_real_arm(config, &full, "")? {
            all.samples.push(s);
        }
        vaults.push(full);
        let vault_refs: Vec<&DataVault> = vaults.iter().map(|p| &p.vault).collect();
        Ok(finish(config, all, &vault_refs, started))
    })
}

/// An artificial party built from half the held-out test pool receives an
/// injected marginal skew of varying strength; its local, combined and
/// drop-feature arms are scored on the reserved half (subgroup slice for
/// the first two, full slice for the drop arm).
pub fn run_skew_sweep(config: &ScenarioConfig) -> Result<ScenarioOutput> {
    config.validate()?;
    if config.population.parties.len() < 1 {
        return Err(Error::Scenario("skew sweep needs at least 1 releasing party".into()));
    }
    let started = std::time::Instant::now();
    with_pool(config.threads, || {
        let prep = prepare(config, config.subsample_fraction)?;
        let scenario = config.kind.name();

        // halve the test pool: one half becomes the artificial party
        let (artificial_base, eval_pool) = prep
            .global_test
            .train_test_split(0.5, derive_seed(config.master_seed, &["skew", "halves"]))?;
        let artificial_base = artificial_base.with_party_label("artificial".to_string());
        let eval_subgroup =
            eval_pool.filter_category(&config.skew.feature, &config.skew.category)?;
        if eval_subgroup.len() < 2 {
            return Err(Error::Scenario(format!(
                "subgroup slice ({}={}) of the evaluation pool has {} rows",
                config.skew.feature,
                config.skew.category,
                eval_subgroup.len()
            )));
        }
        let eval_full_dropped = eval_pool.drop_feature(&config.skew.feature)?;

        let mut all = ArmResults {
            samples: Vec::new(),
            accountants: Vec::new(),
            flags: Vec::new(),
        };

        for repeat in 0..config.repeats {
            let names = prep.vault.party_names();
            let releases: Vec<SyntheticRelease> = names
                .par_iter()
                .map(|party| train_release(config, &prep.vault, party, repeat, "skew"))
                .collect::<Result<Vec<_>>>()?;
            for r in &releases {
                all.accountants.push(r.accountant.clone());
            }

            let per_level: Vec<(Vec<LogLikSamples>, Vec<String>)> = config
                .skew
                .keep_probs
                .par_iter()
                .map(|&keep_prob| -> Result<(Vec<LogLikSamples>, Vec<String>)> {
                    let mut samples = Vec::new();
                    let mut flags = Vec::new();
                    let rep = repeat.to_string();
                    let kp_label = format!("{keep_prob}");
                    let detail = format!("keep_prob={keep_prob}");
                    // skew injection is data preparation: fixed across repeats
                    let local = artificial_base.inject_marginal_skew(
                        &config.skew.feature,
                        &config.skew.category,
                        config.skew.target_value,
                        keep_prob,
                        derive_seed(config.master_seed, &["skew", "inject", &kp_label]),
                    )?;

                    match fit_dataset(&local) {
                        Ok(fit) if fit.converged => {
                            samples.push(sample_ll_distribution(
                                &CoefficientGaussian::from_fit(&fit),
                                &eval_subgroup,
                                config.n_draws,
                                true,
                                derive_seed(
                                    config.master_seed,
                                    &["skew", "ll_local", &kp_label, &rep],
                                ),
                                scenario,
                                "artificial",
                                "local",
                                &detail,
                                repeat,
                            )?);
                        }
                        _ => flags.push(format!(
                            "repeat={repeat} keep_prob={keep_prob} arm=local: fit unavailable"
                        )),
                    }

                    let sets = assemble_combined_sets(&local, &releases, config.k_sets)?;
                    let fits: Vec<RegressionFit> = sets
                        .iter()
                        .map(fit_dataset)
                        .collect::<Result<Vec<_>>>()?;
                    match pool_fits(fits) {
                        Ok((pooled, dropped)) => {
                            if dropped > 0 {
                                flags.push(format!(
                                    "repeat={repeat} keep_prob={keep_prob} arm=combined: dropped {dropped} fits"
                                ));
                            }
                            samples.push(sample_ll_distribution(
                                &CoefficientGaussian::from_pooled(&pooled),
                                &eval_subgroup,
                                config.n_draws,
                                true,
                                derive_seed(
                                    config.master_seed,
                                    &["skew", "ll_combined", &kp_label, &rep],
                                ),
                                scenario,
                                "artificial",
                                "combined",
                                &detail,
                                repeat,
                            )?);
                        }
                        Err(e) => flags.push(format!(
                            "repeat={repeat} keep_prob={keep_prob} arm=combined: {e}"
                        )),
                    }

                    // adjust the model instead of the data: drop the skewed
                    // feature, score on the full reserved half
                    let dropped_local = local.drop_feature(&config.skew.feature)?;
                    match fit_dataset(&dropped_local) {
                        Ok(fit) if fit.converged => {
                            samples.push(sample_ll_distribution(
                                &CoefficientGaussian::from_fit(&fit),
                                &eval_full_dropped,
                                config.n_draws,
                                true,
                                derive_seed(
                                    config.master_seed,
                                    &["skew", "ll_drop", &kp_label, &rep],
                                ),
                                scenario,
                                "artificial",
                                "drop_feature",
                                &detail,
                                repeat,
                            )?);
                        }
                        _ => flags.push(format!(
                            "repeat={repeat} keep_prob={keep_prob} arm=drop_feature: fit unavailable"
                        )),
                    }

                    Ok((samples, flags))
                })
                .collect::<Result<Vec<_>>>()?;

            for (samples, flags) in per_level {
                all.samples.extend(samples);
                all.flags.extend(flags);
            }
        }
        Ok(finish(config, all, &[&prep.vault], started))
    })
}
