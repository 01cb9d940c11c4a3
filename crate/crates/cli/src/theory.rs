use std::path::Path;

use citest::diagnostics::{
    check_conditional_clt, check_conditional_wlln, check_critical_value_convergence, check_optimal_power,
    check_quantile_convergence, check_test_agreement, check_variance_equivalence, CltConfig, Conditioning,
    CriticalValueDesign, QuantileConfig, TheoryCheckReport, WllnConfig,
};
use citest::{Error, Result};

const POSITIVE: [&str; 7] = [
    "critical-values",
    "variance",
    "agreement",
    "power",
    "clt",
    "wlln",
    "quantile",
];

fn check(name: &str, seed: u64, fast: bool) -> Result<Vec<TheoryCheckReport>> {
    let reps = |full: usize, reduced: usize| if fast { reduced } else { full };
    Ok(match name {
        "critical-values" => vec![
            check_critical_value_convergence(
                CriticalValueDesign::DefaultGaussian,
                &[250, 1000, 4000],
                5,
                reps(20, 8),
                0.08,
                seed,
            )?,
            check_critical_value_convergence(
                CriticalValueDesign::SkewedBinary,
                &[250, 1000, 4000],
                5,
                reps(20, 8),
                0.08,
                seed,
            )?,
        ],
        "variance" => vec![check_variance_equivalence(
            &[250, 1000, 4000],
            reps(20, 10),
            0.05,
            seed,
        )?],
        "agreement" => vec![check_test_agreement(2000, reps(200, 40), 800, 0.95, seed)?],
        "power" => vec![check_optimal_power(&[1.0, 2.0, 3.0], 2000, 5000, 0.03, seed)?],
        "clt" => {
            let base = CltConfig {
                inner_reps: reps(2000, 1000),
                seed,
                ..CltConfig::default()
            };
            let constant = CltConfig {
                conditioning: Conditioning::Constant,
                ..base.clone()
            };
            vec![check_conditional_clt(&base)?, check_conditional_clt(&constant)?]
        }
        "wlln" => [
            WllnConfig::default(),
            WllnConfig::moment_one_and_a_half(),
            WllnConfig::deterministic(),
        ]
        .into_iter()
        .map(|c| check_conditional_wlln(&WllnConfig { seed, ..c }))
        .collect::<Result<_>>()?,
        "quantile" => [
            QuantileConfig::default(),
            QuantileConfig::exact_normal(),
            QuantileConfig::median(),
        ]
        .into_iter()
        .map(|c| check_quantile_convergence(&QuantileConfig { seed, ..c }))
        .collect::<Result<_>>()?,
        "negative-controls" => vec![
            check_conditional_clt(&CltConfig {
                inner_reps: reps(2000, 1000),
                seed,
                ..CltConfig::heavy_tailed()
            })?,
            check_conditional_wlln(&WllnConfig {
                seed,
                ..WllnConfig::heavy_tailed()
            })?,
            check_quantile_convergence(&QuantileConfig {
                seed,
                ..QuantileConfig::non_convergent()
            })?,
        ],
        other => return Err(Error::InvalidParameter(format!("unknown check {other:?}"))),
    })
}

fn selection(selector: &str) -> Result<Vec<&str>> {
    match selector {
        "all" => Ok(POSITIVE.to_vec()),
        "appendix-b" => Ok(vec!["clt", "wlln", "quantile"]),
        "negative-controls" => Ok(vec!["negative-controls"]),
        s if POSITIVE.contains(&s) => Ok(vec![s]),
        other => Err(Error::InvalidParameter(format!(
            "unknown check {other:?}; expected all, negative-controls, appendix-b or one of {}",
            POSITIVE.join(", ")
        ))),
    }
}

/// Runs the selected checks, prints a pass/fail table and returns 0 exactly
/// when every check passed.
pub fn run(selector: &str, seed: u64, fast: bool, out: Option<&Path>) -> Result<u8> {
    let mut reports = Vec::new();
    for name in selection(selector)? {
        log::info!("running {name}");
        reports.extend(check(name, seed, fast)?);
    }
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>10}  {:>10}  result", "check", "metric", "threshold");
    for r in &reports {
        println!(
            "{:<width$}  {:>10.4}  {:>10.4}  {}",
            r.name,
            r.metric,
            r.threshold,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(power) = reports.iter().find(|r| r.name == "optimal_power") {
        println!();
        println!("{:>6}  {:>10}  {:>10}", "h", "empirical", "formula");
        for pair in power.details.chunks(2) {
            let h = pair[0].label.trim_start_matches("empirical_power_h=");
            println!("{h:>6}  {:>10.4}  {:>10.4}", pair[0].value, pair[1].value);
        }
    }
    if let Some(path) = out {
        let mut lines = String::new();
        for r in &reports {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        std::fs::write(path, lines)?;
    }
    Ok(if reports.iter().all(|r| r.pass) { 0 } else { 1 })
}
