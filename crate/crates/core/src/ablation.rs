//! Hypernetwork variants trained under identical splits, seeds and budgets.

use serde_json::Value;

use crate::evalcli::pipeline::{run_experiment, write_reports, PipelineConfig};
use crate::evalcli::{AgentKind, EvalReport, PipelineError};
use crate::hyperzero::{HzConfig, Variant};

/// Top-level config fields whose values differ between any two configs.
pub fn config_diff(configs: &[HzConfig]) -> Result<Vec<String>, PipelineError> {
    let as_json =
        |c: &HzConfig| serde_json::to_value(c).map_err(|e| PipelineError::Config(e.to_string()));
    let values = configs
        .iter()
        .map(as_json)
        .collect::<Result<Vec<Value>, _>>()?;
    let Some(Value::Object(first)) = values.first() else {
        return Ok(Vec::new());
    };
    Ok(first
        .keys()
        .filter(|k| {
            values
                .iter()
                .any(|v| v.get(k.as_str()) != first.get(k.as_str()))
        })
        .cloned()
        .collect())
}

/// Train and evaluate each variant; every variant shares the split seeds and
/// per-split training seed, so only the variant field may differ.
pub fn run_ablation(
    cfg: &PipelineConfig,
    variants: &[Variant],
) -> Result<EvalReport, PipelineError> {
    if variants.is_empty() {
        return Err(PipelineError::Config("no variants to compare".into()));
    }
    let cfg = PipelineConfig {
        agents: variants
            .iter()
            .map(|&v| AgentKind::from_variant(v))
            .collect(),
        ..cfg.clone()
    };
    let configs: Vec<HzConfig> = variants
        .iter()
        .map(|&variant| HzConfig {
            variant,
            ..cfg.hz.clone()
        })
        .collect();
    let mut report = run_experiment(&cfg)?;
    report.header.variant_config_diff = Some(config_diff(&configs)?);
    write_reports(&report, &cfg.out.join("ablation"))?;
    Ok(report)
}
