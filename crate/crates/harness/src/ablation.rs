//! All eight variants over shared data, with one CNN per
//! (denoise, architecture) pair.

use crate::config::HarnessConfig;
use crate::error::Result;
use crate::pipeline::{prepare, run_variant, sha256_hex, CnnRun, PreparedData, VariantOutcome};
use crate::plot::{overlay_rows, OverlayRow};
use roc_core::marketdata::OhlcSeries;
use roc_core::metrics::{Architecture, EvalReport, Variant};
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct NetworkRecord {
    /// `<architecture>/<raw|denoised>`
    pub key: String,
    pub architecture: Architecture,
    pub denoised: bool,
    pub loss_history: Vec<f64>,
    pub sha256: String,
    pub used_by: Vec<Variant>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub outcome: VariantOutcome,
    pub overlay: Vec<OverlayRow>,
    /// SHA-256 of the boosted model's JSON, for boosted variants.
    pub gbdt_sha256: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub config_hash: String,
    pub seed: u64,
    /// Successful variants in table order.
    pub outcomes: Vec<RunOutcome>,
    pub failures: Vec<(Variant, String)>,
    pub networks: Vec<NetworkRecord>,
    /// `(denoised, sha256)` of each fitted normalization.
    pub normalization: Vec<(bool, String)>,
    /// Wall-clock seconds per stage. Logged, never written to artifacts.
    pub timings: Vec<(String, f64)>,
}

#[derive(Debug, Serialize)]
pub struct AblationMeta {
    pub config_hash: String,
    pub seed: u64,
    pub variants: Vec<String>,
    pub failures: Vec<(String, String)>,
    pub networks: Vec<NetworkMeta>,
    pub normalization: Vec<NormalizationMeta>,
    pub gbdt: Vec<GbdtMeta>,
}

#[derive(Debug, Serialize)]
pub struct NetworkMeta {
    pub key: String,
    pub used_by: Vec<String>,
    pub epochs: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct NormalizationMeta {
    pub denoised: bool,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct GbdtMeta {
    pub variant: String,
    pub trees: usize,
    pub design_width: usize,
    pub sha256: String,
}

impl AblationResult {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.outcomes.iter().map(|o| o.outcome.report.clone()).collect()
    }

    pub fn get(&self, v: Variant) -> Option<&RunOutcome> {
        self.outcomes.iter().find(|o| o.outcome.variant == v)
    }

    /// The proposed variant when present, else the first successful one.
    pub fn primary(&self) -> Option<&RunOutcome> {
        self.get(Variant::DRNL).or(self.outcomes.first())
    }

    pub fn meta(&self) -> AblationMeta {
        AblationMeta {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            variants: self.outcomes.iter().map(|o| o.outcome.variant.to_string()).collect(),
            failures: self.failures.iter().map(|(v, e)| (v.to_string(), e.clone())).collect(),
            networks: self
                .networks
                .iter()
                .map(|n| NetworkMeta {
                    key: n.key.clone(),
                    used_by: n.used_by.iter().map(|v| v.to_string()).collect(),
                    epochs: n.loss_history.len(),
                    sha256: n.sha256.clone(),
                })
                .collect(),
            normalization: self
                .normalization
                .iter()
                .map(|(d, h)| NormalizationMeta { denoised: *d, sha256: h.clone() })
                .collect(),
            gbdt: self
                .outcomes
                .iter()
                .filter_map(|o| {
                    Some(GbdtMeta {
                        variant: o.outcome.variant.to_string(),
                        trees: o.outcome.gbdt.as_ref()?.num_trees(),
                        design_width: o.outcome.design_width?,
                        sha256: o.gbdt_sha256.clone()?,
                    })
                })
                .collect(),
        }
    }
}

pub fn network_key(arch: Architecture, denoised: bool) -> String {
    let a = match arch {
        Architecture::PlainCnn => "plain_cnn",
        Architecture::Resnet => "resnet",
    };
    format!("{a}/{}", if denoised { "denoised" } else { "raw" })
}

fn outcome_with_overlay(data: &PreparedData, outcome: VariantOutcome) -> Result<RunOutcome> {
    let overlay = overlay_rows(&data.timestamps, &data.raw_close, &data.end_indices(&data.test), &outcome.predictions, data.horizon)?;
    let gbdt_sha256 = match &outcome.gbdt {
        Some(m) => Some(sha256_hex(m.to_json().map_err(|e| crate::error::HarnessError::Stage {
            stage: crate::error::Stage::Output,
            source: Box::new(e),
        })?.as_bytes())),
        None => None,
    };
    Ok(RunOutcome { outcome, overlay, gbdt_sha256 })
}

/// Runs `variants` (in table order, duplicates ignored) on one series.
/// A failing stage marks every variant depending on it as failed; the rest
/// still run.
pub fn run_ablation(config: &HarnessConfig, series: &OhlcSeries<f64>, variants: &[Variant]) -> Result<AblationResult> {
    config.validate()?;
    let wanted: Vec<Variant> = Variant::ALL.into_iter().filter(|v| variants.contains(v)).collect();
    let mut result = AblationResult {
        config_hash: config.hash(),
        seed: config.seed,
        outcomes: Vec::new(),
        failures: Vec::new(),
        networks: Vec::new(),
        normalization: Vec::new(),
        timings: Vec::new(),
    };
    let mut done: Vec<RunOutcome> = Vec::new();

    for denoised in [false, true] {
        let group: Vec<Variant> = wanted.iter().copied().filter(|v| v.denoise() == denoised).collect();
        if group.is_empty() {
            continue;
        }
        let t = Instant::now();
        let data = match prepare(series, &config.data, denoised) {
            Ok(d) => d,
            Err(e) => {
                result.failures.extend(group.iter().map(|&v| (v, e.to_string())));
                continue;
            }
        };
        result.timings.push((format!("prepare/{}", if denoised { "denoised" } else { "raw" }), t.elapsed().as_secs_f64()));
        result.normalization.push((denoised, sha256_hex(&data.stats_bytes())));

        for arch in [Architecture::PlainCnn, Architecture::Resnet] {
            let users: Vec<Variant> = group.iter().copied().filter(|v| v.architecture() == arch).collect();
            if users.is_empty() {
                continue;
            }
            let key = network_key(arch, denoised);
            let t = Instant::now();
            log::info!("training {key} for {}", users.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(","));
            let cnn = match CnnRun::new(config, arch, &data) {
                Ok(c) => c,
                Err(e) => {
                    log::error!("{key}: {e}");
                    result.failures.extend(users.iter().map(|&v| (v, e.to_string())));
                    continue;
                }
            };
            let secs = t.elapsed().as_secs_f64();
            log::info!("{key}: trained and extracted in {secs:.1}s");
            result.timings.push((key.clone(), secs));
            result.networks.push(NetworkRecord {
                key: key.clone(),
                architecture: arch,
                denoised,
                loss_history: cnn.cnn.loss_history().to_vec(),
                sha256: sha256_hex(&cnn.cnn.to_bytes()),
                used_by: users.clone(),
            });
            for v in users {
                let t = Instant::now();
                match run_variant(config, v, &data, &cnn).and_then(|o| outcome_with_overlay(&data, o)) {
                    Ok(o) => {
                        log::info!("{v}: {}", o.outcome.report.render());
                        done.push(o);
                    }
                    Err(e) => {
                        log::error!("{v}: {e}");
                        result.failures.push((v, e.to_string()));
                    }
                }
                result.timings.push((v.to_string(), t.elapsed().as_secs_f64()));
            }
        }
    }
    done.sort_by_key(|o| o.outcome.variant);
    result.outcomes = done;
    result.failures.sort_by_key(|(v, _)| *v);
    Ok(result)
}
