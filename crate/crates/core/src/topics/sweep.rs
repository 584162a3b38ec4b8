//! Hyperparameter sweep harness: train over a settings grid against one
//! shared held-out split and report perplexities.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{perplexity, train_online_lda, AlphaMode, BowDoc, EtaMode, LdaHyper};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSetting {
    pub n_topics: usize,
    pub passes: usize,
    pub kappa: f64,
    pub tau0: f64,
    pub alpha_mode: AlphaMode,
    pub eta_mode: EtaMode,
}

impl SweepSetting {
    pub fn from_hyper(hyper: &LdaHyper) -> SweepSetting {
        SweepSetting {
            n_topics: hyper.n_topics,
            passes: hyper.passes,
            kappa: hyper.kappa,
            tau0: hyper.tau0,
            alpha_mode: hyper.alpha_mode,
            eta_mode: hyper.eta_mode,
        }
    }

    pub fn apply(&self, base: &LdaHyper) -> LdaHyper {
        LdaHyper {
            n_topics: self.n_topics,
            passes: self.passes,
            kappa: self.kappa,
            tau0: self.tau0,
            alpha_mode: self.alpha_mode,
            eta_mode: self.eta_mode,
            ..base.clone()
        }
    }

    /// Compact single-token description, comma-free so it stays one CSV
    /// field.
    pub fn label(&self) -> String {
        let alpha = match self.alpha_mode {
            AlphaMode::Symmetric => "symmetric",
            AlphaMode::Asymmetric => "asymmetric",
            AlphaMode::Auto => "auto",
        };
        let eta = match self.eta_mode {
            EtaMode::Symmetric => "symmetric",
            EtaMode::Auto => "auto",
        };
        format!(
            "K={} passes={} kappa={} tau0={} alpha={} eta={}",
            self.n_topics, self.passes, self.kappa, self.tau0, alpha, eta
        )
    }
}

/// Cartesian product of the per-parameter value lists.
pub fn sweep_grid(
    n_topics: &[usize],
    passes: &[usize],
    kappas: &[f64],
    tau0s: &[f64],
    alpha_modes: &[AlphaMode],
    eta_modes: &[EtaMode],
) -> Vec<SweepSetting> {
    let mut grid = Vec::new();
    for &k in n_topics {
        for &p in passes {
            for &kappa in kappas {
                for &tau0 in tau0s {
                    for &alpha_mode in alpha_modes {
                        for &eta_mode in eta_modes {
                            grid.push(SweepSetting {
                                n_topics: k,
                                passes: p,
                                kappa,
                                tau0,
                                alpha_mode,
                                eta_mode,
                            });
                        }
                    }
                }
            }
        }
    }
    grid
}

/// One sweep row; `perplexity` is None when the run failed, with the
/// cause in `error`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: SweepSetting,
    pub perplexity: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Index into `rows` of the lowest-perplexity successful run.
    pub best: Option<usize>,
}

/// Run every setting against one deterministic held-out split (shared
/// across settings) and collect perplexities. Per-run failures are
/// recorded in their row rather than aborting the sweep.
pub fn sweep(
    corpus: &[BowDoc],
    vocab: &Vocabulary,
    settings: &[SweepSetting],
    heldout_fraction: f64,
    seed: u64,
    base: &LdaHyper,
) -> Result<SweepOutcome> {
    if settings.is_empty() {
        return Err(Error::EmptyInput("sweep grid is empty".into()));
    }
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "heldout fraction {heldout_fraction} outside (0, 1)"
        )));
    }
    let usable: Vec<usize> = (0..corpus.len()).filter(|&i| !corpus[i].is_empty()).collect();
    if usable.len() < 2 {
        return Err(Error::EmptyInput("sweep needs at least 2 non-empty documents".into()));
    }
    let mut order = usable;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_heldout = ((order.len() as f64 * heldout_fraction).ceil() as usize)
        .clamp(1, order.len() - 1);
    let heldout: Vec<BowDoc> = order[..n_heldout].iter().map(|&i| corpus[i].clone()).collect();
    let train: Vec<BowDoc> = order[n_heldout..].iter().map(|&i| corpus[i].clone()).collect();

    let mut rows = Vec::with_capacity(settings.len());
    for setting in settings {
        let hyper = setting.apply(base);
        let started = Instant::now();
        let outcome = train_online_lda(&train, vocab, &hyper)
            .and_then(|trained| perplexity(&trained.model, &heldout));
        let seconds = started.elapsed().as_secs_f64();
        match outcome {
            Ok(p) => rows.push(SweepRow {
                setting: setting.clone(),
                perplexity: Some(p),
                seconds,
                error: None,
            }),
            Err(e) => rows.push(SweepRow {
                setting: setting.clone(),
                perplexity: None,
                seconds,
                error: Some(e.to_string()),
            }),
        }
    }
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.perplexity.map(|p| (i, p)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(SweepOutcome { rows, best })
}

/// Write rows as `setting,perplexity,seconds` CSV. Failed rows leave the
/// perplexity field empty.
pub fn write_sweep_csv(rows: &[SweepRow], writer: impl std::io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["setting", "perplexity", "seconds"])
        .and_then(|_| {
            for row in rows {
                let perplexity = row
                    .perplexity
                    .map(|p| format!("{p}"))
                    .unwrap_or_default();
                csv.write_record([
                    row.setting.label(),
                    perplexity,
                    format!("{:.3}", row.seconds),
                ])?;
            }
            csv.flush()?;
            Ok(())
        })
        .map_err(|e| Error::invalid(format!("sweep csv: {e}")))
}
