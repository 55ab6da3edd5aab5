//! Monte-Carlo SNR sweeps over link modes, reported as CSV.

use std::io::Write;

use rayon::prelude::*;

use crate::error::Result;
use crate::experiments::config::ExperimentConfig;
use crate::experiments::system::TrainedSystem;
use crate::metrics::mean_ci95;
use crate::random::trial_seed;
use crate::semantic::{run_link, LinkMode, LinkOutcome, LinkSystem};

/// Column order of the sweep CSV.
pub const CSV_HEADER: [&str; 8] = [
    "snr_db",
    "mode",
    "trials",
    "mean_miou",
    "ci95_miou",
    "mean_nmse_db_initial",
    "mean_nmse_db_enhanced",
    "mean_symbol_mse",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub mode: LinkMode,
    pub trials: usize,
    pub mean_miou: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95_miou: f64,
    /// Means of per-trial NMSE values in dB. The enhanced column is the NMSE of
    /// the channel the equalizer used, NaN with perfect CSI.
    pub mean_nmse_db_initial: f64,
    pub mean_nmse_db_enhanced: f64,
    pub mean_symbol_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Per-row trial outcomes, parallel to `rows`.
    pub trials: Vec<Vec<LinkOutcome>>,
}

/// Runs every (SNR, mode, trial) link on the current rayon pool. Results are
/// collected in index order, so output does not depend on scheduling.
pub fn run_sweep(cfg: &ExperimentConfig, sys: &TrainedSystem) -> Result<SweepResult> {
    let s = &cfg.sweep;
    let link_sys = LinkSystem {
        codecs: &sys.codecs,
        scene: &cfg.scene,
        dmce: Some(&sys.dmce),
        y_denoiser: sys.y_denoiser.as_ref(),
    };
    let jobs: Vec<(usize, usize, usize)> = (0..s.snr_db.len())
        .flat_map(|si| (0..s.modes.len()).flat_map(move |mi| (0..s.trials).map(move |t| (si, mi, t))))
        .collect();
    let outcomes: Vec<LinkOutcome> = jobs
        .par_iter()
        .map(|&(si, mi, t)| {
            let mode_index = if s.paired_modes { 0 } else { mi };
            let seed = trial_seed(cfg.seed, si, mode_index, t);
            run_link(&link_sys, &cfg.link.at_snr_db(s.snr_db[si]), s.modes[mi], seed)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut per_row = Vec::new();
    for (chunk, &(si, mi, _)) in outcomes.chunks(s.trials).zip(jobs.iter().step_by(s.trials)) {
        rows.push(summarize(s.snr_db[si], s.modes[mi], chunk));
        per_row.push(chunk.to_vec());
    }
    Ok(SweepResult { rows, trials: per_row })
}

/// As [`run_sweep`] on a dedicated pool of `threads` workers.
pub fn run_sweep_with_threads(cfg: &ExperimentConfig, sys: &TrainedSystem, threads: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| crate::error::Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep(cfg, sys))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn summarize(snr_db: f64, mode: LinkMode, trials: &[LinkOutcome]) -> SweepRow {
    let mious: Vec<f64> = trials.iter().map(|o| o.miou).collect();
    let ci = mean_ci95(&mious);
    SweepRow {
        snr_db,
        mode,
        trials: trials.len(),
        mean_miou: ci.mean,
        ci95_miou: ci.half_width,
        mean_nmse_db_initial: mean(trials.iter().map(|o| o.nmse_initial_db)),
        mean_nmse_db_enhanced: match mode {
            LinkMode::PerfectCsi => f64::NAN,
            _ => mean(trials.iter().filter_map(|o| o.nmse_used_db)),
        },
        mean_symbol_mse: mean(trials.iter().map(|o| o.symbol_mse)),
    }
}

pub fn write_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| std::io::Error::other(e.to_string());
    out.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.snr_db.to_string(),
            r.mode.name().to_string(),
            r.trials.to_string(),
            r.mean_miou.to_string(),
            r.ci95_miou.to_string(),
            r.mean_nmse_db_initial.to_string(),
            r.mean_nmse_db_enhanced.to_string(),
            r.mean_symbol_mse.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::SegmentationMap;

    fn outcome(miou: f64, nmse: f64) -> LinkOutcome {
        let m = SegmentationMap::filled(1, 1, 2, 0).unwrap();
        LinkOutcome {
            predicted: m.clone(),
            truth: m,
            miou,
            nmse_initial_db: nmse,
            nmse_used_db: Some(nmse - 1.0),
            symbol_mse: 0.5,
        }
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            summarize(0.0, LinkMode::Dmce, &[outcome(0.5, -3.0), outcome(0.7, -5.0)]),
            summarize(-2.5, LinkMode::PerfectCsi, &[outcome(1.0, -1.0)]),
        ];
        let text = csv_string(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "snr_db,mode,trials,mean_miou,ci95_miou,mean_nmse_db_initial,mean_nmse_db_enhanced,mean_symbol_mse"
        );
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(&first[..3], &["0", "dmce", "2"]);
        assert!((first[3].parse::<f64>().unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(first[5], "-4");
        assert_eq!(first[6], "-5");
        assert_eq!(lines[2], "-2.5,perfect_csi,1,1,0,-1,NaN,0.5");
    }
}
