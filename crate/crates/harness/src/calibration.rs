//! Sliding-window calibration: picks the frame geometry from the window a
//! windowed MAP detector needs to match full-block MAP.

use std::io::Write;
use std::path::Path;

use anyhow::Result;
use eqz_core::bcjr::{calibrate_window, CalibrationReport, CalibrationSettings};
use eqz_core::txchain::ChannelModel;

use crate::experiment::{domain, point_seed, Experiment};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub ebn0_db: f64,
    pub report: CalibrationReport,
    /// `N1 = N2 = (W - 1) / 2`.
    pub geometry: (usize, usize),
}

pub fn run_calibration(exp: &Experiment) -> Result<CalibrationOutcome> {
    let cfg = &exp.config.calibration;
    let ebn0_db = exp.config.calibration_ebn0();
    let settings = CalibrationSettings {
        block_len: cfg.block_len,
        blocks: cfg.blocks,
        seed: point_seed(exp.master_seed, domain::CALIBRATE, ebn0_db),
        max_window: cfg.max_window,
    };
    let channel = ChannelModel::new(exp.taps.clone(), 0.0)?;
    let report = calibrate_window(&channel, &exp.constellation, ebn0_db, cfg.target_ber_ratio, &settings)?;
    let geometry = report.geometry();
    Ok(CalibrationOutcome {
        ebn0_db,
        report,
        geometry,
    })
}

/// Probe table: one row per window, the chosen one marked.
pub fn write_calibration_csv(outcome: &CalibrationOutcome, path: &Path) -> Result<()> {
    let r = &outcome.report;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "ebn0_db,window,bits,errors,ber,full_block_errors,full_block_ber,chosen")?;
    for p in &r.probes {
        writeln!(
            f,
            "{},{},{},{},{:e},{},{:e},{}",
            outcome.ebn0_db,
            p.window,
            p.bits,
            p.bit_errors,
            p.bit_errors as f64 / p.bits as f64,
            r.full_block_errors,
            r.full_block_errors as f64 / r.bits as f64,
            p.window == r.window
        )?;
    }
    f.flush()?;
    Ok(())
}
