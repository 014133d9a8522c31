//! Structured training log: one key-value line per step.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::step::LossBreakdown;
use crate::TrainError;

pub struct TrainLog {
    file: Option<BufWriter<File>>,
    echo_every: usize,
}

impl TrainLog {
    pub fn to_file(path: &Path, echo_every: usize) -> Result<Self, TrainError> {
        let file = File::create(path)
            .map_err(|e| TrainError::Config(format!("cannot create log {}: {e}", path.display())))?;
        Ok(Self { file: Some(BufWriter::new(file)), echo_every })
    }

    pub fn silent() -> Self {
        Self { file: None, echo_every: 0 }
    }

    pub fn record(&mut self, step: usize, b: &LossBreakdown) -> Result<(), TrainError> {
        let line = format_line(step, b);
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}").map_err(|e| TrainError::Config(e.to_string()))?;
        }
        if self.echo_every > 0 && (step % self.echo_every == 0 || step == 0) {
            println!("{line}");
        }
        Ok(())
    }

    pub fn finish(&mut self) -> Result<(), TrainError> {
        if let Some(f) = &mut self.file {
            f.flush().map_err(|e| TrainError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn format_line(step: usize, b: &LossBreakdown) -> String {
    format!(
        "step={} L_actFM={:.6} L_geo={:.6} L_rep={:.6} L_pred={:.6} L_sceneFM={:.6} total={:.6} wall_ms={:.1}",
        step, b.act_fm, b.geo, b.rep, b.pred, b.scene_fm, b.total, b.wall_ms
    )
}
