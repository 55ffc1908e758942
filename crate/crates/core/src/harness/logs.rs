//! CSV logs and the run-directory layout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::accuracy::AccuracyReport;
use super::HarnessError;
use crate::meta::LossRow;

pub const LOSS_HEADER: &str = "epoch,physics,ortho,reg,total,lr,wall_ms";
pub const ACCURACY_HEADER: &str = "epoch,mse,n_points,freq";

pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_FILE: &str = "losses.csv";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const TASK_FILE: &str = "task.txt";

/// Files every fine-tuning run directory must contain.
pub const RUN_FILES: [&str; 5] = [CONFIG_FILE, LOSS_FILE, ACCURACY_FILE, CHECKPOINT_FILE, TASK_FILE];

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = format!("{LOSS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{}\n",
            r.epoch, r.physics, r.ortho, r.reg, r.total, r.lr, r.wall_ms
        ));
    }
    out
}

pub fn accuracy_csv(rows: &[AccuracyReport]) -> String {
    let mut out = format!("{ACCURACY_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{:e},{},{}\n", r.epoch, r.mse, r.n_points, r.freq));
    }
    out
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, v: Option<&str>) -> Result<T, HarnessError> {
    v.and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| HarnessError::Invariant(format!("{}: malformed row {line}", path.display())))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRow>, HarnessError> {
    let text = read(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_HEADER) {
        return Err(HarnessError::Invariant(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let mut f = l.split(',');
            Ok(LossRow {
                epoch: field(path, i + 2, f.next())?,
                physics: field(path, i + 2, f.next())?,
                ortho: field(path, i + 2, f.next())?,
                reg: field(path, i + 2, f.next())?,
                total: field(path, i + 2, f.next())?,
                lr: field(path, i + 2, f.next())?,
                wall_ms: field(path, i + 2, f.next())?,
            })
        })
        .collect()
}

pub fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(contents.as_ref()).map_err(io)
}

pub fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Checks that `dir` holds a complete run: every required file is present and
/// both CSVs carry their headers.
pub fn check_run_dir(dir: &Path) -> Result<(), HarnessError> {
    for name in RUN_FILES {
        let p = dir.join(name);
        if !p.is_file() {
            return Err(HarnessError::Invariant(format!("run directory {} lacks {name}", dir.display())));
        }
    }
    for (name, header) in [(LOSS_FILE, LOSS_HEADER), (ACCURACY_FILE, ACCURACY_HEADER)] {
        let text = read(&dir.join(name))?;
        if text.lines().next() != Some(header) || text.lines().count() < 2 {
            return Err(HarnessError::Invariant(format!("{name} in {} is empty or malformed", dir.display())));
        }
    }
    Ok(())
}

/// Loss log and config written next to a checkpoint file: `<ckpt>.losses.csv`
/// and `<ckpt>.config.txt`.
pub fn sidecar(ckpt: &Path, suffix: &str) -> PathBuf {
    let mut name = ckpt.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    ckpt.with_file_name(name)
}
