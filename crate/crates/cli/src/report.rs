use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, Result};
use crate::experiments::{self, Sim};

pub const REPORT_FORMAT: &str = "chemotaxis-report";
pub const REPORT_VERSION: u32 = 1;

/// The JSON report. The resolved config is echoed for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub results: Value,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let r: Report = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if r.format != REPORT_FORMAT {
            return Err(CliError::config(format!("{}: not a {REPORT_FORMAT} file", path.display())));
        }
        if r.version != REPORT_VERSION {
            return Err(CliError::config(format!(
                "{}: report version {} is not supported (expected {REPORT_VERSION})",
                path.display(),
                r.version
            )));
        }
        Ok(r)
    }
}

/// Runs the experiment without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<(Report, Vec<experiments::Collected>)> {
    let out = experiments::run(cfg)?;
    let report = Report {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        name: cfg.name.clone(),
        experiment: cfg.experiment,
        config: cfg.clone(),
        results: out.results,
    };
    Ok((report, out.collected))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn tag(model: &str, eps: Option<f64>) -> String {
    match eps {
        Some(e) => format!("{model}.eps{e}"),
        None => model.to_string(),
    }
}

/// Runs the experiment and writes `<name>.json` plus any requested CSV
/// files into the output directory. Returns the written paths.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<(Report, Vec<PathBuf>)> {
    let (report, collected) = execute(cfg)?;
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut written = Vec::new();
    let json = dir.join(format!("{}.json", cfg.name));
    fs::write(&json, report.to_json()?).map_err(|e| CliError::io(&json, e))?;
    written.push(json);
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: chemotaxis_core::Error| match e {
            chemotaxis_core::Error::Io(e) => CliError::io(&p, e),
            other => other.into(),
        }
    };
    for c in &collected {
        let base = format!("{}.{}", cfg.name, tag(c.model.name(), c.eps));
        match &c.sim {
            Sim::Particles(r) => {
                if cfg.output.positions_csv {
                    let p = dir.join(format!("{base}.positions.csv"));
                    r.write_positions_csv(create(&p)?).map_err(io(&p))?;
                    written.push(p);
                }
                if cfg.output.jumps_csv && !r.jumps.is_empty() {
                    let p = dir.join(format!("{base}.jumps.csv"));
                    r.write_jumps_csv(create(&p)?).map_err(io(&p))?;
                    written.push(p);
                }
            }
            Sim::Density(s) if cfg.output.density_csv => {
                let p = dir.join(format!("{base}.density.csv"));
                let mut w = create(&p)?;
                let ioerr = |e| CliError::io(&p, e);
                writeln!(w, "x,n").map_err(ioerr)?;
                for (x, v) in s.density.centers().iter().zip(&s.density.values) {
                    writeln!(w, "{x:?},{v:?}").map_err(ioerr)?;
                }
                w.flush().map_err(ioerr)?;
                written.push(p);
            }
            Sim::Density(_) => {}
        }
    }
    Ok((report, written))
}
