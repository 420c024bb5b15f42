//! Output files. Every file is written to a temporary sibling and renamed
//! into place, so a reader never sees a partial file.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

use crate::experiment::RunResult;

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    file.write_all(contents)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

/// Writes `trace.csv`, `report.json` and, for ratings data, `id_map.tsv`
/// into `dir`.
pub fn write_run(dir: &Path, result: &RunResult) -> Result<()> {
    let csv = result.trace.to_csv(result.report.objective_scale);
    write_atomic(&dir.join(&result.report.trace_file), csv.as_bytes())?;
    if let Some(map) = &result.id_map {
        write_atomic(&dir.join("id_map.tsv"), map.as_bytes())?;
    }
    let mut json = serde_json::to_string_pretty(&result.report)?;
    json.push('\n');
    write_atomic(&dir.join("report.json"), json.as_bytes())
}
