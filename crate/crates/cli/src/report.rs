use std::path::Path;

use depthclip::pipeline::EvalReport;
use serde_json::{json, Value};

use crate::error::CliError;

pub fn print_table(title: &str, report: &EvalReport) {
    println!("{title}");
    println!("{:<12} {:>9} {:>9} {:>8}", "class", "precision", "recall", "support");
    for c in &report.per_class {
        println!("{:<12} {:>9.4} {:>9.4} {:>8}", c.name, c.precision, c.recall, c.support);
    }
    let total: usize = report.per_class.iter().map(|c| c.support).sum();
    let correct = (report.accuracy * total as f64).round() as usize;
    println!("accuracy {:.4} ({correct}/{total})", report.accuracy);
}

/// Metrics document shared by the evaluation subcommands; `extra` keys
/// are merged at the top level.
pub fn metrics(report: &EvalReport, config_echo: Value, extra: Value) -> Value {
    let mut doc = json!({
        "accuracy": report.accuracy,
        "per_class": report.per_class,
        "confusion": report.confusion,
        "config_echo": config_echo,
    });
    if let (Some(doc), Value::Object(extra)) = (doc.as_object_mut(), extra) {
        doc.extend(extra);
    }
    doc
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))
}
