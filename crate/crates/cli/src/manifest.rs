//! Dataset manifest: plain key = value lines binding the main dataset,
//! labels, optional eval split, and the ordered concept entries to files.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct ConceptEntry {
    pub name: String,
    pub axis: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub main: PathBuf,
    pub labels: PathBuf,
    pub eval: Option<PathBuf>,
    pub eval_labels: Option<PathBuf>,
    pub concepts: Vec<ConceptEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Manifest> {
        let mut main = None;
        let mut labels = None;
        let mut eval = None;
        let mut eval_labels = None;
        let mut concepts = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Data(format!("manifest line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "main" => main = Some(base.join(value)),
                "labels" => labels = Some(base.join(value)),
                "eval" => eval = Some(base.join(value)),
                "eval_labels" => eval_labels = Some(base.join(value)),
                "concept" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(CliError::Data(format!(
                            "manifest line {}: concept expects name, axis, path",
                            lineno + 1
                        )));
                    }
                    let axis = parts[1].parse::<usize>().map_err(|_| {
                        CliError::Data(format!(
                            "manifest line {}: bad axis '{}'",
                            lineno + 1,
                            parts[1]
                        ))
                    })?;
                    concepts.push(ConceptEntry {
                        name: parts[0].to_string(),
                        axis,
                        path: base.join(parts[2]),
                    });
                }
                other => {
                    return Err(CliError::Data(format!(
                        "manifest line {}: unknown key '{}'",
                        lineno + 1,
                        other
                    )))
                }
            }
        }
        let manifest = Manifest {
            main: main.ok_or_else(|| CliError::Data("manifest missing 'main'".into()))?,
            labels: labels.ok_or_else(|| CliError::Data("manifest missing 'labels'".into()))?,
            eval,
            eval_labels,
            concepts,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Manifest::parse(&text, base)
    }

    fn validate(&self) -> Result<()> {
        let mut paths: Vec<&Path> = vec![&self.main, &self.labels];
        if let Some(p) = &self.eval {
            paths.push(p);
        }
        if let Some(p) = &self.eval_labels {
            paths.push(p);
        }
        for entry in &self.concepts {
            paths.push(&entry.path);
        }
        for path in paths {
            if !path.exists() {
                return Err(CliError::Data(format!(
                    "manifest references missing file {}",
                    path.display()
                )));
            }
        }
        // Axes must be distinct and dense from zero.
        let mut axes: Vec<usize> = self.concepts.iter().map(|c| c.axis).collect();
        axes.sort_unstable();
        for (expect, axis) in axes.iter().enumerate() {
            if *axis != expect {
                return Err(CliError::Data(format!(
                    "concept axes must be distinct and dense from 0, got {:?}",
                    axes
                )));
            }
        }
        Ok(())
    }
}

/// Labels CSV with header `index,label`; indices must be dense from zero.
pub fn read_labels(path: &Path, expected: usize) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
    let mut labels = vec![usize::MAX; expected];
    for record in reader.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(CliError::Data(format!(
                "{}: expected two columns, got {}",
                path.display(),
                record.len()
            )));
        }
        let index: usize = record[0]
            .parse()
            .map_err(|_| CliError::Data(format!("{}: bad index '{}'", path.display(), &record[0])))?;
        let label: usize = record[1]
            .parse()
            .map_err(|_| CliError::Data(format!("{}: bad label '{}'", path.display(), &record[1])))?;
        if index >= expected {
            return Err(CliError::Data(format!(
                "{}: index {} out of range ({} samples)",
                path.display(),
                index,
                expected
            )));
        }
        labels[index] = label;
    }
    if let Some(missing) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(CliError::Data(format!(
            "{}: no label for sample {}",
            path.display(),
            missing
        )));
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["index", "label"])?;
    for (index, label) in labels.iter().enumerate() {
        writer.write_record([index.to_string(), label.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}
