//! `semfuse eval`: pooled and per-file segmentation scores over paired
//! label files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use semfuse::metrics::{ConfusionMatrix, Scores};
use semfuse::{pgm, ply};

use crate::Failure;

fn labels_of(path: &Path, classes: usize) -> anyhow::Result<Vec<u8>> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => {
            let image = pgm::read(fs::File::open(path)?)?;
            image
                .pixels
                .iter()
                .map(|&p| {
                    if (p as usize) < classes {
                        Ok(p as u8)
                    } else {
                        bail!("pixel value {p} is not a class index")
                    }
                })
                .collect()
        }
        Some("ply") => {
            let data = ply::read_path(path)?;
            data.labels.context("PLY has no `label` vertex property")
        }
        _ => bail!("unsupported file type"),
    }
}

/// Files in `pred` with a `.pgm` or `.ply` extension, sorted by name.
fn label_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("pgm" | "ply")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn row(name: &str, scores: &Scores) -> String {
    format!("{name},{}", scores.csv_row())
}

pub fn run(pred: &Path, gt: &Path, class_names: &[String], out: Option<PathBuf>) -> Result<(), Failure> {
    let classes = class_names.iter().filter(|s| !s.trim().is_empty()).count();
    if classes == 0 || classes > 256 {
        return Err(Failure::Usage("--classes needs 1 to 256 names".into()));
    }
    let files = label_files(pred)?;
    if files.is_empty() {
        return Err(Failure::Usage(format!("no .pgm or .ply files in {}", pred.display())));
    }
    let mut pooled = ConfusionMatrix::new(classes);
    let mut csv = format!("file,{}\n", Scores::CSV_HEADER);
    for p in &files {
        let name = p.file_name().expect("listed files have names");
        let g = gt.join(name);
        if !g.is_file() {
            return Err(Failure::Usage(format!(
                "{} has no ground truth at {}",
                p.display(),
                g.display()
            )));
        }
        let predicted = labels_of(p, classes).with_context(|| format!("reading {}", p.display()))?;
        let truth = labels_of(&g, classes).with_context(|| format!("reading {}", g.display()))?;
        let mut confusion = ConfusionMatrix::new(classes);
        confusion
            .accumulate(&predicted, &truth)
            .with_context(|| format!("comparing {}", name.to_string_lossy()))?;
        pooled.merge(&confusion).context("pooling")?;
        match confusion.scores() {
            Ok(scores) => csv.push_str(&format!("{}\n", row(&name.to_string_lossy(), &scores))),
            Err(e) => log::warn!("{}: {e}", name.to_string_lossy()),
        }
    }
    let scores = pooled.scores().context("pooled scores")?;
    csv.push_str(&format!("{}\n", row("pooled", &scores)));
    let text = scores.table();
    print!("{csv}\n{text}\n");
    if let Some(dir) = out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("metrics.csv"), &csv).context("writing metrics.csv")?;
        fs::write(dir.join("metrics.txt"), format!("{text}\n")).context("writing metrics.txt")?;
    }
    Ok(())
}
