use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use apf_core::geometry::{farthest_point_sample, normalize_unit_sphere, StartRule};

use crate::error::{AppError, AppResult};
use crate::io::manifest::{self, Manifest, ManifestRecord};
use crate::io::{point_binary, read_cloud};

#[derive(Clone, Debug, Default)]
pub struct PreprocessArgs {
    pub manifest: PathBuf,
    /// Base directory for relative manifest paths; the manifest's own directory by default.
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    /// Farthest-point subsample to this many points.
    pub points: Option<usize>,
    pub keep_going: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreprocessReport {
    pub written: usize,
    /// `(input path, reason)`
    pub failures: Vec<(PathBuf, String)>,
}

fn process(rec: &ManifestRecord, index: usize, points: Option<usize>, out: &Path) -> Result<(usize, ManifestRecord), String> {
    let input = read_cloud(&rec.path).map_err(|e| e.to_string())?;
    let n = input.cloud.len();
    let mut parts = match &rec.parts {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let parts = manifest::parse_part_labels(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            if parts.len() != n {
                return Err(format!("{} part labels for {n} points", parts.len()));
            }
            Some(parts)
        }
        None => None,
    };
    let mut cloud = normalize_unit_sphere(&input.cloud).map_err(|e| e.to_string())?;
    if let Some(m) = points {
        let keep = farthest_point_sample(&cloud, m, StartRule::Canonical).map_err(|e| e.to_string())?;
        cloud = cloud.permuted(&keep).map_err(|e| e.to_string())?;
        parts = parts.map(|p| keep.iter().map(|&i| p[i]).collect());
    }
    let stem = rec.path.file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
    let name = format!("{index:05}_{stem}");
    let target = out.join(format!("{name}.apfp"));
    let labels = match &parts {
        Some(p) => p.clone(),
        None => vec![rec.label as u32],
    };
    point_binary::write_point_binary(&cloud, &labels, &target).map_err(|e| e.to_string())?;
    let parts_path = match parts {
        Some(p) => {
            let path = out.join(format!("{name}.seg"));
            let text: String = p.iter().map(|l| format!("{l}\n")).collect();
            fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
            Some(path)
        }
        None => None,
    };
    Ok((n, ManifestRecord { path: target, label: rec.label, parts: parts_path, line: rec.line }))
}

/// Normalizes (and optionally subsamples) every manifest sample into APFP files
/// under `out`, writing `manifest.tsv` and `report.tsv` there.
///
/// Without `keep_going` the first failure aborts with a data error. With it,
/// every readable sample is written and failures are listed in the report.
pub fn cmd_preprocess(args: &PreprocessArgs) -> AppResult<PreprocessReport> {
    if args.points == Some(0) {
        return Err(AppError::Config("--points must be positive".into()));
    }
    let text = fs::read_to_string(&args.manifest).map_err(|e| AppError::Data(format!("{}: {e}", args.manifest.display())))?;
    let base = args.input.clone().unwrap_or_else(|| args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
    let m = manifest::parse_manifest(&text, &base, &args.manifest.display().to_string())?;
    if m.records.is_empty() {
        return Err(AppError::Data(format!("{}: no samples", args.manifest.display())));
    }
    fs::create_dir_all(&args.out).map_err(|e| AppError::Data(format!("{}: {e}", args.out.display())))?;

    let mut report = String::from("path\tpoints\tstatus\treason\n");
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, rec) in m.records.iter().enumerate() {
        match process(rec, i, args.points, &args.out) {
            Ok((n, out_rec)) => {
                let _ = writeln!(report, "{}\t{n}\tok\t", rec.path.display());
                records.push(out_rec);
            }
            Err(reason) => {
                let reason = reason.replace(['\t', '\n'], " ");
                let _ = writeln!(report, "{}\t-\tfailed\t{reason}", rec.path.display());
                if !args.keep_going {
                    fs::write(args.out.join("report.tsv"), &report)?;
                    return Err(AppError::Data(format!("{}: {reason}", rec.path.display())));
                }
                failures.push((rec.path.clone(), reason));
            }
        }
    }
    fs::write(args.out.join("report.tsv"), &report)?;
    let written = records.len();
    let out_manifest = Manifest { records, classes: m.classes };
    fs::write(args.out.join("manifest.tsv"), manifest::format_manifest(&out_manifest, &args.out))?;
    Ok(PreprocessReport { written, failures })
}
