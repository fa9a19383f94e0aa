//! Tab-separated dataset manifests.
//!
//! ```text
//! # comment
//! @classes<TAB>4
//! chairs/0001.off<TAB>2                      (classification: path, class)
//! lamps/0007.apfp<TAB>1<TAB>lamps/0007.seg   (segmentation: path, category, part-label file)
//! ```
//! Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Syntax { path: String, line: usize, message: String },
    #[error("{path}:{line}: referenced file {file} does not exist")]
    Missing { path: String, line: usize, file: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    /// Class (classification) or object category (segmentation).
    pub label: usize,
    /// Per-point part labels, one integer per line.
    pub parts: Option<PathBuf>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Declared with `@classes`, otherwise one past the largest label.
    pub classes: usize,
}

impl Manifest {
    pub fn is_segmentation(&self) -> bool {
        self.records.first().is_some_and(|r| r.parts.is_some())
    }
}

/// Parses manifest text; `base` resolves relative paths. Existence is not checked.
pub fn parse_manifest(text: &str, base: &Path, origin: &str) -> Result<Manifest, ManifestError> {
    let syntax = |line: usize, message: String| ManifestError::Syntax { path: origin.to_string(), line, message };
    let mut records = Vec::new();
    let mut declared = None;
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if let Some(directive) = fields[0].strip_prefix('@') {
            match (directive, &fields[1..]) {
                ("classes", [n]) => {
                    let n: usize = n.parse().map_err(|_| syntax(line_no, format!("class count `{n}` is not an integer")))?;
                    if n < 2 {
                        return Err(syntax(line_no, "at least 2 classes are required".into()));
                    }
                    declared = Some(n);
                }
                _ => return Err(syntax(line_no, format!("unknown directive `{}`", fields[0]))),
            }
            continue;
        }
        if !(2..=3).contains(&fields.len()) || fields.iter().any(|f| f.is_empty()) {
            return Err(syntax(line_no, format!("expected 2 or 3 tab-separated fields, found {}", fields.len())));
        }
        if *width.get_or_insert(fields.len()) != fields.len() {
            return Err(syntax(line_no, "mixes classification and segmentation records".into()));
        }
        let label = fields[1].parse().map_err(|_| syntax(line_no, format!("label `{}` is not a non-negative integer", fields[1])))?;
        records.push(ManifestRecord { path: base.join(fields[0]), label, parts: fields.get(2).map(|p| base.join(p)), line: line_no });
    }
    let max = records.iter().map(|r| r.label + 1).max().unwrap_or(0);
    let classes = match declared {
        Some(n) => {
            if let Some(r) = records.iter().find(|r| r.label >= n) {
                return Err(syntax(r.line, format!("label {} outside the {n} declared classes", r.label)));
            }
            n
        }
        None => max,
    };
    Ok(Manifest { records, classes })
}

/// Reads a manifest and checks that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let origin = path.display().to_string();
    let manifest = parse_manifest(&text, base, &origin)?;
    for r in &manifest.records {
        for f in std::iter::once(&r.path).chain(&r.parts) {
            if !f.is_file() {
                return Err(ManifestError::Missing { path: origin.clone(), line: r.line, file: f.display().to_string() });
            }
        }
    }
    Ok(manifest)
}

/// Serializes records with paths relative to `base` where possible.
pub fn format_manifest(manifest: &Manifest, base: &Path) -> String {
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut out = if manifest.classes >= 2 { format!("@classes\t{}\n", manifest.classes) } else { String::new() };
    for r in &manifest.records {
        out.push_str(&rel(&r.path));
        out.push('\t');
        out.push_str(&r.label.to_string());
        if let Some(p) = &r.parts {
            out.push('\t');
            out.push_str(&rel(p));
        }
        out.push('\n');
    }
    out
}

/// One part label per non-empty line.
pub fn parse_part_labels(text: &str) -> Result<Vec<u32>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse().map_err(|_| format!("line {}: part label `{}` is not an integer", i + 1, l.trim())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_records() {
        let m = parse_manifest("# demo\n@classes\t5\na.off\t0\n\nsub/b.apfp\t3\n", Path::new("/data"), "m").unwrap();
        assert_eq!(m.classes, 5);
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[1].path, PathBuf::from("/data/sub/b.apfp"));
        assert!(!m.is_segmentation());
    }

    #[test]
    fn segmentation_records_and_inferred_classes() {
        let m = parse_manifest("a.apfp\t1\ta.seg\n", Path::new("d"), "m").unwrap();
        assert_eq!(m.classes, 2);
        assert_eq!(m.records[0].parts, Some(PathBuf::from("d/a.seg")));
        assert!(m.is_segmentation());
    }

    #[test]
    fn rejects_bad_lines() {
        let base = Path::new(".");
        for bad in ["a.off\n", "a.off\tx\n", "@classes\t3\na\t3\n", "a\t0\nb\t1\tc\n", "@colour\tred\n"] {
            assert!(parse_manifest(bad, base, "m").is_err(), "{bad:?}");
        }
        match parse_manifest("a\t0\nb\n", base, "m") {
            Err(ManifestError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn format_round_trips() {
        let m = parse_manifest("@classes\t3\nx/a.apfp\t2\n", Path::new("/r"), "m").unwrap();
        let again = parse_manifest(&format_manifest(&m, Path::new("/r")), Path::new("/r"), "m").unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn part_labels() {
        assert_eq!(parse_part_labels("0\n1\n\n2\n").unwrap(), vec![0, 1, 2]);
        assert!(parse_part_labels("0\nx\n").is_err());
    }
}
