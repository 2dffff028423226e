//! Tab-separated manifest parsing and writing.
//!
//! Format: `sample_id \t media_path \t label \t category \t voice_source \t split`,
//! one entry per line, UTF-8, `#`-prefixed comment lines and blank lines
//! ignored.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

use super::{ForgeryCategory, ManifestEntry, Split, VoiceSource};

fn parse_line(line: &str, lineno: usize) -> Result<ManifestEntry> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(Error::ManifestParse {
            line: lineno,
            msg: format!("expected 6 tab-separated fields, got {}", fields.len()),
        });
    }
    let label: u8 = fields[2].parse().map_err(|_| Error::ManifestParse {
        line: lineno,
        msg: format!("label must be 0 or 1, got {:?}", fields[2]),
    })?;
    let forgery_category = ForgeryCategory::parse(fields[3]).ok_or_else(|| Error::ManifestParse {
        line: lineno,
        msg: format!("unknown forgery category {:?}", fields[3]),
    })?;
    let voice_source = VoiceSource::parse(fields[4]).ok_or_else(|| Error::ManifestParse {
        line: lineno,
        msg: format!("unknown voice source {:?}", fields[4]),
    })?;
    let split = Split::parse(fields[5]).ok_or_else(|| Error::ManifestParse {
        line: lineno,
        msg: format!("unknown split {:?}", fields[5]),
    })?;
    let entry = ManifestEntry {
        sample_id: fields[0].to_string(),
        media_path: fields[1].to_string(),
        label,
        forgery_category,
        voice_source,
        split,
    };
    entry.validate().map_err(|e| Error::ManifestParse {
        line: lineno,
        msg: e.to_string(),
    })?;
    Ok(entry)
}

/// Parse manifest text. Line numbers in errors are 1-based.
pub fn parse_manifest_str(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let entry = parse_line(line, i + 1)?;
        if !seen.insert(entry.sample_id.clone()) {
            return Err(Error::ManifestParse {
                line: i + 1,
                msg: format!("duplicate sample_id {:?}", entry.sample_id),
            });
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        log::warn!("manifest contains no entries");
    }
    Ok(entries)
}

/// Load and validate a manifest file.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text)
}

/// Serialize entries in the canonical on-disk form.
pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.sample_id,
            e.media_path,
            e.label,
            e.forgery_category.as_str(),
            e.voice_source.as_str(),
            e.split.as_str()
        ));
    }
    out
}

/// Write a manifest file, creating parent directories as needed.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        e.validate()?;
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, manifest_to_string(entries)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example_line() {
        let entries =
            parse_manifest_str("id7_clip3\tvids/id7_3.mp4\t0\tW2L_S\town\ttest\n").unwrap();
        assert_eq!(entries.len(), 1);
        let e = &entries[0];
        assert_eq!(e.sample_id, "id7_clip3");
        assert_eq!(e.label, 0);
        assert_eq!(e.forgery_category, ForgeryCategory::W2lS);
        assert_eq!(e.voice_source, VoiceSource::Own);
        assert_eq!(e.split, Split::Test);
    }

    #[test]
    fn label_category_invariant_rejected() {
        let err = parse_manifest_str("a\tp\t1\tW2L\tother\ttrain\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("forgery_category") || msg.contains("REAL"), "{msg}");
    }

    #[test]
    fn own_voice_invariant_both_directions() {
        // `_S` category without own voice.
        assert!(parse_manifest_str("a\tp\t0\tW2L_S\tother\ttrain\n").is_err());
        // own voice without `_S` category.
        assert!(parse_manifest_str("a\tp\t0\tW2L\town\ttrain\n").is_err());
        // real clips record n/a.
        assert!(parse_manifest_str("a\tp\t1\tREAL\tn/a\ttrain\n").is_ok());
    }

    #[test]
    fn empty_file_gives_empty_list() {
        assert!(parse_manifest_str("").unwrap().is_empty());
        assert!(parse_manifest_str("# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "a\tp\t1\tREAL\tn/a\ttrain\na\tq\t1\tREAL\tn/a\ttrain\n";
        let err = parse_manifest_str(text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "a\tp\t1\tREAL\tn/a\ttrain\nbroken line\n";
        let err = parse_manifest_str(text).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn round_trip_modulo_whitespace() {
        let text = "# header comment\na\tp\t1\tREAL\tn/a\ttrain\n\nb\tq\t0\tRVFA\tother\tval\n";
        let entries = parse_manifest_str(text).unwrap();
        let canon = manifest_to_string(&entries);
        let reparsed = parse_manifest_str(&canon).unwrap();
        assert_eq!(entries, reparsed);
        // A second canonical pass is byte-identical.
        assert_eq!(canon, manifest_to_string(&reparsed));
    }

    #[test]
    fn write_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/manifest.tsv");
        let entries = parse_manifest_str("a\tp\t0\tMIT_S\town\ttest\n").unwrap();
        write_manifest(&path, &entries).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), entries);
    }
}
