use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// `<prefix>.src` and `<prefix>.tgt`.
pub fn corpus_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let base = prefix.as_os_str().to_string_lossy();
    (PathBuf::from(format!("{base}.src")), PathBuf::from(format!("{base}.tgt")))
}

/// Lines of a UTF-8, LF-terminated text file. A missing final newline is tolerated.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_parallel(prefix: &Path) -> Result<Vec<(String, String)>> {
    let (sp, tp) = corpus_paths(prefix);
    let src = read_lines(&sp)?;
    let tgt = read_lines(&tp)?;
    if src.len() != tgt.len() {
        return Err(Error::input(format!(
            "{} has {} lines but {} has {}",
            sp.display(),
            src.len(),
            tp.display(),
            tgt.len()
        )));
    }
    Ok(src.into_iter().zip(tgt).collect())
}

pub fn write_parallel(prefix: &Path, pairs: &[(String, String)]) -> Result<()> {
    let (sp, tp) = corpus_paths(prefix);
    let (src, tgt): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
    write_lines(&sp, &src)?;
    write_lines(&tp, &tgt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("train");
        let pairs = vec![("a b".to_string(), "b a".to_string()), ("c".into(), "d e".into())];
        write_parallel(&prefix, &pairs).unwrap();
        assert_eq!(read_parallel(&prefix).unwrap(), pairs);
        assert_eq!(fs::read_to_string(dir.path().join("train.src")).unwrap(), "a b\nc\n");
    }

    #[test]
    fn misaligned_files_report_line_counts() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.src"), "a\nb\n").unwrap();
        fs::write(dir.path().join("x.tgt"), "a\n").unwrap();
        let err = read_parallel(&dir.path().join("x")).unwrap_err().to_string();
        assert!(err.contains("2 lines") && err.contains("has 1"), "{err}");
    }
}
