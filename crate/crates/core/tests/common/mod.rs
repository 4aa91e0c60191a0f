#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_tdm");

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn campaign_config() -> PathBuf {
    manifest_dir().join("campaigns/tdm500/campaign.json")
}

pub fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden")
}

/// Fresh scratch directory under the cargo target dir.
pub fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn tdm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn tdm")
}

fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v == "1")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default();
    names.sort();
    names
}

/// Compares every file of `out` with `golden` byte for byte. With
/// `UPDATE_GOLDEN=1` the golden directory is replaced instead.
pub fn check_golden_dir(out: &Path, golden: &Path) -> Result<usize, String> {
    if updating() {
        let _ = fs::remove_dir_all(golden);
        fs::create_dir_all(golden).unwrap();
        for name in listing(out) {
            fs::copy(out.join(&name), golden.join(&name)).unwrap();
        }
    }
    let produced = listing(out);
    let expected = listing(golden);
    if produced != expected {
        return Err(format!(
            "{}: files {produced:?}, golden {expected:?}",
            golden.display()
        ));
    }
    for name in &produced {
        let a = fs::read(out.join(name)).unwrap();
        let b = fs::read(golden.join(name)).unwrap();
        if a != b {
            return Err(format!("{name} differs from golden"));
        }
    }
    Ok(produced.len())
}

/// Same for a single captured output.
pub fn check_golden_file(bytes: &[u8], golden: &Path) -> Result<(), String> {
    if updating() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(golden, bytes).unwrap();
    }
    let expected = fs::read(golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    if expected != bytes {
        return Err(format!("{} differs from golden", golden.display()));
    }
    Ok(())
}

/// Runs the four campaign commands of the end-to-end check and compares
/// their outputs with the goldens. Returns the number of files compared.
pub fn campaign_end_to_end(tag: &str) -> Result<usize, String> {
    let cfg = campaign_config();
    let cfg = cfg.to_str().unwrap();
    let root = scratch(tag);
    let mut compared = 0;
    for cmd in ["sweep", "simulate", "fit", "compare"] {
        let out = root.join(cmd);
        let o = out.to_str().unwrap();
        let args: Vec<&str> = if cmd == "sweep" {
            vec![cmd, "--config", cfg, "--output", o]
        } else {
            vec![cmd, "--config", cfg, "--out-dir", o]
        };
        let res = tdm(&args);
        if !res.status.success() {
            return Err(format!(
                "{cmd} exited with {:?}: {}",
                res.status.code(),
                String::from_utf8_lossy(&res.stderr)
            ));
        }
        compared += check_golden_dir(&out, &golden_dir().join(cmd))?;
    }
    Ok(compared)
}
