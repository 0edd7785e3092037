//! Flat `key = value` config files merged under command-line flags.

use std::ffi::OsString;

use clap::{ArgAction, Command};

/// Append config-file settings to `argv` for every option not already
/// given as a flag, so flags win over the file and the file over defaults.
pub fn merge_config(cmd: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let sub_name = argv.get(1).and_then(|s| s.to_str()).ok_or("config file needs a subcommand")?;
    let sub = cmd.find_subcommand(sub_name).ok_or_else(|| format!("unknown subcommand {sub_name:?}"))?;
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config file {path}: {e}"))?;
    let mut out = argv.clone();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected 'key = value'", lineno + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key == "config" {
            return Err(format!("config line {}: nested config files are not supported", lineno + 1));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| format!("config line {}: unknown key {key:?} for {sub_name}", lineno + 1))?;
        let flag = format!("--{key}");
        let given = argv.iter().filter_map(|a| a.to_str()).any(|a| a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" => out.push(flag.into()),
                "false" => {}
                _ => return Err(format!("config line {}: {key} expects true or false", lineno + 1)),
            }
        } else {
            out.push(flag.into());
            out.push(value.into());
        }
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<String> {
    let mut it = argv.iter().filter_map(|a| a.to_str());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(str::to_string);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::Cli;
    use clap::CommandFactory;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn flags_beat_file_and_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# comment\nframes = 50\nseed=9\nnoise = 0.2\n").unwrap();
        let argv = os(&["pscape", "gen", "--hinge", "--seed", "3", "--out", "x", "--config", cfg.to_str().unwrap()]);
        let merged = merge_config(&Cli::command(), argv).unwrap();
        let s: Vec<&str> = merged.iter().map(|a| a.to_str().unwrap()).collect();
        assert!(s.ends_with(&["--frames", "50", "--noise", "0.2"]));
        assert_eq!(s.iter().filter(|a| **a == "--seed").count(), 1);
    }

    #[test]
    fn boolean_and_bad_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c");
        std::fs::write(&cfg, "hinge = true\ntwo_state = false\n").unwrap();
        let merged = merge_config(&Cli::command(), os(&["pscape", "gen", "--out", "x", "--config", cfg.to_str().unwrap()])).unwrap();
        assert!(merged.iter().any(|a| a == "--hinge"));
        assert!(!merged.iter().any(|a| a == "--two-state"));
        std::fs::write(&cfg, "bogus = 1\n").unwrap();
        let err = merge_config(&Cli::command(), os(&["pscape", "gen", "--config", cfg.to_str().unwrap()])).unwrap_err();
        assert!(err.contains("unknown key"));
        assert!(merge_config(&Cli::command(), os(&["pscape", "gen", "--config", "/nonexistent"])).is_err());
    }
}
