//! Provenance headers, file writing and frame-parallel helpers.

use std::path::Path;

use clap::{ArgMatches, CommandFactory};

use crate::args::Cli;

/// `# `-prefixed header: tool version, command, seed and every resolved
/// option in declaration order.
pub fn header(command: &str, matches: &ArgMatches, seed: Option<u64>) -> String {
    let mut s = format!("# pscape {}\n# command: {command}\n", env!("CARGO_PKG_VERSION"));
    match seed {
        Some(v) => s.push_str(&format!("# seed: {v}\n")),
        None => s.push_str("# seed: none\n"),
    }
    let cli = Cli::command();
    let sub = cli.find_subcommand(command).expect("known subcommand");
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        let Ok(Some(raw)) = matches.try_get_raw(id) else { continue };
        let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        s.push_str(&format!("# config: {id}={}\n", vals.join(",")));
    }
    s
}

pub fn write_with_header(path: &Path, header: &str, body: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, format!("{header}{body}"))
}

/// Worker count from `PSCAPE_THREADS`; 1 when unset.
pub fn thread_count() -> Result<usize, String> {
    match std::env::var("PSCAPE_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("PSCAPE_THREADS must be a positive integer, got {v:?}")),
        },
    }
}

/// Map over `items` on up to `threads` scoped workers; output order matches
/// input order whatever the thread count.
pub fn par_map<T, R, E, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<R>, E>> = std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(move || c.iter().map(f).collect())).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
