//! `--config FILE` support: key=value lines spliced into argv before clap
//! parsing. Flags given on the command line win over file entries.

use std::fs;

/// Keys accepted per subcommand. `config` itself is deliberately absent:
/// a config file cannot chain-load another one.
fn allowlist(sub: &str) -> Option<&'static [&'static str]> {
    Some(match sub {
        "gen-data" => &[
            "out", "count", "split", "seed", "size", "sigma", "amplitude", "structures",
        ],
        "train" => &[
            "data",
            "out",
            "dim",
            "channels",
            "loss",
            "lambda",
            "epochs",
            "lr",
            "seed",
            "diffeo",
            "pool-modes",
            "pool-levels",
            "use-original",
            "convs-per-block",
        ],
        "register" => &["model", "moving", "fixed", "out", "diffeo"],
        "eval" => &["model", "data", "split", "out"],
        "ablate" => &[
            "mode", "data", "out", "seeds", "epochs", "lr", "channels", "loss", "lambda",
        ],
        "profile" => &["dim", "channels", "size", "convs-per-block"],
        _ => return None,
    })
}

/// Presence-only flags; a true value splices the bare flag, false omits it.
const BOOL_FLAGS: [&str; 1] = ["diffeo"];

fn flag_given(rest: &[String], key: &str) -> bool {
    let exact = format!("--{key}");
    let prefixed = format!("--{key}=");
    rest.iter().any(|a| a == &exact || a.starts_with(&prefixed))
}

/// Rewrite argv so config-file entries appear as ordinary flags directly
/// after the subcommand token. Returns argv unchanged when there is no
/// subcommand or no `--config`.
pub fn splice_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    let sub_idx = match argv.iter().skip(1).position(|a| !a.starts_with('-')) {
        Some(i) => i + 1,
        None => return Ok(argv),
    };
    let sub = argv[sub_idx].clone();
    let allowed = match allowlist(&sub) {
        Some(a) => a,
        None => return Ok(argv),
    };

    let rest = &argv[sub_idx + 1..];
    let mut path: Option<String> = None;
    let mut i = 0;
    while i < rest.len() {
        if rest[i] == "--config" {
            path = rest.get(i + 1).cloned();
            i += 2;
        } else if let Some(p) = rest[i].strip_prefix("--config=") {
            path = Some(p.to_string());
            i += 1;
        } else {
            i += 1;
        }
    }
    let path = match path {
        Some(p) => p,
        None => return Ok(argv),
    };

    let text =
        fs::read_to_string(&path).map_err(|e| format!("cannot read config file {path}: {e}"))?;
    let mut extra: Vec<String> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key=value, got {line:?}", lineno + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if !allowed.contains(&key.as_str()) {
            return Err(format!(
                "{path}:{}: unknown key {key:?} for `{sub}`",
                lineno + 1
            ));
        }
        if flag_given(rest, &key) {
            continue;
        }
        if BOOL_FLAGS.contains(&key.as_str()) {
            let on: bool = value.parse().map_err(|_| {
                format!("{path}:{}: key {key} expects true or false, got {value:?}", lineno + 1)
            })?;
            if on {
                extra.push(format!("--{key}"));
            }
        } else {
            extra.push(format!("--{key}"));
            extra.push(value.to_string());
        }
    }

    let mut out = argv[..=sub_idx].to_vec();
    out.extend(extra);
    out.extend_from_slice(rest);
    Ok(out)
}
