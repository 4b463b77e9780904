//! `--config` files: one `key = value` per line (TOML), keys named like the
//! long flags. Entries are spliced into the argument list right after the
//! subcommand unless the same flag was given explicitly, so flags win over
//! the file and the file wins over built-in defaults.

use std::ffi::OsString;
use std::fs;

use toml::Value;

const SUBCOMMANDS: [&str; 7] = ["generate", "train-pfn", "train-baseline", "eval", "fewshot", "transfer", "report"];

fn config_path(argv: &[OsString]) -> Option<Result<String, String>> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--config" {
            return Some(it.next().map(|p| p.to_string_lossy().into_owned()).ok_or_else(|| "--config needs a path".to_string()));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(Ok(p.to_string()));
        }
    }
    None
}

fn scalar(key: &str, v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        other => Err(format!("config key '{key}': unsupported value {other}")),
    }
}

pub fn expand_args(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let path = path?;
    let text = fs::read_to_string(&path).map_err(|e| format!("missing config file {path}: {e}"))?;
    let table: toml::Table = text.parse().map_err(|e| format!("config file {path}: {e}"))?;
    let Some(pos) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(argv);
    };
    let given = |flag: &str| argv.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&format!("{flag}="))
    });
    let mut injected = Vec::new();
    for (key, value) in &table {
        if key == "config" {
            return Err("config files cannot include other config files".into());
        }
        let flag = format!("--{}", key.replace('_', "-"));
        if given(&flag) {
            continue;
        }
        match value {
            Value::Boolean(true) => injected.push(flag),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                for item in items {
                    injected.push(flag.clone());
                    injected.push(scalar(key, item)?);
                }
            }
            v => {
                injected.push(flag);
                injected.push(scalar(key, v)?);
            }
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(injected.into_iter().map(OsString::from));
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn flags_override_file_entries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "n = 5\nmetrics = [\"mae\"]\nverbose = true\n").unwrap();
        let argv = args(&["synthlab", "--config", p.to_str().unwrap(), "generate", "--n", "7"]);
        let out: Vec<String> = expand_args(argv).unwrap().iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert!(!out.contains(&"5".to_string()));
        assert!(out.contains(&"--verbose".to_string()));
        let m = out.iter().position(|a| a == "--metrics").unwrap();
        assert_eq!(out[m + 1], "mae");
    }
}
