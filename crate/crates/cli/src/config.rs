//! `--config <file>` support: `key value` lines become `--key value` flags
//! unless the same flag is already on the command line.

use std::ffi::OsString;

use clap::CommandFactory;

use crate::args::Cli;
use crate::error::CliError;

/// Parsed `key value` pairs, keys normalized to flag spelling.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once(char::is_whitespace) else {
            return Err(CliError::Usage(format!(
                "config line {}: expected `key value`",
                i + 1
            )));
        };
        pairs.push((key.replace('_', "-"), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Removes `--config <path>` from `argv` and appends the file's settings for
/// flags not given explicitly.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut args: Vec<String> = Vec::with_capacity(argv.len());
    for a in argv {
        match a.into_string() {
            Ok(s) => args.push(s),
            Err(bad) => {
                return Err(CliError::Usage(format!("argument is not UTF-8: {bad:?}")));
            }
        }
    }

    let mut config_path = None;
    let mut kept = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let path = it
                .next()
                .ok_or_else(|| CliError::Usage("--config needs a file path".into()))?;
            config_path = Some(path);
        } else if let Some(path) = a.strip_prefix("--config=") {
            config_path = Some(path.to_string());
        } else {
            kept.push(a);
        }
    }
    let Some(path) = config_path else {
        return Ok(kept.into_iter().map(OsString::from).collect());
    };

    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Data(xlsv_core::Error::Io {
            path: path.clone().into(),
            source: e,
        })
    })?;
    let pairs = parse_config(&text)?;

    let command = Cli::command();
    let sub = kept
        .iter()
        .skip(1)
        .find(|a| !a.starts_with('-'))
        .and_then(|name| command.find_subcommand(name))
        .ok_or_else(|| CliError::Usage("--config needs a subcommand".into()))?;
    let known: Vec<&str> = sub.get_arguments().filter_map(|a| a.get_long()).collect();

    for (key, value) in pairs {
        if !known.contains(&key.as_str()) {
            return Err(CliError::Usage(format!(
                "config key `{key}` is not an option of `{}`",
                sub.get_name()
            )));
        }
        let flag = format!("--{key}");
        let present = kept
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if !present {
            kept.push(flag);
            kept.push(value);
        }
    }
    Ok(kept.into_iter().map(OsString::from).collect())
}
