use clap::CommandFactory;
use patchgraph_core::pipeline::RunConfig;

use crate::{Cli, Common, Failure};

/// Moves configuration overrides behind the subcommand's own flags so that
/// both can be given in any order. Clap collects everything after the first
/// unknown flag into the override list, which would otherwise swallow a
/// later `--patient` or `--config`.
pub fn reorder_args(args: Vec<String>) -> Vec<String> {
    let cli = Cli::command();
    let Some(pos) = args.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1) else {
        return args;
    };
    let Some(sub) = cli.find_subcommand(&args[pos]) else {
        return args;
    };
    let mut known = args[..=pos].to_vec();
    let mut overrides = Vec::new();
    let mut it = args[pos + 1..].iter().peekable();
    while let Some(token) = it.next() {
        let Some(flag) = token.strip_prefix("--").filter(|f| !f.is_empty()) else {
            known.push(token.clone());
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, _)) => (n, true),
            None => (flag, false),
        };
        let arg = sub.get_arguments().find(|a| a.get_long() == Some(name));
        let target = if arg.is_some() || name == "help" { &mut known } else { &mut overrides };
        target.push(token.clone());
        let takes_value = arg.is_none_or(|a| a.get_action().takes_values());
        if !inline && takes_value {
            if let Some(value) = it.next_if(|v| arg.is_none() || !v.starts_with("--")) {
                target.push(value.clone());
            }
        }
    }
    known.extend(overrides);
    known
}

/// Splits `--field value` / `--field=value` tokens into pairs. Dashes in
/// field names are read as underscores.
pub fn parse_pairs(tokens: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut pairs = Vec::new();
    let mut it = tokens.iter();
    while let Some(token) = it.next() {
        let Some(flag) = token.strip_prefix("--") else {
            return Err(Failure::usage(format!(
                "unexpected argument {token:?}; overrides take the form --field value"
            )));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = it.next().ok_or_else(|| {
                    Failure::usage(format!("flag --{flag} is missing a value"))
                })?;
                (flag.to_string(), value.clone())
            }
        };
        pairs.push((key.replace('-', "_"), value));
    }
    Ok(pairs)
}

/// Defaults, then the JSON file, then flag overrides; validated last.
pub fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in parse_pairs(&common.overrides)? {
        config
            .set(&key, &value)
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pairs() {
        let p = parse_pairs(&strings(&["--epochs", "3", "--zero-layers=true", "--output_dir", "x"])).unwrap();
        assert_eq!(
            p,
            vec![
                ("epochs".into(), "3".into()),
                ("zero_layers".into(), "true".into()),
                ("output_dir".into(), "x".into())
            ]
        );
        assert!(parse_pairs(&strings(&["--epochs"])).is_err());
        assert!(parse_pairs(&strings(&["epochs", "3"])).is_err());
    }

    #[test]
    fn overrides_move_behind_known_flags() {
        let args = strings(&["pg", "attention", "--output_dir", "o", "--patient", "p1", "--fold=2", "--epochs=3"]);
        assert_eq!(
            reorder_args(args),
            strings(&["pg", "attention", "--patient", "p1", "--fold=2", "--output_dir", "o", "--epochs=3"])
        );
        let args = strings(&["pg", "train", "--k", "4", "--config", "c.json"]);
        assert_eq!(reorder_args(args), strings(&["pg", "train", "--config", "c.json", "--k", "4"]));
        let args = strings(&["pg", "--version"]);
        assert_eq!(reorder_args(args.clone()), args);
    }

    #[test]
    fn unknown_field_is_named() {
        let common = Common {
            config: None,
            overrides: strings(&["--lr", "0.1"]),
        };
        let err = load_config(&common).unwrap_err();
        assert_eq!(err.exit, crate::Exit::Usage);
        assert!(err.message.contains("\"lr\""), "{}", err.message);
    }

    #[test]
    fn invalid_value_is_rejected() {
        let common = Common {
            config: None,
            overrides: strings(&["--folds", "1"]),
        };
        assert!(load_config(&common).unwrap_err().message.contains("folds"));
    }
}
