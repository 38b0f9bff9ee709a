//! Free-form arguments after a subcommand: at most one positional config
//! path plus `--key=value` or `--key value` pairs. Keys are normalised to
//! snake case, so `--task-filter` and `--task_filter` are the same key.

use std::path::PathBuf;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extra {
    positional: Vec<String>,
    pairs: Vec<(String, String)>,
}

fn normalise(key: &str) -> String {
    key.replace('-', "_")
}

impl Extra {
    pub fn parse(args: &[String]) -> CliResult<Self> {
        let mut out = Extra::default();
        let mut it = args.iter().peekable();
        while let Some(arg) = it.next() {
            let Some(flag) = arg.strip_prefix("--") else {
                out.positional.push(arg.clone());
                continue;
            };
            if flag.is_empty() {
                return Err(CliError::Usage("bare `--` is not accepted".into()));
            }
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => match it.next_if(|next| !next.starts_with("--")) {
                    Some(v) => (flag.to_string(), v.clone()),
                    None => return Err(CliError::Usage(format!("--{flag} needs a value"))),
                },
            };
            if key.is_empty() {
                return Err(CliError::Usage(format!("malformed argument {arg:?}")));
            }
            out.pairs.push((normalise(&key), value));
        }
        Ok(out)
    }

    /// Remove every occurrence of `key`, returning the last value.
    pub fn take(&mut self, key: &str) -> Option<String> {
        let mut found = None;
        self.pairs.retain(|(k, v)| {
            if k == key {
                found = Some(v.clone());
                false
            } else {
                true
            }
        });
        found
    }

    pub fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(PathBuf::from)
    }

    /// The optional positional config file.
    pub fn config_path(&mut self) -> CliResult<Option<PathBuf>> {
        match self.positional.len() {
            0 => Ok(None),
            1 => Ok(self.positional.pop().map(PathBuf::from)),
            _ => Err(CliError::Usage(format!(
                "expected at most one config file, got {:?}",
                self.positional
            ))),
        }
    }

    pub fn into_overrides(self) -> CliResult<Vec<(String, String)>> {
        if !self.positional.is_empty() {
            return Err(CliError::Usage(format!("unexpected arguments {:?}", self.positional)));
        }
        Ok(self.pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> CliResult<Extra> {
        Extra::parse(&s.split_whitespace().map(String::from).collect::<Vec<_>>())
    }

    #[test]
    fn both_spellings() {
        let mut e = parse("cfg.json --epochs=3 --task-filter bx --lr 0.5").unwrap();
        assert_eq!(e.config_path().unwrap(), Some(PathBuf::from("cfg.json")));
        assert_eq!(e.take("task_filter").as_deref(), Some("bx"));
        assert_eq!(
            e.into_overrides().unwrap(),
            vec![("epochs".into(), "3".into()), ("lr".into(), "0.5".into())]
        );
    }

    #[test]
    fn last_occurrence_wins() {
        let mut e = parse("--seed=1 --seed=2").unwrap();
        assert_eq!(e.take("seed").as_deref(), Some("2"));
        assert!(e.take("seed").is_none());
    }

    #[test]
    fn missing_value_is_usage_error() {
        assert!(matches!(parse("--epochs"), Err(CliError::Usage(_))));
        assert!(matches!(parse("--epochs --lr=1"), Err(CliError::Usage(_))));
        assert!(matches!(parse("--=3"), Err(CliError::Usage(_))));
    }

    #[test]
    fn two_positionals_rejected() {
        let mut e = parse("a.json b.json").unwrap();
        assert!(e.config_path().is_err());
    }
}
