//! `key = value` configuration files.

use std::path::Path;

use memxbar::device::ParamName;
use memxbar::genetic::{GaConfig, ParamBounds};
use memxbar::trainer::TrainConfig;
use memxbar::{Error, Result};

/// Parsed `(line, key, value)` entries. Blank lines and `#` comments are
/// skipped.
pub fn parse(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: k + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        out.push((k + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad value `{v}` for `{key}`"),
    })
}

pub fn apply_train(cfg: &mut TrainConfig, entries: &[(usize, String, String)]) -> Result<()> {
    for (line, key, v) in entries {
        let line = *line;
        match key.as_str() {
            "architecture" => {
                cfg.architecture = v.parse().map_err(|e: Error| Error::Parse {
                    line,
                    message: e.to_string(),
                })?
            }
            "input_size" => cfg.input_size = value(line, key, v)?,
            "epochs" => cfg.epochs = value(line, key, v)?,
            "learning_rate" => cfg.learning_rate = value(line, key, v)?,
            "lr_decay" => cfg.lr_decay = value(line, key, v)?,
            "momentum" => cfg.momentum = value(line, key, v)?,
            "batch_size" => cfg.batch_size = value(line, key, v)?,
            "seed" => cfg.seed = value(line, key, v)?,
            "weight_bound" => cfg.weight_bound = value(line, key, v)?,
            "bias_bound" => cfg.bias_bound = value(line, key, v)?,
            "init_std_w" => cfg.init_std_w = value(line, key, v)?,
            "init_std_b" => cfg.init_std_b = value(line, key, v)?,
            "scale_relu" => cfg.scale_relu = value(line, key, v)?,
            "scale_sigmoid" => cfg.scale_sigmoid = value(line, key, v)?,
            "activation_penalty" => cfg.activation_penalty = value(line, key, v)?,
            "activation_limit" => cfg.activation_limit = value(line, key, v)?,
            "headroom" => cfg.headroom = value(line, key, v)?,
            "logit_scale" => cfg.logit_scale = value(line, key, v)?,
            "train_limit" => cfg.train_limit = value(line, key, v)?,
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown training key `{key}`"),
                })
            }
        }
    }
    Ok(())
}

/// GA settings. `bound_factor` rebuilds the bounds around `init`.
pub fn apply_ga(
    cfg: &mut GaConfig,
    init: &memxbar::device::DeviceParams,
    entries: &[(usize, String, String)],
) -> Result<()> {
    for (line, key, v) in entries {
        let line = *line;
        match key.as_str() {
            "population_size" => cfg.population_size = value(line, key, v)?,
            "generations" => cfg.generations = value(line, key, v)?,
            "initial_mutation_scale" => cfg.initial_mutation_scale = value(line, key, v)?,
            "mutation_decay" => cfg.mutation_decay = value(line, key, v)?,
            "bound_factor" => cfg.bounds = ParamBounds::around(init, value(line, key, v)?),
            "variability" => cfg.variability = value(line, key, v)?,
            "draws_per_eval" => cfg.draws_per_eval = value(line, key, v)?,
            "parallel" => cfg.parallel = value(line, key, v)?,
            "seed" => cfg.seed = value(line, key, v)?,
            "frozen" => {
                cfg.frozen = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        ParamName::parse(s).ok_or_else(|| Error::Parse {
                            line,
                            message: format!("unknown parameter `{s}` in frozen list"),
                        })
                    })
                    .collect::<Result<_>>()?
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown GA key `{key}`"),
                })
            }
        }
    }
    Ok(())
}
