use std::path::Path;

use gjs_core::FullGaussian;

use crate::{CliError, Result};

/// A Gaussian given as inline JSON, a JSON file, or `mean,variance`.
///
/// The JSON form is `{"mu": [..], "sigma": [[..], ..]}`.
pub fn parse_gaussian(arg: &str) -> Result<FullGaussian> {
    let arg = arg.trim();
    if arg.starts_with('{') {
        return serde_json::from_str(arg).map_err(|source| CliError::Parse {
            path: "<inline>".into(),
            source,
        });
    }
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.into(),
            source,
        })?;
        return serde_json::from_str(&text).map_err(|source| CliError::Parse {
            path: arg.into(),
            source,
        });
    }
    if let Some((m, v)) = arg.split_once(',') {
        if let (Ok(m), Ok(v)) = (m.trim().parse(), v.trim().parse()) {
            return Ok(FullGaussian::univariate(m, v)?);
        }
    }
    Err(CliError::Read {
        path: path.into(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
    })
}
