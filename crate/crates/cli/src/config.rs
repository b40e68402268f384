//! Sectioned key = value experiment configuration.
//!
//! One file per experiment; sections mirror the library modules. Unknown
//! sections and unknown keys are hard errors with line diagnostics, because
//! silently ignored configuration is the main reproducibility hazard.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(message: String) -> Result<T, ConfigError> {
    Err(ConfigError { message })
}

/// Known sections and the keys each accepts.
const SCHEMA: &[(&str, &[&str])] = &[
    ("experiment", &["name", "out_dir", "seed", "threads"]),
    (
        "operator",
        &[
            "kind",
            "shape",
            "mask_file",
            "keep_fraction",
            "kernel_file",
            "kernel_sigma",
            "kernel_extent",
            "angles",
            "angle_count",
            "detector_bins",
            "coils",
            "sens_files",
            "accel",
            "normalized",
            "fft_axes",
        ],
    ),
    ("noise", &["sigma"]),
    ("phantom", &["kind", "shape"]),
    (
        "factorfit",
        &["variant", "steps", "batch", "lr", "optimizer", "seed"],
    ),
    ("partition", &["patch", "stride"]),
    (
        "solver",
        &[
            "method",
            "iters",
            "eta",
            "prior",
            "tv_lambda",
            "tv_inner",
            "step2_iters",
            "step2_solver",
            "data_mode",
            "factor_file",
            "context",
            "patch_init",
            "cg_tol",
            "cg_max_iters",
        ],
    ),
    ("metrics", &["peak", "per_slice"]),
    ("bench", &["sizes", "rank", "patch", "max_elements"]),
];

#[derive(Debug, Clone)]
pub struct Config {
    /// section -> key -> (value, line number).
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
    /// FNV-1a hash of the raw text, embedded in reports.
    pub text_hash: String,
    pub source: String,
}

pub fn fnv1a_hex(text: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Config, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, (String, usize)>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return err(format!("{source}:{lineno}: malformed section header '{line}'"));
                };
                let name = name.trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    let known: Vec<&str> = SCHEMA.iter().map(|(s, _)| *s).collect();
                    return err(format!(
                        "{source}:{lineno}: unknown section '[{name}]' (known: {known:?})"
                    ));
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("{source}:{lineno}: expected 'key = value', got '{line}'"));
            };
            let key = key.trim();
            let value = value.trim();
            let Some(section) = &current else {
                return err(format!(
                    "{source}:{lineno}: key '{key}' appears before any [section]"
                ));
            };
            let allowed = SCHEMA
                .iter()
                .find(|(s, _)| s == section)
                .map(|(_, keys)| *keys)
                .unwrap();
            if !allowed.contains(&key) {
                return err(format!(
                    "{source}:{lineno}: unknown key '{key}' in [{section}] (known: {allowed:?})"
                ));
            }
            let entry = sections.get_mut(section).unwrap();
            if entry.contains_key(key) {
                return err(format!(
                    "{source}:{lineno}: duplicate key '{key}' in [{section}]"
                ));
            }
            entry.insert(key.to_string(), (value.to_string(), lineno));
        }
        Ok(Config {
            sections,
            text_hash: fnv1a_hex(text),
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError {
                message: format!("cannot read config {}: {e}", path.display()),
            })?;
        Config::parse(&text, &path.display().to_string())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|(v, _)| v.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        match self.get(section, key) {
            Some(v) => Ok(v),
            None => err(format!(
                "{}: missing required key '{key}' in [{section}]",
                self.source
            )),
        }
    }

    fn parse_with<T, F>(&self, section: &str, key: &str, what: &str, f: F) -> Result<Option<T>, ConfigError>
    where
        F: Fn(&str) -> Option<T>,
    {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => match f(v) {
                Some(t) => Ok(Some(t)),
                None => {
                    let line = self.sections[section][key].1;
                    err(format!(
                        "{}:{line}: [{section}] {key} = '{v}' is not {what}",
                        self.source
                    ))
                }
            },
        }
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>, ConfigError> {
        self.parse_with(section, key, "an unsigned integer", |v| v.parse().ok())
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        self.parse_with(section, key, "an unsigned integer", |v| v.parse().ok())
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse_with(section, key, "a number", |v| v.parse().ok())
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>, ConfigError> {
        self.parse_with(section, key, "true or false", |v| match v {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    pub fn get_usize_list(&self, section: &str, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        self.parse_with(section, key, "a whitespace-separated list of integers", |v| {
            let parsed: Result<Vec<usize>, _> = v.split_whitespace().map(|t| t.parse()).collect();
            parsed.ok().filter(|l| !l.is_empty())
        })
    }

    pub fn get_f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.parse_with(section, key, "a whitespace-separated list of numbers", |v| {
            let parsed: Result<Vec<f64>, _> = v.split_whitespace().map(|t| t.parse()).collect();
            parsed.ok().filter(|l| !l.is_empty())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_values() {
        let cfg = Config::parse(
            "[experiment]\nname = demo\nseed = 7\n\n[operator]\nkind = inpainting # trailing\nshape = 8 8\n",
            "test",
        )
        .unwrap();
        assert_eq!(cfg.get("experiment", "name"), Some("demo"));
        assert_eq!(cfg.get_u64("experiment", "seed").unwrap(), Some(7));
        assert_eq!(cfg.get("operator", "kind"), Some("inpainting"));
        assert_eq!(
            cfg.get_usize_list("operator", "shape").unwrap(),
            Some(vec![8, 8])
        );
    }

    #[test]
    fn unknown_key_is_a_hard_error_with_line_number() {
        let e = Config::parse("[experiment]\nnam = typo\n", "test").unwrap_err();
        assert!(e.message.contains("test:2"), "{}", e.message);
        assert!(e.message.contains("unknown key 'nam'"), "{}", e.message);
    }

    #[test]
    fn unknown_section_is_a_hard_error() {
        let e = Config::parse("[experimnt]\n", "test").unwrap_err();
        assert!(e.message.contains("unknown section"), "{}", e.message);
    }

    #[test]
    fn bad_typed_value_reports_field_and_line() {
        let e = Config::parse("[experiment]\nseed = banana\n", "test")
            .unwrap()
            .get_u64("experiment", "seed")
            .unwrap_err();
        assert!(e.message.contains("seed"), "{}", e.message);
        assert!(e.message.contains("test:2"), "{}", e.message);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(fnv1a_hex("abc"), fnv1a_hex("abc"));
        assert_ne!(fnv1a_hex("abc"), fnv1a_hex("abd"));
    }
}
