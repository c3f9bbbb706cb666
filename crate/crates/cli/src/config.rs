//! `key = value` run configuration merged with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use planetoid::data::{Labeling, Section, SplitPolicy};
use planetoid::{Method, TrainConfig};

use crate::failure::Failure;

/// Every key accepted in a config file or through `--set`.
pub const KEYS: &[&str] = &[
    "preset",
    "variant",
    "data",
    "out",
    "seed",
    "k",
    "section",
    "labels_per_class",
    "label_rate",
    "test_size",
    "r1",
    "r2",
    "q",
    "d",
    "n1",
    "n2",
    "t1",
    "t2",
    "lr_sup",
    "lr_unsup",
    "pretrain_steps",
    "max_rounds",
    "patience",
    "val_fraction",
    "lp_max_iters",
    "lp_tol",
    "feature_hidden",
    "embedding_dim",
    "encoder_hidden",
    "embedding_hidden",
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    /// Where the value came from, e.g. `run.conf:4` or `--seed`.
    origin: String,
}

/// Raw settings before type checking. Later layers replace earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    entries: BTreeMap<String, Entry>,
}

impl Settings {
    pub fn read_file(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, Failure> {
        let mut settings = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let origin = format!("{source}:{}", n + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Failure::config(format!(
                    "{origin}: expected `key = value`, got {line:?}"
                )));
            };
            let key = key.trim();
            if settings.entries.contains_key(key) {
                return Err(Failure::config(format!("{origin}: duplicate key {key:?}")));
            }
            settings.set(key, value.trim(), &origin)?;
        }
        Ok(settings)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), Failure> {
        if !KEYS.contains(&key) {
            return Err(Failure::config(format!("{origin}: unknown key {key:?}")));
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                origin: origin.to_string(),
            },
        );
        Ok(())
    }

    /// Parses a `--set key=value` argument.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), Failure> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Failure::config(format!(
                "--set {assignment:?}: expected KEY=VALUE"
            )));
        };
        self.set(key.trim(), value.trim(), "--set")
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn parse_value<T>(
        &self,
        key: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Option<T>, Failure> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).map_err(|msg| {
                Failure::config(format!("{}: {key} = {:?}: {msg}", e.origin, e.value))
            }),
        }
    }
}

fn count(s: &str) -> Result<usize, String> {
    s.parse()
        .map_err(|_| "expected a nonnegative integer".to_string())
}

fn seed(s: &str) -> Result<u64, String> {
    s.parse()
        .map_err(|_| "expected an unsigned 64-bit integer".to_string())
}

/// A decimal number or a fraction such as `5/6`.
fn real(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| "bad numerator".to_string())?;
            let b: f64 = b
                .trim()
                .parse()
                .map_err(|_| "bad denominator".to_string())?;
            a / b
        }
        None => s.parse().map_err(|_| "expected a number".to_string())?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err("expected a finite number".into())
    }
}

/// Comma-separated layer widths; empty or `none` for no layers.
fn widths(s: &str) -> Result<Vec<usize>, String> {
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',').map(|w| count(w.trim())).collect()
}

fn method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: planetoid::Error| e.to_string())
}

fn section(s: &str) -> Result<Section, String> {
    s.parse().map_err(|e: planetoid::Error| e.to_string())
}

fn preset(s: &str) -> Result<TrainConfig, String> {
    match s {
        "default" => Ok(TrainConfig::default()),
        "citation" => Ok(TrainConfig::citation()),
        other => Err(format!(
            "unknown preset {other:?} (expected default or citation)"
        )),
    }
}

/// Fully type-checked settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub split: SplitPolicy,
    pub variant: Option<Method>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub section: Section,
}

impl RunConfig {
    pub fn resolve(s: &Settings) -> Result<Self, Failure> {
        let mut train = s.parse_value("preset", preset)?.unwrap_or_default();
        macro_rules! apply {
            ($($key:literal => $field:expr, $parse:expr;)*) => {
                $(if let Some(v) = s.parse_value($key, $parse)? {
                    $field = v;
                })*
            };
        }
        apply! {
            "seed" => train.seed, seed;
            "r1" => train.sampler.r1, real;
            "r2" => train.sampler.r2, real;
            "q" => train.sampler.q, count;
            "d" => train.sampler.d, count;
            "n1" => train.n1, count;
            "n2" => train.n2, count;
            "t1" => train.t1, count;
            "t2" => train.t2, count;
            "lr_sup" => train.lr_sup, real;
            "lr_unsup" => train.lr_unsup, real;
            "pretrain_steps" => train.pretrain_steps, count;
            "max_rounds" => train.max_rounds, count;
            "patience" => train.patience, count;
            "val_fraction" => train.val_fraction, real;
            "lp_max_iters" => train.lp_max_iters, count;
            "lp_tol" => train.lp_tol, real;
            "feature_hidden" => train.architecture.feature_hidden, widths;
            "embedding_dim" => train.architecture.embedding_dim, count;
            "encoder_hidden" => train.architecture.encoder_hidden, widths;
            "embedding_hidden" => train.architecture.embedding_hidden, widths;
        }
        train.validate().map_err(Failure::from)?;

        let mut split = SplitPolicy {
            seed: train.seed,
            ..SplitPolicy::default()
        };
        let per_class = s.parse_value("labels_per_class", count)?;
        let rate = s.parse_value("label_rate", real)?;
        split.labeling = match (per_class, rate) {
            (Some(_), Some(_)) => {
                return Err(Failure::config(
                    "labels_per_class and label_rate are mutually exclusive",
                ));
            }
            (Some(0), None) => return Err(Failure::config("labels_per_class must be >= 1")),
            (Some(n), None) => Labeling::PerClass(n),
            (None, Some(r)) if !(r > 0.0 && r <= 1.0) => {
                return Err(Failure::config(format!(
                    "label_rate = {r} is not in (0, 1]"
                )));
            }
            (None, Some(r)) => Labeling::Rate(r),
            (None, None) => split.labeling,
        };
        if let Some(n) = s.parse_value("test_size", count)? {
            split.test_size = n;
        }

        let k = s.parse_value("k", count)?;
        if k == Some(0) {
            return Err(Failure::config("k must be >= 1"));
        }
        Ok(RunConfig {
            train,
            split,
            variant: s.parse_value("variant", method)?,
            data: s.get("data").map(PathBuf::from),
            out: s.get("out").map(PathBuf::from),
            k,
            section: s.parse_value("section", section)?.unwrap_or(Section::Test),
        })
    }

    /// The resolved settings as a config file that reproduces this run.
    pub fn to_conf(&self) -> String {
        let t = &self.train;
        let a = &t.architecture;
        let list = |w: &[usize]| {
            if w.is_empty() {
                "none".to_string()
            } else {
                w.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }
        };
        let mut out = String::new();
        let mut line = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        if let Some(m) = self.variant {
            line("variant", m.to_string());
        }
        if let Some(d) = &self.data {
            line("data", d.display().to_string());
        }
        line("seed", t.seed.to_string());
        match self.split.labeling {
            Labeling::PerClass(n) => line("labels_per_class", n.to_string()),
            Labeling::Rate(r) => line("label_rate", format!("{r:?}")),
        }
        line("test_size", self.split.test_size.to_string());
        line("r1", format!("{:?}", t.sampler.r1));
        line("r2", format!("{:?}", t.sampler.r2));
        line("q", t.sampler.q.to_string());
        line("d", t.sampler.d.to_string());
        line("n1", t.n1.to_string());
        line("n2", t.n2.to_string());
        line("t1", t.t1.to_string());
        line("t2", t.t2.to_string());
        line("lr_sup", format!("{:?}", t.lr_sup));
        line("lr_unsup", format!("{:?}", t.lr_unsup));
        line("pretrain_steps", t.pretrain_steps.to_string());
        line("max_rounds", t.max_rounds.to_string());
        line("patience", t.patience.to_string());
        line("val_fraction", format!("{:?}", t.val_fraction));
        line("lp_max_iters", t.lp_max_iters.to_string());
        line("lp_tol", format!("{:?}", t.lp_tol));
        line("feature_hidden", list(&a.feature_hidden));
        line("embedding_dim", a.embedding_dim.to_string());
        line("encoder_hidden", list(&a.encoder_hidden));
        line("embedding_hidden", list(&a.embedding_hidden));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<RunConfig, Failure> {
        RunConfig::resolve(&Settings::parse(text, "test.conf")?)
    }

    #[test]
    fn empty_config_gives_library_defaults() {
        let rc = resolve("# nothing here\n\n").unwrap();
        assert_eq!(rc.train, TrainConfig::default());
        assert_eq!(rc.split, SplitPolicy::default());
        assert_eq!(rc.section, Section::Test);
    }

    #[test]
    fn values_and_comments() {
        let rc =
            resolve("r1 = 5/6  # ratio\nlr_sup=0.5\nfeature_hidden = 8,4\nencoder_hidden = none\n")
                .unwrap();
        assert_eq!(rc.train.sampler.r1, 5.0 / 6.0);
        assert_eq!(rc.train.lr_sup, 0.5);
        assert_eq!(rc.train.architecture.feature_hidden, vec![8, 4]);
        assert!(rc.train.architecture.encoder_hidden.is_empty());
    }

    #[test]
    fn preset_applies_before_other_keys() {
        let rc = resolve("lr_unsup = 3\npreset = citation\n").unwrap();
        assert_eq!(rc.train.lr_unsup, 3.0);
        assert_eq!(rc.train.lr_sup, TrainConfig::citation().lr_sup);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for (text, needle) in [
            ("learning_rate = 1\n", "unknown key"),
            ("q = 3\nq = 4\n", "duplicate key"),
            ("q 3\n", "key = value"),
            ("q = -1\n", "test.conf:1"),
            ("r1 = 1.5\n", "r1"),
            (
                "labels_per_class = 3\nlabel_rate = 0.1\n",
                "mutually exclusive",
            ),
            ("variant = planetoid-x\n", "unknown model variant"),
            ("k = 0\n", "k must be"),
        ] {
            let err = resolve(text).unwrap_err();
            assert_eq!(err.code, 2, "{text}");
            assert!(err.message.contains(needle), "{text}: {}", err.message);
        }
    }

    #[test]
    fn later_layers_win() {
        let mut s = Settings::parse("seed = 1\nt2 = 4\n", "a.conf").unwrap();
        s.set("seed", "9", "--seed").unwrap();
        let rc = RunConfig::resolve(&s).unwrap();
        assert_eq!(rc.train.seed, 9);
        assert_eq!(rc.split.seed, 9);
        assert_eq!(rc.train.t2, 4);
    }

    #[test]
    fn written_config_round_trips() {
        let rc = resolve(
            "variant = lp\nlabel_rate = 0.052\nr2 = 0.25\nembedding_hidden = none\nseed = 3\n",
        )
        .unwrap();
        let again = resolve(&rc.to_conf()).unwrap();
        assert_eq!(again.train, rc.train);
        assert_eq!(again.split, rc.split);
        assert_eq!(again.variant, rc.variant);
    }

    #[test]
    fn every_key_is_accepted() {
        let mut s = Settings::default();
        for key in KEYS {
            s.set(key, "x", "test").unwrap();
        }
    }
}
