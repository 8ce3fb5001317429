use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{load_idx_dataset, make_synthetic_dataset, Dataset};

/// Where a dataset comes from, written as a compact string:
///
/// ```text
/// synthetic:N,DIM,K,SEP,SEED
/// idx:IMAGES,LABELS[,LIMIT]
/// mnist-train:DIR[,LIMIT]
/// mnist-test:DIR[,LIMIT]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DataSpec {
    Synthetic {
        n: usize,
        dim: usize,
        classes: usize,
        sep: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: Option<usize>,
    },
    MnistTrain {
        dir: PathBuf,
        limit: Option<usize>,
    },
    MnistTest {
        dir: PathBuf,
        limit: Option<usize>,
    },
}

fn bad(spec: &str, why: &str) -> Error {
    Error::InvalidArgument(format!("bad data spec '{spec}': {why}"))
}

fn field<T: FromStr>(spec: &str, name: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| bad(spec, &format!("cannot parse {name} from '{v}'")))
}

fn limit(spec: &str, rest: &[&str]) -> Result<Option<usize>> {
    match rest {
        [] => Ok(None),
        [l] => Ok(Some(field(spec, "LIMIT", l)?)),
        _ => Err(bad(spec, "too many fields")),
    }
}

impl FromStr for DataSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = s.split_once(':').ok_or_else(|| bad(s, "missing ':'"))?;
        let parts: Vec<&str> = body.split(',').collect();
        match kind {
            "synthetic" => {
                let [n, dim, k, sep, seed] = parts[..] else {
                    return Err(bad(s, "expected N,DIM,K,SEP,SEED"));
                };
                Ok(DataSpec::Synthetic {
                    n: field(s, "N", n)?,
                    dim: field(s, "DIM", dim)?,
                    classes: field(s, "K", k)?,
                    sep: field(s, "SEP", sep)?,
                    seed: field(s, "SEED", seed)?,
                })
            }
            "idx" => {
                if parts.len() < 2 {
                    return Err(bad(s, "expected IMAGES,LABELS[,LIMIT]"));
                }
                Ok(DataSpec::Idx {
                    images: parts[0].into(),
                    labels: parts[1].into(),
                    limit: limit(s, &parts[2..])?,
                })
            }
            "mnist-train" | "mnist-test" => {
                if parts[0].is_empty() {
                    return Err(bad(s, "expected DIR[,LIMIT]"));
                }
                let dir = PathBuf::from(parts[0]);
                let limit = limit(s, &parts[1..])?;
                Ok(if kind == "mnist-train" {
                    DataSpec::MnistTrain { dir, limit }
                } else {
                    DataSpec::MnistTest { dir, limit }
                })
            }
            other => Err(bad(s, &format!("unknown source '{other}'"))),
        }
    }
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lim = |l: &Option<usize>| l.map(|l| format!(",{l}")).unwrap_or_default();
        match self {
            DataSpec::Synthetic {
                n,
                dim,
                classes,
                sep,
                seed,
            } => write!(f, "synthetic:{n},{dim},{classes},{sep:?},{seed}"),
            DataSpec::Idx { images, labels, limit } => {
                write!(f, "idx:{},{}{}", images.display(), labels.display(), lim(limit))
            }
            DataSpec::MnistTrain { dir, limit } => write!(f, "mnist-train:{}{}", dir.display(), lim(limit)),
            DataSpec::MnistTest { dir, limit } => write!(f, "mnist-test:{}{}", dir.display(), lim(limit)),
        }
    }
}

impl TryFrom<String> for DataSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DataSpec> for String {
    fn from(d: DataSpec) -> String {
        d.to_string()
    }
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSpec::Synthetic {
                n,
                dim,
                classes,
                sep,
                seed,
            } => make_synthetic_dataset(*n, *dim, *classes, *sep, *seed),
            DataSpec::Idx { images, labels, limit } => load_idx_dataset(images, labels, *limit),
            DataSpec::MnistTrain { dir, limit } => mnist(dir, "train", *limit),
            DataSpec::MnistTest { dir, limit } => mnist(dir, "t10k", *limit),
        }
    }

    /// Pixel data lives in `[0, 1]`; synthetic features are unbounded.
    pub fn input_range(&self) -> Option<(f64, f64)> {
        match self {
            DataSpec::Synthetic { .. } => None,
            _ => Some(crate::baselines::UNIT_RANGE),
        }
    }
}

fn mnist(dir: &Path, prefix: &str, limit: Option<usize>) -> Result<Dataset> {
    load_idx_dataset(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        limit,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for s in [
            "synthetic:500,2,2,2.0,7",
            "idx:a/img,b/lbl",
            "idx:a/img,b/lbl,10",
            "mnist-train:data/mnist-subset",
            "mnist-test:data/mnist-subset,100",
        ] {
            let d: DataSpec = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
            let json = serde_json::to_string(&d).unwrap();
            assert_eq!(serde_json::from_str::<DataSpec>(&json).unwrap(), d);
        }
    }

    #[test]
    fn rejects_malformed() {
        for s in ["synthetic:1,2", "foo:bar", "nocolon", "idx:only", "mnist-train:", "synthetic:a,2,2,1,0", "idx:a,b,1,2"] {
            assert!(s.parse::<DataSpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn synthetic_loads() {
        let d = "synthetic:20,3,2,1.5,1".parse::<DataSpec>().unwrap().load().unwrap();
        assert_eq!((d.len(), d.input_dim(), d.num_classes()), (20, 3, 2));
    }
}
