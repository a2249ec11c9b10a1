//! Plain-text tables for evaluation reports.
//!
//! Every value is written with Rust's shortest round-trip float formatting, so
//! [`EvalReport::from_table`] and [`MonteCarloReport::from_table`] recover the
//! exact numbers. Percent columns are derived on output and ignored on input.

use serde::{Deserialize, Serialize};

use super::{mean_std, sad_percent, EvalReport};
use crate::error::{Error, Result};

/// Mean and population standard deviation of one metric over several runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        MeanStd { mean, std }
    }
}

/// Aggregate of several evaluations, one per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<EvalReport>,
    pub armse: MeanStd,
    pub sad_per_class: Vec<MeanStd>,
    pub asad: Option<MeanStd>,
}

impl MonteCarloReport {
    pub fn new(seeds: Vec<u64>, runs: Vec<EvalReport>) -> Result<Self> {
        if runs.is_empty() || seeds.len() != runs.len() {
            return Err(Error::dim(format!("{} seeds for {} runs", seeds.len(), runs.len())));
        }
        let classes = runs[0].sad_per_class.len();
        if runs
            .iter()
            .any(|r| r.sad_per_class.len() != classes || r.asad.is_some() != runs[0].asad.is_some())
        {
            return Err(Error::dim("runs scored different sets of metrics"));
        }
        let armse = MeanStd::of(&runs.iter().map(|r| r.armse).collect::<Vec<_>>());
        let sad_per_class = (0..classes)
            .map(|j| MeanStd::of(&runs.iter().map(|r| r.sad_per_class[j]).collect::<Vec<_>>()))
            .collect();
        let asad = runs[0]
            .asad
            .map(|_| MeanStd::of(&runs.iter().filter_map(|r| r.asad).collect::<Vec<_>>()));
        Ok(MonteCarloReport {
            seeds,
            runs,
            armse,
            sad_per_class,
            asad,
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<12} {:<24} {:<24} {:<10} {:<10}\n",
            "metric", "mean", "std", "mean%", "std%"
        );
        let mut row = |name: String, m: &MeanStd, pct: fn(f64) -> f64| {
            s.push_str(&format!(
                "{:<12} {:<24} {:<24} {:<10.4} {:<10.4}\n",
                name,
                m.mean,
                m.std,
                pct(m.mean),
                pct(m.std)
            ));
        };
        row("aRMSE".into(), &self.armse, |v| 100.0 * v);
        for (j, m) in self.sad_per_class.iter().enumerate() {
            row(format!("SAD[{j}]"), m, sad_percent);
        }
        if let Some(m) = &self.asad {
            row("aSAD".into(), m, sad_percent);
        }
        s.push('\n');
        for (seed, run) in self.seeds.iter().zip(&self.runs) {
            s.push_str(&format!("run {seed}\n"));
            s.push_str(&run.to_table());
        }
        s
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut blocks = text.split("\nrun ");
        let summary = blocks.next().unwrap_or_default();
        let mut armse = None;
        let mut sad_per_class = Vec::new();
        let mut asad = None;
        for line in summary.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(table_err(format!("summary row `{line}`")));
            }
            let m = MeanStd {
                mean: parse_f64(f[1])?,
                std: parse_f64(f[2])?,
            };
            match f[0] {
                "aRMSE" => armse = Some(m),
                "aSAD" => asad = Some(m),
                name => {
                    let j = class_index(name)?;
                    if j != sad_per_class.len() {
                        return Err(table_err(format!("out-of-order row `{name}`")));
                    }
                    sad_per_class.push(m);
                }
            }
        }
        let mut seeds = Vec::new();
        let mut runs = Vec::new();
        for block in blocks {
            let (seed, body) = block
                .split_once('\n')
                .ok_or_else(|| table_err("empty run block".into()))?;
            seeds.push(
                seed.trim()
                    .parse::<u64>()
                    .map_err(|e| table_err(format!("seed `{seed}`: {e}")))?,
            );
            runs.push(EvalReport::from_table(body)?);
        }
        Ok(MonteCarloReport {
            seeds,
            runs,
            armse: armse.ok_or_else(|| table_err("missing aRMSE row".into()))?,
            sad_per_class,
            asad,
        })
    }
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12} {:<24} {:<10}\n", "metric", "value", "percent");
        s.push_str(&format!(
            "{:<12} {:<24} {:<10.4}\n",
            "aRMSE",
            self.armse,
            100.0 * self.armse
        ));
        for (j, v) in self.sad_per_class.iter().enumerate() {
            s.push_str(&format!(
                "{:<12} {:<24} {:<10.4}\n",
                format!("SAD[{j}]"),
                v,
                sad_percent(*v)
            ));
        }
        if let Some(v) = self.asad {
            s.push_str(&format!("{:<12} {:<24} {:<10.4}\n", "aSAD", v, sad_percent(v)));
        }
        let perm: Vec<String> = self.permutation.iter().map(|p| p.to_string()).collect();
        s.push_str(&format!("{:<12} {}\n", "permutation", perm.join(",")));
        s
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut armse = None;
        let mut sad_per_class = Vec::new();
        let mut asad = None;
        let mut permutation = None;
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["permutation"] => permutation = Some(vec![]),
                ["permutation", p] => {
                    permutation = Some(
                        p.split(',')
                            .map(|x| x.parse::<usize>().map_err(|e| table_err(format!("`{x}`: {e}"))))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                ["aRMSE", v, _] => armse = Some(parse_f64(v)?),
                ["aSAD", v, _] => asad = Some(parse_f64(v)?),
                [name, v, _] => {
                    let j = class_index(name)?;
                    if j != sad_per_class.len() {
                        return Err(table_err(format!("out-of-order row `{name}`")));
                    }
                    sad_per_class.push(parse_f64(v)?);
                }
                _ => return Err(table_err(format!("row `{line}`"))),
            }
        }
        Ok(EvalReport {
            armse: armse.ok_or_else(|| table_err("missing aRMSE row".into()))?,
            sad_per_class,
            asad,
            permutation: permutation.ok_or_else(|| table_err("missing permutation row".into()))?,
        })
    }
}

fn table_err(detail: String) -> Error {
    Error::Config(format!("malformed report table: {detail}"))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| table_err(format!("`{s}`: {e}")))
}

fn class_index(name: &str) -> Result<usize> {
    name.strip_prefix("SAD[")
        .and_then(|r| r.strip_suffix(']'))
        .and_then(|j| j.parse().ok())
        .ok_or_else(|| table_err(format!("unknown metric `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(a: f64) -> EvalReport {
        EvalReport {
            armse: a,
            sad_per_class: vec![0.1 + a, 1.0 / 3.0],
            asad: Some((0.1 + a + 1.0 / 3.0) / 2.0),
            permutation: vec![1, 0],
        }
    }

    #[test]
    fn single_report_round_trips() {
        let r = report(0.012345678901234567);
        assert_eq!(EvalReport::from_table(&r.to_table()).unwrap(), r);
        let bare = EvalReport {
            armse: 1e-300,
            sad_per_class: vec![],
            asad: None,
            permutation: vec![0],
        };
        assert_eq!(EvalReport::from_table(&bare.to_table()).unwrap(), bare);
    }

    #[test]
    fn monte_carlo_round_trips() {
        let mc = MonteCarloReport::new(vec![3, 7, 11], vec![report(0.1), report(0.2), report(0.7)]).unwrap();
        assert!((mc.armse.mean - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(MonteCarloReport::from_table(&mc.to_table()).unwrap(), mc);
    }
}
