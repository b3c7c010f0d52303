//! Experiment manifests: JSON files whose fields command-line flags override.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tasksumma::{
    make_nonuniform_tiling, make_uniform_tiling, random_block_matrix, BlockMatrix, LatencyModel, Mode,
    ProcessGrid, RunConfig, Tiling,
};

/// A command-line or manifest mistake; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl From<tasksumma::Error> for UsageError {
    fn from(e: tasksumma::Error) -> Self {
        UsageError(e.to_string())
    }
}

/// `RxC`, e.g. `4x4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("grid {s:?} is not RxC"))?;
        let num = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("grid {s:?} is not RxC"));
        Ok(GridSpec {
            rows: num(r)?,
            cols: num(c)?,
        })
    }
}

impl TryFrom<String> for GridSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        g.to_string()
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Latency in its command-line spelling, e.g. `fixed:100`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LatencySpec(pub LatencyModel);

impl TryFrom<String> for LatencySpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse::<LatencyModel>().map(LatencySpec).map_err(|e| e.to_string())
    }
}

impl From<LatencySpec> for String {
    fn from(l: LatencySpec) -> String {
        l.0.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Blocking {
    Uniform { block_size: usize },
    /// Random block extents; rows, inner and columns use seeds `seed`,
    /// `seed + 1`, `seed + 2`.
    Nonuniform { block_count: usize, seed: u64 },
}

impl Blocking {
    pub fn label(&self) -> &'static str {
        match self {
            Blocking::Uniform { .. } => "uniform",
            Blocking::Nonuniform { .. } => "nonuniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub size: usize,
    pub blocking: Blocking,
    pub grid: GridSpec,
    pub mode: Mode,
    pub repeats: usize,
    pub deterministic: bool,
    pub issue_limit: Option<usize>,
    pub latency: LatencySpec,
    /// Seeds the operand values.
    pub seed: u64,
    pub workers: usize,
    pub split: usize,
    /// Use the identity for A, so C must equal B.
    pub identity: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            size: 1024,
            blocking: Blocking::Uniform { block_size: 128 },
            grid: GridSpec { rows: 1, cols: 1 },
            mode: Mode::Task,
            repeats: 5,
            deterministic: false,
            issue_limit: None,
            latency: LatencySpec(LatencyModel::Zero),
            seed: 1,
            workers: 2,
            split: 1,
            identity: false,
        }
    }
}

/// Operands and tilings built from a spec.
pub struct Problem {
    pub grid: ProcessGrid,
    pub inner: Tiling,
    pub a: BlockMatrix,
    pub b: BlockMatrix,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("bad spec {}: {e}", path.display())))
    }

    pub fn load_series(path: &Path) -> Result<Vec<Self>, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("bad series {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if self.size == 0 {
            return Err(UsageError("size must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(UsageError("repeats must be at least 1".into()));
        }
        match self.blocking {
            Blocking::Uniform { block_size: 0 } => return Err(UsageError("block size must be positive".into())),
            Blocking::Nonuniform { block_count, .. } if block_count == 0 || block_count > self.size => {
                return Err(UsageError(format!(
                    "nonuniform block count must be in 1..={}, got {block_count}",
                    self.size
                )))
            }
            _ => {}
        }
        ProcessGrid::new(self.grid.rows, self.grid.cols)?;
        self.run_config(1).validate()?;
        Ok(())
    }

    pub fn run_config(&self, threads: usize) -> RunConfig {
        RunConfig {
            mode: self.mode,
            workers: self.workers,
            threads,
            latency: self.latency.0,
            deterministic: self.deterministic,
            issue_limit: self.issue_limit,
            split: self.split,
            ..RunConfig::default()
        }
    }

    pub fn tilings(&self) -> Result<(Tiling, Tiling, Tiling), UsageError> {
        Ok(match self.blocking {
            Blocking::Uniform { block_size } => {
                let t = make_uniform_tiling(self.size, block_size)?;
                (t.clone(), t.clone(), t)
            }
            Blocking::Nonuniform { block_count, seed } => (
                make_nonuniform_tiling(self.size, block_count, seed)?,
                make_nonuniform_tiling(self.size, block_count, seed.wrapping_add(1))?,
                make_nonuniform_tiling(self.size, block_count, seed.wrapping_add(2))?,
            ),
        })
    }

    pub fn problem(&self) -> Result<Problem, UsageError> {
        self.validate()?;
        let grid = ProcessGrid::new(self.grid.rows, self.grid.cols)?;
        let (rows, inner, cols) = self.tilings()?;
        let a = if self.identity {
            BlockMatrix::identity(rows.clone(), inner.clone(), grid)?
        } else {
            random_block_matrix(&rows, &inner, &grid, self.seed)
        };
        let b = random_block_matrix(&inner, &cols, &grid, self.seed.wrapping_add(1));
        Ok(Problem {
            grid,
            inner,
            a,
            b,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!("4x2".parse::<GridSpec>().unwrap(), GridSpec { rows: 4, cols: 2 });
        assert!("4".parse::<GridSpec>().is_err());
        assert!("ax2".parse::<GridSpec>().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let spec = ExperimentSpec {
            blocking: Blocking::Nonuniform { block_count: 8, seed: 7 },
            latency: LatencySpec(LatencyModel::Fixed { us: 100.0 }),
            grid: GridSpec { rows: 2, cols: 3 },
            ..Default::default()
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"grid\":\"2x3\""));
        assert!(text.contains("\"latency\":\"fixed:100\""));
        assert_eq!(serde_json::from_str::<ExperimentSpec>(&text).unwrap(), spec);
        let partial: ExperimentSpec = serde_json::from_str(r#"{"size": 64, "grid": "2x2"}"#).unwrap();
        assert_eq!(partial.repeats, 5);
        assert!(serde_json::from_str::<ExperimentSpec>(r#"{"sise": 64}"#).is_err());
    }

    #[test]
    fn validation() {
        let zero_grid = ExperimentSpec {
            grid: GridSpec { rows: 0, cols: 2 },
            ..Default::default()
        };
        assert!(zero_grid.validate().is_err());
        let too_many = ExperimentSpec {
            size: 4,
            blocking: Blocking::Nonuniform { block_count: 5, seed: 1 },
            ..Default::default()
        };
        assert!(too_many.validate().is_err());
        assert!(ExperimentSpec::default().validate().is_ok());
    }
}
