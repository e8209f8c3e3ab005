use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Direction, ScopePoint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Bin start in time units from the corpus origin.
    pub bin_start: f64,
    /// Mean normalized mass of relevant ground-truth instances.
    pub gt_mass: f64,
    /// Mean normalized mass of retrieved relevant instances.
    pub result_mass: f64,
}

/// Metrics of one retrieval direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: Direction,
    pub k: usize,
    pub map_at_k: f64,
    pub ndcg_at_k: f64,
    pub scope_curve: Vec<ScopePoint>,
    /// Mean histogram intersection between retrieved relevant instances and
    /// all relevant instances.
    pub temporal_fit: f64,
    pub queries: usize,
    /// Queries without any relevant candidate.
    pub excluded_queries: usize,
    pub histogram: Vec<HistogramBin>,
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(body))
        .map_err(|e| Error::io(path, e))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format {
            kind: "eval report",
            message: e.to_string(),
        })
    }

    /// `k,map` rows.
    pub fn scope_csv(&self) -> String {
        let mut s = String::from("k,map\n");
        for p in &self.scope_curve {
            s.push_str(&format!("{},{}\n", p.k, p.map));
        }
        s
    }

    /// `bin_start,gt_mass,result_mass` rows.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_start,gt_mass,result_mass\n");
        for b in &self.histogram {
            s.push_str(&format!("{},{},{}\n", b.bin_start, b.gt_mass, b.result_mass));
        }
        s
    }

    /// Writes `eval_<dir>.json`, `scope_<dir>.csv` and `temporal_<dir>.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = self.direction.short();
        write_file(&dir.join(format!("eval_{d}.json")), self.to_json().as_bytes())?;
        write_file(&dir.join(format!("scope_{d}.csv")), self.scope_csv().as_bytes())?;
        write_file(&dir.join(format!("temporal_{d}.csv")), self.histogram_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_and_csv() {
        let r = EvalReport {
            direction: Direction::TextToImage,
            k: 2,
            map_at_k: 0.5,
            ndcg_at_k: 0.75,
            scope_curve: vec![ScopePoint { k: 1, map: 1.0 }, ScopePoint { k: 2, map: 0.5 }],
            temporal_fit: 0.25,
            queries: 3,
            excluded_queries: 0,
            histogram: vec![HistogramBin {
                bin_start: 0.0,
                gt_mass: 1.0,
                result_mass: 0.5,
            }],
        };
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(r.scope_csv(), "k,map\n1,1\n2,0.5\n");
        assert_eq!(r.histogram_csv(), "bin_start,gt_mass,result_mass\n0,1,0.5\n");
        let dir = tempfile::tempdir().unwrap();
        r.write_to_dir(dir.path()).unwrap();
        assert!(dir.path().join("eval_t2i.json").exists());
        assert!(dir.path().join("temporal_t2i.csv").exists());
    }
}
