//! Labelled molecule sets, CSV ingestion and seeded splitting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::smiles::{murcko_scaffold, MolGraph, ScaffoldKey};

#[derive(Debug, Clone)]
pub struct Record {
    pub smiles: String,
    pub target: f64,
    pub graph: MolGraph,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub units: String,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the source file (header is line 1).
    pub line: usize,
    pub smiles: String,
    pub reason: String,
}

impl Dataset {
    /// Parses `(smiles, target)` pairs; rejected pairs are reported.
    pub fn from_pairs(
        name: impl Into<String>,
        units: impl Into<String>,
        pairs: impl IntoIterator<Item = (String, f64)>,
    ) -> (Self, Vec<Rejection>) {
        let mut records = Vec::new();
        let mut rejected = Vec::new();
        for (i, (smiles, target)) in pairs.into_iter().enumerate() {
            let line = i + 2;
            if !target.is_finite() {
                rejected.push(Rejection {
                    line,
                    smiles,
                    reason: "non-finite target".into(),
                });
                continue;
            }
            match MolGraph::from_smiles(&smiles) {
                Ok(graph) => records.push(Record { smiles, target, graph }),
                Err(e) => rejected.push(Rejection {
                    line,
                    smiles,
                    reason: e.to_string(),
                }),
            }
        }
        (
            Self {
                name: name.into(),
                units: units.into(),
                records,
            },
            rejected,
        )
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn graphs(&self) -> Vec<MolGraph> {
        self.records.iter().map(|r| r.graph.clone()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.target).collect()
    }

    pub fn targets_of(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.records[i].target).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            units: self.units.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["smiles", "target"])?;
        for r in &self.records {
            w.write_record([r.smiles.as_str(), &format!("{:?}", r.target)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub rejected: Vec<Rejection>,
}

/// Reads a CSV whose header names `smiles_col` and `target_col`. Rows with
/// unparseable SMILES or targets are skipped and reported.
pub fn load_csv(path: &Path, smiles_col: &str, target_col: &str) -> Result<LoadReport> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (si, ti) = (find(smiles_col)?, find(target_col)?);
    let mut pairs = Vec::new();
    let mut bad_rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let smiles = row.get(si).unwrap_or("").trim().to_string();
        match row.get(ti).map(str::trim).map(str::parse::<f64>) {
            Some(Ok(t)) => pairs.push((i, smiles, t)),
            _ => bad_rows.push(Rejection {
                line: i + 2,
                smiles,
                reason: "unparseable target".into(),
            }),
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let lines: Vec<usize> = pairs.iter().map(|p| p.0 + 2).collect();
    let (dataset, mut rejected) = Dataset::from_pairs(name, target_col, pairs.into_iter().map(|(_, s, t)| (s, t)));
    // `from_pairs` numbers lines by position among the parsed rows
    for r in &mut rejected {
        r.line = lines[r.line - 2];
    }
    rejected.extend(bad_rows);
    rejected.sort_by_key(|r| r.line);
    for r in &rejected {
        log::warn!("rejected line {} ({}): {}", r.line, r.smiles, r.reason);
    }
    if dataset.is_empty() {
        return Err(Error::NoValidRows);
    }
    Ok(LoadReport { dataset, rejected })
}

/// One SMILES per line; blank lines and `#` comments are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<MolGraph>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match MolGraph::from_smiles(line) {
            Ok(g) => out.push(g),
            Err(e) => log::warn!("corpus line {}: {e}", i + 1),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Scaffold,
}

/// Train and test fractions; whatever remains becomes validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Random,
            train: 0.8,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.train) || !ok(self.test) || self.train + self.test > 1.0 + 1e-12 {
            return Err(Error::FractionInvalid(format!(
                "train {} + test {} must lie in [0, 1]",
                self.train, self.test
            )));
        }
        if self.train == 0.0 || self.test == 0.0 {
            return Err(Error::FractionInvalid("train and test fractions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn sizes(n: usize, spec: &SplitSpec) -> (usize, usize) {
    let n_test = ((spec.test * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let n_train = ((spec.train * n as f64).round() as usize).min(n - n_test);
    (n_train, n_test)
}

fn random_split(indices: &[usize], spec: &SplitSpec, seed: u64) -> Split {
    let mut order = indices.to_vec();
    order.shuffle(&mut rng::stream(seed, "split"));
    let (n_train, n_test) = sizes(order.len(), spec);
    let test = order[..n_test].to_vec();
    let train = order[n_test..n_test + n_train].to_vec();
    let validation = order[n_test + n_train..].to_vec();
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    Split {
        train: sorted(train),
        validation: sorted(validation),
        test: sorted(test),
    }
}

/// Groups of molecule indices sharing a scaffold, largest first; equal
/// sizes are ordered by a seeded shuffle.
pub fn scaffold_groups(graphs: &[MolGraph], indices: &[usize], seed: u64, stream: &str) -> Vec<(ScaffoldKey, Vec<usize>)> {
    let mut by_key: BTreeMap<ScaffoldKey, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_key.entry(murcko_scaffold(&graphs[i])).or_default().push(i);
    }
    let mut groups: Vec<(ScaffoldKey, Vec<usize>)> = by_key.into_iter().collect();
    groups.shuffle(&mut rng::stream(seed, stream));
    groups.sort_by_key(|g| std::cmp::Reverse(g.1.len()));
    groups
}

/// Random or scaffold-grouped partition of `graphs`.
pub fn split(graphs: &[MolGraph], spec: &SplitSpec, seed: u64) -> Result<Split> {
    spec.validate()?;
    if graphs.len() < 2 {
        return Err(Error::FractionInvalid("need at least two molecules to split".into()));
    }
    let all: Vec<usize> = (0..graphs.len()).collect();
    match spec.mode {
        SplitMode::Random => Ok(random_split(&all, spec, seed)),
        SplitMode::Scaffold => {
            let groups = scaffold_groups(graphs, &all, seed, "split");
            if groups.len() == 1 {
                log::warn!("all molecules share one scaffold; falling back to a random split");
                return Ok(random_split(&all, spec, seed));
            }
            let (n_train, _) = sizes(graphs.len(), spec);
            let n_valid = graphs.len() - n_train - sizes(graphs.len(), spec).1;
            let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
            for (_, members) in groups {
                if train.len() + members.len() <= n_train || train.is_empty() {
                    train.extend(members);
                } else if validation.len() + members.len() <= n_valid {
                    validation.extend(members);
                } else {
                    test.extend(members);
                }
            }
            if test.is_empty() {
                return Err(Error::FractionInvalid("scaffold groups left no test molecules".into()));
            }
            train.sort_unstable();
            validation.sort_unstable();
            test.sort_unstable();
            Ok(Split { train, validation, test })
        }
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_valid_rows() {
        let f = write("smiles,target\nCCO,-0.5\nc1ccccc1,-1.6\nCC(=O)O,0.2\n");
        let report = load_csv(f.path(), "smiles", "target").unwrap();
        assert_eq!(report.dataset.len(), 3);
        assert!(report.rejected.is_empty());
        assert_eq!(report.dataset.targets(), vec![-0.5, -1.6, 0.2]);
    }

    #[test]
    fn bad_smiles_is_reported_by_line() {
        let f = write("smiles,target\nCCO,1\nC1CC,2\nCCN,3\nCC,x\n");
        let report = load_csv(f.path(), "smiles", "target").unwrap();
        assert_eq!(report.dataset.len(), 2);
        let lines: Vec<usize> = report.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![3, 5]);
        assert_eq!(report.rejected[0].smiles, "C1CC");
    }

    #[test]
    fn load_errors() {
        let f = write("smiles,value\nCCO,1\n");
        assert!(matches!(load_csv(f.path(), "smiles", "target"), Err(Error::MissingColumn(c)) if c == "target"));
        let f = write("smiles,target\nC1CC,1\n");
        assert!(matches!(load_csv(f.path(), "smiles", "target"), Err(Error::NoValidRows)));
        assert!(matches!(
            load_csv(Path::new("/nonexistent/x.csv"), "smiles", "target"),
            Err(Error::FileNotFound(_))
        ));
    }

    fn graphs(smiles: &[&str]) -> Vec<MolGraph> {
        smiles.iter().map(|s| MolGraph::from_smiles(s).unwrap()).collect()
    }

    #[test]
    fn random_split_is_reproducible_and_exhaustive() {
        let g = graphs(&["C", "CC", "CCC", "CCCC", "CCO", "CCN", "CO", "CN", "CCl", "CBr"]);
        let a = split(&g, &SplitSpec::default(), 3).unwrap();
        assert_eq!(a, split(&g, &SplitSpec::default(), 3).unwrap());
        assert_eq!((a.train.len(), a.test.len()), (8, 2));
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_fractions() {
        let g = graphs(&["C", "CC"]);
        let spec = SplitSpec {
            train: 0.8,
            test: 0.3,
            ..SplitSpec::default()
        };
        assert!(matches!(split(&g, &spec, 0), Err(Error::FractionInvalid(_))));
    }

    #[test]
    fn scaffold_split_keeps_groups_together() {
        let g = graphs(&[
            "c1ccccc1C", "c1ccccc1O", "c1ccccc1N", "c1ccccc1CC",
            "C1CCCCC1C", "C1CCCCC1O",
            "c1ccncc1C", "c1ccncc1O",
            "C1CCC1", "C1CCC1C",
        ]);
        let spec = SplitSpec {
            mode: SplitMode::Scaffold,
            train: 0.6,
            test: 0.4,
        };
        let s = split(&g, &spec, 1).unwrap();
        let key = |i: usize| murcko_scaffold(&g[i]);
        for &a in &s.train {
            for &b in &s.test {
                assert_ne!(key(a), key(b));
            }
        }
        assert!(!s.test.is_empty());
    }

    #[test]
    fn single_scaffold_falls_back_to_random() {
        let g = graphs(&["c1ccccc1C", "c1ccccc1O", "c1ccccc1N", "c1ccccc1CC", "c1ccccc1F"]);
        let spec = SplitSpec {
            mode: SplitMode::Scaffold,
            train: 0.6,
            test: 0.4,
        };
        let s = split(&g, &spec, 2).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3, 2));
    }
}
