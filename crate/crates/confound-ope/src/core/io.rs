//! Episode-log file formats.
//!
//! Datasets are stored as JSON lines: a header object carrying the schema
//! version and dataset-level fields, then one episode object per line.
//!
//! ```text
//! {"schema":"confound-ope.episodes","version":1,"discount":0.99,"action_cardinalities":[8,...]}
//! {"states":[512,90,...],"actions":[5,4,...],"rewards":[0.0,...]}
//! ```
//!
//! States are integers in discrete mode and arrays of floats in feature mode.
//! Optional `behavior_probs_marginal` / `behavior_probs_conditional` arrays
//! carry the generator's true action probabilities for oracle checks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{discounted_return, step_weights, CoreError, Dataset, Episode, Policy, WeightOptions};

pub const SCHEMA_NAME: &str = "confound-ope.episodes";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    discount: f64,
    action_cardinalities: Vec<usize>,
}

/// Writes a dataset as header line plus one episode per line.
pub fn write_jsonl(dataset: &Dataset, path: &Path) -> Result<(), CoreError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        schema: SCHEMA_NAME.to_string(),
        version: SCHEMA_VERSION,
        discount: dataset.discount(),
        action_cardinalities: dataset.action_cardinalities().to_vec(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header"))?;
    for ep in dataset.episodes() {
        writeln!(out, "{}", serde_json::to_string(ep).expect("episode"))?;
    }
    out.flush()?;
    Ok(())
}

fn schema_err(line: usize, message: impl Into<String>) -> CoreError {
    CoreError::SchemaViolation {
        line,
        message: message.into(),
    }
}

/// Reads a dataset written by [`write_jsonl`], validating invariants.
/// Errors carry 1-based line numbers.
pub fn read_jsonl(path: &Path) -> Result<Dataset, CoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| schema_err(1, "empty file, expected header line"))??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| schema_err(1, format!("bad header: {e}")))?;
    if header.schema != SCHEMA_NAME {
        return Err(schema_err(
            1,
            format!("unknown schema {:?}", header.schema),
        ));
    }
    if header.version != SCHEMA_VERSION {
        return Err(schema_err(
            1,
            format!("unsupported schema version {}", header.version),
        ));
    }
    let mut episodes = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ep: Episode = serde_json::from_str(&line)
            .map_err(|e| schema_err(lineno, format!("bad episode: {e}")))?;
        // Re-run the constructor checks; serde bypasses them.
        Episode::new(ep.states().to_vec(), ep.actions().to_vec(), ep.rewards().to_vec())
            .map_err(|e| schema_err(lineno, e.to_string()))?;
        episodes.push(ep);
    }
    if episodes.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    Dataset::new(episodes, header.discount, header.action_cardinalities)
}

/// Per-episode returns and importance weights as CSV:
/// `episode,return,rho_1..rho_T,product`.
pub fn export_returns_csv(
    dataset: &Dataset,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    opts: &WeightOptions,
    path: &Path,
) -> Result<(), CoreError> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "episode,return")?;
    for t in 1..=dataset.horizon() {
        write!(out, ",rho_{t}")?;
    }
    writeln!(out, ",product")?;
    for (i, ep) in dataset.episodes().iter().enumerate() {
        let y = discounted_return(ep, dataset.discount())?;
        let w = step_weights(ep, behavior, evaluation, opts)?;
        write!(out, "{i},{y}")?;
        for r in w.rho() {
            write!(out, ",{r}")?;
        }
        writeln!(out, ",{}", w.product_all())?;
    }
    out.flush()?;
    Ok(())
}

/// Outcome of a dataset file check: basic shape plus any line-level findings.
#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub n_episodes: usize,
    pub horizon: usize,
    pub action_cardinalities: Vec<usize>,
    pub discount: f64,
    pub state_kind: String,
    pub warnings: Vec<String>,
}

/// Reads and validates a dataset file; with a behavior policy, also flags
/// observed actions the policy gives (near-)zero probability.
pub fn validate_file(
    path: &Path,
    behavior: Option<&dyn Policy>,
    opts: &WeightOptions,
) -> Result<ValidationReport, CoreError> {
    let dataset = read_jsonl(path)?;
    let mut warnings = Vec::new();
    if let Some(pol) = behavior {
        let mut flagged = 0usize;
        for (i, ep) in dataset.episodes().iter().enumerate() {
            for t in 1..=ep.horizon() {
                let p = pol.action_prob(t, ep.state_at(t)?, ep.action_at(t)?)?;
                if p <= opts.eps_prob {
                    flagged += 1;
                    if flagged <= 10 {
                        warnings.push(format!(
                            "episode {i} step {t}: observed action {} has behavior probability {p:.3e}",
                            ep.action_at(t)?
                        ));
                    }
                }
            }
        }
        if flagged > 10 {
            warnings.push(format!("... and {} more overlap violations", flagged - 10));
        }
    }
    Ok(ValidationReport {
        n_episodes: dataset.len(),
        horizon: dataset.horizon(),
        action_cardinalities: dataset.action_cardinalities().to_vec(),
        discount: dataset.discount(),
        state_kind: if dataset.is_discrete() {
            "discrete".to_string()
        } else {
            "features".to_string()
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::StateRef;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let eps = vec![
            Episode::new(
                vec![StateRef::Discrete(0), StateRef::Discrete(1)],
                vec![1, 0],
                vec![0.0, 1.0],
            )
            .unwrap(),
            Episode::new(
                vec![StateRef::Discrete(2), StateRef::Discrete(2)],
                vec![0, 0],
                vec![-1.0, 0.0],
            )
            .unwrap(),
        ];
        let ds = Dataset::new(eps, 0.99, vec![2, 2]).unwrap();
        write_jsonl(&ds, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.discount(), 0.99);
        assert_eq!(back.episodes()[0], ds.episodes()[0]);
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"schema\":\"confound-ope.episodes\",\"version\":1,\"discount\":0.99,\"action_cardinalities\":[2]}\n{\"states\":[0],\"actions\":[1],\"rew\n",
        )
        .unwrap();
        match read_jsonl(&path) {
            Err(CoreError::SchemaViolation { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn feature_states_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.jsonl");
        let ep = Episode::new(
            vec![
                StateRef::Features(vec![0.5, -1.0]),
                StateRef::Features(vec![1.0, 2.0, 3.0]),
            ],
            vec![0, 2],
            vec![0.0, 4.5],
        )
        .unwrap();
        let ds = Dataset::new(vec![ep], 1.0, vec![2, 3]).unwrap();
        write_jsonl(&ds, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert!(!back.is_discrete());
        assert_eq!(back.episodes()[0].states()[1].features().unwrap().len(), 3);
    }
}
