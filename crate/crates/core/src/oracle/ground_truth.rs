use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use super::Objective;
use crate::error::{Error, Result};
use crate::space::{Candidate, ProductSpace};

pub const DEFAULT_ENUMERATION_CAP: u64 = 2_000_000;

const CHUNK: u128 = 1 << 16;

/// Heap key where "greater" means "worse": lower score, then later in
/// lexicographic order.
#[derive(PartialEq)]
struct Worse {
    score: f64,
    linear: u128,
}

impl Eq for Worse {}

impl Ord for Worse {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.linear.cmp(&other.linear))
    }
}

impl PartialOrd for Worse {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact top-`k` by exhaustive enumeration, outside any budget.
///
/// Sorted by descending score; ties go to the lexicographically smaller
/// candidate. Memory is O(k) beyond one scoring chunk.
pub fn brute_force_top_k(
    space: &ProductSpace,
    objective: &dyn Objective,
    k: usize,
    cap: u64,
) -> Result<Vec<(Candidate, f64)>> {
    let size = space.size();
    if !size.fits_within(cap) {
        return Err(Error::TooLargeToEnumerate {
            size: size.to_string(),
            cap,
        });
    }
    let total = size.exact().expect("fits within cap");
    let mut heap: BinaryHeap<Worse> = BinaryHeap::with_capacity(k + 1);
    let mut start = 0u128;
    while start < total {
        let end = (start + CHUNK).min(total);
        let chunk: Vec<Candidate> = (start..end).map(|l| space.candidate_at(l)).collect();
        let scores = objective.score_batch(space, &chunk)?;
        for (offset, score) in scores.into_iter().enumerate() {
            let key = Worse {
                score,
                linear: start + offset as u128,
            };
            if heap.len() < k {
                heap.push(key);
            } else if let Some(worst) = heap.peek() {
                if key < *worst {
                    heap.pop();
                    heap.push(key);
                }
            }
        }
        start = end;
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|w| (space.candidate_at(w.linear), w.score))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthEntry {
    pub ids: Vec<String>,
    pub score: f64,
}

/// Exhaustive top-k keyed by item ids, so it stays valid across subsampling.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    entries: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn compute(
        space: &ProductSpace,
        objective: &dyn Objective,
        k: usize,
        cap: u64,
    ) -> Result<Self> {
        let top = brute_force_top_k(space, objective, k, cap)?;
        Ok(Self::from_scored(space, &top))
    }

    pub fn from_scored(space: &ProductSpace, top: &[(Candidate, f64)]) -> Self {
        Self {
            entries: top
                .iter()
                .map(|(c, s)| TruthEntry {
                    ids: space.candidate_ids(c),
                    score: *s,
                })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[TruthEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_set(&self, k: usize) -> HashSet<&[String]> {
        self.entries[..k.min(self.entries.len())]
            .iter()
            .map(|e| e.ids.as_slice())
            .collect()
    }

    /// Candidates of the truth set that exist in `space`.
    pub fn resolve(&self, space: &ProductSpace) -> Vec<Candidate> {
        self.entries
            .iter()
            .filter_map(|e| space.candidate_from_ids(&e.ids))
            .collect()
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        let n = self.entries.first().map_or(0, |e| e.ids.len());
        write!(w, "rank\tscore")?;
        for v in 0..n {
            write!(w, "\titem_{v}")?;
        }
        writeln!(w)?;
        for (rank, e) in self.entries.iter().enumerate() {
            write!(w, "{}\t{}", rank + 1, e.score)?;
            for id in &e.ids {
                write!(w, "\t{id}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(reader: impl BufRead, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let _rank = fields.next();
            let score = fields
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::parse(origin, format!("line {}: bad score", lineno + 1)))?;
            let ids: Vec<String> = fields.map(str::to_string).collect();
            if ids.is_empty() {
                return Err(Error::parse(origin, format!("line {}: no item ids", lineno + 1)));
            }
            entries.push(TruthEntry { ids, score });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?), path)
    }
}
