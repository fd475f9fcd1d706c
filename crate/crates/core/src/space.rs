//! Item pools, the product space they imply, and candidate identity.
//!
//! A [`ProductSpace`] stores only its per-vector pools, so memory is linear in
//! the total pool size no matter how large the implied product gets.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const DEFAULT_FEATURE_DIM: usize = 16;

/// Ordered pool of items selectable at one attachment vector.
#[derive(Clone, Debug)]
pub struct SynthonSet {
    vector_index: usize,
    dim: usize,
    ids: Vec<String>,
    features: Vec<f64>,
    lookup: HashMap<String, usize>,
}

impl SynthonSet {
    pub fn new(vector_index: usize, items: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = items.first().map(|(_, f)| f.len()).unwrap_or(0);
        let mut ids = Vec::with_capacity(items.len());
        let mut features = Vec::with_capacity(items.len() * dim);
        for (id, f) in items {
            if f.len() != dim {
                return Err(Error::InvalidSpace(format!(
                    "item {id} in vector {vector_index} has {} features, expected {dim}",
                    f.len()
                )));
            }
            ids.push(id);
            features.extend_from_slice(&f);
        }
        Self::from_parts(vector_index, ids, features, dim)
    }

    /// Builds a set from ids and a row-major feature matrix.
    pub fn from_parts(
        vector_index: usize,
        ids: Vec<String>,
        features: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidSpace(format!(
                "synthon set for vector {vector_index} is empty"
            )));
        }
        if features.len() != ids.len() * dim {
            return Err(Error::InvalidSpace(format!(
                "vector {vector_index}: {} feature values for {} items of dimension {dim}",
                features.len(),
                ids.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(Error::InvalidSpace(format!(
                    "vector {vector_index}: item id {id:?} is empty or contains whitespace"
                )));
            }
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidSpace(format!(
                    "vector {vector_index}: duplicate item id {id}"
                )));
            }
        }
        Ok(Self {
            vector_index,
            dim,
            ids,
            features,
            lookup,
        })
    }

    /// Synthetic pool with features drawn iid from uniform(0, 1).
    pub fn generate(vector_index: usize, len: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Purpose::Generate, &[vector_index as u64]);
        let ids = (0..len).map(|i| format!("v{vector_index}_{i:06}")).collect();
        let features = (0..len * dim).map(|_| rng.random::<f64>()).collect();
        Self::from_parts(vector_index, ids, features, dim)
    }

    pub fn vector_index(&self) -> usize {
        self.vector_index
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.features[index * self.dim..(index + 1) * self.dim]
    }

    /// Row-major `len × dim` feature matrix.
    pub fn feature_matrix(&self) -> &[f64] {
        &self.features
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    /// Reads the columnar text format: one item per line, the id followed by
    /// `dim` whitespace-separated reals. Blank lines and `#` comments are skipped.
    pub fn read(reader: impl BufRead, vector_index: usize, origin: &Path) -> Result<Self> {
        let mut ids = Vec::new();
        let mut features = Vec::new();
        let mut dim = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id = fields.next().expect("non-empty line has a field");
            let start = features.len();
            for tok in fields {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::parse(origin, format!("line {}: bad real {tok:?}", lineno + 1))
                })?;
                features.push(v);
            }
            let d = features.len() - start;
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::InvalidSpace(format!(
                        "{}: line {} has {d} features, expected {expected}",
                        origin.display(),
                        lineno + 1
                    )))
                }
                _ => {}
            }
            ids.push(id.to_string());
        }
        Self::from_parts(vector_index, ids, features, dim.unwrap_or(0))
    }

    pub fn load(path: &Path, vector_index: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), vector_index, path)
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for i in 0..self.len() {
            w.write_all(self.ids[i].as_bytes())?;
            for v in self.features(i) {
                write!(w, " {v}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    fn select(&self, positions: &[usize]) -> Result<Self> {
        let ids = positions.iter().map(|&i| self.ids[i].clone()).collect();
        let mut features = Vec::with_capacity(positions.len() * self.dim);
        for &i in positions {
            features.extend_from_slice(self.features(i));
        }
        Self::from_parts(self.vector_index, ids, features, self.dim)
    }
}

/// Number of candidates in a product space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceSize {
    Exact(u128),
    /// The product overflowed 128-bit arithmetic.
    Astronomical,
}

impl SpaceSize {
    pub fn exact(self) -> Option<u128> {
        match self {
            SpaceSize::Exact(n) => Some(n),
            SpaceSize::Astronomical => None,
        }
    }

    pub fn fits_within(self, cap: u64) -> bool {
        matches!(self, SpaceSize::Exact(n) if n <= u128::from(cap))
    }
}

impl fmt::Display for SpaceSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceSize::Exact(n) if *n < 10_000_000 => write!(f, "{n}"),
            SpaceSize::Exact(n) => write!(f, "{:.3e}", *n as f64),
            SpaceSize::Astronomical => f.write_str("astronomical"),
        }
    }
}

/// One point of the product space: an item index per vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Candidate(SmallVec<[u32; 4]>);

impl Candidate {
    pub fn new(indices: &[usize]) -> Self {
        Candidate(indices.iter().map(|&i| i as u32).collect())
    }

    pub fn indices(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.0.iter().map(|&i| i as usize)
    }

    pub fn index(&self, vector: usize) -> usize {
        self.0[vector] as usize
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.indices().collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str(")")
    }
}

/// A resolved item: vector, position, id and features.
#[derive(Clone, Copy, Debug)]
pub struct ItemRef<'a> {
    pub vector_index: usize,
    pub index: usize,
    pub id: &'a str,
    pub features: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct ProductSpace {
    sets: Vec<SynthonSet>,
}

impl ProductSpace {
    pub fn build(sets: Vec<SynthonSet>) -> Result<Self> {
        if sets.len() < 2 {
            return Err(Error::InvalidSpace(format!(
                "a product space needs at least 2 synthon sets, got {}",
                sets.len()
            )));
        }
        for (i, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidSpace(format!("synthon set {i} is empty")));
            }
            if set.vector_index != i {
                return Err(Error::InvalidSpace(format!(
                    "synthon set at position {i} is tagged as vector {}",
                    set.vector_index
                )));
            }
        }
        let dim = sets[0].dim();
        if let Some(bad) = sets.iter().find(|s| s.dim() != dim) {
            return Err(Error::InvalidSpace(format!(
                "inconsistent feature dimensions: vector 0 has {dim}, vector {} has {}",
                bad.vector_index,
                bad.dim()
            )));
        }
        Ok(Self { sets })
    }

    /// Synthetic space with uniform(0,1) features, one seeded stream per vector.
    pub fn generate(sizes: &[usize], dim: usize, seed: u64) -> Result<Self> {
        let sets = sizes
            .iter()
            .enumerate()
            .map(|(v, &n)| SynthonSet::generate(v, n, dim, seed))
            .collect::<Result<Vec<_>>>()?;
        Self::build(sets)
    }

    pub fn n_vectors(&self) -> usize {
        self.sets.len()
    }

    pub fn sets(&self) -> &[SynthonSet] {
        &self.sets
    }

    pub fn set(&self, vector: usize) -> &SynthonSet {
        &self.sets[vector]
    }

    pub fn dim(&self) -> usize {
        self.sets[0].dim()
    }

    pub fn pool_sizes(&self) -> Vec<usize> {
        self.sets.iter().map(SynthonSet::len).collect()
    }

    /// Σ|Sᵢ|: the number of per-item model evaluations a factored round needs.
    pub fn pool_total(&self) -> usize {
        self.sets.iter().map(SynthonSet::len).sum()
    }

    /// Π|Sᵢ| with checked arithmetic.
    pub fn size(&self) -> SpaceSize {
        self.sets
            .iter()
            .try_fold(1u128, |acc, s| acc.checked_mul(s.len() as u128))
            .map_or(SpaceSize::Astronomical, SpaceSize::Exact)
    }

    pub fn compose(&self, indices: &[usize]) -> Result<Candidate> {
        if indices.len() != self.n_vectors() {
            return Err(Error::InvalidSpace(format!(
                "candidate has {} indices for a {}-vector space",
                indices.len(),
                self.n_vectors()
            )));
        }
        for (v, &i) in indices.iter().enumerate() {
            let len = self.sets[v].len();
            if i >= len {
                return Err(Error::IndexOutOfRange {
                    vector: v,
                    index: i,
                    len,
                });
            }
        }
        Ok(Candidate::new(indices))
    }

    pub fn decompose<'a>(&'a self, candidate: &Candidate) -> Result<Vec<ItemRef<'a>>> {
        self.check(candidate)?;
        Ok(candidate
            .indices()
            .enumerate()
            .map(|(v, i)| ItemRef {
                vector_index: v,
                index: i,
                id: self.sets[v].id(i),
                features: self.sets[v].features(i),
            })
            .collect())
    }

    pub fn check(&self, candidate: &Candidate) -> Result<()> {
        if candidate.len() != self.n_vectors() {
            return Err(Error::InvalidSpace(format!(
                "candidate {candidate} does not match a {}-vector space",
                self.n_vectors()
            )));
        }
        for (v, i) in candidate.indices().enumerate() {
            let len = self.sets[v].len();
            if i >= len {
                return Err(Error::IndexOutOfRange {
                    vector: v,
                    index: i,
                    len,
                });
            }
        }
        Ok(())
    }

    /// Identity of a candidate that survives subsampling: its item ids.
    pub fn candidate_ids(&self, candidate: &Candidate) -> Vec<String> {
        candidate
            .indices()
            .enumerate()
            .map(|(v, i)| self.sets[v].id(i).to_string())
            .collect()
    }

    pub fn candidate_from_ids<S: AsRef<str>>(&self, ids: &[S]) -> Option<Candidate> {
        if ids.len() != self.n_vectors() {
            return None;
        }
        let idx: Option<Vec<usize>> = ids
            .iter()
            .enumerate()
            .map(|(v, id)| self.sets[v].position(id.as_ref()))
            .collect();
        idx.map(|i| Candidate::new(&i))
    }

    /// Row-major rank of a candidate; the last vector varies fastest, so this
    /// order coincides with lexicographic order on indices.
    pub fn linear_index(&self, candidate: &Candidate) -> Option<u128> {
        let mut acc: u128 = 0;
        for (v, i) in candidate.indices().enumerate() {
            acc = acc
                .checked_mul(self.sets[v].len() as u128)?
                .checked_add(i as u128)?;
        }
        Some(acc)
    }

    pub fn candidate_at(&self, mut linear: u128) -> Candidate {
        let mut idx: SmallVec<[u32; 4]> = SmallVec::from_elem(0, self.n_vectors());
        for v in (0..self.n_vectors()).rev() {
            let len = self.sets[v].len() as u128;
            idx[v] = (linear % len) as u32;
            linear /= len;
        }
        Candidate(idx)
    }

    /// Lexicographic enumeration of every candidate. Only sensible for small spaces.
    pub fn iter_candidates(&self) -> impl Iterator<Item = Candidate> + '_ {
        let total = self.size().exact().unwrap_or(u128::MAX);
        (0..total).map(move |l| self.candidate_at(l))
    }

    /// Uniform sample without replacement of `counts[i]` items from each pool.
    /// Selected items keep their original relative order and ids.
    pub fn subsample(&self, counts: &[usize], seed: u64) -> Result<Self> {
        if counts.len() != self.n_vectors() {
            return Err(Error::InvalidSpace(format!(
                "{} subsample counts for {} vectors",
                counts.len(),
                self.n_vectors()
            )));
        }
        let mut sets = Vec::with_capacity(counts.len());
        for (v, (&count, set)) in counts.iter().zip(&self.sets).enumerate() {
            if count > set.len() {
                return Err(Error::SubsampleTooLarge {
                    vector: v,
                    count,
                    len: set.len(),
                });
            }
            let mut rng = rng::stream(seed, Purpose::Subsample, &[v as u64]);
            let mut picked = index::sample(&mut rng, set.len(), count).into_vec();
            picked.sort_unstable();
            sets.push(set.select(&picked)?);
        }
        Self::build(sets)
    }

    /// Writes one pool file per vector (`vector_<i>.tsv`) into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for set in &self.sets {
            let path = dir.join(format!("vector_{}.tsv", set.vector_index()));
            set.save(&path)?;
            paths.push(path);
        }
        Ok(paths)
    }

    pub fn load_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let sets = paths
            .iter()
            .enumerate()
            .map(|(v, p)| SynthonSet::load(p.as_ref(), v))
            .collect::<Result<Vec<_>>>()?;
        Self::build(sets)
    }
}
