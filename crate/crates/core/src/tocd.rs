//! Task-oriented codebook design.
//!
//! Observations are projected onto their value, the values are clustered
//! with an exact one-dimensional k-median, and the value clusters are lifted
//! back to a partition of the observation space. Each cluster becomes one
//! codeword on a link.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voi::ValueTable;

/// Per-link bit budgets `R[i][j]` for messages from agent `i` to agent `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u32>>", into = "Vec<Vec<u32>>")]
pub struct BitBudgetMatrix {
    n: usize,
    bits: Vec<u32>,
}

impl BitBudgetMatrix {
    pub fn homogeneous(n_agents: usize, bits: u32) -> Self {
        BitBudgetMatrix {
            n: n_agents,
            bits: vec![bits; n_agents * n_agents],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u32>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::config("bit budget matrix must be square"));
        }
        Ok(BitBudgetMatrix {
            n,
            bits: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn get(&self, sender: usize, receiver: usize) -> u32 {
        self.bits[sender * self.n + receiver]
    }

    pub fn set(&mut self, sender: usize, receiver: usize, bits: u32) {
        self.bits[sender * self.n + receiver] = bits;
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        self.bits
            .chunks(self.n.max(1))
            .map(<[u32]>::to_vec)
            .take(self.n)
            .collect()
    }
}

impl TryFrom<Vec<Vec<u32>>> for BitBudgetMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<u32>>) -> Result<Self> {
        BitBudgetMatrix::from_rows(rows)
    }
}

impl From<BitBudgetMatrix> for Vec<Vec<u32>> {
    fn from(m: BitBudgetMatrix) -> Self {
        m.rows()
    }
}

/// Optimal clustering of a multiset of reals into contiguous groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueClustering {
    /// Distinct values, ascending.
    pub values: Vec<f64>,
    /// Multiplicity of each distinct value.
    pub weights: Vec<usize>,
    /// Index into `values` where each cluster starts.
    pub starts: Vec<usize>,
    /// Lower median of each cluster.
    pub medians: Vec<f64>,
    pub cost: f64,
}

impl ValueClustering {
    pub fn n_clusters(&self) -> usize {
        self.starts.len()
    }

    /// Cluster holding the distinct value at `index`.
    pub fn cluster_of(&self, index: usize) -> usize {
        self.starts.partition_point(|&s| s <= index) - 1
    }

    /// Cluster holding `value`, which must be one of the clustered values.
    pub fn cluster_of_value(&self, value: f64) -> Option<usize> {
        let value = value + 0.0;
        self.values
            .binary_search_by(|v| v.total_cmp(&value))
            .ok()
            .map(|i| self.cluster_of(i))
    }

    /// Indices into `values` covered by `cluster`.
    pub fn range(&self, cluster: usize) -> std::ops::Range<usize> {
        let end = self.starts.get(cluster + 1).copied().unwrap_or(self.values.len());
        self.starts[cluster]..end
    }
}

/// Weighted prefix sums over the sorted distinct values.
struct Prefix<'a> {
    values: &'a [f64],
    count: Vec<usize>,
    sum: Vec<f64>,
}

impl<'a> Prefix<'a> {
    fn new(values: &'a [f64], weights: &[usize]) -> Self {
        let mut count = vec![0];
        let mut sum = vec![0.0];
        for (&v, &w) in values.iter().zip(weights) {
            count.push(count.last().unwrap() + w);
            sum.push(sum.last().unwrap() + v * w as f64);
        }
        Prefix { values, count, sum }
    }

    /// Index of the lower median of distinct values `a..=b`.
    fn median(&self, a: usize, b: usize) -> usize {
        let total = self.count[b + 1] - self.count[a];
        let rank = total.div_ceil(2); // 1-based rank of the lower median
        let target = self.count[a] + rank;
        // first index t in a..=b with count[t + 1] >= target
        a + self.count[a + 1..=b + 1].partition_point(|&c| c < target)
    }

    fn cost(&self, a: usize, b: usize) -> f64 {
        let m = self.median(a, b);
        let mu = self.values[m];
        let left_n = (self.count[m + 1] - self.count[a]) as f64;
        let left_s = self.sum[m + 1] - self.sum[a];
        let right_n = (self.count[b + 1] - self.count[m + 1]) as f64;
        let right_s = self.sum[b + 1] - self.sum[m + 1];
        (mu * left_n - left_s + right_s - mu * right_n).max(0.0)
    }
}

/// Exact 1-D k-median by dynamic programming over sorted values.
///
/// Optimal clusters are contiguous in sorted order, so a cluster is an
/// interval of distinct values. Among equal-cost solutions the one with the
/// lexicographically smallest cluster start indices wins; medians are lower
/// medians of the multiset.
pub fn kmedian_1d(values: &[f64], k: usize) -> Result<ValueClustering> {
    if k < 1 {
        return Err(Error::contract("k-median needs at least one cluster"));
    }
    if values.is_empty() {
        return Err(Error::contract("k-median of an empty multiset"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("k-median values must be finite"));
    }
    // `+ 0.0` folds -0.0 into 0.0
    let mut sorted: Vec<f64> = values.iter().map(|v| v + 0.0).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::new();
    let mut weights: Vec<usize> = Vec::new();
    for v in sorted {
        if distinct.last() == Some(&v) {
            *weights.last_mut().unwrap() += 1;
        } else {
            distinct.push(v);
            weights.push(1);
        }
    }
    let m = distinct.len();
    let k = k.min(m);
    let prefix = Prefix::new(&distinct, &weights);

    // best[c][a]: cost of splitting distinct[a..] into exactly c clusters.
    let mut best = vec![vec![f64::INFINITY; m + 1]; k + 1];
    for (a, slot) in best[1].iter_mut().enumerate().take(m) {
        *slot = prefix.cost(a, m - 1);
    }
    for c in 2..=k {
        for a in 0..=m - c {
            let mut v = f64::INFINITY;
            for b in a..=m - c {
                v = v.min(prefix.cost(a, b) + best[c - 1][b + 1]);
            }
            best[c][a] = v;
        }
    }

    let mut starts = Vec::with_capacity(k);
    let mut a = 0;
    for c in (2..=k).rev() {
        starts.push(a);
        let target = best[c][a];
        let tol = 1e-12 * target.abs().max(1.0);
        let b = (a..=m - c)
            .find(|&b| prefix.cost(a, b) + best[c - 1][b + 1] <= target + tol)
            .expect("minimum is attained");
        a = b + 1;
    }
    starts.push(a);

    // Report cost as a sum of per-cluster sums over the expanded multiset,
    // clusters in ascending order.
    let mut medians = Vec::with_capacity(starts.len());
    let mut cost = 0.0;
    for (c, &lo) in starts.iter().enumerate() {
        let hi = starts.get(c + 1).copied().unwrap_or(m);
        let mu = distinct[prefix.median(lo, hi - 1)];
        let mut within = 0.0;
        for t in lo..hi {
            for _ in 0..weights[t] {
                within += (distinct[t] - mu).abs();
            }
        }
        cost += within;
        medians.push(mu);
    }
    Ok(ValueClustering {
        values: distinct,
        weights,
        starts,
        medians,
        cost,
    })
}

/// Number of codewords allowed by `bits`, saturating.
pub fn codebook_capacity(bits: u32) -> usize {
    1usize.checked_shl(bits).unwrap_or(usize::MAX)
}

/// A partition of the observation space with one codeword per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    /// Cluster id of every observation.
    pub partition: Vec<usize>,
    /// Codeword of every cluster.
    pub codewords: Vec<usize>,
    /// Median value of every cluster.
    pub medians: Vec<f64>,
    pub budget_bits: u32,
    pub cost: f64,
}

impl Codebook {
    /// Lossless codebook: every observation its own codeword.
    pub fn identity(n_observations: usize) -> Self {
        let bits = usize::BITS - n_observations.saturating_sub(1).leading_zeros();
        Codebook {
            partition: (0..n_observations).collect(),
            codewords: (0..n_observations).collect(),
            medians: vec![f64::NAN; n_observations],
            budget_bits: bits,
            cost: 0.0,
        }
    }

    /// Single codeword: the link carries no information.
    pub fn silent(n_observations: usize) -> Self {
        Codebook {
            partition: vec![0; n_observations],
            codewords: vec![0],
            medians: vec![f64::NAN],
            budget_bits: 0,
            cost: 0.0,
        }
    }

    pub fn n_observations(&self) -> usize {
        self.partition.len()
    }

    /// Number of clusters `B`.
    pub fn size(&self) -> usize {
        self.codewords.len()
    }

    #[inline]
    pub fn encode(&self, observation: usize) -> usize {
        self.codewords[self.partition[observation]]
    }

    pub fn cluster_of(&self, observation: usize) -> usize {
        self.partition[observation]
    }

    /// True when no cluster is empty and the cluster count respects the budget.
    pub fn is_valid(&self) -> bool {
        let mut seen = vec![false; self.size()];
        for &c in &self.partition {
            match seen.get_mut(c) {
                Some(s) => *s = true,
                None => return false,
            }
        }
        seen.iter().all(|&s| s) && self.size() <= codebook_capacity(self.budget_bits)
    }

    pub fn to_csv(&self, sender: usize, receiver: usize) -> String {
        let header = CodebookHeader {
            schema: CODEBOOK_SCHEMA.to_string(),
            sender,
            receiver,
            budget_bits: self.budget_bits,
            clusters: self.size(),
            medians: self.medians.iter().map(|m| m.is_finite().then_some(*m)).collect(),
            cost: self.cost,
        };
        let mut out = format!(
            "# {}\nobservation,cluster,codeword\n",
            serde_json::to_string(&header).expect("header serializes")
        );
        for (o, &c) in self.partition.iter().enumerate() {
            out.push_str(&format!("{o},{c},{}\n", self.codewords[c]));
        }
        out
    }

    /// Parses [`Codebook::to_csv`] output; returns the link and the codebook.
    pub fn read_csv(path: &Path) -> Result<((usize, usize), Codebook)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let head = lines
            .first()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::parse(path, "missing JSON header line"))?;
        let header: CodebookHeader = serde_json::from_str(head).map_err(|e| Error::parse(path, e.to_string()))?;
        if header.schema != CODEBOOK_SCHEMA {
            return Err(Error::parse(path, format!("unsupported schema {}", header.schema)));
        }
        let mut partition = Vec::new();
        let mut codewords = vec![usize::MAX; header.clusters];
        for line in lines.iter().skip(2).filter(|l| !l.is_empty()) {
            let fields: Vec<usize> = line
                .split(',')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("{line}: {e}")))?;
            let [o, c, w] = fields[..] else {
                return Err(Error::parse(path, format!("expected 3 fields: {line}")));
            };
            if o != partition.len() || c >= header.clusters {
                return Err(Error::parse(path, format!("malformed row {line}")));
            }
            partition.push(c);
            codewords[c] = w;
        }
        if codewords.contains(&usize::MAX) {
            return Err(Error::parse(path, "cluster without observations"));
        }
        let book = Codebook {
            partition,
            codewords,
            medians: header.medians.iter().map(|m| m.unwrap_or(f64::NAN)).collect(),
            budget_bits: header.budget_bits,
            cost: header.cost,
        };
        Ok(((header.sender, header.receiver), book))
    }
}

const CODEBOOK_SCHEMA: &str = "esaic.codebook.v1";

#[derive(Debug, Serialize, Deserialize)]
struct CodebookHeader {
    schema: String,
    sender: usize,
    receiver: usize,
    budget_bits: u32,
    clusters: usize,
    medians: Vec<Option<f64>>,
    cost: f64,
}

/// Quantizer for a value table under a bit budget: k-median with `K = 2^R`
/// on the observation values, lifted back to the observations.
pub fn design_quantizer(v: &ValueTable, budget_bits: u32) -> Result<Codebook> {
    let values = v.values();
    let clustering = kmedian_1d(values, codebook_capacity(budget_bits))?;
    let partition = values
        .iter()
        .map(|&x| clustering.cluster_of_value(x).expect("value was clustered"))
        .collect();
    Ok(Codebook {
        partition,
        // clusters come out in ascending value order, so codeword = cluster id
        codewords: (0..clustering.n_clusters()).collect(),
        medians: clustering.medians,
        budget_bits,
        cost: clustering.cost,
    })
}

/// Codebooks for every ordered pair of agents. Links from one sender that
/// share a budget share the same codebook instance.
#[derive(Debug, Clone, Default)]
pub struct LinkCodebooks {
    n_agents: usize,
    links: BTreeMap<(usize, usize), Arc<Codebook>>,
}

impl LinkCodebooks {
    pub fn new(n_agents: usize) -> Self {
        LinkCodebooks {
            n_agents,
            links: BTreeMap::new(),
        }
    }

    pub fn identity(n_agents: usize, n_observations: usize) -> Self {
        Self::uniform(n_agents, Arc::new(Codebook::identity(n_observations)))
    }

    pub fn silent(n_agents: usize, n_observations: usize) -> Self {
        Self::uniform(n_agents, Arc::new(Codebook::silent(n_observations)))
    }

    fn uniform(n_agents: usize, book: Arc<Codebook>) -> Self {
        let mut out = LinkCodebooks::new(n_agents);
        for i in 0..n_agents {
            for j in (0..n_agents).filter(|&j| j != i) {
                out.insert(i, j, book.clone());
            }
        }
        out
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn insert(&mut self, sender: usize, receiver: usize, book: Arc<Codebook>) {
        self.links.insert((sender, receiver), book);
    }

    pub fn get(&self, sender: usize, receiver: usize) -> Option<&Codebook> {
        self.links.get(&(sender, receiver)).map(Arc::as_ref)
    }

    pub fn get_shared(&self, sender: usize, receiver: usize) -> Option<&Arc<Codebook>> {
        self.links.get(&(sender, receiver))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &Codebook)> {
        self.links.iter().map(|(&k, v)| (k, v.as_ref()))
    }

    /// Distinct codebook instances per sender, i.e. how many quantizer
    /// designs that sender needed.
    pub fn designs_for(&self, sender: usize) -> usize {
        let mut seen: Vec<*const Codebook> = Vec::new();
        for ((i, _), b) in &self.links {
            let p = Arc::as_ptr(b);
            if *i == sender && !seen.contains(&p) {
                seen.push(p);
            }
        }
        seen.len()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for ((i, j), book) in self.iter() {
            let path = dir.join(format!("codebook_{i}_{j}.csv"));
            std::fs::write(&path, book.to_csv(i, j)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Loads every `codebook_<i>_<j>.csv` in `dir`.
    pub fn read_dir(dir: &Path, n_agents: usize) -> Result<Self> {
        let mut out = LinkCodebooks::new(n_agents);
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("codebook_") && n.ends_with(".csv"))
            })
            .collect();
        paths.sort();
        for path in paths {
            let ((i, j), book) = Codebook::read_csv(&path)?;
            if i >= n_agents || j >= n_agents || i == j {
                return Err(Error::parse(
                    &path,
                    format!("link {i} -> {j} invalid for {n_agents} agents"),
                ));
            }
            out.insert(i, j, Arc::new(book));
        }
        Ok(out)
    }
}

/// One quantizer design per distinct budget per sender, shared across links.
pub fn build_link_codebooks(v: &ValueTable, budgets: &BitBudgetMatrix) -> Result<LinkCodebooks> {
    let n = budgets.n_agents();
    let mut out = LinkCodebooks::new(n);
    for i in 0..n {
        let mut by_budget: BTreeMap<u32, Arc<Codebook>> = BTreeMap::new();
        for j in (0..n).filter(|&j| j != i) {
            let bits = budgets.get(i, j);
            let book = match by_budget.get(&bits) {
                Some(b) => b.clone(),
                None => {
                    let b = Arc::new(design_quantizer(v, bits)?);
                    by_budget.insert(bits, b.clone());
                    b
                }
            };
            out.insert(i, j, book);
        }
    }
    Ok(out)
}
