//! LIBSVM text ingestion and non-i.i.d. partitioning across clients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::error::{FedsimError, Result};
use crate::numeric::RngStream;
use crate::objectives::SparseRow;

/// One parsed sample: strictly increasing 0-based feature indices plus an
/// integer label (binary labels normalized to -1/+1).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: SparseRow,
    pub label: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Feature dimension: max feature index + 1.
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<i32> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Disjoint, exhaustive assignment of sample indices to clients with
/// weights omega_i = |D_i| / |D|.
#[derive(Debug, Clone)]
pub struct Partition {
    pub assignment: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

impl Partition {
    fn from_assignment(assignment: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let total: usize = assignment.iter().map(|a| a.len()).sum();
        if total != n {
            return Err(FedsimError::config(format!(
                "partition covers {total} of {n} samples"
            )));
        }
        if assignment.iter().any(|a| a.is_empty()) {
            return Err(FedsimError::config("partition produced an empty client"));
        }
        let weights = assignment.iter().map(|a| a.len() as f64 / n as f64).collect();
        Ok(Partition { assignment, weights })
    }

    pub fn num_clients(&self) -> usize {
        self.assignment.len()
    }
}

/// Parses LIBSVM text: one sample per line, `label idx:val idx:val ...` with
/// 1-based strictly increasing indices. Indices are stored 0-based.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut dim = 0usize;
    let mut binary = true;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label_val: f64 = label_tok.parse().map_err(|_| FedsimError::Parse {
            line,
            message: format!("malformed label '{label_tok}'"),
        })?;
        if label_val.fract() != 0.0 {
            return Err(FedsimError::Parse {
                line,
                message: format!("non-integer label '{label_tok}'"),
            });
        }
        let label = label_val as i32;
        if label != 1 && label != -1 {
            binary = false;
        }
        let mut features: SparseRow = Vec::new();
        let mut last_index: Option<u32> = None;
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| FedsimError::Parse {
                line,
                message: format!("malformed token '{tok}', expected idx:val"),
            })?;
            let idx: u32 = idx_s.parse().map_err(|_| FedsimError::Parse {
                line,
                message: format!("non-numeric index '{idx_s}'"),
            })?;
            if idx == 0 {
                return Err(FedsimError::Parse {
                    line,
                    message: "feature index 0 (indices are 1-based)".into(),
                });
            }
            let val: f64 = val_s.parse().map_err(|_| FedsimError::Parse {
                line,
                message: format!("non-numeric value '{val_s}'"),
            })?;
            let zero_based = idx - 1;
            if let Some(prev) = last_index {
                if zero_based <= prev {
                    return Err(FedsimError::Parse {
                        line,
                        message: "non-increasing feature index".into(),
                    });
                }
            }
            last_index = Some(zero_based);
            dim = dim.max(zero_based as usize + 1);
            features.push((zero_based, val));
        }
        samples.push(Sample { features, label });
    }
    if samples.is_empty() {
        return Err(FedsimError::Parse {
            line: 0,
            message: "empty dataset".into(),
        });
    }
    let _ = binary;
    Ok(Dataset { samples, dim })
}

/// Writes a dataset back to LIBSVM text, 1-based indices.
pub fn serialize_libsvm(dataset: &Dataset) -> String {
    let mut out = String::new();
    for s in &dataset.samples {
        out.push_str(&s.label.to_string());
        for &(i, v) in &s.features {
            out.push_str(&format!(" {}:{}", i + 1, v));
        }
        out.push('\n');
    }
    out
}

fn dirichlet_draw(alpha: f64, m: usize, stream: &mut RngStream) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut draws: Vec<f64> = (0..m).map(|_| gamma.sample(stream.rng())).collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 {
        // All-zero underflow at tiny alpha: fall back to a single spike.
        let j = stream.rng().random_range(0..m);
        draws = vec![0.0; m];
        draws[j] = 1.0;
        return draws;
    }
    draws.iter().map(|d| d / sum).collect()
}

use rand::Rng;

/// Per-class Dirichlet split: for each class a proportion vector
/// p ~ Dirichlet(alpha * 1_M) is drawn and the class's samples are dealt
/// to clients by the cumulative proportions. Empty clients are repaired by
/// moving one sample from the largest client.
pub fn partition_dirichlet(labels: &[i32], alpha: f64, m: usize, stream: &mut RngStream) -> Result<Partition> {
    if m == 0 || alpha <= 0.0 {
        return Err(FedsimError::config("need M >= 1 and alpha > 0"));
    }
    if m > labels.len() {
        return Err(FedsimError::config("more clients than samples"));
    }
    let mut by_class: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (_, mut indices) in by_class {
        indices.shuffle(stream.rng());
        let p = dirichlet_draw(alpha, m, stream);
        // Deal by cumulative share of the class.
        let n_c = indices.len();
        let mut cuts = Vec::with_capacity(m);
        let mut acc = 0.0;
        for &pi in &p {
            acc += pi;
            cuts.push(((acc * n_c as f64).round() as usize).min(n_c));
        }
        let mut start = 0;
        for (client, &cut) in cuts.iter().enumerate() {
            let end = cut.max(start);
            assignment[client].extend_from_slice(&indices[start..end]);
            start = end;
        }
        // Rounding remainder goes to the last client.
        assignment[m - 1].extend_from_slice(&indices[start..]);
    }
    repair_empty_clients(&mut assignment);
    Partition::from_assignment(assignment, labels.len())
}

fn repair_empty_clients(assignment: &mut [Vec<usize>]) {
    loop {
        let Some(empty) = assignment.iter().position(|a| a.is_empty()) else {
            return;
        };
        let largest = assignment
            .iter()
            .enumerate()
            .max_by_key(|(_, a)| a.len())
            .map(|(i, _)| i)
            .expect("nonempty slice");
        if assignment[largest].len() <= 1 {
            return; // nothing left to steal; from_assignment will reject
        }
        let moved = assignment[largest].pop().expect("largest is nonempty");
        assignment[empty].push(moved);
    }
}

/// Sort-by-label sharding: the dataset is cut into M * classes_per_client
/// equal shards and each client receives `classes_per_client` shards drawn
/// randomly without replacement.
pub fn partition_shard(labels: &[i32], classes_per_client: usize, m: usize, stream: &mut RngStream) -> Result<Partition> {
    if m == 0 || classes_per_client == 0 {
        return Err(FedsimError::config("need M >= 1 and classes_per_client >= 1"));
    }
    let n = labels.len();
    let num_shards = m * classes_per_client;
    if num_shards > n {
        return Err(FedsimError::config("more shards than samples"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (labels[i], i));
    // Equal shard sizes +-1; remainder spread round-robin over leading shards.
    let base = n / num_shards;
    let remainder = n % num_shards;
    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(num_shards);
    let mut start = 0;
    for s in 0..num_shards {
        let size = base + usize::from(s < remainder);
        shards.push(order[start..start + size].to_vec());
        start += size;
    }
    let mut shard_ids: Vec<usize> = (0..num_shards).collect();
    shard_ids.shuffle(stream.rng());
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (k, &shard) in shard_ids.iter().enumerate() {
        assignment[k % m].extend_from_slice(&shards[shard]);
    }
    Partition::from_assignment(assignment, n)
}

/// Random permutation split into M near-equal contiguous blocks.
pub fn partition_iid(n: usize, m: usize, stream: &mut RngStream) -> Result<Partition> {
    if m == 0 || m > n {
        return Err(FedsimError::config("need 1 <= M <= n"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(stream.rng());
    let base = n / m;
    let remainder = n % m;
    let mut assignment = Vec::with_capacity(m);
    let mut start = 0;
    for c in 0..m {
        let size = base + usize::from(c < remainder);
        assignment.push(order[start..start + size].to_vec());
        start += size;
    }
    Partition::from_assignment(assignment, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_basic_line() {
        let ds = parse_libsvm("+1 1:0.5 3:2\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim, 3);
        assert_eq!(ds.samples[0].label, 1);
        assert_eq!(ds.samples[0].features, vec![(0, 0.5), (2, 2.0)]);
    }

    #[test]
    fn parse_empty_is_error() {
        match parse_libsvm("") {
            Err(FedsimError::Parse { message, .. }) => assert!(message.contains("empty dataset")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_non_increasing_index_is_error() {
        match parse_libsvm("-1 2:1 1:1\n") {
            Err(FedsimError::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("non-increasing"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_malformed_token_is_error() {
        assert!(parse_libsvm("+1 1:abc\n").is_err());
        assert!(parse_libsvm("+1 xyz\n").is_err());
    }

    #[test]
    fn round_trip_identity() {
        let text = "+1 1:0.5 3:2\n-1 2:1.25\n+1 1:1 2:1 3:1\n";
        let ds = parse_libsvm(text).unwrap();
        let ds2 = parse_libsvm(&serialize_libsvm(&ds)).unwrap();
        assert_eq!(ds, ds2);
    }

    fn check_partition(p: &Partition, n: usize) {
        let mut seen = vec![false; n];
        for client in &p.assignment {
            assert!(!client.is_empty());
            for &i in client {
                assert!(!seen[i], "sample {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let sum: f64 = p.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn iid_sizes() {
        let mut s = RngStream::for_partition(1);
        let p = partition_iid(10, 2, &mut s).unwrap();
        assert_eq!(p.assignment.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5]);
        let p = partition_iid(10, 3, &mut s).unwrap();
        assert_eq!(p.assignment.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
        for seed in 0..100 {
            let mut s = RngStream::for_partition(seed);
            check_partition(&partition_iid(37, 5, &mut s).unwrap(), 37);
        }
    }

    #[test]
    fn dirichlet_single_client() {
        let labels = vec![0, 1, 0, 1, 1];
        let mut s = RngStream::for_partition(2);
        let p = partition_dirichlet(&labels, 0.3, 1, &mut s).unwrap();
        assert_eq!(p.assignment[0].len(), 5);
        assert_eq!(p.weights, vec![1.0]);
    }

    #[test]
    fn dirichlet_large_alpha_is_near_balanced() {
        // Two balanced classes, huge alpha: per-client class proportions must
        // concentrate near the global 50/50 split.
        let labels: Vec<i32> = (0..400).map(|i| i % 2).collect();
        for seed in 0..20 {
            let mut s = RngStream::for_partition(seed);
            let p = partition_dirichlet(&labels, 1e6, 2, &mut s).unwrap();
            for client in &p.assignment {
                let ones = client.iter().filter(|&&i| labels[i] == 1).count() as f64;
                let prop = ones / client.len() as f64;
                assert!((prop - 0.5).abs() < 0.05, "proportion {prop}");
            }
        }
    }

    #[test]
    fn dirichlet_invariants_many_seeds() {
        let labels: Vec<i32> = (0..500).map(|i| i % 10).collect();
        for seed in 0..100 {
            let mut s = RngStream::for_partition(seed);
            check_partition(&partition_dirichlet(&labels, 0.3, 20, &mut s).unwrap(), 500);
        }
    }

    #[test]
    fn shard_exact_split() {
        let labels: Vec<i32> = (0..20).map(|i| if i < 10 { 0 } else { 1 }).collect();
        let mut s = RngStream::for_partition(3);
        let p = partition_shard(&labels, 1, 2, &mut s).unwrap();
        check_partition(&p, 20);
        assert_eq!(p.weights, vec![0.5, 0.5]);
        for client in &p.assignment {
            let distinct: std::collections::BTreeSet<i32> = client.iter().map(|&i| labels[i]).collect();
            assert_eq!(distinct.len(), 1);
        }
    }

    #[test]
    fn shard_counts_and_label_bound() {
        let labels: Vec<i32> = (0..1000).map(|i| i % 10).collect();
        for seed in 0..100 {
            let mut s = RngStream::for_partition(seed);
            let p = partition_shard(&labels, 5, 4, &mut s).unwrap();
            check_partition(&p, 1000);
            for client in &p.assignment {
                assert_eq!(client.len(), 250);
                // 20 shards of 50 align with the class boundaries here, so the
                // label bound is exact
                let distinct: std::collections::BTreeSet<i32> = client.iter().map(|&i| labels[i]).collect();
                assert!(distinct.len() <= 5);
            }
        }
    }
}
