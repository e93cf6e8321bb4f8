//! Probe simulation and the exhaustive outcome oracle.
//!
//! `simulate` drives i.i.d. Bernoulli losses over the tree and is fully
//! reproducible: probe `i` draws from stream `i` of a ChaCha8 generator
//! keyed by the experiment seed, so outputs are bit-identical no matter
//! how probes are partitioned across workers. Monte-Carlo replication
//! `r` of an experiment re-seeds with `seed + r`.
//!
//! `exact_outcome_distribution` enumerates every link pass/fail
//! configuration on small trees and is the independent ground truth the
//! statistics are checked against.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bits::BitVec;
use crate::tree::{LossModel, NodeId, Tree};

/// Cap on `|E|` for the exhaustive oracle (`2^|E|` configurations).
pub const ENUMERATION_CAP: usize = 24;

/// Probes per parallel work item; a multiple of 64 so each chunk fills
/// whole words of every column.
const CHUNK_PROBES: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("tree has {links} links, above the enumeration cap {cap}")]
    EnumerationCap { links: usize, cap: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum DumpError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Receiver-visible outcomes of an experiment: an `n x |R|` 0/1 matrix
/// stored as one packed column per receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    n: usize,
    receiver_ids: Vec<NodeId>,
    cols: Vec<BitVec>,
}

impl ObservationMatrix {
    /// Builds a matrix from probe rows (mostly for tests and the dump
    /// reader). `rows[i][j]` is probe `i` at `receiver_ids[j]`.
    pub fn from_rows(receiver_ids: Vec<NodeId>, rows: &[Vec<bool>]) -> Self {
        let n = rows.len();
        let mut cols = vec![BitVec::zeros(n); receiver_ids.len()];
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), receiver_ids.len(), "row {i} has the wrong width");
            for (j, &bit) in row.iter().enumerate() {
                if bit {
                    cols[j].set(i);
                }
            }
        }
        ObservationMatrix {
            n,
            receiver_ids,
            cols,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn receiver_ids(&self) -> &[NodeId] {
        &self.receiver_ids
    }

    /// Column for the `idx`-th receiver (order of [`Self::receiver_ids`]).
    pub fn column(&self, idx: usize) -> &BitVec {
        &self.cols[idx]
    }

    pub fn receiver_index(&self, node: NodeId) -> Option<usize> {
        self.receiver_ids.iter().position(|&r| r == node)
    }

    /// `y_j^i`: did probe `i` arrive at the `idx`-th receiver?
    pub fn observed(&self, probe: usize, idx: usize) -> bool {
        self.cols[idx].get(probe)
    }

    /// Serializes to the dump format: a probe-count header, the receiver
    /// ids, then one 0/1 row per probe.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.n * (2 * self.receiver_ids.len() + 1) + 64);
        out.push_str(&format!("n,{}\n", self.n));
        out.push_str("receivers");
        for r in &self.receiver_ids {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
        for i in 0..self.n {
            for j in 0..self.receiver_ids.len() {
                if j > 0 {
                    out.push(',');
                }
                out.push(if self.observed(i, j) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    /// Parses the dump format produced by [`Self::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, DumpError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(DumpError::Malformed {
            line: 1,
            reason: "missing `n,<count>` header".into(),
        })?;
        let n: usize = header
            .strip_prefix("n,")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DumpError::Malformed {
                line: 1,
                reason: format!("expected `n,<count>`, found `{header}`"),
            })?;
        let (_, recv_line) = lines.next().ok_or(DumpError::Malformed {
            line: 2,
            reason: "missing `receivers,...` header".into(),
        })?;
        let mut fields = recv_line.split(',');
        if fields.next() != Some("receivers") {
            return Err(DumpError::Malformed {
                line: 2,
                reason: format!("expected `receivers,...`, found `{recv_line}`"),
            });
        }
        let receiver_ids: Vec<NodeId> = fields
            .map(|f| {
                f.parse().map_err(|_| DumpError::Malformed {
                    line: 2,
                    reason: format!("invalid receiver id `{f}`"),
                })
            })
            .collect::<Result<_, _>>()?;

        let mut cols = vec![BitVec::zeros(n); receiver_ids.len()];
        let mut rows_seen = 0usize;
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            if rows_seen >= n {
                return Err(DumpError::Malformed {
                    line: line_no,
                    reason: format!("more than {n} data rows"),
                });
            }
            let bits: Vec<&str> = line.split(',').collect();
            if bits.len() != receiver_ids.len() {
                return Err(DumpError::Malformed {
                    line: line_no,
                    reason: format!("expected {} bits, found {}", receiver_ids.len(), bits.len()),
                });
            }
            for (j, b) in bits.iter().enumerate() {
                match *b {
                    "1" => cols[j].set(rows_seen),
                    "0" => {}
                    other => {
                        return Err(DumpError::Malformed {
                            line: line_no,
                            reason: format!("expected 0 or 1, found `{other}`"),
                        })
                    }
                }
            }
            rows_seen += 1;
        }
        if rows_seen != n {
            return Err(DumpError::Malformed {
                line: 0,
                reason: format!("header names {n} probes but {rows_seen} rows follow"),
            });
        }
        Ok(ObservationMatrix {
            n,
            receiver_ids,
            cols,
        })
    }
}

/// The hidden per-node states `x_k^i` of every probe, retained so oracle
/// tests can check ancestor consistency.
#[derive(Debug, Clone)]
pub struct HiddenState {
    n: usize,
    cols: Vec<BitVec>,
}

impl HiddenState {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_count(&self) -> usize {
        self.cols.len()
    }

    /// `x_k^i`: did probe `probe` reach node `node`?
    pub fn reached(&self, probe: usize, node: NodeId) -> bool {
        self.cols[node].get(probe)
    }
}

/// Runs `n` independent probes and returns the receiver observations
/// together with the full hidden state.
///
/// Each probe walks the tree in preorder; a link is drawn only if its
/// parent was reached (short-circuit), which is the normative stream
/// layout. Identical `(tree, model, n, seed)` give bit-identical output.
pub fn simulate(
    tree: &Tree,
    model: &LossModel,
    n: usize,
    seed: u64,
) -> (ObservationMatrix, HiddenState) {
    assert!(n >= 1, "need at least one probe");
    assert_eq!(
        model.link_count(),
        tree.link_count(),
        "model does not cover the tree"
    );

    let node_count = tree.node_count();
    let order = tree.preorder();
    let template = ChaCha8Rng::seed_from_u64(seed);

    let chunk_bounds: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK_PROBES)
        .map(|s| (s, (s + CHUNK_PROBES).min(n)))
        .collect();

    let chunk_results: Vec<Vec<Vec<u64>>> = chunk_bounds
        .par_iter()
        .map(|&(start, end)| {
            let words = (end - start).div_ceil(64);
            let mut local: Vec<Vec<u64>> = vec![vec![0u64; words]; node_count];
            let mut reached = vec![false; node_count];
            for probe in start..end {
                let mut rng = template.clone();
                rng.set_stream(probe as u64);
                reached[0] = true;
                for &k in &order[1..] {
                    let parent = tree.parent(k).unwrap();
                    reached[k] = reached[parent] && rng.gen::<f64>() < model.pass_rate(k);
                }
                let (word, bit) = ((probe - start) / 64, (probe - start) % 64);
                for (k, &r) in reached.iter().enumerate() {
                    if r {
                        local[k][word] |= 1u64 << bit;
                    }
                }
            }
            local
        })
        .collect();

    let mut cols = vec![BitVec::zeros(n); node_count];
    for (ci, local) in chunk_results.into_iter().enumerate() {
        let word_off = chunk_bounds[ci].0 / 64;
        for (k, words) in local.into_iter().enumerate() {
            cols[k].words_mut()[word_off..word_off + words.len()].copy_from_slice(&words);
        }
    }

    let obs_cols: Vec<BitVec> = tree.receivers().iter().map(|&j| cols[j].clone()).collect();
    let obs = ObservationMatrix {
        n,
        receiver_ids: tree.receivers().to_vec(),
        cols: obs_cols,
    };
    (obs, HiddenState { n, cols })
}

/// Neumaier-compensated accumulator; keeps the exhaustive sums exact to
/// a few ulps even over millions of terms.
#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

/// The exact distribution over receiver observation patterns.
///
/// A pattern is a bitmask over [`Self::receiver_ids`] positions; the map
/// holds its probability under the loss model.
#[derive(Debug, Clone)]
pub struct OutcomeDistribution {
    receiver_ids: Vec<NodeId>,
    subtree_masks: Vec<u32>,
    probs: BTreeMap<u32, f64>,
}

impl OutcomeDistribution {
    pub fn receiver_ids(&self) -> &[NodeId] {
        &self.receiver_ids
    }

    pub fn probabilities(&self) -> &BTreeMap<u32, f64> {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        let mut acc = Kahan::default();
        for p in self.probs.values() {
            acc.add(*p);
        }
        acc.value()
    }

    fn mask_of(&self, node: NodeId) -> u32 {
        self.subtree_masks[node]
    }

    /// `P(at least one receiver under some node of x observes)`, the
    /// population value of `n_k(x)/n`.
    pub fn union_probability(&self, x: &[NodeId]) -> f64 {
        let mask = x.iter().fold(0u32, |m, &j| m | self.mask_of(j));
        let mut acc = Kahan::default();
        for (&pat, &p) in &self.probs {
            if pat & mask != 0 {
                acc.add(p);
            }
        }
        acc.value()
    }

    /// `P(every node of x has an observing receiver)`, the population
    /// value of `I_k(x)/n`.
    pub fn intersection_probability(&self, x: &[NodeId]) -> f64 {
        let mut acc = Kahan::default();
        for (&pat, &p) in &self.probs {
            if x.iter().all(|&j| pat & self.mask_of(j) != 0) {
                acc.add(p);
            }
        }
        acc.value()
    }

    /// Population `gamma_k`: probability some receiver under `k` observes.
    pub fn gamma(&self, k: NodeId) -> f64 {
        self.union_probability(std::slice::from_ref(&k))
    }
}

/// Enumerates all `2^|E|` link pass/fail configurations and accumulates
/// the probability of each induced receiver pattern.
pub fn exact_outcome_distribution(
    tree: &Tree,
    model: &LossModel,
) -> Result<OutcomeDistribution, SimError> {
    let m = tree.link_count();
    if m > ENUMERATION_CAP {
        return Err(SimError::EnumerationCap {
            links: m,
            cap: ENUMERATION_CAP,
        });
    }
    assert_eq!(model.link_count(), m, "model does not cover the tree");

    let receiver_ids = tree.receivers().to_vec();
    assert!(receiver_ids.len() <= 32);
    let mut subtree_masks = vec![0u32; tree.node_count()];
    for (k, mask) in subtree_masks.iter_mut().enumerate() {
        for &r in tree.receivers_under(k) {
            let pos = receiver_ids.iter().position(|&x| x == r).unwrap();
            *mask |= 1 << pos;
        }
    }

    let order = tree.preorder();
    let pass: Vec<[f64; 2]> = (0..=m)
        .map(|k| {
            if k == 0 {
                [0.0, 1.0]
            } else {
                [1.0 - model.pass_rate(k), model.pass_rate(k)]
            }
        })
        .collect();

    let mut acc: HashMap<u32, Kahan> = HashMap::new();
    let mut reached = vec![false; tree.node_count()];
    for cfg in 0u64..(1u64 << m) {
        let mut prob = 1.0;
        for k in 1..=m {
            prob *= pass[k][((cfg >> (k - 1)) & 1) as usize];
        }
        if prob == 0.0 {
            continue;
        }
        reached[0] = true;
        for &k in &order[1..] {
            let up = (cfg >> (k - 1)) & 1 == 1;
            reached[k] = reached[tree.parent(k).unwrap()] && up;
        }
        let mut pattern = 0u32;
        for (pos, &r) in receiver_ids.iter().enumerate() {
            if reached[r] {
                pattern |= 1 << pos;
            }
        }
        acc.entry(pattern).or_default().add(prob);
    }

    let probs = acc.into_iter().map(|(k, v)| (k, v.value())).collect();
    Ok(OutcomeDistribution {
        receiver_ids,
        subtree_masks,
        probs,
    })
}
