//! Cluster-then-label semi-supervised learning on encoder outputs, and a
//! k-nearest-neighbour supervised baseline working in the same space.
//!
//! Unlabeled and labeled codes are grouped by single linkage (connected
//! components of the graph joining points closer than a cutoff); each
//! component takes the majority label of its labeled members.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset, SplitSpec};
use crate::error::{check_len, Error, Result};
use crate::geometry::{empirical_cluster_margin, ClusteredSample};
use crate::matrix::dist2;
use crate::nn::NetworkParams;

/// Maps inputs into the space the learners operate in.
pub trait Encoder: Sync {
    fn encode(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl Encoder for NetworkParams {
    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        NetworkParams::encode(self, x)
    }
}

/// Leaves inputs unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEncoder;

impl Encoder for IdentityEncoder {
    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

/// Connected components of the graph with edges at distance `< cutoff`.
/// Component ids are numbered by their lowest member index.
pub fn single_linkage_clusters(points: &[Vec<f64>], cutoff: f64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::invalid("cannot cluster an empty point set"));
    }
    if !(cutoff > 0.0) {
        return Err(Error::invalid(format!(
            "cutoff must be positive, got {cutoff}"
        )));
    }
    let n = points.len();
    let mut uf = UnionFind::new(n);
    // Prim's MST in O(n²): single-linkage components are the MST forest
    // after dropping edges of length >= cutoff.
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    best[0] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (u == usize::MAX || best[v] < best[u]) {
                u = v;
            }
        }
        in_tree[u] = true;
        if parent[u] != usize::MAX && best[u] < cutoff {
            uf.union(u, parent[u]);
        }
        let pu = &points[u];
        let updates: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .filter(|&v| !in_tree[v])
            .map(|v| (v, dist2(pu, &points[v])))
            .collect();
        for (v, d) in updates {
            if d < best[v] {
                best[v] = d;
                parent[v] = u;
            }
        }
    }
    let mut ids = vec![usize::MAX; n];
    let mut root_to_id: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, id) in ids.iter_mut().enumerate() {
        let r = uf.find(i);
        let next = root_to_id.len();
        *id = *root_to_id.entry(r).or_insert(next);
    }
    Ok(ids)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Label with the most votes; ties go to the smallest label.
fn vote(labels: impl IntoIterator<Item = u32>) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let max = *counts.values().max()?;
    counts.into_iter().find(|&(_, c)| c == max).map(|(l, _)| l)
}

/// Index of the point minimizing the summed distance to the others.
fn medoid(points: &[Vec<f64>], members: &[usize]) -> usize {
    members
        .par_iter()
        .map(|&i| {
            let s: f64 = members.iter().map(|&j| dist2(&points[i], &points[j])).sum();
            (s, i)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
        .expect("non-empty cluster")
}

fn nearest_labeled(x: &[f64], labeled: &[(Vec<f64>, u32)]) -> u32 {
    labeled
        .iter()
        .map(|(p, l)| (dist2(x, p), *l))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, l)| l)
        .expect("non-empty labeled set")
}

/// Cluster-then-label classifier.
#[derive(Debug, Clone)]
pub struct ClusterClassifier {
    points: Vec<Vec<f64>>,
    cluster_of: Vec<usize>,
    cluster_label: Vec<u32>,
    labeled: Vec<(Vec<f64>, u32)>,
    cutoff: f64,
    /// Clusters containing no labeled point.
    pub n_unmatched_clusters: usize,
}

/// Labels each cluster by majority vote of its labeled members. A cluster
/// without labeled members takes the label of the labeled point nearest to
/// its medoid.
///
/// `labels[i]` is `Some` for labeled points.
pub fn label_clusters(
    points: &[Vec<f64>],
    cluster_ids: &[usize],
    labels: &[Option<u32>],
    cutoff: f64,
) -> Result<ClusterClassifier> {
    check_len("cluster ids", points.len(), cluster_ids.len())?;
    check_len("labels", points.len(), labels.len())?;
    let labeled: Vec<(Vec<f64>, u32)> = points
        .iter()
        .zip(labels)
        .filter_map(|(p, l)| l.map(|l| (p.clone(), l)))
        .collect();
    if labeled.is_empty() {
        return Err(Error::invalid(
            "label_clusters needs at least one labeled point",
        ));
    }
    let k = cluster_ids.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in cluster_ids.iter().enumerate() {
        members[c].push(i);
    }
    let mut unmatched = 0;
    let cluster_label = members
        .iter()
        .map(|m| match vote(m.iter().filter_map(|&i| labels[i])) {
            Some(l) => l,
            None => {
                unmatched += 1;
                nearest_labeled(&points[medoid(points, m)], &labeled)
            }
        })
        .collect();
    Ok(ClusterClassifier {
        points: points.to_vec(),
        cluster_of: cluster_ids.to_vec(),
        cluster_label,
        labeled,
        cutoff,
        n_unmatched_clusters: unmatched,
    })
}

impl ClusterClassifier {
    pub fn cluster_labels(&self) -> &[u32] {
        &self.cluster_label
    }

    /// A new point joins the cluster of its nearest clustered point when that
    /// point is within the cutoff; otherwise it forms its own cluster and
    /// takes the nearest labeled point's label.
    pub fn predict(&self, x: &[f64]) -> u32 {
        let (d, i) = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (dist2(x, p), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("non-empty training set");
        if d < self.cutoff {
            self.cluster_label[self.cluster_of[i]]
        } else {
            nearest_labeled(x, &self.labeled)
        }
    }
}

#[derive(Debug, Clone)]
pub struct KnnClassifier {
    labeled: Vec<(Vec<f64>, u32)>,
    k: usize,
}

/// k-nearest-neighbour vote; neighbours ordered by (distance, index), vote
/// ties go to the smallest label.
pub fn knn_baseline(points: &[Vec<f64>], labels: &[u32], k: usize) -> Result<KnnClassifier> {
    check_len("labels", points.len(), labels.len())?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} labeled points",
            points.len()
        )));
    }
    Ok(KnnClassifier {
        labeled: points.iter().cloned().zip(labels.iter().copied()).collect(),
        k,
    })
}

impl KnnClassifier {
    pub fn predict(&self, x: &[f64]) -> u32 {
        let mut d: Vec<(f64, usize)> = self
            .labeled
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (dist2(x, p), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        vote(d[..self.k].iter().map(|&(_, i)| self.labeled[i].1)).expect("k >= 1")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SSLConfig {
    /// Linkage cutoff; `None` uses half the encoded cluster margin measured on
    /// the (ground-truth labelled) training codes.
    pub cutoff: Option<f64>,
    pub k_baseline: usize,
    pub seeds: Vec<u64>,
    pub n_labeled: usize,
    pub m_unlabeled: usize,
    pub n_test: usize,
}

impl Default for SSLConfig {
    fn default() -> Self {
        Self {
            cutoff: None,
            k_baseline: 1,
            seeds: (0..20).collect(),
            n_labeled: 4,
            m_unlabeled: 2000,
            n_test: 500,
        }
    }
}

impl SSLConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.cutoff {
            if !(c > 0.0) {
                return Err(Error::Config(format!(
                    "ssl cutoff must be positive, got {c}"
                )));
            }
        }
        if self.k_baseline == 0 {
            return Err(Error::Config("k_baseline must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("ssl needs at least one seed".into()));
        }
        if self.n_labeled == 0 || self.n_test == 0 {
            return Err(Error::Config("ssl needs labeled and test points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SSLResult {
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub cutoff: f64,
    pub ssl_error: f64,
    pub supervised_error: f64,
    pub n_clusters_found: usize,
    pub n_unmatched_clusters: usize,
    /// Every point ended up in its own cluster.
    pub degenerate: bool,
}

/// One cluster-then-label vs k-NN comparison on given splits.
pub fn ssl_compare<E: Encoder + ?Sized>(
    encoder: &E,
    labeled: &Dataset,
    unlabeled: &Dataset,
    test: &Dataset,
    cutoff: Option<f64>,
    k_baseline: usize,
    seed: u64,
) -> Result<SSLResult> {
    let lab_labels = labeled
        .labels()
        .ok_or_else(|| Error::invalid("labeled split carries no labels"))?;
    let test_labels = test
        .labels()
        .ok_or_else(|| Error::invalid("test split carries no labels"))?;
    if labeled.is_empty() || test.is_empty() {
        return Err(Error::invalid("labeled and test splits must be non-empty"));
    }
    let enc = |d: &Dataset| -> Result<Vec<Vec<f64>>> {
        d.samples().par_iter().map(|x| encoder.encode(x)).collect()
    };
    let lab_codes = enc(labeled)?;
    let unl_codes = enc(unlabeled)?;
    let test_codes = enc(test)?;

    let mut pool = unl_codes;
    pool.extend(lab_codes.iter().cloned());
    let mut pool_labels: Vec<Option<u32>> = vec![None; unlabeled.len()];
    pool_labels.extend(lab_labels.iter().map(|&l| Some(l)));

    let cutoff = match cutoff {
        Some(c) => c,
        None => {
            let truth: Vec<u32> = unlabeled
                .labels()
                .ok_or_else(|| {
                    Error::invalid(
                        "automatic cutoff needs ground-truth labels on the unlabeled split",
                    )
                })?
                .iter()
                .chain(lab_labels)
                .copied()
                .collect();
            let est = empirical_cluster_margin(&ClusteredSample::new(pool.clone(), truth)?)?;
            if !(est.eta_hat > 0.0) {
                return Err(Error::Numeric(
                    "encoded cluster margin is zero; no valid automatic cutoff".into(),
                ));
            }
            est.eta_hat / 2.0
        }
    };

    let ids = single_linkage_clusters(&pool, cutoff)?;
    let n_clusters_found = ids.iter().max().map_or(0, |m| m + 1);
    let ssl = label_clusters(&pool, &ids, &pool_labels, cutoff)?;
    let knn = knn_baseline(&lab_codes, lab_labels, k_baseline)?;

    let errors = |pred: &(dyn Fn(&[f64]) -> u32 + Sync)| -> f64 {
        let wrong = test_codes
            .par_iter()
            .zip(test_labels.par_iter())
            .filter(|(z, &l)| pred(z) != l)
            .count();
        wrong as f64 / test_codes.len() as f64
    };
    Ok(SSLResult {
        seed,
        m: unlabeled.len(),
        n: labeled.len(),
        cutoff,
        ssl_error: errors(&|z| ssl.predict(z)),
        supervised_error: errors(&|z| knn.predict(z)),
        n_clusters_found,
        n_unmatched_clusters: ssl.n_unmatched_clusters,
        degenerate: n_clusters_found == pool.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SSLSummary {
    pub runs: Vec<SSLResult>,
    pub mean_ssl_error: f64,
    pub std_ssl_error: f64,
    pub mean_supervised_error: f64,
    pub std_supervised_error: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs [`ssl_compare`] once per seed, each on a fresh seeded split of `data`.
pub fn ssl_experiment<E: Encoder + ?Sized>(
    encoder: &E,
    data: &Dataset,
    cfg: &SSLConfig,
) -> Result<SSLSummary> {
    cfg.validate()?;
    let runs: Vec<SSLResult> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let s = split(
                data,
                SplitSpec {
                    n_labeled: cfg.n_labeled,
                    m_unlabeled: cfg.m_unlabeled,
                    n_test: cfg.n_test,
                    seed,
                },
            )?;
            ssl_compare(
                encoder,
                &s.labeled,
                &s.unlabeled,
                &s.test,
                cfg.cutoff,
                cfg.k_baseline,
                seed,
            )
        })
        .collect::<Result<_>>()?;
    let ssl: Vec<f64> = runs.iter().map(|r| r.ssl_error).collect();
    let sup: Vec<f64> = runs.iter().map(|r| r.supervised_error).collect();
    let (mean_ssl_error, std_ssl_error) = mean_std(&ssl);
    let (mean_supervised_error, std_supervised_error) = mean_std(&sup);
    Ok(SSLSummary {
        runs,
        mean_ssl_error,
        std_ssl_error,
        mean_supervised_error,
        std_supervised_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn two_separated_groups() {
        let p = pts(&[0.0, 0.5, 1.0, 10.0, 10.4]);
        assert_eq!(
            single_linkage_clusters(&p, 1.0).unwrap(),
            vec![0, 0, 0, 1, 1]
        );
        assert_eq!(
            single_linkage_clusters(&p, f64::INFINITY).unwrap(),
            vec![0; 5]
        );
        // edges must be strictly shorter than the cutoff
        assert_eq!(
            single_linkage_clusters(&p, 0.5).unwrap(),
            vec![0, 1, 2, 3, 3]
        );
        assert_eq!(
            single_linkage_clusters(&p, 0.3).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn ids_follow_lowest_member() {
        let p = pts(&[10.0, 0.0, 10.1, 0.1]);
        assert_eq!(single_linkage_clusters(&p, 1.0).unwrap(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn one_label_per_cluster_gives_zero_training_error() {
        let p = pts(&[0.0, 0.5, 10.0, 10.5]);
        let ids = single_linkage_clusters(&p, 1.0).unwrap();
        let labels = [Some(7), None, None, Some(3)];
        let c = label_clusters(&p, &ids, &labels, 1.0).unwrap();
        let truth = [7, 7, 3, 3];
        for (x, t) in p.iter().zip(truth) {
            assert_eq!(c.predict(x), t);
        }
        assert_eq!(c.n_unmatched_clusters, 0);
    }

    #[test]
    fn unlabeled_cluster_uses_medoid_rule() {
        // cluster {4, 5, 6} has medoid 5; nearest labeled point to 5 is 2.5
        let p = pts(&[0.0, 2.5, 4.0, 5.0, 6.0]);
        let ids = vec![0, 1, 2, 2, 2];
        let labels = [Some(1), Some(2), None, None, None];
        let c = label_clusters(&p, &ids, &labels, 1.1).unwrap();
        assert_eq!(c.cluster_labels(), &[1, 2, 2]);
        assert_eq!(c.n_unmatched_clusters, 1);
    }

    #[test]
    fn majority_ties_go_to_smaller_label() {
        assert_eq!(vote([3, 1, 3, 1]), Some(1));
        assert_eq!(vote([3, 3, 1]), Some(3));
        assert_eq!(vote(std::iter::empty()), None);
    }

    #[test]
    fn knn_examples() {
        let p = pts(&[0.0, 2.0]);
        let k1 = knn_baseline(&p, &[5, 9], 1).unwrap();
        assert_eq!(k1.predict(&[2.0]), 9);
        let k2 = knn_baseline(&p, &[5, 4], 2).unwrap();
        assert_eq!(k2.predict(&[1.0]), 4);
        assert!(knn_baseline(&p, &[5, 4], 3).is_err());
    }
}
