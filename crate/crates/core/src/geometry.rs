//! Cluster-margin estimation at the input and at the code, decoder Lipschitz
//! estimates, and the audit that a well-reconstructing autoencoder does not
//! pull points of G_ε together by more than `2(μ + ε)`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::spectral_norm_default;
use crate::error::{check_len, Error, Result};
use crate::matrix::{dist2, norm2};
use crate::nn::{Activation, NetworkParams};

/// Point counts up to this use the plain all-pairs scan.
pub const BRUTE_FORCE_LIMIT: usize = 20_000;

/// Relative rounding allowance for the audit inequalities.
pub const AUDIT_ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredSample {
    pub points: Vec<Vec<f64>>,
    pub cluster_id: Vec<u32>,
    pub in_geps: Vec<bool>,
}

impl ClusteredSample {
    pub fn new(points: Vec<Vec<f64>>, cluster_id: Vec<u32>) -> Result<Self> {
        check_len("cluster ids", points.len(), cluster_id.len())?;
        let dim = points.first().map_or(0, Vec::len);
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::Dimension {
                context: "clustered point",
                expected: dim,
                got: p.len(),
            });
        }
        let n = points.len();
        Ok(Self {
            points,
            cluster_id,
            in_geps: vec![true; n],
        })
    }

    pub fn with_mask(mut self, in_geps: Vec<bool>) -> Result<Self> {
        check_len("G_eps mask", self.points.len(), in_geps.len())?;
        self.in_geps = in_geps;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn distinct_clusters(&self) -> Vec<u32> {
        let mut ids = self.cluster_id.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub eta_hat: f64,
    pub witness_pair: (usize, usize),
    pub n_pairs_checked: u64,
}

#[derive(Clone, Copy)]
struct Best {
    dist: f64,
    pair: (usize, usize),
    checked: u64,
}

impl Best {
    const NONE: Best = Best {
        dist: f64::INFINITY,
        pair: (usize::MAX, usize::MAX),
        checked: 0,
    };

    fn offer(&mut self, dist: f64, i: usize, j: usize) {
        let pair = (i.min(j), i.max(j));
        if dist < self.dist || (dist == self.dist && pair < self.pair) {
            self.dist = dist;
            self.pair = pair;
        }
    }

    fn merge(mut self, other: Best) -> Best {
        self.checked += other.checked;
        if other.dist < self.dist || (other.dist == self.dist && other.pair < self.pair) {
            self.dist = other.dist;
            self.pair = other.pair;
        }
        self
    }
}

/// Smallest L2 distance between points carrying different cluster ids.
/// Ties resolve to the lexicographically smallest index pair, so the result
/// does not depend on scan order.
pub fn empirical_cluster_margin(sample: &ClusteredSample) -> Result<MarginEstimate> {
    if sample.distinct_clusters().len() < 2 {
        return Err(Error::invalid("cluster margin needs at least two clusters"));
    }
    let best = if sample.len() <= BRUTE_FORCE_LIMIT {
        all_pairs_margin(&sample.points, &sample.cluster_id)
    } else {
        sweep_margin(&sample.points, &sample.cluster_id)
    };
    Ok(MarginEstimate {
        eta_hat: best.dist,
        witness_pair: best.pair,
        n_pairs_checked: best.checked,
    })
}

fn all_pairs_margin(points: &[Vec<f64>], ids: &[u32]) -> Best {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut b = Best::NONE;
            for j in i + 1..points.len() {
                if ids[i] != ids[j] {
                    b.checked += 1;
                    b.offer(dist2(&points[i], &points[j]), i, j);
                }
            }
            b
        })
        .reduce(|| Best::NONE, Best::merge)
}

/// Exact sweep along a unit direction: `|⟨u, x - y⟩| <= ‖x - y‖`, so once the
/// projection gap reaches the current best no later point can improve it.
fn sweep_margin(points: &[Vec<f64>], ids: &[u32]) -> Best {
    let dim = points[0].len();
    let mut dir = vec![1.0 / (dim as f64).sqrt(); dim];
    // jitter the direction to avoid degenerate projections on binary data
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a5a);
    for d in &mut dir {
        *d += rng.gen_range(-0.05..0.05);
    }
    let nd = norm2(&dir);
    dir.iter_mut().for_each(|d| *d /= nd);
    let proj: Vec<f64> = points.iter().map(|p| crate::matrix::dot(p, &dir)).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));

    let mut best = Best::NONE;
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            // `<=`: equal-distance pairs further along may still win the tie-break
            if proj[j] - proj[i] > best.dist {
                break;
            }
            if ids[i] != ids[j] {
                best.checked += 1;
                best.offer(dist2(&points[i], &points[j]), i, j);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMargin {
    pub estimate: MarginEstimate,
    /// Clusters dropped because no member lies in G_ε.
    pub excluded_clusters: Vec<u32>,
}

/// Cluster margin of `enc(x)`, optionally restricted to G_ε members.
pub fn encoded_cluster_margin(
    f: &NetworkParams,
    sample: &ClusteredSample,
    restrict_geps: bool,
) -> Result<EncodedMargin> {
    let keep: Vec<usize> = (0..sample.len())
        .filter(|&i| !restrict_geps || sample.in_geps[i])
        .collect();
    let excluded_clusters: Vec<u32> = sample
        .distinct_clusters()
        .into_iter()
        .filter(|c| !keep.iter().any(|&i| sample.cluster_id[i] == *c))
        .collect();
    let codes: Vec<Vec<f64>> = keep
        .par_iter()
        .map(|&i| f.encode(&sample.points[i]))
        .collect::<Result<_>>()?;
    let ids: Vec<u32> = keep.iter().map(|&i| sample.cluster_id[i]).collect();
    let mut est = empirical_cluster_margin(&ClusteredSample::new(codes, ids)?)?;
    est.witness_pair = (keep[est.witness_pair.0], keep[est.witness_pair.1]);
    Ok(EncodedMargin {
        estimate: est,
        excluded_clusters,
    })
}

/// Product of decoder spectral norms, times 1/4 per sigmoid layer.
pub fn lipschitz_upper(f: &NetworkParams) -> Result<f64> {
    let dec = f.decoder();
    if dec.is_empty() {
        return Err(Error::invalid("network has an empty decoder"));
    }
    Ok(dec
        .iter()
        .map(|l| {
            let s = spectral_norm_default(&l.weights).value;
            match l.activation {
                Activation::Sigmoid => s / 4.0,
                Activation::Relu | Activation::Identity => s,
            }
        })
        .product())
}

/// Largest observed stretch `‖dec(a) - dec(b)‖ / ‖a - b‖`, a lower bound on
/// the decoder's Lipschitz constant. Coincident pairs are skipped.
pub fn lipschitz_empirical(f: &NetworkParams, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let best = pairs
        .par_iter()
        .map(|(a, b)| -> Result<Option<f64>> {
            let dz = dist2(a, b);
            if dz == 0.0 {
                return Ok(None);
            }
            Ok(Some(dist2(&f.decode(a)?, &f.decode(b)?) / dz))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<f64>, r| {
            Some(acc.map_or(r, |a| a.max(r)))
        });
    best.ok_or_else(|| Error::invalid("no probe pair with distinct codes"))
}

pub const MAX_PROBE_PAIRS: usize = 100_000;
pub const PERTURBATION_STEP: f64 = 1e-3;

/// Probe pairs for [`lipschitz_empirical`]: all pairs among `codes` (a seeded
/// uniform subsample when there are more than `max_pairs`), plus one
/// perturbation pair `(z, z + step·u)` per code with `u` a random unit vector.
pub fn probe_pairs(
    codes: &[Vec<f64>],
    max_pairs: usize,
    step: f64,
    seed: u64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = codes.len();
    let total = n * n.saturating_sub(1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(total.min(max_pairs) + n);
    if total <= max_pairs {
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((codes[i].clone(), codes[j].clone()));
            }
        }
    } else {
        for k in index::sample(&mut rng, total, max_pairs) {
            let (i, j) = unrank_pair(k, n);
            pairs.push((codes[i].clone(), codes[j].clone()));
        }
    }
    for z in codes {
        let mut u: Vec<f64> = z.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nu = norm2(&u);
        if nu == 0.0 {
            continue;
        }
        u.iter_mut().for_each(|v| *v *= step / nu);
        let moved: Vec<f64> = z.iter().zip(&u).map(|(a, b)| a + b).collect();
        pairs.push((z.clone(), moved));
    }
    pairs
}

/// Maps `k` in `0..n(n-1)/2` to the pair `(i, j)`, `i < j`, in row order.
fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub points_audited: usize,
    pub pairs_checked: u64,
    /// Pairs with `‖x-y‖ > ‖f(x)-f(y)‖ + 2(μ+ε)`.
    pub violations: u64,
    /// Largest `‖x-y‖ - ‖f(x)-f(y)‖ - 2(μ+ε)`; non-positive without violations.
    pub max_slack: f64,
    pub encoded_pairs_checked: u64,
    /// Pairs in distinct clusters with `‖enc x - enc y‖ < (‖x-y‖ - 2(μ+ε)) / C`.
    pub encoded_violations: u64,
    /// Largest `(‖x-y‖ - 2(μ+ε)) / C - ‖enc x - enc y‖`.
    pub encoded_max_slack: f64,
}

/// Checks both audit inequalities on every pair of G_ε members of `sample`.
/// The encoded form is checked on pairs from distinct clusters.
pub fn three_eps_audit(
    f: &NetworkParams,
    sample: &ClusteredSample,
    mu: f64,
    epsilon: f64,
    lipschitz: f64,
) -> Result<AuditResult> {
    if !(lipschitz > 0.0) {
        return Err(Error::invalid("Lipschitz constant must be positive"));
    }
    let members: Vec<usize> = (0..sample.len()).filter(|&i| sample.in_geps[i]).collect();
    let xs: Vec<&[f64]> = members
        .iter()
        .map(|&i| sample.points[i].as_slice())
        .collect();
    let ids: Vec<u32> = members.iter().map(|&i| sample.cluster_id[i]).collect();
    let outs: Vec<Vec<f64>> = xs.par_iter().map(|x| f.forward(x)).collect::<Result<_>>()?;
    let codes: Vec<Vec<f64>> = xs.par_iter().map(|x| f.encode(x)).collect::<Result<_>>()?;
    let reach = 2.0 * (mu + epsilon);

    #[derive(Clone, Copy)]
    struct Acc {
        pairs: u64,
        viol: u64,
        slack: f64,
        enc_pairs: u64,
        enc_viol: u64,
        enc_slack: f64,
    }
    let zero = Acc {
        pairs: 0,
        viol: 0,
        slack: f64::NEG_INFINITY,
        enc_pairs: 0,
        enc_viol: 0,
        enc_slack: f64::NEG_INFINITY,
    };
    let acc = (0..xs.len())
        .into_par_iter()
        .map(|i| {
            let mut a = zero;
            for j in i + 1..xs.len() {
                let dx = dist2(xs[i], xs[j]);
                let dfx = dist2(&outs[i], &outs[j]);
                let s = dx - dfx - reach;
                a.pairs += 1;
                a.slack = a.slack.max(s);
                if s > AUDIT_ROUNDING * (1.0 + dx) {
                    a.viol += 1;
                }
                if ids[i] != ids[j] {
                    let dz = dist2(&codes[i], &codes[j]);
                    let es = (dx - reach) / lipschitz - dz;
                    a.enc_pairs += 1;
                    a.enc_slack = a.enc_slack.max(es);
                    if es > AUDIT_ROUNDING * (1.0 + dx / lipschitz) {
                        a.enc_viol += 1;
                    }
                }
            }
            a
        })
        .reduce(
            || zero,
            |a, b| Acc {
                pairs: a.pairs + b.pairs,
                viol: a.viol + b.viol,
                slack: a.slack.max(b.slack),
                enc_pairs: a.enc_pairs + b.enc_pairs,
                enc_viol: a.enc_viol + b.enc_viol,
                enc_slack: a.enc_slack.max(b.enc_slack),
            },
        );
    Ok(AuditResult {
        points_audited: xs.len(),
        pairs_checked: acc.pairs,
        violations: acc.viol,
        max_slack: if acc.pairs == 0 { 0.0 } else { acc.slack },
        encoded_pairs_checked: acc.enc_pairs,
        encoded_violations: acc.enc_viol,
        encoded_max_slack: if acc.enc_pairs == 0 {
            0.0
        } else {
            acc.enc_slack
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::Layer;

    fn sample(points: Vec<Vec<f64>>, ids: Vec<u32>) -> ClusteredSample {
        ClusteredSample::new(points, ids).unwrap()
    }

    fn linear_ae(enc: Matrix, dec: Matrix, head: Activation) -> NetworkParams {
        NetworkParams::new(
            vec![Layer::new(enc, Activation::Identity), Layer::new(dec, head)],
            1,
        )
        .unwrap()
    }

    #[test]
    fn two_singletons() {
        let s = sample(vec![vec![0.0, 0.0], vec![3.0, 4.0]], vec![0, 1]);
        let e = empirical_cluster_margin(&s).unwrap();
        assert_eq!(e.eta_hat, 5.0);
        assert_eq!(e.witness_pair, (0, 1));
    }

    #[test]
    fn nearest_cross_pair_wins() {
        let s = sample(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]],
            vec![0, 0, 1],
        );
        let e = empirical_cluster_margin(&s).unwrap();
        assert_eq!(e.eta_hat, 2.0);
        assert_eq!(e.witness_pair, (1, 2));
        assert_eq!(e.n_pairs_checked, 2);
    }

    #[test]
    fn single_cluster_rejected() {
        let s = sample(vec![vec![0.0], vec![1.0]], vec![3, 3]);
        assert!(empirical_cluster_margin(&s).is_err());
    }

    #[test]
    fn sweep_matches_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..6).map(|_| rng.gen_range(0..=1) as f64).collect())
            .collect();
        let ids: Vec<u32> = (0..400).map(|_| rng.gen_range(0..3)).collect();
        let a = all_pairs_margin(&pts, &ids);
        let b = sweep_margin(&pts, &ids);
        assert_eq!(a.dist, b.dist);
        assert_eq!(a.pair, b.pair);
    }

    #[test]
    fn identity_and_halving_encoders() {
        let s = sample(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]],
            vec![0, 0, 1],
        );
        let id = linear_ae(
            Matrix::identity(2),
            Matrix::identity(2),
            Activation::Identity,
        );
        assert_eq!(
            encoded_cluster_margin(&id, &s, false)
                .unwrap()
                .estimate
                .eta_hat,
            2.0
        );
        let half = linear_ae(
            Matrix::identity(2).scaled(0.5),
            Matrix::identity(2),
            Activation::Identity,
        );
        assert_eq!(
            encoded_cluster_margin(&half, &s, false)
                .unwrap()
                .estimate
                .eta_hat,
            1.0
        );
    }

    #[test]
    fn restriction_reports_emptied_clusters() {
        let s = sample(
            vec![vec![0.0], vec![1.0], vec![5.0], vec![9.0]],
            vec![0, 0, 1, 2],
        )
        .with_mask(vec![true, true, false, true])
        .unwrap();
        let id = linear_ae(
            Matrix::identity(1),
            Matrix::identity(1),
            Activation::Identity,
        );
        let e = encoded_cluster_margin(&id, &s, true).unwrap();
        assert_eq!(e.excluded_clusters, vec![1]);
        assert_eq!(e.estimate.eta_hat, 8.0);
        assert_eq!(e.estimate.witness_pair, (1, 3));
    }

    #[test]
    fn lipschitz_upper_examples() {
        let p = linear_ae(
            Matrix::identity(2),
            Matrix::identity(2),
            Activation::Identity,
        );
        assert!((lipschitz_upper(&p).unwrap() - 1.0).abs() < 1e-12);
        let p = linear_ae(
            Matrix::identity(2),
            Matrix::identity(2),
            Activation::Sigmoid,
        );
        assert!((lipschitz_upper(&p).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identity_decoder_stretch_is_one() {
        let p = linear_ae(
            Matrix::identity(2),
            Matrix::identity(2),
            Activation::Identity,
        );
        let pairs = probe_pairs(
            &[vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]],
            10,
            1e-3,
            0,
        );
        let c = lipschitz_empirical(&p, &pairs).unwrap();
        assert!((c - 1.0).abs() < 1e-9);
        assert!(lipschitz_empirical(&p, &[(vec![1.0, 1.0], vec![1.0, 1.0])]).is_err());
    }

    #[test]
    fn linear_decoder_stretch_below_operator_norm() {
        let w = Matrix::new(2, 2, vec![2.0, 1.0, 0.0, 1.0]).unwrap();
        let norm = spectral_norm_default(&w).value;
        let p = linear_ae(Matrix::identity(2), w, Activation::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let codes: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let c = lipschitz_empirical(&p, &probe_pairs(&codes, 10_000, 1e-3, 1)).unwrap();
        assert!(c <= norm * (1.0 + 1e-12));
        assert!(c > 0.99 * norm, "{c} vs {norm}");
    }

    #[test]
    fn unrank_covers_all_pairs() {
        let n = 7;
        let mut seen = Vec::new();
        for k in 0..n * (n - 1) / 2 {
            seen.push(unrank_pair(k, n));
        }
        let expected: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn perfect_reconstructor_audit_is_tight() {
        let p = linear_ae(
            Matrix::identity(3),
            Matrix::identity(3),
            Activation::Identity,
        );
        let s = sample(
            vec![
                vec![0.0, 0.0, 1.0],
                vec![1.0, 1.0, 0.0],
                vec![1.0, 0.0, 0.0],
            ],
            vec![0, 1, 1],
        );
        let a = three_eps_audit(&p, &s, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(a.violations, 0);
        assert_eq!(a.encoded_violations, 0);
        assert_eq!(a.max_slack, 0.0);
        assert_eq!(a.pairs_checked, 3);
        assert_eq!(a.encoded_pairs_checked, 2);
    }
}
