//! Binary datasets: IDX and AEB1 ingestion, grayscale conversion,
//! binarization, a synthetic clustered generator with a known margin, and
//! seeded labeled/unlabeled/test splits.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const AEB1_MAGIC: &[u8; 4] = b"AEB1";

/// Binary input vectors with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Vec<f64>>,
    labels: Option<Vec<u32>>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Vec<f64>>, labels: Option<Vec<u32>>) -> Result<Self> {
        let dim = samples.first().map_or(0, Vec::len);
        if let Some(i) = samples.iter().position(|s| s.len() != dim) {
            return Err(Error::Dimension {
                context: "dataset sample",
                expected: dim,
                got: samples[i].len(),
            });
        }
        if samples.iter().flatten().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("dataset entries must be 0 or 1"));
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::CountMismatch {
                    images: samples.len(),
                    labels: l.len(),
                });
            }
        }
        Ok(Self {
            samples,
            labels,
            dim,
        })
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest sample L2 norm, `B ≤ √M`.
    pub fn max_norm(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.iter().sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| {
            let mut v = l.clone();
            v.sort_unstable();
            v.dedup();
            v.len()
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            dim: self.dim,
        }
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Raw 8-bit images, stored planar per image (`channels × rows × cols`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl ImageSet {
    pub fn image_len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images(ImageSet),
    Labels(Vec<u8>),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                needed: self.pos + n,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::invalid(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn payload_len(dims: &[u32]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d as usize)
            .ok_or_else(|| Error::invalid("IDX dimensions overflow"))
    })
}

/// Parses an IDX image (`0x00000803`) or label (`0x00000801`) file.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.u32_be()?;
    let out = match magic {
        IDX_IMAGES_MAGIC => {
            let dims = [r.u32_be()?, r.u32_be()?, r.u32_be()?];
            let n = payload_len(&dims)?;
            let pixels = r.take(n)?.to_vec();
            IdxData::Images(ImageSet {
                count: dims[0] as usize,
                rows: dims[1] as usize,
                cols: dims[2] as usize,
                channels: 1,
                pixels,
            })
        }
        IDX_LABELS_MAGIC => {
            let n = r.u32_be()? as usize;
            IdxData::Labels(r.take(n)?.to_vec())
        }
        found => {
            return Err(Error::BadMagic {
                found,
                expected: "0x00000803 or 0x00000801",
            })
        }
    };
    r.finish()?;
    Ok(out)
}

pub fn write_idx_images(images: &ImageSet) -> Result<Vec<u8>> {
    if images.channels != 1 {
        return Err(Error::invalid("IDX images must be single-channel"));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Parses the raw planar container: `"AEB1"`, then big-endian u32 count,
/// rows, cols, channels, then pixels.
pub fn parse_aeb1(bytes: &[u8]) -> Result<ImageSet> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != AEB1_MAGIC {
        return Err(Error::BadMagic {
            found: u32::from_be_bytes([magic[0], magic[1], magic[2], magic[3]]),
            expected: "\"AEB1\"",
        });
    }
    let dims = [r.u32_be()?, r.u32_be()?, r.u32_be()?, r.u32_be()?];
    let n = payload_len(&dims)?;
    let pixels = r.take(n)?.to_vec();
    r.finish()?;
    Ok(ImageSet {
        count: dims[0] as usize,
        rows: dims[1] as usize,
        cols: dims[2] as usize,
        channels: dims[3] as usize,
        pixels,
    })
}

pub fn write_aeb1(images: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + images.pixels.len());
    out.extend_from_slice(AEB1_MAGIC);
    for d in [images.count, images.rows, images.cols, images.channels] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

/// Checks that an image file and a label file describe the same samples.
pub fn pair_images_labels(images: &ImageSet, labels: &[u8]) -> Result<()> {
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    Ok(())
}

/// BT.601 luma, `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(images: &ImageSet) -> Result<ImageSet> {
    if images.channels != 3 {
        return Err(Error::invalid(format!(
            "grayscale conversion needs 3 channels, got {}",
            images.channels
        )));
    }
    let plane = images.rows * images.cols;
    let mut pixels = Vec::with_capacity(images.count * plane);
    for i in 0..images.count {
        let img = images.image(i);
        let (r, rest) = img.split_at(plane);
        let (g, b) = rest.split_at(plane);
        for j in 0..plane {
            let y = 0.299 * r[j] as f64 + 0.587 * g[j] as f64 + 0.114 * b[j] as f64;
            pixels.push(y.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(ImageSet {
        count: images.count,
        rows: images.rows,
        cols: images.cols,
        channels: 1,
        pixels,
    })
}

pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

/// Entry is 1 iff `pixel / 255 >= threshold`.
pub fn binarize(images: &ImageSet, threshold: f64, labels: Option<&[u8]>) -> Result<Dataset> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold must lie in (0,1), got {threshold}"
        )));
    }
    if let Some(l) = labels {
        pair_images_labels(images, l)?;
    }
    let samples = (0..images.count)
        .map(|i| {
            images
                .image(i)
                .iter()
                .map(|&p| {
                    if p as f64 / 255.0 >= threshold {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Dataset::new(
        samples,
        labels.map(|l| l.iter().map(|&v| v as u32).collect()),
    )
}

/// Inverse of [`binarize`] for storage: 0 → 0, 1 → 255, one image row.
pub fn dataset_to_images(data: &Dataset) -> ImageSet {
    ImageSet {
        count: data.len(),
        rows: 1,
        cols: data.dim(),
        channels: 1,
        pixels: data
            .samples()
            .iter()
            .flatten()
            .map(|&v| if v == 1.0 { 255 } else { 0 })
            .collect(),
    }
}

/// Writes `<stem>-images.idx` and (when labelled) `<stem>-labels.idx`.
pub fn save_idx_dataset(data: &Dataset, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(format!("{stem}-images.idx")),
        write_idx_images(&dataset_to_images(data))?,
    )?;
    if let Some(labels) = data.labels() {
        let bytes: Vec<u8> = labels
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::invalid("label exceeds 255")))
            .collect::<Result<_>>()?;
        std::fs::write(
            dir.join(format!("{stem}-labels.idx")),
            write_idx_labels(&bytes),
        )?;
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(std::fs::read(path)?)
}

pub fn read_idx_images(path: &Path) -> Result<ImageSet> {
    match parse_idx(&read_file(path)?)? {
        IdxData::Images(img) => Ok(img),
        IdxData::Labels(_) => Err(Error::BadMagic {
            found: IDX_LABELS_MAGIC,
            expected: "0x00000803",
        }),
    }
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    match parse_idx(&read_file(path)?)? {
        IdxData::Labels(l) => Ok(l),
        IdxData::Images(_) => Err(Error::BadMagic {
            found: IDX_IMAGES_MAGIC,
            expected: "0x00000801",
        }),
    }
}

pub fn read_aeb1(path: &Path) -> Result<ImageSet> {
    parse_aeb1(&read_file(path)?)
}

/// Loads an image file (IDX or AEB1, detected by magic), converting colour
/// images to grayscale, and binarizes it with optional labels.
pub fn load_images_binarized(
    images: &Path,
    labels: Option<&Path>,
    threshold: f64,
    limit: Option<usize>,
) -> Result<Dataset> {
    let bytes = read_file(images)?;
    let mut img = if bytes.starts_with(AEB1_MAGIC) {
        parse_aeb1(&bytes)?
    } else {
        match parse_idx(&bytes)? {
            IdxData::Images(i) => i,
            IdxData::Labels(_) => {
                return Err(Error::BadMagic {
                    found: IDX_LABELS_MAGIC,
                    expected: "0x00000803",
                })
            }
        }
    };
    if img.channels == 3 {
        img = to_grayscale(&img)?;
    } else if img.channels != 1 {
        return Err(Error::invalid(format!(
            "unsupported channel count {}",
            img.channels
        )));
    }
    let mut lab = labels.map(read_idx_labels).transpose()?;
    if let Some(l) = &lab {
        pair_images_labels(&img, l)?;
    }
    if let Some(n) = limit {
        if n < img.count {
            img.pixels.truncate(n * img.image_len());
            img.count = n;
            if let Some(l) = &mut lab {
                l.truncate(n);
            }
        }
    }
    binarize(&img, threshold, lab.as_deref())
}

/// Parameters of the synthetic clustered family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub clusters: usize,
    pub dim: usize,
    pub flips: usize,
    pub per_cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub prototypes: Vec<Vec<u8>>,
    /// Smallest pairwise Hamming distance between prototypes.
    pub min_prototype_hamming: usize,
    /// `√(H - 2·flips)`: lower bound on every inter-cluster L2 distance.
    pub margin_lower_bound: f64,
    /// Largest possible intra-cluster L2 distance, `√(2·flips)`.
    pub max_intra_diameter: f64,
}

const PROTOTYPE_ATTEMPTS: usize = 20_000;

/// `clusters` random binary prototypes at pairwise Hamming distance at least
/// `4·flips + 2`; every sample is a prototype with exactly `flips` distinct
/// bits flipped and is labelled by its cluster index. Samples are ordered by
/// cluster.
pub fn gen_clustered(spec: ClusterSpec, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let ClusterSpec {
        clusters,
        dim,
        flips,
        per_cluster,
    } = spec;
    if clusters < 2 {
        return Err(Error::invalid("need at least 2 clusters"));
    }
    if per_cluster == 0 || dim == 0 {
        return Err(Error::invalid("per_cluster and dim must be positive"));
    }
    let floor = 4 * flips + 2;
    if floor > dim {
        return Err(Error::invalid(format!(
            "infeasible: Hamming floor {floor} exceeds dimension {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prototypes: Vec<Vec<u8>> = Vec::with_capacity(clusters);
    let mut attempts = 0;
    while prototypes.len() < clusters {
        attempts += 1;
        if attempts > PROTOTYPE_ATTEMPTS * clusters {
            return Err(Error::invalid(format!(
                "infeasible: could not place {clusters} prototypes in {dim} bits at Hamming distance >= {floor}"
            )));
        }
        let cand: Vec<u8> = (0..dim).map(|_| rng.gen_range(0..=1u8)).collect();
        if prototypes.iter().all(|p| hamming(p, &cand) >= floor) {
            prototypes.push(cand);
        }
    }
    let min_h = prototypes
        .iter()
        .enumerate()
        .flat_map(|(i, p)| prototypes[i + 1..].iter().map(move |q| hamming(p, q)))
        .min()
        .expect("at least two prototypes");

    let mut samples = Vec::with_capacity(clusters * per_cluster);
    let mut labels = Vec::with_capacity(clusters * per_cluster);
    for (k, proto) in prototypes.iter().enumerate() {
        for _ in 0..per_cluster {
            let mut s: Vec<f64> = proto.iter().map(|&b| b as f64).collect();
            for j in index::sample(&mut rng, dim, flips) {
                s[j] = 1.0 - s[j];
            }
            samples.push(s);
            labels.push(k as u32);
        }
    }
    let truth = GroundTruth {
        margin_lower_bound: ((min_h - 2 * flips) as f64).sqrt(),
        max_intra_diameter: ((2 * flips) as f64).sqrt(),
        min_prototype_hamming: min_h,
        prototypes,
    };
    Ok((Dataset::new(samples, Some(labels))?, truth))
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_labeled: usize,
    pub m_unlabeled: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Seeded disjoint partition. With labels present the labeled part is drawn
/// round-robin over classes, so it covers every class once
/// `n_labeled >= #classes`.
pub fn split(data: &Dataset, spec: SplitSpec) -> Result<Splits> {
    let total = spec.n_labeled + spec.m_unlabeled + spec.n_test;
    if total > data.len() {
        return Err(Error::invalid(format!(
            "split sizes sum to {total} but dataset has {} samples",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);

    let labeled_idx: Vec<usize> = match data.labels() {
        Some(labels) if spec.n_labeled > 0 => {
            let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for &i in &order {
                by_class.entry(labels[i]).or_default().push(i);
            }
            let mut queues: Vec<std::vec::IntoIter<usize>> =
                by_class.into_values().map(Vec::into_iter).collect();
            let mut picked = Vec::with_capacity(spec.n_labeled);
            'outer: loop {
                for q in queues.iter_mut() {
                    if picked.len() == spec.n_labeled {
                        break 'outer;
                    }
                    if let Some(i) = q.next() {
                        picked.push(i);
                    }
                }
            }
            picked
        }
        _ => order[..spec.n_labeled].to_vec(),
    };
    let mut taken = vec![false; data.len()];
    for &i in &labeled_idx {
        taken[i] = true;
    }
    let mut rest = order.into_iter().filter(|&i| !taken[i]);
    let unlabeled_idx: Vec<usize> = rest.by_ref().take(spec.m_unlabeled).collect();
    let test_idx: Vec<usize> = rest.take(spec.n_test).collect();
    Ok(Splits {
        labeled: data.subset(&labeled_idx),
        unlabeled: data.subset(&unlabeled_idx),
        test: data.subset(&test_idx),
        labeled_idx,
        unlabeled_idx,
        test_idx,
    })
}
