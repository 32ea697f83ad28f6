//! Synthetic data, graph Laplacians, barycentric mapping and evaluation.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::CouplingPoint;

/// Labeled points, one point per row of `features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PointSetJson", into = "PointSetJson")]
pub struct LabeledPointSet {
    features: DMatrix<f64>,
    labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PointSetJson {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl TryFrom<PointSetJson> for LabeledPointSet {
    type Error = Error;

    fn try_from(raw: PointSetJson) -> Result<Self> {
        let d = raw.features.first().map_or(0, Vec::len);
        if raw.features.iter().any(|r| r.len() != d) {
            return Err(Error::param("features", "rows have different lengths"));
        }
        let flat: Vec<f64> = raw.features.concat();
        LabeledPointSet::new(DMatrix::from_row_slice(raw.features.len(), d, &flat), raw.labels)
    }
}

impl From<LabeledPointSet> for PointSetJson {
    fn from(s: LabeledPointSet) -> Self {
        PointSetJson {
            features: s.features.row_iter().map(|r| r.iter().copied().collect()).collect(),
            labels: s.labels,
        }
    }
}

impl LabeledPointSet {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::param(
                "labels",
                format!("{} labels for {} points", labels.len(), features.nrows()),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("features", "entries must be finite"));
        }
        Ok(LabeledPointSet { features, labels })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Reads CSV rows `feature_1, ..., feature_d, label`, with an optional header.
    pub fn from_csv<R: std::io::Read>(reader: R, source_name: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            message: format!("line {line}: {message}"),
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<f64> = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(idx + 1, e.to_string()))?;
            let values: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let values = match values {
                Ok(v) => v,
                Err(_) if idx == 0 => continue,
                Err(e) => return Err(parse_err(idx + 1, e.to_string())),
            };
            if values.len() < 2 {
                return Err(parse_err(idx + 1, "need at least one feature and a label".into()));
            }
            if *width.get_or_insert(values.len()) != values.len() {
                return Err(parse_err(idx + 1, "inconsistent column count".into()));
            }
            let label = values[values.len() - 1];
            if !(label >= 0.0 && label.fract() == 0.0) {
                return Err(parse_err(idx + 1, format!("label {label} is not a nonnegative integer")));
            }
            labels.push(label as usize);
            rows.extend_from_slice(&values[..values.len() - 1]);
        }
        let d = width.map_or(0, |w| w - 1);
        LabeledPointSet::new(DMatrix::from_row_slice(labels.len(), d, &rows), labels)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(crate::solvers::csv_err)?;
        for (row, label) in self.features.row_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            rec.push(label.to_string());
            w.write_record(&rec).map_err(crate::solvers::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Center of the noiseless two-moons distribution, used as the rotation pivot.
pub const TWO_MOONS_CENTER: (f64, f64) = (0.5, 0.25);

/// Two interleaved half circles with Gaussian noise, rotated by
/// `rotation_deg` about [`TWO_MOONS_CENTER`]. Class 0 occupies the first
/// `n_per_class` rows.
pub fn two_moons(n_per_class: usize, rotation_deg: f64, noise_std: f64, seed: u64) -> Result<LabeledPointSet> {
    if n_per_class == 0 {
        return Err(Error::param("n_per_class", "must be at least 1"));
    }
    if !(0.0..=180.0).contains(&rotation_deg) {
        return Err(Error::param("rotation_deg", format!("{rotation_deg} outside [0, 180]")));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::param("noise_std", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let (cx, cy) = TWO_MOONS_CENTER;
    let mut features = DMatrix::zeros(2 * n_per_class, 2);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        for k in 0..n_per_class {
            let t = rng.random_range(0.0..std::f64::consts::PI);
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let x = x + noise.sample(&mut rng) - cx;
            let y = y + noise.sample(&mut rng) - cy;
            let row = class * n_per_class + k;
            features[(row, 0)] = cx + cos * x - sin * y;
            features[(row, 1)] = cy + sin * x + cos * y;
            labels.push(class);
        }
    }
    LabeledPointSet::new(features, labels)
}

fn squared_distance(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Graph Laplacian `L = diag(S1) − S` of the class-sparsified similarity graph.
///
/// `S_ij = exp(−‖x_i − x_j‖² / (2w²))` when `j` is among the `k_neighbors`
/// nearest points of `i` or vice versa, and the two points share a label;
/// zero otherwise. `kernel_width` defaults to the median pairwise distance.
pub fn class_laplacian(data: &LabeledPointSet, k_neighbors: usize, kernel_width: Option<f64>) -> Result<DMatrix<f64>> {
    let k = data.len();
    if k_neighbors == 0 || k_neighbors >= k {
        return Err(Error::param("k_neighbors", format!("must lie in [1, {}), got {k_neighbors}", k)));
    }
    let x = data.features();
    let d2 = DMatrix::from_fn(k, k, |i, j| squared_distance(x, i, x, j));
    let width = match kernel_width {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => return Err(Error::param("kernel_width", format!("must be positive, got {w}"))),
        None => {
            let mut all = Vec::with_capacity(k * (k - 1) / 2);
            for i in 0..k {
                for j in i + 1..k {
                    all.push(d2[(i, j)].sqrt());
                }
            }
            let w = median(all);
            if w > 0.0 {
                w
            } else {
                1.0
            }
        }
    };
    let mut adjacent = DMatrix::from_element(k, k, false);
    for i in 0..k {
        let mut order: Vec<usize> = (0..k).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
        for &j in &order[..k_neighbors] {
            adjacent[(i, j)] = true;
            adjacent[(j, i)] = true;
        }
    }
    let labels = data.labels();
    let s = DMatrix::from_fn(k, k, |i, j| {
        if adjacent[(i, j)] && labels[i] == labels[j] {
            (-d2[(i, j)] / (2.0 * width * width)).exp()
        } else {
            0.0
        }
    });
    let mut l = -s;
    for i in 0..k {
        let degree: f64 = -(l.row(i).sum());
        l[(i, i)] = degree;
    }
    Ok(l)
}

/// Transported source points `diag(1/p) X P_t`, one per row. With uniform
/// `p = 1/n` this is `n X P_t`.
pub fn barycentric_map(x: &CouplingPoint, target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (_, m) = x.shape();
    if target.nrows() != m {
        return Err(Error::Shape {
            context: "barycentric target",
            expected: (m, target.ncols()),
            found: target.shape(),
        });
    }
    let p = x.space().p();
    let mapped = x.matrix() * target;
    Ok(DMatrix::from_fn(mapped.nrows(), mapped.ncols(), |i, j| mapped[(i, j)] / p[i]))
}

/// Majority vote among the `k` nearest training points. Ties go to the label
/// with the smallest total distance, then to the smallest label.
pub fn knn_classify(train: &LabeledPointSet, test_features: &DMatrix<f64>, k: usize) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::param("train", "training set is empty"));
    }
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if test_features.ncols() != train.dim() {
        return Err(Error::Shape {
            context: "test features",
            expected: (test_features.nrows(), train.dim()),
            found: test_features.shape(),
        });
    }
    let k = k.min(train.len());
    let x = train.features();
    let n_labels = train.labels().iter().max().map_or(0, |l| l + 1);
    let mut out = Vec::with_capacity(test_features.nrows());
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    for t in 0..test_features.nrows() {
        order.clear();
        order.extend((0..train.len()).map(|i| (squared_distance(test_features, t, x, i), i)));
        order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; n_labels];
        let mut dist = vec![0.0; n_labels];
        for &(d2, i) in &order[..k] {
            let l = train.labels()[i];
            votes[l] += 1;
            dist[l] += d2.sqrt();
        }
        let best = (0..n_labels)
            .filter(|&l| votes[l] > 0)
            .min_by(|&a, &b| {
                votes[b]
                    .cmp(&votes[a])
                    .then(dist[a].partial_cmp(&dist[b]).unwrap_or(Ordering::Equal))
                    .then(a.cmp(&b))
            })
            .expect("k ≥ 1 votes cast");
        out.push(best);
    }
    Ok(out)
}

/// Fraction of mismatched labels.
pub fn error_rate(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::param("labels", "prediction and truth must be nonempty and equally long"));
    }
    let wrong = predicted.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Mean of squared entrywise differences.
pub fn plan_mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    linalg::check_shape("plan_mse", b, a.shape())?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Uniform marginal `(1/k) 1_k`.
pub fn uniform(k: usize) -> DVector<f64> {
    DVector::from_element(k, 1.0 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::CouplingSpace;

    #[test]
    fn mse_examples() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(plan_mse(&a, &b).unwrap(), 1.0);
        assert_eq!(plan_mse(&b, &b).unwrap(), 0.0);
        assert!(plan_mse(&a, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn moons_are_deterministic_and_balanced() {
        let a = two_moons(50, 30.0, 0.1, 7).unwrap();
        let b = two_moons(50, 30.0, 0.1, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels().iter().filter(|l| **l == 1).count(), 50);
        assert!(two_moons(0, 0.0, 0.1, 1).is_err());
        assert!(two_moons(3, 190.0, 0.1, 1).is_err());
    }

    #[test]
    fn rotation_preserves_distance_to_center() {
        let a = two_moons(20, 0.0, 0.0, 3).unwrap();
        let b = two_moons(20, 73.0, 0.0, 3).unwrap();
        let (cx, cy) = TWO_MOONS_CENTER;
        for i in 0..40 {
            let ra = (a.features()[(i, 0)] - cx).hypot(a.features()[(i, 1)] - cy);
            let rb = (b.features()[(i, 0)] - cx).hypot(b.features()[(i, 1)] - cy);
            assert!((ra - rb).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_exact_match_and_tie_break() {
        let train = LabeledPointSet::new(DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]), vec![2, 0, 1]).unwrap();
        assert_eq!(knn_classify(&train, &DMatrix::from_row_slice(1, 1, &[1.0]), 1).unwrap(), vec![0]);
        // neighbours at distance 0.4 (label 0) and 1.6 (label 1): one vote each
        assert_eq!(knn_classify(&train, &DMatrix::from_row_slice(1, 1, &[1.4]), 2).unwrap(), vec![0]);
        // equidistant neighbours with labels 2 and 0 → smaller label
        assert_eq!(knn_classify(&train, &DMatrix::from_row_slice(1, 1, &[0.5]), 2).unwrap(), vec![0]);
    }

    #[test]
    fn laplacian_blocks_and_null_vector() {
        let data = two_moons(10, 0.0, 0.05, 2).unwrap();
        let l = class_laplacian(&data, 5, None).unwrap();
        assert!((&l - l.transpose()).amax() < 1e-12);
        assert!(linalg::row_sums(&l).amax() < 1e-12);
        for i in 0..10 {
            for j in 10..20 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
        assert!(class_laplacian(&data, 20, None).is_err());
    }

    #[test]
    fn independence_plan_maps_to_target_mean() {
        let target = DMatrix::from_row_slice(3, 2, &[0., 0., 3., 1., 6., 5.]);
        let space = CouplingSpace::new(uniform(4), uniform(3)).unwrap();
        let mapped = barycentric_map(&space.independence_point(), &target).unwrap();
        for i in 0..4 {
            assert!((mapped[(i, 0)] - 3.0).abs() < 1e-12);
            assert!((mapped[(i, 1)] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let data = two_moons(4, 10.0, 0.1, 5).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = LabeledPointSet::from_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.labels(), data.labels());
        assert!((back.features() - data.features()).amax() < 1e-15);
        let json = serde_json::to_string(&data).unwrap();
        let back: LabeledPointSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, data);
    }
}
