//! Datasets: LIBSVM ingestion, synthetic class-imbalanced generation,
//! normalization, and train/test splitting.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{largest_remainder, Matrix, SeededRng};

/// Labeled examples with a per-class index.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    class_index: Vec<Vec<usize>>,
}

impl Dataset {
    /// Validates shapes and builds the class index. `num_classes` must be at
    /// least 2 and every label must lie below it.
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if n == 0 || features.cols() == 0 {
            return Err(Error::InvalidInput("dataset needs n >= 1 and d >= 1".into()));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if num_classes < 2 {
            return Err(Error::InvalidInput("dataset needs at least 2 classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        let mut class_index = vec![Vec::new(); num_classes];
        for (i, &c) in labels.iter().enumerate() {
            class_index[c].push(i);
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            num_classes,
            class_index,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_index(&self) -> &[Vec<usize>] {
        &self.class_index
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.class_index.iter().map(Vec::len).collect()
    }

    /// Rows `idx` as a new dataset with the same class count.
    pub fn subset(&self, idx: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            data.extend_from_slice(self.x(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            name,
            Matrix::from_row_major(idx.len(), d, data)?,
            labels,
            self.num_classes,
        )
    }

    /// Stratified random split; `test_fraction` of every class goes to the
    /// second dataset (rounded, at least one example kept on each side when
    /// the class has two or more members).
    pub fn split(&self, test_fraction: f64, rng: &mut SeededRng) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
            return Err(Error::InvalidInput(format!(
                "test fraction {test_fraction} not in (0, 1)"
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for members in &self.class_index {
            let mut m = members.clone();
            rng.shuffle(&mut m);
            let mut k = (test_fraction * m.len() as f64).round() as usize;
            if m.len() >= 2 {
                k = k.clamp(1, m.len() - 1);
            }
            test.extend_from_slice(&m[..k]);
            train.extend_from_slice(&m[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((
            self.subset(&train, format!("{}-train", self.name))?,
            self.subset(&test, format!("{}-test", self.name))?,
        ))
    }

    /// Z-scores every feature column using this dataset's statistics;
    /// constant columns are only centred. Returns the (mean, sd) pairs so the
    /// same transform can be applied to a test split.
    pub fn standardize(&mut self) -> Vec<(f64, f64)> {
        let (n, d) = (self.len() as f64, self.dim());
        let mut stats = Vec::with_capacity(d);
        for j in 0..d {
            let mean = self.features.row_iter().map(|r| r[j]).sum::<f64>() / n;
            let var = self
                .features
                .row_iter()
                .map(|r| (r[j] - mean).powi(2))
                .sum::<f64>()
                / n;
            stats.push((mean, var.sqrt()));
        }
        self.apply_standardization(&stats);
        stats
    }

    pub fn apply_standardization(&mut self, stats: &[(f64, f64)]) {
        for i in 0..self.len() {
            for (v, &(m, s)) in self.features.row_mut(i).iter_mut().zip(stats) {
                *v -= m;
                if s > 0.0 {
                    *v /= s;
                }
            }
        }
    }
}

/// Parses LIBSVM text (`label idx:val idx:val ...`, 1-based ascending
/// indices). Labels are remapped to `0..C` by sorted original value.
pub fn parse_libsvm(text: &str, dim_hint: Option<usize>, name: &str) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in text.split('\n').enumerate() {
        let lineno = lineno + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid label `{label_tok}`"),
        })?;
        if !label.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("invalid label `{label_tok}`"),
            });
        }
        let mut row = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected idx:val, got `{tok}`"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid index `{idx}`"),
            })?;
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid value `{val}`"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "indices are 1-based".into(),
                });
            }
            if idx <= prev {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("index {idx} not ascending after {prev}"),
                });
            }
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite value `{val}`"),
                });
            }
            prev = idx;
            row.push((idx, val));
        }
        max_index = max_index.max(prev);
        raw_labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty LIBSVM input".into()));
    }
    let d = match dim_hint {
        Some(h) if h < max_index => {
            return Err(Error::InvalidInput(format!(
                "dim_hint {h} smaller than largest index {max_index}"
            )))
        }
        Some(h) => h,
        None => max_index,
    };
    if d == 0 {
        return Err(Error::InvalidInput("no features present".into()));
    }

    let (labels, num_classes) = remap_labels(&raw_labels);
    let mut data = vec![0.0; rows.len() * d];
    for (i, row) in rows.iter().enumerate() {
        for &(idx, v) in row {
            data[i * d + idx - 1] = v;
        }
    }
    Dataset::new(
        name,
        Matrix::from_row_major(rows.len(), d, data)?,
        labels,
        num_classes,
    )
}

/// `{-1,+1}` maps to `{0,1}` by sign (so a file holding only `+1` still
/// yields class 1); anything else is ranked by sorted original value.
fn remap_labels(raw: &[f64]) -> (Vec<usize>, usize) {
    if raw.iter().all(|&l| l == 1.0 || l == -1.0) {
        let labels = raw.iter().map(|&l| usize::from(l > 0.0)).collect();
        return (labels, 2);
    }
    let mut distinct = raw.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let labels = raw
        .iter()
        .map(|l| distinct.binary_search_by(|p| p.total_cmp(l)).expect("label present"))
        .collect();
    (labels, distinct.len().max(2))
}

pub fn load_libsvm(path: impl AsRef<Path>, dim_hint: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "libsvm".into());
    parse_libsvm(&text, dim_hint, &name)
}

/// Serializes in LIBSVM format with internal labels and only non-zero
/// entries. Floats use Rust's shortest round-trip representation.
pub fn write_libsvm(ds: &Dataset, mut out: impl Write) -> Result<()> {
    for i in 0..ds.len() {
        write!(out, "{}", ds.label(i))?;
        for (j, &v) in ds.x(i).iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-class Gaussian mixture description.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub class_fractions: Vec<f64>,
    /// One mean vector (length `d`) per class.
    pub cluster_means: Vec<Vec<f64>>,
    /// One per-coordinate standard deviation vector (length `d`) per class.
    pub cluster_scales: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let c = self.class_fractions.len();
        if c < 2 {
            return Err(Error::InvalidInput("need at least 2 classes".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidInput("d must be >= 1".into()));
        }
        if self.n < c {
            return Err(Error::InvalidInput(format!(
                "n = {} smaller than class count {c}",
                self.n
            )));
        }
        if self.class_fractions.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::InvalidInput("class fractions must be > 0".into()));
        }
        let total: f64 = self.class_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "class fractions sum to {total}, not 1"
            )));
        }
        if self.cluster_means.len() != c || self.cluster_scales.len() != c {
            return Err(Error::InvalidInput("one mean and scale per class required".into()));
        }
        for v in self.cluster_means.iter().chain(&self.cluster_scales) {
            if v.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: v.len(),
                });
            }
        }
        if self.cluster_scales.iter().flatten().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidInput("scales must be >= 0".into()));
        }
        Ok(())
    }

    /// Class sizes after largest-remainder rounding of `n * fraction`.
    pub fn class_counts(&self) -> Vec<usize> {
        let quotas: Vec<f64> = self
            .class_fractions
            .iter()
            .map(|f| f * self.n as f64)
            .collect();
        largest_remainder(&quotas, self.n)
    }

    /// The stand-in for a 22-feature, 9:1 imbalanced binary problem used by
    /// the convex experiments when the real file is not available. Feature
    /// scales span two orders of magnitude and the classes overlap.
    pub fn imbalanced_binary(n: usize, seed: u64) -> SyntheticSpec {
        let d = 22;
        let mut rng = SeededRng::new(seed ^ 0x5eed);
        let scales: Vec<f64> = (0..d)
            .map(|j| 10f64.powf(-1.0 + 2.0 * j as f64 / (d - 1) as f64))
            .collect();
        let shift: Vec<f64> = scales
            .iter()
            .map(|s| s * (0.3 + 0.5 * rng.uniform()) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
            .collect();
        let base: Vec<f64> = scales.iter().map(|s| s * rng.normal() * 0.5).collect();
        let minority: Vec<f64> = base.iter().zip(&shift).map(|(b, s)| b + s).collect();
        SyntheticSpec {
            n,
            d,
            class_fractions: vec![0.9, 0.1],
            cluster_means: vec![base, minority],
            cluster_scales: vec![scales.clone(), scales],
            seed,
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let counts = spec.class_counts();
    let mut rng = SeededRng::new(spec.seed);
    let mut data = Vec::with_capacity(spec.n * spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    for (c, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for j in 0..spec.d {
                data.push(spec.cluster_means[c][j] + spec.cluster_scales[c][j] * rng.normal());
            }
            labels.push(c);
        }
    }
    // interleave classes so index order carries no class information
    let mut order: Vec<usize> = (0..spec.n).collect();
    rng.shuffle(&mut order);
    let mut shuffled = Vec::with_capacity(data.len());
    let mut shuffled_labels = Vec::with_capacity(spec.n);
    for &i in &order {
        shuffled.extend_from_slice(&data[i * spec.d..(i + 1) * spec.d]);
        shuffled_labels.push(labels[i]);
    }
    Dataset::new(
        format!("synthetic-{}", spec.seed),
        Matrix::from_row_major(spec.n, spec.d, shuffled)?,
        shuffled_labels,
        counts.len(),
    )
}

/// Divides every feature by `divisor` (e.g. 255 for 8-bit pixels).
pub fn normalize_01(ds: &Dataset, divisor: f64) -> Result<Dataset> {
    if !(divisor > 0.0) || !divisor.is_finite() {
        return Err(Error::InvalidInput(format!("divisor {divisor} must be > 0")));
    }
    let data = ds.features.as_slice().iter().map(|v| v / divisor).collect();
    let features = Matrix::from_row_major(ds.len(), ds.dim(), data)?;
    Dataset::new(ds.name.clone(), features, ds.labels.clone(), ds.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_line_with_hint() {
        let ds = parse_libsvm("+1 1:0.5 3:-2.0\n", Some(3), "t").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.x(0), &[0.5, 0.0, -2.0]);
        assert_eq!(ds.label(0), 1);
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn remaps_labels_by_sorted_value() {
        let ds = parse_libsvm("+1 1:1\n-1 2:1\n+1 1:2\n", None, "t").unwrap();
        assert_eq!(ds.labels(), &[1, 0, 1]);
        assert_eq!(ds.dim(), 2);
        let ds = parse_libsvm("2 1:1\n1 1:1\n", None, "t").unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_libsvm("1 1:1\nx 1:1\n", None, "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_libsvm("1 2:1 1:1\n", None, "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_libsvm("1 2:1 2:3\n", None, "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_libsvm("1 0:1\n", None, "t").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(matches!(
            parse_libsvm("", None, "t").unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn synthetic_class_sizes() {
        let mut spec = SyntheticSpec::imbalanced_binary(100, 1);
        assert_eq!(spec.class_counts(), vec![90, 10]);
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.class_sizes(), vec![90, 10]);

        spec.n = 10;
        spec.class_fractions = vec![0.33, 0.33, 0.34];
        spec.cluster_means.push(vec![0.0; spec.d]);
        spec.cluster_scales.push(vec![1.0; spec.d]);
        let counts = spec.class_counts();
        assert_eq!(counts.iter().sum::<usize>(), 10);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::imbalanced_binary(200, 7);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn synthetic_rejects_degenerate_specs() {
        let mut spec = SyntheticSpec::imbalanced_binary(1, 0);
        assert!(generate_synthetic(&spec).is_err());
        spec.n = 10;
        spec.class_fractions = vec![0.5, 0.4];
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn normalize_examples() {
        let ds = Dataset::new(
            "t",
            Matrix::from_rows(&[vec![255.0, 0.0], vec![51.0, 102.0]]).unwrap(),
            vec![0, 1],
            2,
        )
        .unwrap();
        let n = normalize_01(&ds, 255.0).unwrap();
        assert_eq!(n.x(0), &[1.0, 0.0]);
        assert_eq!(normalize_01(&ds, 1.0).unwrap().features(), ds.features());
        assert!(normalize_01(&ds, 0.0).is_err());
        assert!(normalize_01(&ds, -1.0).is_err());
    }

    #[test]
    fn class_index_partitions() {
        let ds = generate_synthetic(&SyntheticSpec::imbalanced_binary(57, 3)).unwrap();
        let mut all: Vec<usize> = ds.class_index().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let ds = generate_synthetic(&SyntheticSpec::imbalanced_binary(1000, 3)).unwrap();
        let (tr, te) = ds.split(0.2, &mut SeededRng::new(1)).unwrap();
        assert_eq!(tr.len() + te.len(), 1000);
        assert_eq!(te.class_sizes(), vec![180, 20]);
    }
}
