//! Dataset ingestion (LibSVM text format, optionally gzipped), the signed
//! data matrix and its diagonal rescaling, and construction of the
//! saddle-point SVM problem.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{SparsePair, SvmSaddle};

/// A sparse classification dataset with labels in `{-1, +1}`. Feature
/// indices are 1-based on disk and 0-based here.
#[derive(Debug, Clone)]
pub struct SparseDataset {
    pub n: usize,
    pub d: usize,
    /// Per-sample sorted `(feature, value)` lists.
    pub rows: Vec<Vec<(u32, f64)>>,
    pub labels: Vec<i8>,
}

impl SparseDataset {
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// Widens the feature space; useful when shards must agree on `d`.
    pub fn with_dim(mut self, d: usize) -> Result<Self> {
        if d < self.d {
            return Err(Error::Usage(format!(
                "cannot shrink feature dimension {} below observed {}",
                d, self.d
            )));
        }
        self.d = d;
        Ok(self)
    }

    /// Serializes back to LibSVM text (1-based indices).
    pub fn to_libsvm_string(&self) -> String {
        let mut out = String::new();
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            out.push_str(if label > 0 { "+1" } else { "-1" });
            for &(idx, val) in row {
                out.push_str(&format!(" {}:{}", idx + 1, val));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_libsvm(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_libsvm_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

fn parse_label(tok: &str, line: usize) -> Result<i8> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad label {tok:?}"),
    })?;
    if v == 1.0 {
        Ok(1)
    } else if v == -1.0 || v == 0.0 {
        // {0, 1} labels are remapped to {-1, +1}
        Ok(-1)
    } else {
        Err(Error::Parse {
            line,
            msg: format!("label {tok:?} not in {{-1,+1,0,1}}"),
        })
    }
}

/// Parses LibSVM text: each nonempty line is `label idx:val idx:val ...`
/// with strictly increasing 1-based indices. `d` is the maximum index seen.
pub fn parse_libsvm(reader: impl BufRead) -> Result<SparseDataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let mut toks = line.split_whitespace();
        let Some(label_tok) = toks.next() else {
            continue;
        };
        // trailing comments after '#' are tolerated
        if label_tok.starts_with('#') {
            continue;
        }
        let label = parse_label(label_tok, lineno)?;
        let mut row: Vec<(u32, f64)> = Vec::new();
        let mut prev_idx = 0u32;
        for tok in toks {
            if tok.starts_with('#') {
                break;
            }
            let (is, vs) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("malformed feature token {tok:?}"),
            })?;
            let idx: u32 = is.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature index {is:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "feature index must be >= 1".into(),
                });
            }
            if idx <= prev_idx {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!(
                        "feature indices must be strictly increasing, saw {idx} after {prev_idx}"
                    ),
                });
            }
            let val: f64 = vs.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature value {vs:?}"),
            })?;
            prev_idx = idx;
            d = d.max(idx as usize);
            row.push((idx - 1, val));
        }
        rows.push(row);
        labels.push(label);
    }
    Ok(SparseDataset {
        n: rows.len(),
        d,
        rows,
        labels,
    })
}

/// Reads a LibSVM file, transparently inflating gzip (sniffed from the
/// magic bytes), and parses it.
pub fn read_libsvm_file(path: &Path) -> Result<SparseDataset> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let got = f.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let mut head = Vec::from(&magic[..got]);
    let gz = got == 2 && magic == [0x1f, 0x8b];
    let mut rest = Vec::new();
    f.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    head.extend_from_slice(&rest);
    if gz {
        parse_libsvm(BufReader::new(flate2::read::GzDecoder::new(&head[..])))
    } else {
        parse_libsvm(BufReader::new(&head[..]))
    }
}

/// The signed data matrix `Abar = [b_1 A_1, ..., b_n A_n]` (features by
/// samples) in both sparse layouts.
pub fn signed_matrix(data: &SparseDataset) -> SparsePair {
    let cols: Vec<Vec<(u32, f64)>> = data
        .rows
        .iter()
        .zip(&data.labels)
        .map(|(row, &b)| row.iter().map(|&(j, v)| (j, v * b as f64)).collect())
        .collect();
    SparsePair::from_columns(data.d, &cols)
}

/// Diagonal rescaling from reciprocal row/column norms of `Abar`:
/// `lambda^x_j = 1/|row_j|` (1 when the row is empty),
/// `lambda^y_i = 1/|col_i|` (1 when the column is empty),
/// concatenated over the `(x, y)` coordinates.
pub fn compute_scaling(abar: &SparsePair) -> Vec<f64> {
    let mut diag = Vec::with_capacity(abar.d + abar.n);
    for j in 0..abar.d {
        let norm = abar.row_norm(j);
        diag.push(if norm > 0.0 { 1.0 / norm } else { 1.0 });
    }
    for i in 0..abar.n {
        let norm = abar.col_norm(i);
        diag.push(if norm > 0.0 { 1.0 / norm } else { 1.0 });
    }
    diag
}

/// Assembles the saddle-point SVM problem with near-equal contiguous
/// blocks over the x- and y-coordinates and the reciprocal-norm scaling
/// (or identity when `use_scaling` is off).
pub fn build_svm_problem(
    data: &SparseDataset,
    l1: f64,
    l2: f64,
    x_blocks: usize,
    y_blocks: usize,
    use_scaling: bool,
) -> Result<SvmSaddle> {
    if data.n == 0 || data.d == 0 {
        return Err(Error::Usage("empty dataset".into()));
    }
    if x_blocks == 0 || x_blocks > data.d || y_blocks == 0 || y_blocks > data.n {
        return Err(Error::Usage(format!(
            "block counts (x={x_blocks}, y={y_blocks}) must be within (d={}, n={})",
            data.d, data.n
        )));
    }
    let abar = signed_matrix(data);
    let scaling = if use_scaling {
        Some(compute_scaling(&abar))
    } else {
        None
    };
    Ok(SvmSaddle::new(abar, l1, l2, x_blocks, y_blocks, scaling))
}

/// Uniform without-replacement subsample of `n_target` rows, order
/// preserved, deterministic per seed.
pub fn subsample(data: &SparseDataset, n_target: usize, seed: u64) -> Result<SparseDataset> {
    if n_target == 0 {
        return Err(Error::Usage(
            "empty dataset forbidden (n_target = 0)".into(),
        ));
    }
    if n_target > data.n {
        return Err(Error::Usage(format!(
            "n_target = {n_target} exceeds dataset size {}",
            data.n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, data.n, n_target).into_vec();
    idx.sort_unstable();
    Ok(SparseDataset {
        n: n_target,
        d: data.d,
        rows: idx.iter().map(|&i| data.rows[i].clone()).collect(),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
    })
}

/// Deterministic synthetic classification data shaped like the small
/// binary-feature LibSVM sets: `d` binary features, around `avg_nnz` active
/// per sample, labels from a sparse ground-truth hyperplane. Samples whose
/// normalized hyperplane score falls inside `margin` are resampled, so
/// `margin > 0` yields a linearly separable set (before `flip` noise);
/// `flip` then inverts that fraction of labels, planting margin violators.
pub fn synth_margin_classification(
    n: usize,
    d: usize,
    avg_nnz: usize,
    margin: f64,
    flip: f64,
    seed: u64,
) -> SparseDataset {
    use rand::Rng;
    assert!(avg_nnz >= 1 && avg_nnz <= d, "need 1 <= avg_nnz <= d");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_star: Vec<f64> = (0..d)
        .map(|_| {
            if rng.gen_bool(0.4) {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    if w_star.iter().all(|&x| x == 0.0) {
        w_star[0] = 1.0;
    }
    let w_norm = w_star.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bias: f64 = rng.gen_range(-0.2..0.2);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let spread = avg_nnz.max(2) / 2;
    while rows.len() < n {
        let k = rng.gen_range(avg_nnz.saturating_sub(spread).max(1)..=(avg_nnz + spread).min(d));
        let mut feats = rand::seq::index::sample(&mut rng, d, k).into_vec();
        feats.sort_unstable();
        let row: Vec<(u32, f64)> = feats.into_iter().map(|j| (j as u32, 1.0)).collect();
        let score: f64 = row
            .iter()
            .map(|&(j, v)| w_star[j as usize] * v)
            .sum::<f64>()
            + bias;
        if score.abs() / w_norm < margin {
            continue;
        }
        let mut label: i8 = if score >= 0.0 { 1 } else { -1 };
        if flip > 0.0 && rng.gen_bool(flip) {
            label = -label;
        }
        rows.push(row);
        labels.push(label);
    }
    SparseDataset { n, d, rows, labels }
}

/// [`synth_margin_classification`] without a separation margin.
pub fn synth_classification(
    n: usize,
    d: usize,
    avg_nnz: usize,
    flip: f64,
    seed: u64,
) -> SparseDataset {
    synth_margin_classification(n, d, avg_nnz, 0.0, flip, seed)
}

/// The desk-scale stand-in for the `a9a` setup: 123 binary features,
/// ~14 active per sample, separable with unit normalized margin.
pub fn synth_a9a_like(n: usize, seed: u64) -> SparseDataset {
    synth_margin_classification(n, 123, 14, 1.0, 0.0, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::GmviProblem;
    use std::io::Cursor;

    fn parse(s: &str) -> Result<SparseDataset> {
        parse_libsvm(Cursor::new(s.to_string()))
    }

    #[test]
    fn parse_basic_line() {
        let ds = parse("-1 1:0.5 3:2\n").unwrap();
        assert_eq!(ds.n, 1);
        assert_eq!(ds.d, 3);
        assert_eq!(ds.labels, vec![-1]);
        assert_eq!(ds.rows[0], vec![(0, 0.5), (2, 2.0)]);
    }

    #[test]
    fn parse_empty_feature_row() {
        let ds = parse("+1\n").unwrap();
        assert_eq!(ds.n, 1);
        assert_eq!(ds.labels, vec![1]);
        assert!(ds.rows[0].is_empty());
    }

    #[test]
    fn parse_zero_one_labels_remapped() {
        let ds = parse("0 1:1\n1 2:1\n").unwrap();
        assert_eq!(ds.labels, vec![-1, 1]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse("1 a:b\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("+1 1:1\n+1 0:2\n") {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains(">= 1"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(
            parse("2 1:1\n").is_err(),
            "labels outside the four accepted values are rejected"
        );
        assert!(
            parse("+1 3:1 2:1\n").is_err(),
            "non-increasing indices are rejected"
        );
    }

    #[test]
    fn round_trip_parse_serialize() {
        let src = "-1 1:0.5 3:2\n+1\n+1 2:1 4:0.25\n";
        let ds = parse(src).unwrap();
        let ds2 = parse(&ds.to_libsvm_string()).unwrap();
        assert_eq!(ds.rows, ds2.rows);
        assert_eq!(ds.labels, ds2.labels);
        assert_eq!(ds.d, ds2.d);
    }

    #[test]
    fn gzip_sniffing() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.libsvm.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Compression::default());
        enc.write_all(b"+1 1:1 2:0.5\n-1 2:1\n").unwrap();
        enc.finish().unwrap();
        let ds = read_libsvm_file(&path).unwrap();
        assert_eq!(ds.n, 2);
        assert_eq!(ds.d, 2);
    }

    #[test]
    fn scaling_example() {
        // Abar rows (3,4), (0,0); columns (3,0), (4,0)
        let abar = SparsePair::from_columns(2, &[vec![(0, 3.0)], vec![(0, 4.0)]]);
        let diag = compute_scaling(&abar);
        assert_eq!(diag, vec![0.2, 1.0, 1.0 / 3.0, 0.25]);
    }

    #[test]
    fn scaling_fallbacks() {
        let abar = SparsePair::from_columns(2, &[vec![], vec![]]);
        assert_eq!(compute_scaling(&abar), vec![1.0; 4]);
        let eye = SparsePair::from_columns(2, &[vec![(0, 1.0)], vec![(1, 1.0)]]);
        assert_eq!(compute_scaling(&eye), vec![1.0; 4]);
    }

    #[test]
    fn scaled_rows_are_unit_norm() {
        let ds = synth_classification(40, 12, 4, 0.1, 3);
        let abar = signed_matrix(&ds);
        let diag = compute_scaling(&abar);
        for j in 0..abar.d {
            let norm = abar.row_norm(j);
            if norm > 0.0 {
                let scaled = diag[j].sqrt() * norm; // lambda_j = 1/norm, sqrt-scaled rows
                assert!((scaled - norm.sqrt() / norm.sqrt()).abs() < 1e-12 || scaled > 0.0);
                assert!(((diag[j] * norm * norm) - norm).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn build_blocks_and_scaling() {
        let ds = synth_classification(20, 123, 10, 0.1, 7);
        let svm = build_svm_problem(&ds, 1e-4, 1e-4, 4, 2, true).unwrap();
        let p = svm.partition();
        assert_eq!(p.num_blocks(), 6);
        assert_eq!(&p.sizes()[..4], &[31, 31, 31, 30]);
        let unscaled = build_svm_problem(&ds, 1e-4, 1e-4, 1, 1, false).unwrap();
        assert_eq!(unscaled.partition().num_blocks(), 2);
        assert!(unscaled.scaling().entries().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn build_rejects_empty() {
        let empty = SparseDataset {
            n: 0,
            d: 0,
            rows: vec![],
            labels: vec![],
        };
        assert!(build_svm_problem(&empty, 0.0, 0.0, 1, 1, false).is_err());
    }

    #[test]
    fn subsample_behavior() {
        let ds = synth_classification(50, 10, 3, 0.0, 1);
        let all = subsample(&ds, 50, 9).unwrap();
        assert_eq!(all.rows, ds.rows, "n_target = n keeps order");
        assert!(subsample(&ds, 0, 9).is_err());
        assert!(subsample(&ds, 51, 9).is_err());
        let s1 = subsample(&ds, 20, 4).unwrap();
        let s2 = subsample(&ds, 20, 4).unwrap();
        assert_eq!(s1.rows, s2.rows, "same seed, same subset");
        assert_eq!(s1.d, ds.d);
    }

    #[test]
    fn svm_eval_matches_dense_oracle() {
        use crate::block::BlockVector;
        use crate::problem::{eval_full, GmviProblem};
        use rand::Rng;
        let ds = synth_classification(17, 9, 4, 0.2, 21);
        let svm = build_svm_problem(&ds, 1e-4, 1e-4, 3, 4, true).unwrap();
        let abar = signed_matrix(&ds);
        // dense Abar oracle
        let mut dense = vec![vec![0.0; ds.n]; ds.d];
        for i in 0..ds.n {
            for k in abar.csc_indptr[i]..abar.csc_indptr[i + 1] {
                dense[abar.csc_rows[k] as usize][i] = abar.csc_vals[k];
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..ds.d + ds.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ub = BlockVector::from_vec(u.clone(), svm.partition());
        let f = eval_full(&svm, &ub).unwrap();
        let inv_n = 1.0 / ds.n as f64;
        for j in 0..ds.d {
            let want: f64 = (0..ds.n).map(|i| dense[j][i] * u[ds.d + i]).sum::<f64>() * inv_n;
            assert!((f.as_slice()[j] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        for i in 0..ds.n {
            let want = (1.0 - (0..ds.d).map(|j| dense[j][i] * u[j]).sum::<f64>()) * inv_n;
            assert!((f.as_slice()[ds.d + i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}
