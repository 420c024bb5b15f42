//! Synthetic data, seeded randomness, file formats and splitting.
//!
//! All randomness goes through [`Rng`], ChaCha8 from `rand_chacha` 0.9,
//! whose output stream is fixed by the algorithm and identical across
//! platforms.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matcomp::{McState, ObservedMatrix};
use crate::matrix::{self, Matrix};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || rng.random::<f64>())
}

#[derive(Debug, Clone)]
pub struct SyntheticOnmf {
    pub x: Matrix,
    pub u_true: Matrix,
    /// One nonzero per column, rows of unit norm.
    pub v_true: Matrix,
    /// Row index of the nonzero of each column of `v_true`.
    pub labels: Vec<usize>,
}

const MAX_CLUSTER_RETRIES: usize = 100;

/// `X = UV + noise·(‖UV‖_F/‖R‖_F)·R` with `U, R` uniform on `[0, 1]` and `V`
/// an orthogonal nonnegative matrix with one uniform nonzero per column at a
/// uniformly chosen row, rows normalized.
///
/// Redraws `V` (up to 100 times) until every cluster receives a column.
pub fn gen_synthetic_onmf(m: usize, n: usize, r: usize, noise: f64, seed: u64) -> Result<SyntheticOnmf> {
    if r == 0 || r > m.min(n) {
        return Err(Error::Argument(format!("rank {r} must lie in [1, min({m}, {n})]")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Argument(format!("noise level must be nonnegative, got {noise}")));
    }
    let mut rng = rng(seed);
    let u = uniform_matrix(&mut rng, m, r);
    let (v, labels) = (0..MAX_CLUSTER_RETRIES)
        .find_map(|_| {
            let mut v = Matrix::zeros((r, n));
            let mut labels = Vec::with_capacity(n);
            for j in 0..n {
                let k = rng.random_range(0..r);
                v[[k, j]] = rng.random::<f64>();
                labels.push(k);
            }
            let all_nonempty = v.rows().into_iter().all(|row| row.iter().any(|&x| x > 0.0));
            all_nonempty.then_some((v, labels))
        })
        .ok_or_else(|| {
            Error::Argument(format!(
                "could not give all {r} clusters a column in {MAX_CLUSTER_RETRIES} draws (n = {n})"
            ))
        })?;
    let mut v = v;
    for mut row in v.rows_mut() {
        let nrm = row.dot(&row).sqrt();
        if nrm > 0.0 {
            row /= nrm;
        }
    }
    let uv = u.dot(&v);
    let x = if noise > 0.0 {
        let r_mat = uniform_matrix(&mut rng, m, n);
        let scale = noise * matrix::norm(&uv) / matrix::norm(&r_mat);
        &uv + &(r_mat * scale)
    } else {
        uv
    };
    Ok(SyntheticOnmf { x, u_true: u, v_true: v, labels })
}

/// A rank-`r` matrix `A = U*V*` with uniform `[0, 1]` factors, observed at
/// `round(fraction·m·n)` positions drawn uniformly without replacement.
pub fn gen_low_rank_ratings(m: usize, n: usize, r: usize, fraction: f64, seed: u64) -> Result<ObservedMatrix> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("observed fraction must lie in (0, 1], got {fraction}")));
    }
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::Argument("ratings dimensions and rank must be positive".into()));
    }
    let mut rng = rng(seed);
    let u = uniform_matrix(&mut rng, m, r);
    let v = uniform_matrix(&mut rng, r, n);
    let count = ((fraction * (m * n) as f64).round() as usize).max(1);
    let mut positions = index::sample(&mut rng, m * n, count).into_vec();
    positions.sort_unstable();
    let entries = positions
        .into_iter()
        .map(|p| {
            let (i, j) = (p / n, p % n);
            (i, j, u.row(i).dot(&v.column(j)))
        })
        .collect();
    ObservedMatrix::new(m, n, entries)
}

/// Uniform `[0, s]` factors with `s = √(4μ/r)`, so that `E[(UV)_ij] = μ`
/// where `μ` is the mean absolute observed value.
pub fn mc_random_init(obs: &ObservedMatrix, r: usize, seed: u64) -> Result<McState> {
    if r == 0 || obs.is_empty() {
        return Err(Error::Argument("random init needs a positive rank and observations".into()));
    }
    let mean = obs.entries().iter().map(|e| e.2.abs()).sum::<f64>() / obs.len() as f64;
    let scale = (4.0 * mean / r as f64).sqrt();
    let mut rng = rng(seed);
    let u = uniform_matrix(&mut rng, obs.rows(), r) * scale;
    let v = uniform_matrix(&mut rng, r, obs.cols()) * scale;
    Ok(McState { u, v })
}

/// Uniformly random partition of the observations with
/// `round(train_fraction·N)` of them in the training set. Both halves keep
/// the original observation order.
pub fn train_test_split(
    obs: &ObservedMatrix,
    train_fraction: f64,
    seed: u64,
) -> Result<(ObservedMatrix, ObservedMatrix)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let total = obs.len();
    let n_train = (train_fraction * total as f64).round() as usize;
    let mut rng = rng(seed);
    let mut in_train = vec![false; total];
    for k in index::sample(&mut rng, total, n_train) {
        in_train[k] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = obs
        .entries()
        .iter()
        .zip(&in_train)
        .partition(|(_, &flag)| flag);
    let strip = |v: Vec<(&(usize, usize, f64), &bool)>| v.into_iter().map(|(e, _)| *e).collect();
    Ok((
        ObservedMatrix::new(obs.rows(), obs.cols(), strip(train))?,
        ObservedMatrix::new(obs.rows(), obs.cols(), strip(test))?,
    ))
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Comma-separated rows of decimal reals.
pub fn load_dense_csv(path: &Path) -> Result<Matrix> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| parse_error(path, lineno, format!("bad number `{}`: {e}", field.trim())))?;
            if !v.is_finite() {
                return Err(parse_error(path, lineno, "non-finite entry"));
            }
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(parse_error(path, lineno, format!("expected {c} fields, found {count}")))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_error(path, 1, "empty matrix file"))?;
    matrix::from_row_major(rows, cols, data)
}

pub fn dense_csv_string(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn save_dense_csv(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, dense_csv_string(m))?;
    Ok(())
}

const MM_HEADER: &str = "%%MatrixMarket matrix coordinate real general";

/// MatrixMarket coordinate files (real, general, 1-based indices).
pub fn load_matrix_market(path: &Path) -> Result<ObservedMatrix> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let header = header?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_error(path, 1, format!("expected `{MM_HEADER}`")));
    }
    if tokens[2] != "coordinate" || tokens[3] != "real" || tokens[4] != "general" {
        return Err(parse_error(path, 1, "only coordinate real general matrices are supported"));
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| parse_error(path, lineno, format!("bad integer `{s}`: {e}")))
        };
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(parse_error(path, lineno, "size line needs `rows cols nnz`"));
                }
                size = Some((int(fields[0])?, int(fields[1])?, int(fields[2])?));
            }
            Some((rows, cols, _)) => {
                if fields.len() != 3 {
                    return Err(parse_error(path, lineno, "entry line needs `row col value`"));
                }
                let (i, j) = (int(fields[0])?, int(fields[1])?);
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(parse_error(path, lineno, format!("index ({i}, {j}) out of range")));
                }
                let v: f64 = fields[2]
                    .parse()
                    .map_err(|e| parse_error(path, lineno, format!("bad value: {e}")))?;
                if !seen.insert((i, j)) {
                    return Err(parse_error(path, lineno, format!("duplicate entry ({i}, {j})")));
                }
                entries.push((i - 1, j - 1, v));
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| parse_error(path, 2, "missing size line"))?;
    if entries.len() != nnz {
        return Err(parse_error(
            path,
            0,
            format!("size line declares {nnz} entries, found {}", entries.len()),
        ));
    }
    ObservedMatrix::new(rows, cols, entries)
}

pub fn matrix_market_string(m: &ObservedMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MM_HEADER}");
    let _ = writeln!(out, "{} {} {}", m.rows(), m.cols(), m.len());
    for &(i, j, v) in m.entries() {
        let _ = writeln!(out, "{} {} {v:?}", i + 1, j + 1);
    }
    out
}

pub fn save_matrix_market(path: &Path, m: &ObservedMatrix) -> Result<()> {
    fs::write(path, matrix_market_string(m))?;
    Ok(())
}

/// Ratings with the original user and item ids of each dense index.
#[derive(Debug, Clone)]
pub struct Ratings {
    pub matrix: ObservedMatrix,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl Ratings {
    /// Sidecar listing `kind<TAB>dense_index<TAB>original_id` per line.
    pub fn id_map_string(&self) -> String {
        let mut out = String::new();
        for (k, id) in self.user_ids.iter().enumerate() {
            let _ = writeln!(out, "user\t{k}\t{id}");
        }
        for (k, id) in self.item_ids.iter().enumerate() {
            let _ = writeln!(out, "item\t{k}\t{id}");
        }
        out
    }
}

/// `user<sep>item<sep>rating[<sep>timestamp]` lines with `<sep>` either a
/// tab or `::`. Ids are remapped to dense 0-based indices in order of first
/// appearance.
pub fn load_ratings(path: &Path) -> Result<Ratings> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut users: HashMap<String, usize> = HashMap::new();
    let mut items: HashMap<String, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains("::") {
            trimmed.split("::").collect()
        } else {
            trimmed.split('\t').collect()
        };
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 3 or 4 fields, found {}", fields.len()),
            ));
        }
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| parse_error(path, lineno, format!("bad rating `{}`: {e}", fields[2])))?;
        if !rating.is_finite() {
            return Err(parse_error(path, lineno, "non-finite rating"));
        }
        let intern = |map: &mut HashMap<String, usize>, ids: &mut Vec<String>, key: &str| {
            *map.entry(key.to_string()).or_insert_with(|| {
                ids.push(key.to_string());
                ids.len() - 1
            })
        };
        let u = intern(&mut users, &mut user_ids, fields[0].trim());
        let i = intern(&mut items, &mut item_ids, fields[1].trim());
        if !seen.insert((u, i)) {
            return Err(parse_error(
                path,
                lineno,
                format!("duplicate rating for user `{}` item `{}`", fields[0], fields[1]),
            ));
        }
        entries.push((u, i, rating));
    }
    if entries.is_empty() {
        return Err(parse_error(path, 1, "no ratings"));
    }
    let matrix = ObservedMatrix::new(user_ids.len(), item_ids.len(), entries)?;
    Ok(Ratings { matrix, user_ids, item_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn rng_stream_is_fixed() {
        let a: Vec<u64> = (0..4).map({
            let mut r = rng(42);
            move |_| r.random::<u64>()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut r = rng(42);
            move |_| r.random::<u64>()
        }).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_noise_free_is_exact_factorization() {
        let s = gen_synthetic_onmf(12, 20, 3, 0.0, 7).unwrap();
        assert_eq!(s.x, s.u_true.dot(&s.v_true));
        let again = gen_synthetic_onmf(12, 20, 3, 0.0, 7).unwrap();
        assert_eq!(s.x, again.x);
    }

    #[test]
    fn synthetic_v_structure() {
        let s = gen_synthetic_onmf(10, 30, 4, 0.05, 3).unwrap();
        let gram = s.v_true.dot(&s.v_true.t());
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-12);
            }
        }
        for (j, col) in s.v_true.columns().into_iter().enumerate() {
            assert_eq!(col.iter().filter(|&&x| x != 0.0).count(), 1);
            assert!(col[s.labels[j]] > 0.0);
        }
    }

    #[test]
    fn synthetic_noise_level() {
        let s = gen_synthetic_onmf(20, 20, 2, 0.05, 1).unwrap();
        let uv = s.u_true.dot(&s.v_true);
        let ratio = matrix::norm(&(&s.x - &uv)) / matrix::norm(&uv);
        assert!((ratio - 0.05).abs() < 1e-12);
    }

    #[test]
    fn synthetic_rejects_impossible_clusters() {
        assert!(gen_synthetic_onmf(5, 3, 4, 0.0, 1).is_err());
    }

    #[test]
    fn random_init_matches_mean_scale() {
        let entries = (0..400).map(|k| (k / 20, k % 20, 3.0)).collect();
        let obs = ObservedMatrix::new(20, 20, entries).unwrap();
        let s = mc_random_init(&obs, 4, 9).unwrap();
        let mean = s.u.dot(&s.v).mean().unwrap();
        assert!((mean - 3.0).abs() < 0.6, "{mean}");
        assert_eq!(s, mc_random_init(&obs, 4, 9).unwrap());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let entries = (0..10).map(|k| (k, 0, k as f64)).collect();
        let obs = ObservedMatrix::new(10, 1, entries).unwrap();
        let (train, test) = train_test_split(&obs, 0.7, 5).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        let (train2, _) = train_test_split(&obs, 0.7, 5).unwrap();
        assert_eq!(train, train2);
        assert!(train_test_split(&obs, 1.0, 5).is_err());
    }

    #[test]
    fn dense_csv_round_trip_and_errors() {
        let m = array![[1.0, -2.5e-17, std::f64::consts::PI], [0.1, 1e300, -0.0]];
        let f = write_tmp(&dense_csv_string(&m));
        assert_eq!(load_dense_csv(f.path()).unwrap(), m);

        let one = write_tmp("4.5\n");
        assert_eq!(load_dense_csv(one.path()).unwrap(), array![[4.5]]);

        let ragged = write_tmp("1,2\n3\n");
        match load_dense_csv(ragged.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn matrix_market_minimal_and_errors() {
        let f = write_tmp("%%MatrixMarket matrix coordinate real general\n% comment\n2 2 1\n1 1 3.0\n");
        let m = load_matrix_market(f.path()).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 2));
        assert_eq!(m.entries(), &[(0, 0, 3.0)]);

        let oob = write_tmp("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n");
        assert!(matches!(load_matrix_market(oob.path()), Err(Error::Parse { line: 3, .. })));

        let dup = write_tmp("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n1 1 2.0\n");
        assert!(matches!(load_matrix_market(dup.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn matrix_market_round_trip() {
        let obs = ObservedMatrix::new(3, 4, vec![(0, 3, 1.5), (2, 0, -0.25), (1, 1, 7e-9)]).unwrap();
        let f = write_tmp(&matrix_market_string(&obs));
        assert_eq!(load_matrix_market(f.path()).unwrap(), obs);
    }

    #[test]
    fn ratings_formats() {
        let tab = write_tmp("10\t7\t4.5\n11\t7\t3\n10\t8\t1\t978300760\n");
        let r = load_ratings(tab.path()).unwrap();
        assert_eq!((r.matrix.rows(), r.matrix.cols()), (2, 2));
        assert_eq!(r.matrix.entries(), &[(0, 0, 4.5), (1, 0, 3.0), (0, 1, 1.0)]);
        assert_eq!(r.user_ids, vec!["10", "11"]);
        assert!(r.id_map_string().contains("item\t1\t8"));

        let ml = write_tmp("1::1193::5::978300760\n1::661::3::978302109\n");
        let r = load_ratings(ml.path()).unwrap();
        assert_eq!(r.matrix.len(), 2);

        let dup = write_tmp("1\t2\t3\n1\t2\t4\n");
        assert!(matches!(load_ratings(dup.path()), Err(Error::Parse { line: 2, .. })));
    }
}
