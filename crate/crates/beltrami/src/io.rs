//! File formats: point clouds as self-describing JSON, operators in Matrix
//! Market coordinate format.

use crate::error::{Error, Result};
use crate::manifolds::PointCloud;
use crate::sparse::Csr;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(BufWriter::new(file), cloud)?;
    Ok(())
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let file = std::fs::File::open(path)?;
    let cloud: PointCloud = serde_json::from_reader(BufReader::new(file))?;
    let expected = (
        cloud.len * cloud.n,
        cloud.len * cloud.d * cloud.n,
        cloud.len * cloud.d,
        cloud.len,
    );
    if cloud.points.len() != expected.0
        || cloud.frames.len() != expected.1
        || cloud.params.len() != expected.2
        || cloud.f_values.len() != expected.3
        || cloud.lap_values.len() != expected.3
        || cloud.h_values.len() != expected.3
    {
        return Err(Error::Format(format!(
            "inconsistent cloud file {}: array lengths do not match len/d/n",
            path.display()
        )));
    }
    Ok(cloud)
}

/// Writes a sparse matrix in Matrix Market coordinate format (1-based,
/// general real). Values print in shortest round-trip form.
pub fn write_matrix_market(m: &Csr, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.n_rows, m.n_cols, m.nnz())?;
    for i in 0..m.n_rows {
        let (cols, vals) = m.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            writeln!(w, "{} {} {:e}", i + 1, c + 1, v)?;
        }
    }
    Ok(())
}

pub fn read_matrix_market(path: &Path) -> Result<Csr> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty Matrix Market file".into()))??;
    let h = header.to_ascii_lowercase();
    if !h.starts_with("%%matrixmarket") || !h.contains("coordinate") || !h.contains("real") {
        return Err(Error::Format(format!("unsupported Matrix Market header: {header}")));
    }
    if h.contains("symmetric") || h.contains("hermitian") || h.contains("skew") {
        return Err(Error::Format("only `general` symmetry is supported".into()));
    }
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut seen = 0usize;
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut it = t.split_whitespace();
        if dims.is_none() {
            let r: usize = parse_tok(it.next(), "row count")?;
            let c: usize = parse_tok(it.next(), "column count")?;
            let nnz: usize = parse_tok(it.next(), "entry count")?;
            dims = Some((r, c, nnz));
            rows = vec![Vec::new(); r];
            continue;
        }
        let (r, c, nnz) = dims.unwrap();
        let i: usize = parse_tok(it.next(), "row index")?;
        let j: usize = parse_tok(it.next(), "column index")?;
        let v: f64 = parse_tok(it.next(), "value")?;
        if i < 1 || i > r || j < 1 || j > c {
            return Err(Error::Format(format!("entry ({i}, {j}) out of bounds {r}x{c}")));
        }
        rows[i - 1].push((j - 1, v));
        seen += 1;
        if seen > nnz {
            return Err(Error::Format("more entries than declared".into()));
        }
    }
    let (r, c, nnz) =
        dims.ok_or_else(|| Error::Format("Matrix Market file has no size line".into()))?;
    if seen != nnz {
        return Err(Error::Format(format!("expected {nnz} entries, found {seen}")));
    }
    Ok(Csr::from_rows(r, c, rows))
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Format(format!("missing {what}")))?
        .parse::<T>()
        .map_err(|_| Error::Format(format!("malformed {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::{ManifoldSpec, SamplingMode};

    #[test]
    fn cloud_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("beltrami_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cloud.json");
        let cloud = ManifoldSpec::FlatTorus3d.sample_points(120, SamplingMode::Random, 99).unwrap();
        write_cloud(&cloud, &path).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(cloud.points, back.points);
        assert_eq!(cloud.frames, back.frames);
        assert_eq!(cloud.h_values, back.h_values);
        assert_eq!(cloud.seed, back.seed);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn matrix_market_round_trip() {
        let dir = std::env::temp_dir().join("beltrami_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("op.mtx");
        let m = Csr::from_rows(
            3,
            3,
            vec![
                vec![(0, 1.5), (2, -2.25e-7)],
                vec![(1, std::f64::consts::PI)],
                vec![(0, -1.0), (1, 4.0), (2, 0.125)],
            ],
        );
        write_matrix_market(&m, &path).unwrap();
        let back = read_matrix_market(&path).unwrap();
        assert_eq!(m.indptr, back.indptr);
        assert_eq!(m.indices, back.indices);
        assert_eq!(m.data, back.data);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn malformed_matrix_market_is_rejected() {
        let dir = std::env::temp_dir().join("beltrami_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.mtx");
        std::fs::write(&path, "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n")
            .unwrap();
        assert!(matches!(read_matrix_market(&path), Err(Error::Format(_))));
        std::fs::remove_file(&path).unwrap();
    }
}
