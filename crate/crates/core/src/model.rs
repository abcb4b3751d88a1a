//! Affine LPV models, scheduling datasets and per-row normalization.
//!
//! Matrices are vectorized column-major throughout (`vec(M)` stacks columns),
//! which matches nalgebra's storage order.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serde adapter: dense matrices as row-major nested arrays.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], cols_hint: usize) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(cols_hint, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows, 0).map_err(D::Error::custom)
    }
}

/// Serde adapter: vectors as plain arrays.
pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Column-major vectorization.
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::dim(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v))
}

/// Closed interval bound for one coordinate of a compact box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// `M(ρ) = M_0 + Σ_i M_i ρ_i` with `M = [A B; C D]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct AffineLpvModel {
    nx: usize,
    nu: usize,
    ny: usize,
    m0: DMatrix<f64>,
    coeffs: Vec<DMatrix<f64>>,
    sched_box: Option<Vec<Interval>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    nx: usize,
    nu: usize,
    ny: usize,
    m0: Vec<Vec<f64>>,
    coeffs: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    sched_box: Option<Vec<Interval>>,
}

impl TryFrom<ModelFile> for AffineLpvModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let cols = f.nx + f.nu;
        let m0 = rows::from_rows(&f.m0, cols).map_err(Error::invalid)?;
        let coeffs = f
            .coeffs
            .iter()
            .map(|c| rows::from_rows(c, cols).map_err(Error::invalid))
            .collect::<Result<Vec<_>>>()?;
        let model = AffineLpvModel::new(f.nx, f.nu, f.ny, m0, coeffs)?;
        match f.sched_box {
            Some(b) => model.with_sched_box(b),
            None => Ok(model),
        }
    }
}

impl From<AffineLpvModel> for ModelFile {
    fn from(m: AffineLpvModel) -> Self {
        ModelFile {
            nx: m.nx,
            nu: m.nu,
            ny: m.ny,
            m0: rows::to_rows(&m.m0),
            coeffs: m.coeffs.iter().map(rows::to_rows).collect(),
            sched_box: m.sched_box,
        }
    }
}

impl AffineLpvModel {
    pub fn new(
        nx: usize,
        nu: usize,
        ny: usize,
        m0: DMatrix<f64>,
        coeffs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let shape = (nx + ny, nx + nu);
        if m0.shape() != shape {
            return Err(Error::dim(format!(
                "M0 is {:?}, expected {:?} from nx={nx}, nu={nu}, ny={ny}",
                m0.shape(),
                shape
            )));
        }
        if let Some((i, c)) = coeffs.iter().enumerate().find(|(_, c)| c.shape() != shape) {
            return Err(Error::dim(format!(
                "coefficient {} is {:?}, expected {:?}",
                i + 1,
                c.shape(),
                shape
            )));
        }
        Ok(Self {
            nx,
            nu,
            ny,
            m0,
            coeffs,
            sched_box: None,
        })
    }

    /// Builds a model from `vec(M̂_0)` and a `ν × k` matrix whose columns are
    /// `vec(M̂_i)`.
    pub fn from_vectorized(
        nx: usize,
        nu: usize,
        ny: usize,
        m0_vec: &DVector<f64>,
        columns: &DMatrix<f64>,
    ) -> Result<Self> {
        let (m, n) = (nx + ny, nx + nu);
        if columns.nrows() != m * n {
            return Err(Error::dim(format!(
                "coefficient columns have {} rows, expected {}",
                columns.nrows(),
                m * n
            )));
        }
        let m0 = unvectorize(m0_vec.as_slice(), m, n)?;
        let coeffs = columns
            .column_iter()
            .map(|c| unvectorize(c.as_slice(), m, n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(nx, nu, ny, m0, coeffs)
    }

    pub fn with_sched_box(mut self, sched_box: Vec<Interval>) -> Result<Self> {
        if sched_box.len() != self.n_rho() {
            return Err(Error::dim(format!(
                "scheduling box has {} intervals for {} scheduling variables",
                sched_box.len(),
                self.n_rho()
            )));
        }
        self.sched_box = Some(sched_box);
        Ok(self)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn n_rho(&self) -> usize {
        self.coeffs.len()
    }

    pub fn rows(&self) -> usize {
        self.nx + self.ny
    }

    pub fn cols(&self) -> usize {
        self.nx + self.nu
    }

    /// Length `ν = m·n` of a vectorized system matrix.
    pub fn vec_len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn m0(&self) -> &DMatrix<f64> {
        &self.m0
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn sched_box(&self) -> Option<&[Interval]> {
        self.sched_box.as_deref()
    }

    fn check_rho(&self, rho: &DVector<f64>) -> Result<()> {
        if rho.len() != self.n_rho() {
            return Err(Error::dim(format!(
                "scheduling vector has length {}, model expects {}",
                rho.len(),
                self.n_rho()
            )));
        }
        Ok(())
    }

    /// `M_0 + Σ_i M_i ρ_i`.
    pub fn eval(&self, rho: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_rho(rho)?;
        let mut m = self.m0.clone();
        for (c, &r) in self.coeffs.iter().zip(rho.iter()) {
            m += c * r;
        }
        Ok(m)
    }

    /// `Σ_i vec(M_i) ρ_i`, the variation around `M_0`.
    pub fn vectorize_variation(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rho(rho)?;
        Ok(self.coeff_matrix() * rho)
    }

    /// `ν × n_ρ` matrix whose i-th column is `vec(M_i)`.
    pub fn coeff_matrix(&self) -> DMatrix<f64> {
        let nu = self.vec_len();
        let mut w = DMatrix::zeros(nu, self.n_rho());
        for (i, c) in self.coeffs.iter().enumerate() {
            w.column_mut(i).copy_from_slice(c.as_slice());
        }
        w
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// The four state-space blocks of a partitioned system matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Blocks {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl Blocks {
    pub fn assemble(&self) -> DMatrix<f64> {
        let (nx, nu, ny) = (self.a.nrows(), self.b.ncols(), self.c.nrows());
        let mut m = DMatrix::zeros(nx + ny, nx + nu);
        m.view_mut((0, 0), (nx, nx)).copy_from(&self.a);
        m.view_mut((0, nx), (nx, nu)).copy_from(&self.b);
        m.view_mut((nx, 0), (ny, nx)).copy_from(&self.c);
        m.view_mut((nx, nx), (ny, nu)).copy_from(&self.d);
        m
    }
}

pub fn split_blocks(m: &DMatrix<f64>, nx: usize, nu: usize, ny: usize) -> Result<Blocks> {
    if m.shape() != (nx + ny, nx + nu) {
        return Err(Error::dim(format!(
            "matrix is {:?}, partition nx={nx}, nu={nu}, ny={ny} needs {:?}",
            m.shape(),
            (nx + ny, nx + nu)
        )));
    }
    Ok(Blocks {
        a: m.view((0, 0), (nx, nx)).into_owned(),
        b: m.view((0, nx), (nx, nu)).into_owned(),
        c: m.view((nx, 0), (ny, nx)).into_owned(),
        d: m.view((nx, nx), (ny, nu)).into_owned(),
    })
}

/// Record of the state trajectory that produced a dataset's columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySource {
    #[serde(with = "rows")]
    pub states: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_rows")]
    pub inputs: Option<DMatrix<f64>>,
}

mod opt_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(super::rows::to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        rows.map(|r| super::rows::from_rows(&r, 0).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Scheduling data matrix `Γ` (`n_ρ × N`), one sample per column.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    gamma: DMatrix<f64>,
    sample_time: f64,
    source: Option<TrajectorySource>,
}

#[derive(Serialize, Deserialize)]
struct DatasetSidecar {
    sample_time: f64,
    n_rho: usize,
    n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<TrajectorySource>,
}

impl TrajectoryDataset {
    pub fn new(gamma: DMatrix<f64>, sample_time: f64) -> Result<Self> {
        if gamma.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        if !(sample_time > 0.0 && sample_time.is_finite()) {
            return Err(Error::invalid(format!(
                "sample time must be positive, got {sample_time}"
            )));
        }
        if gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite entries"));
        }
        Ok(Self {
            gamma,
            sample_time,
            source: None,
        })
    }

    pub fn with_source(mut self, source: TrajectorySource) -> Result<Self> {
        if source.states.ncols() != self.n_samples() {
            return Err(Error::dim("source trajectory length differs from dataset"));
        }
        self.source = Some(source);
        Ok(self)
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    pub fn source(&self) -> Option<&TrajectorySource> {
        self.source.as_ref()
    }

    pub fn n_rho(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.gamma.ncols()
    }

    /// Column `i` (zero based), i.e. `ρ(i·T_s)`.
    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.gamma.column(i).into_owned()
    }

    pub fn check_model(&self, model: &AffineLpvModel) -> Result<()> {
        if model.n_rho() != self.n_rho() {
            return Err(Error::dim(format!(
                "dataset has n_rho = {}, model has n_rho = {}",
                self.n_rho(),
                model.n_rho()
            )));
        }
        Ok(())
    }

    /// Path of the JSON sidecar that accompanies a dataset CSV.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// CSV text: a header row `s0,s1,...` then one row per scheduling
    /// coordinate, so every column is one sample.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record((0..self.n_samples()).map(|k| format!("s{k}")))?;
        for row in self.gamma.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }

    /// Parses the CSV layout of [`Self::to_csv_string`]; the header row is optional.
    pub fn parse_csv(text: &str, sample_time: f64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(v) => rows.push(v),
                Err(_) if line == 0 => continue,
                Err(e) => {
                    return Err(Error::invalid(format!(
                        "dataset csv line {}: {e}",
                        line + 1
                    )))
                }
            }
        }
        let gamma = rows::from_rows(&rows, 0).map_err(Error::invalid)?;
        Self::new(gamma, sample_time)
    }

    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        fs::write(csv_path, self.to_csv_string()?)?;
        let sidecar = DatasetSidecar {
            sample_time: self.sample_time,
            n_rho: self.n_rho(),
            n_samples: self.n_samples(),
            source: self.source.clone(),
        };
        fs::write(
            Self::sidecar_path(csv_path),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }

    pub fn load(csv_path: impl AsRef<Path>) -> Result<Self> {
        let csv_path = csv_path.as_ref();
        let sidecar: DatasetSidecar =
            serde_json::from_str(&fs::read_to_string(Self::sidecar_path(csv_path))?)?;
        let ds = Self::parse_csv(&fs::read_to_string(csv_path)?, sidecar.sample_time)?;
        if ds.n_rho() != sidecar.n_rho || ds.n_samples() != sidecar.n_samples {
            return Err(Error::dim(format!(
                "csv is {}x{}, sidecar declares {}x{}",
                ds.n_rho(),
                ds.n_samples(),
                sidecar.n_rho,
                sidecar.n_samples
            )));
        }
        match sidecar.source {
            Some(src) => ds.with_source(src),
            None => Ok(ds),
        }
    }
}

/// Per-row affine map taking the fitting data into `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    #[serde(with = "vector")]
    offset: DVector<f64>,
    #[serde(with = "vector")]
    scale: DVector<f64>,
}

impl Normalizer {
    pub fn new(offset: DVector<f64>, scale: DVector<f64>) -> Result<Self> {
        if offset.len() != scale.len() {
            return Err(Error::dim("offset and scale lengths differ"));
        }
        if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("normalizer scales must be positive"));
        }
        Ok(Self { offset, scale })
    }

    /// Midrange offset and half-range scale per row. Constant rows get scale 1.
    pub fn fit(gamma: &DMatrix<f64>) -> Result<Self> {
        if gamma.ncols() == 0 || gamma.nrows() == 0 {
            return Err(Error::invalid("cannot fit a normalizer to an empty matrix"));
        }
        let mut offset = DVector::zeros(gamma.nrows());
        let mut scale = DVector::zeros(gamma.nrows());
        for (i, row) in gamma.row_iter().enumerate() {
            let (lo, hi) = (row.min(), row.max());
            offset[i] = 0.5 * (hi + lo);
            let half = 0.5 * (hi - lo);
            scale[i] = if half > 0.0 { half } else { 1.0 };
        }
        Self::new(offset, scale)
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::dim(format!(
                "normalizer has dimension {}, got {len}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(rho.len())?;
        Ok((rho - &self.offset).component_div(&self.scale))
    }

    pub fn invert(&self, rho_n: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(rho_n.len())?;
        Ok(rho_n.component_mul(&self.scale) + &self.offset)
    }

    /// Normalizes every column of `gamma`.
    pub fn apply_matrix(&self, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(gamma.nrows())?;
        let mut out = gamma.clone();
        for mut col in out.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - self.offset[i]) / self.scale[i];
            }
        }
        Ok(out)
    }

    pub fn invert_matrix(&self, gamma_n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(gamma_n.nrows())?;
        let mut out = gamma_n.clone();
        for mut col in out.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = col[i] * self.scale[i] + self.offset[i];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_model() -> AffineLpvModel {
        // nx = 1, nu = 0, ny = 0 gives a 1x1 system matrix.
        AffineLpvModel::new(
            1,
            0,
            0,
            DMatrix::from_element(1, 1, 1.0),
            vec![DMatrix::from_element(1, 1, 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn eval_scalar() {
        let m = scalar_model();
        let out = m.eval(&DVector::from_vec(vec![3.0])).unwrap();
        assert_eq!(out[(0, 0)], 7.0);
    }

    #[test]
    fn eval_without_coefficients_is_m0() {
        let m0 = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let m = AffineLpvModel::new(2, 1, 1, m0.clone(), vec![]).unwrap();
        assert_eq!(m.eval(&DVector::zeros(0)).unwrap(), m0);
    }

    #[test]
    fn eval_rejects_bad_length() {
        let m = scalar_model();
        assert!(matches!(
            m.eval(&DVector::zeros(2)),
            Err(Error::Dimension(_))
        ));
        assert!(m.vectorize_variation(&DVector::zeros(0)).is_err());
    }

    #[test]
    fn new_rejects_inconsistent_shapes() {
        assert!(AffineLpvModel::new(2, 1, 1, DMatrix::zeros(3, 2), vec![]).is_err());
        assert!(
            AffineLpvModel::new(1, 1, 1, DMatrix::zeros(2, 2), vec![DMatrix::zeros(2, 3)])
                .is_err()
        );
    }

    #[test]
    fn vectorization_is_column_major() {
        let m1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let model = AffineLpvModel::new(1, 1, 1, DMatrix::zeros(2, 2), vec![m1]).unwrap();
        let v = model.vectorize_variation(&DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        let zero = model.vectorize_variation(&DVector::zeros(1)).unwrap();
        assert_eq!(zero, DVector::zeros(4));
    }

    #[test]
    fn split_identity() {
        let m = DMatrix::<f64>::identity(6, 6);
        let b = split_blocks(&m, 4, 2, 2).unwrap();
        assert_eq!(b.a, DMatrix::identity(4, 4));
        assert_eq!(b.b, DMatrix::zeros(4, 2));
        assert_eq!(b.c, DMatrix::zeros(2, 4));
        assert_eq!(b.d, DMatrix::identity(2, 2));
        assert_eq!(b.assemble(), m);
        assert!(split_blocks(&m, 4, 1, 2).is_err());
    }

    #[test]
    fn normalizer_two_point_and_constant_rows() {
        let g = DMatrix::from_row_slice(2, 3, &[0.0, 2.0, 1.0, 5.0, 5.0, 5.0]);
        let n = Normalizer::fit(&g).unwrap();
        assert_eq!(n.offset().as_slice(), &[1.0, 5.0]);
        assert_eq!(n.scale().as_slice(), &[1.0, 1.0]);
        let gn = n.apply_matrix(&g).unwrap();
        assert_eq!(gn.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0, 0.0]);
        assert_eq!(gn.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
        // ρ = offset maps to 0, ρ_n = 1 maps to offset + scale.
        assert_eq!(n.apply(n.offset()).unwrap(), DVector::zeros(2));
        let one = n.invert(&DVector::from_element(2, 1.0)).unwrap();
        assert_eq!(one.as_slice(), &[2.0, 6.0]);
    }

    #[test]
    fn normalizer_rejects_empty() {
        assert!(Normalizer::fit(&DMatrix::zeros(3, 0)).is_err());
    }

    #[test]
    fn dataset_csv_round_trip_with_and_without_header() {
        let g = DMatrix::from_row_slice(2, 3, &[0.1, -2.5, 3.0, 1e-17, 4.0, 5.5]);
        let ds = TrajectoryDataset::new(g.clone(), 0.01).unwrap();
        let text = ds.to_csv_string().unwrap();
        assert!(text.starts_with("s0,s1,s2\n"));
        assert_eq!(TrajectoryDataset::parse_csv(&text, 0.01).unwrap().gamma(), &g);
        let headerless: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert_eq!(
            TrajectoryDataset::parse_csv(&headerless, 0.01).unwrap().gamma(),
            &g
        );
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let g = DMatrix::from_fn(3, 7, |i, j| (i as f64 + 1.0) * (j as f64).cos());
        let src = TrajectorySource {
            states: DMatrix::from_fn(2, 7, |i, j| (i + j) as f64),
            inputs: None,
        };
        let ds = TrajectoryDataset::new(g, 0.05)
            .unwrap()
            .with_source(src)
            .unwrap();
        ds.save(&path).unwrap();
        assert_eq!(TrajectoryDataset::load(&path).unwrap(), ds);
    }

    #[test]
    fn model_json_is_row_major() {
        let m1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let model = AffineLpvModel::new(1, 1, 1, DMatrix::identity(2, 2), vec![m1])
            .unwrap()
            .with_sched_box(vec![Interval { lo: -1.0, hi: 1.0 }])
            .unwrap();
        let json = model.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["coeffs"][0], serde_json::json!([[1.0, 2.0], [3.0, 4.0]]));
        assert_eq!(AffineLpvModel::from_json(&json).unwrap(), model);
        let bad = json.replace("\"nx\": 1", "\"nx\": 2");
        assert!(AffineLpvModel::from_json(&bad).is_err());
    }

    fn random_model(seed: u64, n_rho: usize) -> AffineLpvModel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = || DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let m0 = m();
        let coeffs = (0..n_rho).map(|_| m()).collect();
        AffineLpvModel::new(2, 1, 1, m0, coeffs).unwrap()
    }

    proptest! {
        #[test]
        fn normalizer_round_trip(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(10, 50, |_, _| rng.gen_range(-5.0..5.0));
            let n = Normalizer::fit(&g).unwrap();
            let gn = n.apply_matrix(&g).unwrap();
            for row in gn.row_iter() {
                prop_assert!((row.min() + 1.0).abs() < 1e-12);
                prop_assert!((row.max() - 1.0).abs() < 1e-12);
            }
            let back = n.invert_matrix(&gn).unwrap();
            prop_assert!((back - &g).abs().max() < 1e-12);
            let rho = DVector::from_fn(10, |_, _| rng.gen_range(-5.0..5.0));
            let rt = n.invert(&n.apply(&rho).unwrap()).unwrap();
            prop_assert!((rt - rho).abs().max() < 1e-12);
        }

        #[test]
        fn eval_is_affine(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let model = random_model(seed, 4);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 1);
            let r1 = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let r2 = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let e0 = model.eval(&DVector::zeros(4)).unwrap();
            let lhs = model.eval(&(&r1 + &r2)).unwrap() - &e0;
            let rhs = (model.eval(&r1).unwrap() - &e0) + (model.eval(&r2).unwrap() - &e0);
            prop_assert!((lhs - rhs).abs().max() < 1e-12);
        }

        #[test]
        fn frobenius_equals_vector_norm(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let a = random_model(seed, 3);
            let b = random_model(seed + 7, 3);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rho = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let ma = a.eval(&rho).unwrap();
            let mb = b.eval(&rho).unwrap();
            let fro = (&ma - &mb).norm();
            let vecnorm = (vectorize(&ma) - vectorize(&mb)).norm();
            prop_assert!((fro - vecnorm).abs() < 1e-12);
            // vectorize_variation = vec(M(ρ) − M0)
            let var = a.vectorize_variation(&rho).unwrap();
            prop_assert!((var - vectorize(&(ma - a.m0()))).abs().max() < 1e-12);
        }
    }
}
