use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// A fitted scheduling map `μ: ρ ↦ φ`.
pub trait SchedulingMap: Sync {
    fn n_rho(&self) -> usize;

    fn n_phi(&self) -> usize;

    fn map(&self, rho: &DVector<f64>) -> Result<DVector<f64>>;

    /// Maps every column of `gamma`.
    fn map_batch(&self, gamma: &DMatrix<f64>, exec: Exec) -> Result<DMatrix<f64>> {
        if gamma.nrows() != self.n_rho() {
            return Err(Error::dim(format!(
                "data has {} rows, reducer expects {}",
                gamma.nrows(),
                self.n_rho()
            )));
        }
        let cols = exec.try_map(gamma.ncols(), |j| self.map(&gamma.column(j).into_owned()))?;
        let mut phi = DMatrix::zeros(self.n_phi(), gamma.ncols());
        for (j, c) in cols.iter().enumerate() {
            phi.set_column(j, c);
        }
        Ok(phi)
    }
}

/// Identity map, `φ = ρ`.
pub struct IdentityMap(pub usize);

impl SchedulingMap for IdentityMap {
    fn n_rho(&self) -> usize {
        self.0
    }

    fn n_phi(&self) -> usize {
        self.0
    }

    fn map(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        if rho.len() != self.0 {
            return Err(Error::dim("identity map length mismatch"));
        }
        Ok(rho.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Kpca,
    Ae,
    Dnn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pca, Method::Kpca, Method::Ae, Method::Dnn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Kpca => "kpca",
            Method::Ae => "ae",
            Method::Dnn => "dnn",
        }
    }

    /// Whether fits depend on a random seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Method::Ae | Method::Dnn)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pca" => Ok(Method::Pca),
            "kpca" => Ok(Method::Kpca),
            "ae" => Ok(Method::Ae),
            "dnn" => Ok(Method::Dnn),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}
