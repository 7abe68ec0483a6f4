//! Clustered data containers.

use crate::error::{Error, Result};
use crate::family::Family;
use crate::num::Scalar;
use ndarray::{Array1, Array2, ArrayView1, Axis};

/// One cluster's response vector and design matrix. Column 0 of the design
/// is the intercept (identically one); columns 1..=r are covariates.
///
/// Row sums inside the fitting code run in a canonical order derived from
/// the row contents, so fits are bit-identical under any permutation of the
/// observations within a cluster.
#[derive(Debug, Clone)]
pub struct ClusterData<F> {
    id: String,
    y: Array1<F>,
    x: Array2<F>,
    canon: Vec<usize>,
}

impl<F: Scalar> ClusterData<F> {
    /// Build a cluster from a full design matrix whose column 0 must be all
    /// ones.
    pub fn new(id: impl Into<String>, y: Array1<F>, x: Array2<F>) -> Result<Self> {
        let id = id.into();
        let n = y.len();
        if n == 0 {
            return Err(Error::invalid_input(format!("cluster {id:?} is empty")));
        }
        if x.nrows() != n {
            return Err(Error::invalid_input(format!(
                "cluster {id:?}: design has {} rows but response has {n}",
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid_input(format!("cluster {id:?}: design has no columns")));
        }
        for (j, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid_input(format!(
                    "cluster {id:?}: non-finite response in row {j}"
                )));
            }
        }
        for ((i, j), &v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::invalid_input(format!(
                    "cluster {id:?}: non-finite design entry at row {i}, column {j}"
                )));
            }
        }
        if x.column(0).iter().any(|&v| v != F::one()) {
            return Err(Error::invalid_input(format!(
                "cluster {id:?}: design column 0 must be identically 1"
            )));
        }
        let canon = canonical_order(&y, &x);
        Ok(Self { id, y, x, canon })
    }

    /// Build a cluster from covariate columns only; the intercept column is
    /// prepended.
    pub fn from_covariates(id: impl Into<String>, y: Array1<F>, covariates: Array2<F>) -> Result<Self> {
        let n = y.len();
        if covariates.nrows() != n && !(covariates.is_empty() && covariates.nrows() == 0) {
            return Err(Error::invalid_input(
                "covariate matrix row count must match the response length",
            ));
        }
        let mut x = Array2::ones((n, covariates.ncols() + 1));
        if covariates.ncols() > 0 {
            x.slice_mut(ndarray::s![.., 1..]).assign(&covariates);
        }
        Self::new(id, y, x)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of observations in the cluster.
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of covariate columns (design columns minus the intercept).
    pub fn n_covariates(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn response(&self) -> ArrayView1<'_, F> {
        self.y.view()
    }

    pub fn design(&self) -> &Array2<F> {
        &self.x
    }

    /// Row indices in canonical (content-sorted) order.
    pub(crate) fn canonical_rows(&self) -> &[usize] {
        &self.canon
    }

    /// Check every response value against the family support; returns the
    /// first offending row index.
    pub fn validate_response(&self, family: Family) -> Result<()> {
        for (j, &v) in self.y.iter().enumerate() {
            if !family.valid_response(v) {
                return Err(Error::InvalidResponse {
                    line: None,
                    message: format!(
                        "cluster {:?}, row {j}: {v} is not {}",
                        self.id,
                        family.response_requirement()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Concatenate several clusters into one (used for pooled fits).
    pub fn pooled(clusters: &[ClusterData<F>]) -> Result<Self> {
        let first = clusters
            .first()
            .ok_or_else(|| Error::invalid_input("cannot pool an empty cluster list"))?;
        let p = first.x.ncols();
        if clusters.iter().any(|c| c.x.ncols() != p) {
            return Err(Error::invalid_input("clusters have differing design widths"));
        }
        let n: usize = clusters.iter().map(|c| c.n()).sum();
        let mut y = Array1::zeros(n);
        let mut x = Array2::zeros((n, p));
        let mut row = 0;
        for c in clusters {
            for j in 0..c.n() {
                y[row] = c.y[j];
                x.row_mut(row).assign(&c.x.row(j));
                row += 1;
            }
        }
        Self::new("pooled", y, x)
    }
}

/// Sort row indices by row content (response first, then design entries)
/// using the IEEE total order. Identical rows contribute identically, so tie
/// order is immaterial.
fn canonical_order<F: Scalar>(y: &Array1<F>, x: &Array2<F>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| {
        let ya = y[a].partial_cmp(&y[b]).unwrap_or(std::cmp::Ordering::Equal);
        if ya != std::cmp::Ordering::Equal {
            return ya;
        }
        for j in 0..x.ncols() {
            let c = x[[a, j]].partial_cmp(&x[[b, j]]).unwrap_or(std::cmp::Ordering::Equal);
            if c != std::cmp::Ordering::Equal {
                return c;
            }
        }
        std::cmp::Ordering::Equal
    });
    idx
}

/// Per-cluster row counts, in cluster order.
pub fn size_summary<F: Scalar>(clusters: &[ClusterData<F>]) -> Vec<(String, usize)> {
    clusters.iter().map(|c| (c.id.clone(), c.n())).collect()
}
