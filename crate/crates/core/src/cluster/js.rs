use crate::error::{contract_err, shape_err, Result};
use crate::kde::{kde_forward, FeatureDistribution, KdeConfig};
use crate::ndcore::Matrix;
use crate::scalar::Scalar;

/// Jensen-Shannon divergence (natural log) between two histograms.
/// Terms with zero probability contribute nothing.
pub fn js_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return shape_err(format!("histograms of length {} and {}", p.len(), q.len()));
    }
    let half = T::lit(0.5);
    let mut total = T::zero();
    for (&a, &b) in p.iter().zip(q) {
        let m = half * (a + b);
        if a > T::zero() {
            total = total + half * a * (a / m).ln();
        }
        if b > T::zero() {
            total = total + half * b * (b / m).ln();
        }
    }
    Ok(total.max(T::zero()).min(T::lit(std::f64::consts::LN_2)))
}

/// Per-feature JS divergence averaged over the `J` feature rows.
pub fn distribution_js<T: Scalar>(p: &FeatureDistribution<T>, q: &FeatureDistribution<T>) -> Result<T> {
    if p.num_features() != q.num_features() || p.num_bins() != q.num_bins() {
        return shape_err("feature distributions differ in shape");
    }
    let mut total = T::zero();
    for j in 0..p.num_features() {
        total = total + js_divergence(p.row(j), q.row(j))?;
    }
    Ok(total / T::from_count(p.num_features()))
}

/// Symmetric `K × K` matrix of JS divergences between per-class feature distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct JsMatrix<T> {
    pub values: Matrix<T>,
    pub min_off_diagonal: Option<T>,
}

impl<T: Scalar> JsMatrix<T> {
    pub fn num_classes(&self) -> usize {
        self.values.rows()
    }

    /// Tab-separated rows, one per class.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for row in self.values.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{:.6}", v.as_f64())).collect();
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// KDE of each class's features (labels `1..=num_classes`), compared pairwise.
pub fn interclass_js<T: Scalar>(
    features: &Matrix<T>,
    labels: &[usize],
    num_classes: usize,
    kde: &KdeConfig<T>,
) -> Result<JsMatrix<T>> {
    if labels.len() != features.rows() {
        return shape_err(format!("{} labels for {} feature rows", labels.len(), features.rows()));
    }
    let mut members = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l > num_classes {
            return contract_err(format!("label {l} outside 1..={num_classes}"));
        }
        members[l - 1].push(i);
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return contract_err(format!("class {} has no instances", c + 1));
    }
    let dists = members
        .iter()
        .map(|idx| Ok(kde_forward(&features.select_rows(idx), kde)?.0))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Matrix::zeros(num_classes, num_classes);
    let mut min: Option<T> = None;
    for a in 0..num_classes {
        for b in a + 1..num_classes {
            let v = distribution_js(&dists[a], &dists[b])?;
            values[(a, b)] = v;
            values[(b, a)] = v;
            min = Some(min.map_or(v, |m| m.min(v)));
        }
    }
    Ok(JsMatrix { values, min_off_diagonal: min })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero_and_disjoint_is_ln2() {
        let p: [f64; 4] = [0.2, 0.3, 0.5, 0.0];
        assert!(js_divergence(&p, &p).unwrap().abs() < 1e-12);
        let a = [0.5, 0.5, 0.0, 0.0];
        let b = [0.0, 0.0, 0.25, 0.75];
        assert!((js_divergence(&a, &b).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn symmetric_and_matches_scalar_formula() {
        let p: [f64; 3] = [0.1, 0.6, 0.3];
        let q: [f64; 3] = [0.4, 0.4, 0.2];
        let pq = js_divergence(&p, &q).unwrap();
        assert!((pq - js_divergence(&q, &p).unwrap()).abs() < 1e-12);
        let mut expect = 0.0;
        for k in 0..3 {
            let m = 0.5 * (p[k] + q[k]);
            expect += 0.5 * p[k] * (p[k] / m).ln() + 0.5 * q[k] * (q[k] / m).ln();
        }
        assert!((pq - expect).abs() < 1e-15);
    }

    #[test]
    fn identical_classes_have_zero_divergence() {
        let rows: Vec<Vec<f64>> = vec![vec![0.1, 0.9], vec![0.4, 0.2], vec![0.1, 0.9], vec![0.4, 0.2]];
        let f = Matrix::from_rows(&rows).unwrap();
        let js = interclass_js(&f, &[1, 1, 2, 2], 2, &KdeConfig::default()).unwrap();
        assert!(js.min_off_diagonal.unwrap().abs() < 1e-12);
        assert_eq!(js.values[(0, 0)], 0.0);
    }

    #[test]
    fn empty_class_is_rejected() {
        let f = Matrix::from_rows(&[vec![0.5]]).unwrap();
        assert!(interclass_js(&f, &[1], 2, &KdeConfig::default()).is_err());
    }
}
