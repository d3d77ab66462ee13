use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::threshold_predict;
use crate::scalar::Scalar;
use crate::training::Model;

/// Categorical ratings: one row per rater, one column per example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    rows: Vec<Vec<u8>>,
}

impl PredictionMatrix {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Analysis(format!("need at least 2 raters, got {}", rows.len())));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(Error::Analysis("need at least 1 example".into()));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Analysis("every rater must rate every example".into()));
        }
        Ok(Self { rows })
    }

    pub fn raters(&self) -> usize {
        self.rows.len()
    }

    pub fn examples(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }
}

/// Nominal Krippendorff's alpha, `1 - D_o / D_e`, from the coincidence
/// matrix. When every rating is the same category `D_e` is zero and the
/// result is 1 by convention.
pub fn krippendorff_alpha(m: &PredictionMatrix) -> Result<f64> {
    if m.examples() < 2 {
        return Err(Error::Analysis(format!(
            "need at least 2 rated examples, got {}",
            m.examples()
        )));
    }
    let cats = usize::from(m.rows.iter().flatten().copied().max().unwrap_or(0)) + 1;
    let mut o = vec![vec![0.0f64; cats]; cats];
    let raters = m.raters();
    let mut counts = vec![0usize; cats];
    for u in 0..m.examples() {
        counts.iter_mut().for_each(|c| *c = 0);
        for r in &m.rows {
            counts[usize::from(r[u])] += 1;
        }
        let w = 1.0 / (raters - 1) as f64;
        for c in 0..cats {
            for k in 0..cats {
                let pairs = if c == k {
                    counts[c] * counts[c].saturating_sub(1)
                } else {
                    counts[c] * counts[k]
                };
                o[c][k] += pairs as f64 * w;
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..cats {
        for k in 0..cats {
            if c != k {
                d_o += o[c][k];
                d_e += n_c[c] * n_c[k];
            }
        }
    }
    if d_e == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * d_o / d_e)
}

/// Symmetric `K x K` agreement between raters, with ones on the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub names: Vec<String>,
    pub alpha: Vec<Vec<f64>>,
}

/// Alpha between every pair of prediction rows.
pub fn pairwise_from_predictions(preds: &[Vec<u8>]) -> Result<Vec<Vec<f64>>> {
    PredictionMatrix::new(preds.to_vec())?;
    let k = preds.len();
    let mut out = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let a = krippendorff_alpha(&PredictionMatrix::new(vec![
                preds[i].clone(),
                preds[j].clone(),
            ])?)?;
            out[i][j] = a;
            out[j][i] = a;
        }
    }
    Ok(out)
}

/// Thresholded predictions of every domain expert on `texts`, compared pairwise.
pub fn pairwise_agreement<T: Scalar>(model: &Model<T>, texts: &[&str]) -> Result<AgreementMatrix> {
    if model.experts.len() < 2 {
        return Err(Error::Analysis(format!(
            "variant {} has no trained expert bank",
            model.variant
        )));
    }
    let mut preds = vec![Vec::with_capacity(texts.len()); model.experts.len()];
    for text in texts {
        let Ok(tokens) = model.tokenize(text) else {
            continue;
        };
        for (k, e) in model.experts.iter().enumerate() {
            let p = e.encode_tokens(&model.store, &tokens)?.prob;
            preds[k].push(threshold_predict(p.to_f64_lossy()));
        }
    }
    Ok(AgreementMatrix {
        names: model.domains.iter().map(|d| d.to_string()).collect(),
        alpha: pairwise_from_predictions(&preds)?,
    })
}

/// Mean of the entries off the diagonal.
pub fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let k = m.len();
    if k < 2 {
        return f64::NAN;
    }
    let total: f64 = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[i][j])
        .sum();
    total / (k * (k - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alpha(rows: Vec<Vec<u8>>) -> f64 {
        krippendorff_alpha(&PredictionMatrix::new(rows).unwrap()).unwrap()
    }

    #[test]
    fn identical_raters_agree_fully() {
        assert_eq!(alpha(vec![vec![0, 1, 1, 0], vec![0, 1, 1, 0]]), 1.0);
        assert_eq!(alpha(vec![vec![1, 1, 1], vec![1, 1, 1]]), 1.0);
    }

    #[test]
    fn textbook_value() {
        // two raters, ten units, categories a/b
        let a = alpha(vec![
            vec![0, 1, 0, 0, 0, 0, 0, 0, 1, 0],
            vec![1, 1, 1, 0, 0, 1, 0, 0, 0, 0],
        ]);
        // o_ab = 4, n_a = 14, n_b = 6, n = 20
        assert!((a - (1.0 - 19.0 * 4.0 / 84.0)).abs() < 1e-12);
    }

    #[test]
    fn relabelling_invariance() {
        let rows = vec![vec![0, 1, 1, 0, 1], vec![1, 1, 0, 0, 1], vec![0, 1, 1, 1, 1]];
        let swapped = rows.iter().map(|r| r.iter().map(|v| 1 - v).collect()).collect();
        assert!((alpha(rows) - alpha(swapped)).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(PredictionMatrix::new(vec![vec![0, 1]]).is_err());
        assert!(PredictionMatrix::new(vec![vec![0, 1], vec![1]]).is_err());
        let one = PredictionMatrix::new(vec![vec![0], vec![1]]).unwrap();
        assert!(krippendorff_alpha(&one).is_err());
    }

    #[test]
    fn pairwise_is_symmetric_with_unit_diagonal() {
        let m = pairwise_from_predictions(&[vec![0, 1, 1, 0], vec![1, 1, 0, 0], vec![0, 0, 1, 1]])
            .unwrap();
        for i in 0..3 {
            assert_eq!(m[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }
}
