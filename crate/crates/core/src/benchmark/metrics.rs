use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths<P, G>(preds: &[P], golds: &[G]) -> Result<()> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(Error::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    Ok(())
}

/// Fraction of exact label matches. Empty input is a length mismatch.
pub fn accuracy<P: AsRef<str>, G: AsRef<str>>(preds: &[P], golds: &[G]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref() == g.as_ref())
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Micro-averaged F1 from TP/FP/FN pooled over every label that occurs.
pub fn micro_f1<P: AsRef<str>, G: AsRef<str>>(preds: &[P], golds: &[G]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let mut labels: Vec<&str> = preds
        .iter()
        .map(AsRef::as_ref)
        .chain(golds.iter().map(AsRef::as_ref))
        .collect();
    labels.sort_unstable();
    labels.dedup();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for c in labels {
        for (p, g) in preds.iter().zip(golds) {
            let (p, g) = (p.as_ref() == c, g.as_ref() == c);
            tp += usize::from(p && g);
            fp += usize::from(p && !g);
            fn_ += usize::from(!p && g);
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Rows are gold labels, columns predicted labels. Predictions outside the
/// label set (failed runs) are counted per row in `unscored`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    pub unscored: Vec<usize>,
}

impl ConfusionMatrix {
    /// `preds[i] = None` marks a failed prediction.
    pub fn build<G: AsRef<str>>(labels: &[String], preds: &[Option<String>], golds: &[G]) -> Result<Self> {
        check_lengths(preds, golds)?;
        let index = |l: &str| labels.iter().position(|x| x == l);
        let n = labels.len();
        let mut m = Self {
            labels: labels.to_vec(),
            counts: vec![vec![0; n]; n],
            unscored: vec![0; n],
        };
        for (p, g) in preds.iter().zip(golds) {
            let row = index(g.as_ref()).ok_or_else(|| Error::UnknownLabel(g.as_ref().to_owned()))?;
            match p.as_deref().and_then(index) {
                Some(col) => m.counts[row][col] += 1,
                None => m.unscored[row] += 1,
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum::<usize>() + self.unscored.iter().sum::<usize>()
    }

    pub fn diagonal(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.counts[i].iter().sum::<usize>() + self.unscored[i]
    }

    pub fn col_sum(&self, j: usize) -> usize {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let width = self.labels.iter().map(String::len).max().unwrap_or(4).max(6);
        let mut out = format!("{:>width$} |", "gold\\pred");
        for l in &self.labels {
            out.push_str(&format!(" {l:>width$}"));
        }
        out.push_str(&format!(" {:>width$}\n", "failed"));
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&format!("{l:>width$} |"));
            for c in &self.counts[i] {
                out.push_str(&format!(" {c:>width$}"));
            }
            out.push_str(&format!(" {:>width$}\n", self.unscored[i]));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VeritePairwise {
    pub t_ooc: f64,
    pub t_mc: f64,
    pub t_f: f64,
}

const TRUE: &str = "true";
const OOC: &str = "ooc";
const MC: &str = "miscaptioned";

fn verite_check(label: &str) -> Result<()> {
    match label {
        TRUE | OOC | MC => Ok(()),
        other => Err(Error::UnknownLabel(other.to_owned())),
    }
}

/// Binary accuracies over VERITE label ids. Any non-True prediction counts
/// on the False side; a failed prediction (`None`) is always wrong.
pub fn verite_pairwise_scored<G: AsRef<str>>(preds: &[Option<String>], golds: &[G]) -> Result<VeritePairwise> {
    check_lengths(preds, golds)?;
    for g in golds {
        verite_check(g.as_ref())?;
    }
    for p in preds.iter().flatten() {
        verite_check(p)?;
    }
    let restricted = |keep: &dyn Fn(&str) -> bool| -> f64 {
        let (mut n, mut hits) = (0usize, 0usize);
        for (p, g) in preds.iter().zip(golds) {
            let g = g.as_ref();
            if !keep(g) {
                continue;
            }
            n += 1;
            if let Some(p) = p {
                hits += usize::from((p == TRUE) == (g == TRUE));
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            hits as f64 / n as f64
        }
    };
    Ok(VeritePairwise {
        t_ooc: restricted(&|g| g == TRUE || g == OOC),
        t_mc: restricted(&|g| g == TRUE || g == MC),
        t_f: restricted(&|_| true),
    })
}

pub fn verite_pairwise<P: AsRef<str>, G: AsRef<str>>(preds: &[P], golds: &[G]) -> Result<VeritePairwise> {
    let scored: Vec<Option<String>> = preds.iter().map(|p| Some(p.as_ref().to_owned())).collect();
    verite_pairwise_scored(&scored, golds)
}

/// Mean and sample standard deviation (n − 1); the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(accuracy(&["a", "a"], &["b", "b"]).unwrap(), 0.0);
        let golds = ["x"; 10];
        let mut preds = ["x"; 10];
        preds[..3].copy_from_slice(&["y"; 3]);
        assert_eq!(accuracy(&preds, &golds).unwrap(), 0.7);
        assert!(matches!(
            accuracy(&["a"], &["a", "b"]),
            Err(Error::LengthMismatch { preds: 1, golds: 2 })
        ));
        assert!(accuracy::<&str, &str>(&[], &[]).is_err());
    }

    #[test]
    fn micro_f1_examples() {
        assert_eq!(micro_f1(&["a", "b", "c"], &["a", "b", "c"]).unwrap(), 1.0);
        assert_eq!(micro_f1(&["a", "b", "c", "a"], &["a", "c", "b", "b"]).unwrap(), 0.25);
    }

    #[test]
    fn confusion_reconciles() {
        let labels: Vec<String> = ["a", "b"].map(String::from).to_vec();
        let preds = vec![Some("a".to_owned()), Some("b".to_owned()), None, Some("a".to_owned())];
        let m = ConfusionMatrix::build(&labels, &preds, &["a", "a", "b", "b"]).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![1, 0]]);
        assert_eq!(m.unscored, vec![0, 1]);
        assert_eq!(m.total(), 4);
        assert_eq!(m.row_sum(1), 2);
        assert_eq!(m.col_sum(0), 2);
        assert!(m.to_table().contains("failed"));
        assert!(matches!(
            ConfusionMatrix::build(&labels, &preds, &["a", "a", "b", "zzz"]),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn verite_examples() {
        let golds = ["true", "ooc", "miscaptioned"];
        let all = verite_pairwise(&golds, &golds).unwrap();
        assert_eq!((all.t_ooc, all.t_mc, all.t_f), (1.0, 1.0, 1.0));
        assert!(matches!(
            verite_pairwise(&["true"], &["Supported"]),
            Err(Error::UnknownLabel(_))
        ));
        let failed = verite_pairwise_scored(&[None, None], &["true", "ooc"]).unwrap();
        assert_eq!(failed.t_ooc, 0.0);
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[0.7, 0.8, 0.9]);
        assert!((m - 0.8).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }
}
