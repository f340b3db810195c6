//! Dense vertex contact metrics.

use nalgebra::Vector3;
use ndarray::Array2;
use serde::Serialize;

use super::physical::M_TO_CM;
use crate::scene::PointIndex;
use crate::{Error, Result};

pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.5;

/// `1` where `p >= threshold`.
pub fn binarize(probs: &Array2<f64>, threshold: f64) -> Array2<u8> {
    probs.mapv(|p| u8::from(p >= threshold))
}

/// Pooled binary confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Confusion {
    pub fn add_labels(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::arg(format!("{} predicted labels for {} targets", pred.len(), gt.len())));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
        Ok(())
    }

    /// Precision is 1 with no predicted and no true positives and 0 with
    /// no predicted but some true positives; recall mirrors this.
    pub fn prf(&self) -> Prf {
        let ratio = |hit: usize, miss: usize, other_empty: bool| {
            if hit + miss == 0 {
                if other_empty { 1.0 } else { 0.0 }
            } else {
                hit as f64 / (hit + miss) as f64
            }
        };
        let no_gt = self.tp + self.fn_ == 0;
        let no_pred = self.tp + self.fp == 0;
        let precision = ratio(self.tp, self.fp, no_gt);
        let recall = ratio(self.tp, self.fn_, no_pred);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// Precision, recall and F1 pooled over every person and vertex.
pub fn contact_prf(pred: &Array2<u8>, gt: &Array2<u8>) -> Result<Prf> {
    if pred.dim() != gt.dim() {
        return Err(Error::arg(format!("label shapes {:?} and {:?} differ", pred.dim(), gt.dim())));
    }
    let mut c = Confusion::default();
    for (p, g) in pred.rows().into_iter().zip(gt.rows()) {
        c.add_labels(&p.to_vec(), &g.to_vec())?;
    }
    Ok(c.prf())
}

/// Rest-pose template used to measure geodesic-free contact distances.
#[derive(Debug, Clone)]
pub struct GeoTemplate {
    vertices: Vec<Vector3<f64>>,
    diameter: f64,
}

impl GeoTemplate {
    pub fn new(vertices: &[Vector3<f64>]) -> Result<Self> {
        if vertices.is_empty() || vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::arg("template vertices must be nonempty and finite"));
        }
        let diameter = vertices
            .iter()
            .enumerate()
            .map(|(i, a)| vertices[i + 1..].iter().map(|b| (a - b).norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        Ok(GeoTemplate {
            vertices: vertices.to_vec(),
            diameter,
        })
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Mean distance from each `query` vertex to the nearest `reference`
    /// vertex; 0 without queries, the diameter without references.
    fn directed(&self, query: &[usize], reference: &[usize]) -> f64 {
        if query.is_empty() {
            return 0.0;
        }
        if reference.is_empty() {
            return self.diameter;
        }
        let pts: Vec<Vector3<f64>> = reference.iter().map(|&i| self.vertices[i]).collect();
        let index = PointIndex::build(&pts).expect("template vertices are finite");
        query.iter().map(|&i| index.nearest(&self.vertices[i]).0).sum::<f64>() / query.len() as f64
    }
}

/// Contact distance error of one labelled body, in centimetres.
///
/// Symmetric: the mean distance from false positives to the nearest true
/// contact and from false negatives to the nearest predicted contact,
/// averaged. One-sided: the mean distance from every predicted contact to
/// the nearest true contact.
pub fn geo_contact_error(pred: &[u8], gt: &[u8], template: &GeoTemplate, one_sided: bool) -> Result<f64> {
    if pred.len() != template.len() || gt.len() != template.len() {
        return Err(Error::arg(format!(
            "label lengths {} and {} do not match {} template vertices",
            pred.len(),
            gt.len(),
            template.len()
        )));
    }
    let pick = |f: &dyn Fn(usize) -> bool| -> Vec<usize> { (0..pred.len()).filter(|&i| f(i)).collect() };
    let pred_pos = pick(&|i| pred[i] != 0);
    let gt_pos = pick(&|i| gt[i] != 0);
    let value = if one_sided {
        template.directed(&pred_pos, &gt_pos)
    } else {
        let fp = pick(&|i| pred[i] != 0 && gt[i] == 0);
        let fn_ = pick(&|i| pred[i] == 0 && gt[i] != 0);
        0.5 * (template.directed(&fp, &gt_pos) + template.directed(&fn_, &pred_pos))
    };
    Ok(M_TO_CM * value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line_template() -> GeoTemplate {
        GeoTemplate::new(&[
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.03, 0.0, 0.0),
            Vector3::new(0.10, 0.0, 0.0),
            Vector3::new(0.10, 0.2, 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = array![[1u8, 0, 1, 0], [0, 0, 1, 1]];
        let prf = contact_prf(&gt, &gt).unwrap();
        assert_eq!(prf, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        let t = line_template();
        for row in gt.rows() {
            let r = row.to_vec();
            assert_eq!(geo_contact_error(&r, &r, &t, false).unwrap(), 0.0);
            assert_eq!(geo_contact_error(&r, &r, &t, true).unwrap(), 0.0);
        }
    }

    #[test]
    fn empty_conventions() {
        let gt = array![[1u8, 0, 0, 0]];
        let none = array![[0u8, 0, 0, 0]];
        assert_eq!(contact_prf(&none, &gt).unwrap(), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
        assert_eq!(contact_prf(&none, &none).unwrap(), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        // predicted positives with no ground truth
        assert_eq!(contact_prf(&gt, &none).unwrap(), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
    }

    #[test]
    fn confusion_counts_by_hand() {
        let pred = array![[1u8, 1, 0, 0, 1]];
        let gt = array![[1u8, 0, 1, 0, 1]];
        let prf = contact_prf(&pred, &gt).unwrap();
        assert!((prf.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((prf.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_false_positive() {
        let t = line_template();
        // vertex 1 predicted, 3 cm from the true contact at vertex 0
        let e = geo_contact_error(&[1, 1, 0, 0], &[1, 0, 0, 0], &t, false).unwrap();
        assert!((e - 1.5).abs() < 1e-12);
        let one = geo_contact_error(&[1, 1, 0, 0], &[1, 0, 0, 0], &t, true).unwrap();
        assert!((one - 1.5).abs() < 1e-12);
    }

    #[test]
    fn missing_reference_costs_diameter() {
        let t = line_template();
        let d = (0.1f64 * 0.1 + 0.2 * 0.2).sqrt();
        assert!((t.diameter() - d).abs() < 1e-15);
        let e = geo_contact_error(&[0, 1, 0, 0], &[0, 0, 0, 0], &t, false).unwrap();
        assert!((e - 100.0 * d / 2.0).abs() < 1e-12);
        assert_eq!(geo_contact_error(&[0; 4], &[0; 4], &t, false).unwrap(), 0.0);
    }

    #[test]
    fn binarize_threshold_inclusive() {
        let p = array![[0.5, 0.49, 0.9]];
        assert_eq!(binarize(&p, 0.5), array![[1u8, 0, 1]]);
    }

    #[test]
    fn shape_errors() {
        let t = line_template();
        assert!(geo_contact_error(&[1, 0], &[1, 0], &t, false).is_err());
        assert!(contact_prf(&array![[1u8]], &array![[1u8, 0]]).is_err());
        assert!(GeoTemplate::new(&[]).is_err());
    }
}
