//! Disagreement between the two relation heads on target samples.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor2, Var};
use crate::model::{class_logits, relation_matrix, ModelError, PaaModel};

/// Mean over all `m²` target pairs of `|φ₁(z_i, z_j) - φ₂(z_i, z_j)|`, where
/// `φ_k` is the cosine of head `k`'s relation signatures. Zero when `m < 2`.
pub fn l_disc(g: &mut Graph, zt: Var, theta1: Var, theta2: Var, prototypes: Var) -> Result<Var, ModelError> {
    if g.value(zt).rows() < 2 {
        return Ok(g.leaf(Tensor2::scalar(0.0)?));
    }
    let q1 = class_logits(g, zt, theta1, prototypes)?;
    let q2 = class_logits(g, zt, theta2, prototypes)?;
    let phi1 = relation_matrix(g, q1)?;
    let phi2 = relation_matrix(g, q2)?;
    let diff = g.sub(phi1, phi2)?;
    let abs = g.abs(diff)?;
    Ok(g.mean(abs)?)
}

/// `l_disc` of a two-head model on fixed embeddings.
pub fn l_disc_value(model: &PaaModel, zt: &Tensor2) -> Result<f64, ModelError> {
    if model.heads.len() != 2 {
        return Err(ModelError::Config("discrepancy needs two heads".into()));
    }
    let protos = model.prototypes.prototypes()?;
    let mut g = Graph::new();
    let z = g.leaf(zt.clone());
    let t1 = g.leaf(model.heads[0].theta.clone());
    let t2 = g.leaf(model.heads[1].theta.clone());
    let p = g.leaf(protos.clone());
    let l = l_disc(&mut g, z, t1, t2, p)?;
    Ok(g.value(l).item())
}

/// Pairwise relation matrix of one head over a batch.
pub fn pairwise_relation(zt: &Tensor2, theta: &Tensor2, prototypes: &Tensor2) -> Result<Tensor2, ModelError> {
    let mut g = Graph::new();
    let z = g.leaf(zt.clone());
    let t = g.leaf(theta.clone());
    let p = g.leaf(prototypes.clone());
    let q = class_logits(&mut g, z, t, p)?;
    let phi = relation_matrix(&mut g, q)?;
    Ok(g.value(phi).clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControversyReport {
    /// Row means of `|φ₁ - φ₂|`.
    pub scores: Vec<f64>,
    /// Whether the two heads predict different classes.
    pub disagree: Vec<bool>,
}

impl ControversyReport {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn disagreement_rate(&self) -> f64 {
        if self.disagree.is_empty() {
            return 0.0;
        }
        self.disagree.iter().filter(|&&d| d).count() as f64 / self.disagree.len() as f64
    }

    /// `sample_id,score,disagree_flag` rows.
    pub fn write_csv<W: Write>(&self, ids: &[usize], out: W) -> Result<(), csv::Error> {
        assert_eq!(ids.len(), self.len(), "one id per report row");
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "score", "disagree_flag"])?;
        for ((id, s), d) in ids.iter().zip(&self.scores).zip(&self.disagree) {
            w.write_record([id.to_string(), s.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn controversy(zt: &Tensor2, theta1: &Tensor2, theta2: &Tensor2, prototypes: &Tensor2) -> Result<ControversyReport, ModelError> {
    let m = zt.rows();
    let phi1 = pairwise_relation(zt, theta1, prototypes)?;
    let phi2 = pairwise_relation(zt, theta2, prototypes)?;
    let scores = (0..m)
        .map(|i| {
            phi1.row(i)
                .iter()
                .zip(phi2.row(i))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / m as f64
        })
        .collect();
    let logits = |theta: &Tensor2| -> Result<Vec<usize>, ModelError> {
        let mut g = Graph::new();
        let z = g.leaf(zt.clone());
        let t = g.leaf(theta.clone());
        let p = g.leaf(prototypes.clone());
        let q = class_logits(&mut g, z, t, p)?;
        Ok(g.value(q).argmax_rows())
    };
    let (a, b) = (logits(theta1)?, logits(theta2)?);
    Ok(ControversyReport {
        scores,
        disagree: a.iter().zip(&b).map(|(x, y)| x != y).collect(),
    })
}

/// Controversy of a two-head model's target embeddings.
pub fn model_controversy(model: &PaaModel, zt: &Tensor2) -> Result<ControversyReport, ModelError> {
    if model.heads.len() != 2 {
        return Err(ModelError::Config("controversy needs two heads".into()));
    }
    controversy(zt, &model.heads[0].theta, &model.heads[1].theta, model.prototypes.prototypes()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cosine;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2 {
        Tensor2::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn value(z: &Tensor2, t1: &Tensor2, t2: &Tensor2, p: &Tensor2) -> f64 {
        let mut g = Graph::new();
        let (zv, a, b, pv) = (g.leaf(z.clone()), g.leaf(t1.clone()), g.leaf(t2.clone()), g.leaf(p.clone()));
        let l = l_disc(&mut g, zv, a, b, pv).unwrap();
        g.value(l).item()
    }

    fn signature(z: &[f64], theta: &Tensor2, p: &Tensor2) -> Vec<f64> {
        // Q_c = Σ_a Σ_b z_a θ_ab P_cb
        (0..p.rows())
            .map(|c| {
                let mut s = 0.0;
                for a in 0..z.len() {
                    for b in 0..p.cols() {
                        s += z[a] * theta.get(a, b) * p.get(c, b);
                    }
                }
                s
            })
            .collect()
    }

    #[test]
    fn identical_heads_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = random(&mut rng, 7, 4);
        let t = random(&mut rng, 4, 4);
        let p = random(&mut rng, 3, 4);
        assert_eq!(value(&z, &t, &t, &p), 0.0);
        let r = controversy(&z, &t, &t, &p).unwrap();
        assert_eq!(r.len(), 7);
        assert!(r.scores.iter().all(|&s| s == 0.0));
        assert!(r.disagree.iter().all(|&d| !d));
    }

    #[test]
    fn two_sample_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random(&mut rng, 2, 3);
        let (t1, t2) = (random(&mut rng, 3, 3), random(&mut rng, 3, 3));
        let p = random(&mut rng, 3, 3);
        let s1: Vec<Vec<f64>> = (0..2).map(|i| signature(z.row(i), &t1, &p)).collect();
        let s2: Vec<Vec<f64>> = (0..2).map(|i| signature(z.row(i), &t2, &p)).collect();
        let mut total = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                total += (cosine(&s1[i], &s1[j]) - cosine(&s2[i], &s2[j])).abs();
            }
        }
        assert!((value(&z, &t1, &t2, &p) - total / 4.0).abs() < 1e-12);
    }

    #[test]
    fn bounded_symmetric_and_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let z = random(&mut rng, 6, 3);
            let (t1, t2) = (random(&mut rng, 3, 3), random(&mut rng, 3, 3));
            let p = random(&mut rng, 3, 3);
            let v = value(&z, &t1, &t2, &p);
            assert!((0.0..=2.0).contains(&v));
            assert_eq!(v, value(&z, &t2, &t1, &p));
        }
        let one = random(&mut rng, 1, 3);
        let t = Tensor2::identity(3);
        assert_eq!(value(&one, &t, &t.map(|v| -v), &t), 0.0);
    }

    #[test]
    fn sign_flipped_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random(&mut rng, 5, 3);
        let t1 = random(&mut rng, 3, 3);
        let t2 = t1.map(|v| -v);
        let p = random(&mut rng, 3, 3);
        let r = controversy(&z, &t1, &t2, &p).unwrap();
        // φ is invariant to negating both signatures, so relation scores vanish
        // while the argmax flips.
        assert!(r.scores.iter().all(|&s| s.abs() < 1e-12));
        let q1 = pairwise_relation(&z, &t1, &p).unwrap();
        assert_eq!(q1.rows(), 5);
        assert!(r.disagree.iter().any(|&d| d));
    }

    #[test]
    fn ascent_on_second_head_increases_discrepancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random(&mut rng, 8, 4);
        let t1 = Tensor2::identity(4);
        let mut t2 = t1.map(|v| v + 0.0).clone();
        for v in t2.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let p = random(&mut rng, 3, 4);
        let initial = value(&z, &t1, &t2, &p);
        for _ in 0..50 {
            let mut g = Graph::new();
            let (zv, a, b, pv) = (g.leaf(z.clone()), g.leaf(t1.clone()), g.leaf(t2.clone()), g.leaf(p.clone()));
            let l = l_disc(&mut g, zv, a, b, pv).unwrap();
            let grads = g.backward(l).unwrap();
            let gr = grads.get(b).unwrap();
            for (w, d) in t2.data_mut().iter_mut().zip(gr.data()) {
                *w += 0.05 * d;
            }
        }
        let fin = value(&z, &t1, &t2, &p);
        assert!(fin > initial, "{fin} <= {initial}");
    }

    #[test]
    fn csv_export() {
        let r = ControversyReport {
            scores: vec![0.25, 0.0],
            disagree: vec![true, false],
        };
        let mut buf = vec![];
        r.write_csv(&[7, 9], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "sample_id,score,disagree_flag\n7,0.25,true\n9,0,false\n"
        );
        assert_eq!(r.disagreement_rate(), 0.5);
    }
}
