//! Score functions and their analytic gradients.
//!
//! Complex-valued models store `dim` complex coordinates as `2 * dim` reals,
//! real parts first. RotatE relations store `dim` phase angles.

use super::{ModelKind, Norm};

/// Gradients of the score with respect to head, relation and tail.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrads {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
}

pub(crate) fn score(model: ModelKind, norm: Norm, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match model {
        ModelKind::TransE => {
            let diff = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t);
            match norm {
                Norm::L2 => -diff.map(|v| v * v).sum::<f64>().sqrt(),
                Norm::L1 => -diff.map(f64::abs).sum::<f64>(),
            }
        }
        ModelKind::DistMult => h.iter().zip(r).zip(t).map(|((h, r), t)| h * r * t).sum(),
        ModelKind::ComplEx => {
            let d = h.len() / 2;
            let (hr, hi) = h.split_at(d);
            let (rr, ri) = r.split_at(d);
            let (tr, ti) = t.split_at(d);
            (0..d)
                .map(|k| {
                    let re = hr[k] * rr[k] - hi[k] * ri[k];
                    let im = hr[k] * ri[k] + hi[k] * rr[k];
                    re * tr[k] + im * ti[k]
                })
                .sum()
        }
        ModelKind::RotatE => {
            let d = h.len() / 2;
            let (hr, hi) = h.split_at(d);
            let (tr, ti) = t.split_at(d);
            let sq: f64 = (0..d)
                .map(|k| {
                    let (s, c) = r[k].sin_cos();
                    let ur = hr[k] * c - hi[k] * s - tr[k];
                    let ui = hr[k] * s + hi[k] * c - ti[k];
                    ur * ur + ui * ui
                })
                .sum();
            -sq.sqrt()
        }
    }
}

/// All three partial gradients. Norm-based models return zero gradients at
/// the non-differentiable point where the residual vanishes; L1 TransE uses
/// `sign(0) = 0` per coordinate.
pub(crate) fn grads(model: ModelKind, norm: Norm, h: &[f64], r: &[f64], t: &[f64]) -> ScoreGrads {
    match model {
        ModelKind::TransE => {
            let v: Vec<f64> = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t).collect();
            let g: Vec<f64> = match norm {
                Norm::L2 => {
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n == 0.0 {
                        vec![0.0; v.len()]
                    } else {
                        v.iter().map(|x| -x / n).collect()
                    }
                }
                Norm::L1 => v.iter().map(|&x| -sign(x)).collect(),
            };
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            ScoreGrads {
                head: g.clone(),
                relation: g,
                tail: neg,
            }
        }
        ModelKind::DistMult => ScoreGrads {
            head: r.iter().zip(t).map(|(r, t)| r * t).collect(),
            relation: h.iter().zip(t).map(|(h, t)| h * t).collect(),
            tail: h.iter().zip(r).map(|(h, r)| h * r).collect(),
        },
        ModelKind::ComplEx => {
            let d = h.len() / 2;
            let (hr, hi) = h.split_at(d);
            let (rr, ri) = r.split_at(d);
            let (tr, ti) = t.split_at(d);
            let mut gh = vec![0.0; 2 * d];
            let mut gr = vec![0.0; 2 * d];
            let mut gt = vec![0.0; 2 * d];
            for k in 0..d {
                // score_k = (hr rr - hi ri) tr + (hr ri + hi rr) ti
                gh[k] = rr[k] * tr[k] + ri[k] * ti[k];
                gh[d + k] = -ri[k] * tr[k] + rr[k] * ti[k];
                gr[k] = hr[k] * tr[k] + hi[k] * ti[k];
                gr[d + k] = -hi[k] * tr[k] + hr[k] * ti[k];
                gt[k] = hr[k] * rr[k] - hi[k] * ri[k];
                gt[d + k] = hr[k] * ri[k] + hi[k] * rr[k];
            }
            ScoreGrads {
                head: gh,
                relation: gr,
                tail: gt,
            }
        }
        ModelKind::RotatE => {
            let d = h.len() / 2;
            let (hr, hi) = h.split_at(d);
            let (tr, ti) = t.split_at(d);
            let mut ur = vec![0.0; d];
            let mut ui = vec![0.0; d];
            let mut sq = 0.0;
            for k in 0..d {
                let (s, c) = r[k].sin_cos();
                ur[k] = hr[k] * c - hi[k] * s - tr[k];
                ui[k] = hr[k] * s + hi[k] * c - ti[k];
                sq += ur[k] * ur[k] + ui[k] * ui[k];
            }
            let n = sq.sqrt();
            let mut gh = vec![0.0; 2 * d];
            let mut gr = vec![0.0; d];
            let mut gt = vec![0.0; 2 * d];
            if n > 0.0 {
                for k in 0..d {
                    let (s, c) = r[k].sin_cos();
                    let (vr, vi) = (ur[k] / n, ui[k] / n);
                    gh[k] = -(vr * c + vi * s);
                    gh[d + k] = -(-vr * s + vi * c);
                    // d ur / d theta = -(hr s + hi c) = -(ui + ti)
                    // d ui / d theta =   hr c - hi s  =   ur + tr
                    gr[k] = -(vr * -(ui[k] + ti[k]) + vi * (ur[k] + tr[k]));
                    gt[k] = vr;
                    gt[d + k] = vi;
                }
            }
            ScoreGrads {
                head: gh,
                relation: gr,
                tail: gt,
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + step;
                let up = f(&probe);
                probe[i] = x[i] - step;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn transe_exact_translation_scores_zero() {
        let s = score(ModelKind::TransE, Norm::L2, &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn transe_l1() {
        let s = score(ModelKind::TransE, Norm::L1, &[1.0, 0.0], &[0.0, 1.0], &[0.0, 3.0]);
        assert_eq!(s, -3.0);
    }

    #[test]
    fn distmult_sum_of_products() {
        let (h, r, t) = ([1.0, 2.0], [1.0, 1.0], [2.0, 1.0]);
        let oracle: f64 = (0..2).map(|i| h[i] * r[i] * t[i]).sum();
        assert_eq!(oracle, 4.0);
        assert_eq!(score(ModelKind::DistMult, Norm::L2, &h, &r, &t), oracle);
    }

    #[test]
    fn complex_with_real_parts_only_is_distmult() {
        let h = [0.3, -1.2, 0.0, 0.0];
        let r = [2.0, 0.5, 0.0, 0.0];
        let t = [-0.7, 0.9, 0.0, 0.0];
        let c = score(ModelKind::ComplEx, Norm::L2, &h, &r, &t);
        let d = score(ModelKind::DistMult, Norm::L2, &h[..2], &r[..2], &t[..2]);
        assert_eq!(c, d);
        let gc = grads(ModelKind::ComplEx, Norm::L2, &h, &r, &t);
        let gd = grads(ModelKind::DistMult, Norm::L2, &h[..2], &r[..2], &t[..2]);
        assert_eq!(&gc.head[..2], gd.head.as_slice());
    }

    #[test]
    fn rotate_zero_phase_is_distance() {
        let h = [1.0, 2.0, 0.5, -0.5];
        let t = [0.0, 0.0, 0.0, 0.0];
        let s = score(ModelKind::RotatE, Norm::L2, &h, &[0.0, 0.0], &t);
        let dist = -(1.0f64 + 4.0 + 0.25 + 0.25).sqrt();
        assert!((s - dist).abs() < 1e-15);
        let transe = score(ModelKind::TransE, Norm::L2, &h, &[0.0; 4], &t);
        assert_eq!(s, transe);
    }

    #[test]
    fn transe_head_gradient() {
        let (h, r, t) = ([0.0, 0.0], [1.0, 0.0], [2.0, 0.0]);
        let g = grads(ModelKind::TransE, Norm::L2, &h, &r, &t).head;
        let fd = central_difference(|x| score(ModelKind::TransE, Norm::L2, x, &r, &t), &h, 1e-6);
        assert!((fd[0] - 1.0).abs() < 1e-8 && fd[1].abs() < 1e-8);
        assert_eq!(g, vec![1.0, 0.0]);
    }

    #[test]
    fn distmult_head_gradient() {
        let (h, r, t) = ([1.0, 2.0], [1.0, 1.0], [2.0, 1.0]);
        let fd = central_difference(|x| score(ModelKind::DistMult, Norm::L2, x, &r, &t), &h, 1e-6);
        assert!((fd[0] - 2.0).abs() < 1e-8 && (fd[1] - 1.0).abs() < 1e-8);
        assert_eq!(grads(ModelKind::DistMult, Norm::L2, &h, &r, &t).head, vec![2.0, 1.0]);
    }

    #[test]
    fn singular_point_has_zero_gradient() {
        let g = grads(ModelKind::TransE, Norm::L2, &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]);
        assert_eq!(g.head, vec![0.0, 0.0]);
        let g = grads(ModelKind::RotatE, Norm::L2, &[1.0, 0.0], &[0.0], &[1.0, 0.0]);
        assert_eq!(g.head, vec![0.0, 0.0]);
        assert_eq!(g.relation, vec![0.0]);
    }

    fn widths(model: ModelKind, dim: usize) -> (usize, usize) {
        (model.entity_width(dim), model.relation_width(dim))
    }

    fn check_all(model: ModelKind, h: Vec<f64>, r: Vec<f64>, t: Vec<f64>) -> Result<(), TestCaseError> {
        let g = grads(model, Norm::L2, &h, &r, &t);
        let cases = [
            (g.head, central_difference(|x| score(model, Norm::L2, x, &r, &t), &h, 1e-6)),
            (g.relation, central_difference(|x| score(model, Norm::L2, &h, x, &t), &r, 1e-6)),
            (g.tail, central_difference(|x| score(model, Norm::L2, &h, &r, x), &t, 1e-6)),
        ];
        for (analytic, numeric) in cases {
            let num: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
            prop_assert!(num / den < 1e-5, "{model:?}: {analytic:?} vs {numeric:?}");
        }
        Ok(())
    }

    proptest! {
        #[test]
        fn all_partials_match_finite_differences(
            model in prop::sample::select(vec![
                ModelKind::TransE, ModelKind::DistMult, ModelKind::ComplEx, ModelKind::RotatE,
            ]),
            seed in prop::collection::vec(-2.0f64..2.0, 3 * 2 * 4),
        ) {
            let (ew, rw) = widths(model, 4);
            let h = seed[..ew].to_vec();
            let r = seed[ew..ew + rw].to_vec();
            let t = seed[2 * ew..3 * ew].to_vec();
            check_all(model, h, r, t)?;
        }
    }
}
