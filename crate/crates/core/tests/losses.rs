use oreo::losses::{loss_attributes, loss_identity, loss_stl, NegativeSide};
use oreo::tensor::Linear;
use proptest::prelude::*;

const MARGIN: f64 = 0.2;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Every candidate negative enumerated explicitly; first strictly greater wins.
fn brute_stl(n: &[Vec<f64>], o: &[Vec<f64>], m: f64) -> (f64, Vec<(usize, NegativeSide)>) {
    let p = n.len();
    let mut total = 0.0;
    let mut picks = Vec::new();
    for i in 0..p {
        let mut cands = Vec::new();
        for j in 0..p {
            if j != i {
                cands.push((cos(&n[i], &o[j]), j, NegativeSide::Row));
            }
        }
        for j in 0..p {
            if j != i {
                cands.push((cos(&n[j], &o[i]), j, NegativeSide::Column));
            }
        }
        let mut best = cands[0];
        for c in &cands[1..] {
            if c.0 > best.0 {
                best = *c;
            }
        }
        total += (best.0 - cos(&n[i], &o[i]) + m).max(0.0);
        picks.push((best.1, best.2));
    }
    (total, picks)
}

fn templates(p: usize, d: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let v = prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), p);
    (v.clone(), v).prop_filter("nonzero templates", |(a, b)| {
        a.iter().chain(b).all(|t| t.iter().map(|x| x * x).sum::<f64>() > 1e-3)
    })
}

proptest! {
    #[test]
    fn stl_ignores_per_template_scale(
        (n, o) in templates(4, 6),
        scales in prop::collection::vec(0.01f64..100.0, 8),
    ) {
        let base = loss_stl(&n, &o, MARGIN).unwrap();
        let sn: Vec<Vec<f64>> = n.iter().zip(&scales[..4]).map(|(t, &k)| t.iter().map(|x| x * k).collect()).collect();
        let so: Vec<Vec<f64>> = o.iter().zip(&scales[4..]).map(|(t, &k)| t.iter().map(|x| x * k).collect()).collect();
        let scaled = loss_stl(&sn, &so, MARGIN).unwrap();
        prop_assert!((base.value - scaled.value).abs() <= 1e-12);
    }

    #[test]
    fn stl_matches_brute_force_miner((n, o) in templates(5, 4)) {
        let got = loss_stl(&n, &o, MARGIN).unwrap();
        let (want, picks) = brute_stl(&n, &o, MARGIN);
        prop_assert!((got.value - want).abs() <= 1e-12);
        for (m, &(j, side)) in got.mined.iter().zip(&picks) {
            prop_assert_eq!((m.negative, m.side), (j, side));
        }
    }

    #[test]
    fn stl_value_is_symmetric_in_swapping_views((n, o) in templates(4, 5)) {
        // rows and columns trade places, and every anchor considers both
        let a = loss_stl(&n, &o, MARGIN).unwrap().value;
        let b = loss_stl(&o, &n, MARGIN).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
    let h = 1e-6;
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

fn close(a: f64, n: f64) -> bool {
    (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-5)
}

#[test]
fn identity_loss_gradients_match_differences() {
    let templates = vec![vec![0.3, -0.2, 0.9], vec![-0.5, 0.4, 0.1]];
    let labels = vec![2, 0];
    let mut clf = Linear::<f64>::zeros(4, 3);
    for (k, w) in clf.weight.data.iter_mut().enumerate() {
        *w = ((k * 7 % 11) as f64 - 5.0) / 10.0;
    }
    let out = loss_identity(&templates, &labels, &clf).unwrap();
    for i in 0..clf.weight.data.len() {
        let n = fd(
            |w| {
                let mut c = clf.clone();
                c.weight.data.copy_from_slice(w);
                loss_identity(&templates, &labels, &c).unwrap().value
            },
            &clf.weight.data,
            i,
        );
        assert!(close(out.grad.weight.data[i], n), "weight {i}");
    }
    for (t, d) in out.d_templates.iter().enumerate() {
        for i in 0..3 {
            let n = fd(
                |x| {
                    let mut ts = templates.clone();
                    ts[t] = x.to_vec();
                    loss_identity(&ts, &labels, &clf).unwrap().value
                },
                &templates[t],
                i,
            );
            assert!(close(d[i], n), "template {t}[{i}]");
        }
    }
}

#[test]
fn attribute_loss_gradients_match_differences() {
    let logits = vec![vec![0.5, -2.0, 3.0], vec![-0.1, 0.7, -4.0]];
    let labels = vec![vec![1, 0, 1], vec![0, 0, 1]];
    let out = loss_attributes(&logits, &labels).unwrap();
    for (r, d) in out.d_logits.iter().enumerate() {
        for i in 0..3 {
            let n = fd(
                |x| {
                    let mut l = logits.clone();
                    l[r] = x.to_vec();
                    loss_attributes(&l, &labels).unwrap().value
                },
                &logits[r],
                i,
            );
            assert!(close(d[i], n), "logit {r}[{i}]");
        }
    }
}

#[test]
fn stl_gradients_match_differences() {
    let n = vec![vec![1.0, 0.2, -0.3], vec![0.4, 0.9, 0.1], vec![-0.2, 0.3, 1.0]];
    let o = vec![vec![0.5, 0.8, 0.0], vec![0.9, -0.1, 0.4], vec![0.1, 0.2, 0.7]];
    let out = loss_stl(&n, &o, MARGIN).unwrap();
    assert!(out.mined.iter().any(|m| m.active));
    for k in 0..3 {
        for i in 0..3 {
            let gn = fd(
                |x| {
                    let mut v = n.clone();
                    v[k] = x.to_vec();
                    loss_stl(&v, &o, MARGIN).unwrap().value
                },
                &n[k],
                i,
            );
            let go = fd(
                |x| {
                    let mut v = o.clone();
                    v[k] = x.to_vec();
                    loss_stl(&n, &v, MARGIN).unwrap().value
                },
                &o[k],
                i,
            );
            assert!(close(out.d_non_occluded[k][i], gn), "non-occluded {k}[{i}]");
            assert!(close(out.d_occluded[k][i], go), "occluded {k}[{i}]");
        }
    }
}

#[test]
fn identity_loss_falls_as_the_true_logit_margin_grows() {
    let t = vec![vec![1.0]];
    let mut last = 3f64.ln();
    for m in [0.5, 1.0, 2.0] {
        let mut clf = Linear::<f64>::zeros(3, 1);
        clf.weight.data[1] = m;
        let v = loss_identity(&t, &[1], &clf).unwrap().value;
        assert!(v < last);
        last = v;
    }
}
