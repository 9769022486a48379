//! Test-only oracles and reusable checks. The oracles never call into the
//! code under test; `checks` compares that code against them.
#![allow(dead_code)]

pub mod checks;

/// Reference optimum of the bias-augmented hinge SVM found by accelerated
/// projected gradient on the dual, certified by the duality gap.
pub struct Reference {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

fn augmented(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| r.iter().copied().chain(std::iter::once(1.0)).collect())
        .collect()
}

fn primal_value(w: &[f64], xa: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = xa
        .iter()
        .zip(y)
        .map(|(r, yi)| {
            let s: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
            (1.0 - yi * s).max(0.0)
        })
        .sum();
    reg + c * loss
}

pub fn reference_svm(x: &[Vec<f64>], y: &[f64], c: f64) -> Reference {
    let xa = augmented(x);
    let n = xa.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| y[i] * y[j] * xa[i].iter().zip(&xa[j]).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        })
        .collect();
    let lipschitz: f64 = (0..n).map(|i| q[i][i]).sum::<f64>().max(1e-12);
    let dual_of = |a: &[f64]| -> f64 {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += a[i] * q[i][j] * a[j];
            }
        }
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let weights_of = |a: &[f64]| -> Vec<f64> {
        let mut w = vec![0.0; xa[0].len()];
        for i in 0..n {
            for (wk, xk) in w.iter_mut().zip(&xa[i]) {
                *wk += a[i] * y[i] * xk;
            }
        }
        w
    };
    let mut alpha = vec![0.0; n];
    let mut prev = alpha.clone();
    let mut momentum = 1.0f64;
    let mut best_primal = f64::INFINITY;
    let mut best_dual = f64::NEG_INFINITY;
    for it in 0..400_000 {
        let t_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / t_next;
        let v: Vec<f64> = (0..n).map(|i| alpha[i] + beta * (alpha[i] - prev[i])).collect();
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let grad: f64 = (0..n).map(|j| q[i][j] * v[j]).sum::<f64>() - 1.0;
                (v[i] - grad / lipschitz).clamp(0.0, c)
            })
            .collect();
        prev = std::mem::replace(&mut alpha, next);
        momentum = t_next;
        if dual_of(&alpha) < dual_of(&prev) {
            // adaptive restart
            momentum = 1.0;
        }
        if it % 500 == 0 {
            best_dual = best_dual.max(dual_of(&alpha));
            best_primal = best_primal.min(primal_value(&weights_of(&alpha), &xa, y, c));
            if best_primal - best_dual < 1e-10 {
                break;
            }
        }
    }
    best_dual = best_dual.max(dual_of(&alpha));
    best_primal = best_primal.min(primal_value(&weights_of(&alpha), &xa, y, c));
    Reference {
        primal: best_primal,
        dual: best_dual,
        gap: best_primal - best_dual,
    }
}

/// Column means, summed frame by frame.
pub fn oracle_feature_saliency(x: &[Vec<f64>]) -> Vec<f64> {
    let d = x[0].len();
    (0..d)
        .map(|j| {
            let mut s = 0.0;
            for row in x {
                s += row[j];
            }
            s / x.len() as f64
        })
        .collect()
}

/// Repeatedly takes the largest remaining score, the lowest index on ties.
pub fn oracle_top(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            match best {
                Some(b) if scores[i] <= scores[b] => {}
                _ => best = Some(i),
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

pub fn oracle_frame_saliency(x: &[Vec<f64>], feats: &[usize]) -> Vec<f64> {
    x.iter()
        .map(|row| {
            let mut s = 0.0;
            for &j in feats {
                s += row[j];
            }
            s / feats.len() as f64
        })
        .collect()
}

pub fn oracle_top_frames(frame_sal: &[f64], q: usize) -> Vec<usize> {
    let mut f = oracle_top(frame_sal, q);
    f.sort_unstable();
    f
}

pub fn oracle_foreground(x: &[Vec<f64>], k: usize, q: usize) -> Vec<f64> {
    let d = x[0].len();
    let feats = oracle_top(&oracle_feature_saliency(x), k);
    let frames = oracle_top_frames(&oracle_frame_saliency(x, &feats), q);
    let mut out = vec![0.0; d];
    for &j in &feats {
        let mut s = 0.0;
        for &t in &frames {
            s += x[t][j];
        }
        out[j] = s / frames.len() as f64;
    }
    out
}

pub fn oracle_background(x: &[Vec<f64>], selected: &[usize]) -> Vec<f64> {
    let d = x[0].len();
    let rest: Vec<usize> = (0..x.len()).filter(|t| !selected.contains(t)).collect();
    if rest.is_empty() {
        return vec![0.0; d];
    }
    (0..d)
        .map(|j| rest.iter().map(|&t| x[t][j]).sum::<f64>() / rest.len() as f64)
        .collect()
}

/// Wu-Palmer from explicit root paths of a parent map.
pub fn oracle_wup(parent: &std::collections::BTreeMap<String, String>, nodes: &[String], a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let known = |w: &str| nodes.iter().any(|n| n == w);
    if !known(a) || !known(b) {
        return 0.0;
    }
    let path = |w: &str| {
        let mut p = vec![w.to_string()];
        while let Some(up) = parent.get(p.last().unwrap()) {
            p.push(up.clone());
        }
        p.reverse();
        p
    };
    let (pa, pb) = (path(a), path(b));
    let common = pa.iter().zip(&pb).take_while(|(x, y)| x == y).count();
    2.0 * common as f64 / (pa.len() + pb.len()) as f64
}
