//! Property checks shared by the per-module tests and the acceptance run.
//! Each returns `Err` with a description of the first violation.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storyline::dataset_io::{AnnotationSet, FeatureSequence, Slot, Split, Taxonomy, Triplet};
use storyline::evaluation::{binary_score, evaluate, wup, wup_score, Mode, Prediction};
use storyline::saliency::{
    background_descriptor, feature_saliency, foreground_descriptor, frame_saliency, select_top_features,
    select_top_frames,
};
use storyline::story::{build_context_descriptor, Level, StoryConfig, StoryModel};
use storyline::svm::{dual_objective, primal_objective, train_binary, train_binary_traced, TrainConfig};
use storyline::synthgen::{generate, Scenario, SynthConfig};

use super::{
    oracle_background, oracle_feature_saliency, oracle_foreground, oracle_frame_saliency, oracle_top,
    oracle_top_frames, oracle_wup, reference_svm,
};

type Check = Result<(), String>;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Random non-negative matrix; every other case uses small integers so
/// saliency ties are common.
pub fn random_matrix(rng: &mut ChaCha8Rng, frames: usize, d: usize, integer: bool) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| {
            (0..d)
                .map(|_| if integer { rng.random_range(0..4) as f64 } else { rng.random::<f64>() * 5.0 })
                .collect()
        })
        .collect()
}

/// Every selection operation against the brute-force oracles.
pub fn selection_matches_oracles(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let frames = rng.random_range(1..=100);
        let d = rng.random_range(1..=64);
        let k = rng.random_range(1..=d + 5);
        let q = rng.random_range(1..=frames + 5);
        let x = random_matrix(&mut rng, frames, d, case % 2 == 1);
        let seq = FeatureSequence::from_rows("m", &x).map_err(|e| e.to_string())?;
        let ctx = format!("case {case} (T={frames}, d={d}, k={k}, q={q})");

        let fs = feature_saliency(&seq);
        let ofs = oracle_feature_saliency(&x);
        if !close(&fs, &ofs, 1e-12) {
            return Err(format!("{ctx}: feature saliency differs"));
        }
        let feats = select_top_features(&fs, k);
        if feats != oracle_top(&ofs, k) {
            return Err(format!("{ctx}: top features {feats:?} vs {:?}", oracle_top(&ofs, k)));
        }
        let frs = frame_saliency(&seq, &feats);
        let ofr = oracle_frame_saliency(&x, &feats);
        if !close(&frs, &ofr, 1e-12) {
            return Err(format!("{ctx}: frame saliency differs"));
        }
        let frames_sel = select_top_frames(&frs, q);
        if frames_sel != oracle_top_frames(&ofr, q) {
            return Err(format!("{ctx}: top frames {frames_sel:?} vs {:?}", oracle_top_frames(&ofr, q)));
        }
        let fg = foreground_descriptor(&seq, k, q);
        if !close(&fg.values, &oracle_foreground(&x, k, q), 1e-12) {
            return Err(format!("{ctx}: foreground descriptor differs"));
        }
        let bg = background_descriptor(&seq, &frames_sel);
        if !close(&bg, &oracle_background(&x, &frames_sel), 1e-12) {
            return Err(format!("{ctx}: background descriptor differs"));
        }
    }
    Ok(())
}

pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    loop {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| {
                let s: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.7..0.7);
                if s >= 0.0 { 1.0 } else { -1.0 }
            })
            .collect();
        if y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0) {
            return (x, y);
        }
    }
}

pub fn two_point_max_margin() -> Check {
    let x = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
    let y = vec![1.0, -1.0];
    let m = train_binary(&x, &y, &TrainConfig { c: 1.0, tol: 1e-6, max_iter: 10_000, seed: 0 })
        .map_err(|e| e.to_string())?;
    let ok = (m.weights[0] - 1.0).abs() <= 1e-3 && m.weights[1].abs() <= 1e-3 && m.bias.abs() <= 1e-3;
    if ok {
        Ok(())
    } else {
        Err(format!("w={:?} b={}", m.weights, m.bias))
    }
}

pub fn objective_monotone(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let n = rng.random_range(5..200);
        let d = rng.random_range(1..20);
        let (x, y) = random_problem(&mut rng, n, d);
        let cfg = TrainConfig { c: [0.1, 1.0, 10.0][trial % 3], tol: 1e-6, max_iter: 2000, seed: trial as u64 };
        let (_, trace) = train_binary_traced(&x, &y, &cfg).map_err(|e| e.to_string())?;
        for w in trace.primal.windows(2) {
            if w[1] > w[0] + 1e-9 {
                return Err(format!("trial {trial}: primal rose {} -> {}", w[0], w[1]));
            }
        }
        for w in trace.dual.windows(2) {
            if w[1] < w[0] - 1e-9 {
                return Err(format!("trial {trial}: dual fell {} -> {}", w[0], w[1]));
            }
        }
    }
    Ok(())
}

pub fn reference_agreement(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=3);
        let (x, y) = random_problem(&mut rng, n, d);
        let c = [0.5, 1.0, 4.0][trial % 3];
        let reference = reference_svm(&x, &y, c);
        if reference.gap >= 1e-7 {
            return Err(format!("trial {trial}: reference did not certify (gap {})", reference.gap));
        }
        let cfg = TrainConfig { c, tol: 1e-6, max_iter: 100_000, seed: trial as u64 };
        let m = train_binary(&x, &y, &cfg).map_err(|e| e.to_string())?;
        let p = primal_objective(&m, &x, &y, c);
        if (p - reference.primal).abs() > 1e-4 {
            return Err(format!("trial {trial}: solver {p} vs reference {}", reference.primal));
        }
    }
    Ok(())
}

pub fn duality_gap(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &(n, d) in &[(50, 5), (400, 40), (2000, 20)] {
        let (x, y) = random_problem(&mut rng, n, d);
        let cfg = TrainConfig { c: 1.0, tol: 1e-6, max_iter: 50_000, seed: 1 };
        let (m, trace) = train_binary_traced(&x, &y, &cfg).map_err(|e| e.to_string())?;
        let p = primal_objective(&m, &x, &y, cfg.c);
        let dual = dual_objective(&trace.alpha, &x, &y);
        if !trace.converged {
            return Err(format!("n={n}: no convergence in {} epochs", trace.epochs));
        }
        if p - dual > 1e-3 * (1.0 + p.abs()) || p - dual < -1e-9 {
            return Err(format!("n={n}: gap {}", p - dual));
        }
    }
    Ok(())
}

/// Sparsity bounds on every video of a 200-video dataset, plus agreement
/// of the kept context positions with a brute-force top-c.
pub fn sparsity_contracts(seed: u64) -> Check {
    let mut synth = SynthConfig::for_scenario(Scenario::CtxVerb, seed);
    synth.n_train = 150;
    synth.n_test = 50;
    let ds = generate(&synth).map_err(|e| e.to_string())?;
    let train = ds.labelled(Split::Train);
    for c in 1..=3 {
        let cfg = StoryConfig { k: 24, q: 10, c, ..StoryConfig::default() };
        let (model, _) = StoryModel::train(&train, ds.vocabularies.clone(), cfg, Level::L2).map_err(|e| e.to_string())?;
        let l2 = model.banks(Level::L2).map_err(|e| e.to_string())?;
        let sizes = ds.vocabularies.each_ref().map(|v| v.len());
        for seq in &ds.sequences {
            let fg = foreground_descriptor(seq, cfg.k, cfg.q);
            if fg.nonzeros() > cfg.k.min(seq.dim()) {
                return Err(format!("{}: FG has {} non-zeros", seq.video_id, fg.nonzeros()));
            }
            for temporal in [false, true] {
                let cfg = StoryConfig { temporal, ..cfg };
                let ctx = build_context_descriptor(l2, seq, &cfg).map_err(|e| e.to_string())?;
                let bound = if temporal { 9 * c } else { 3 * c };
                if ctx.nonzeros() > bound {
                    return Err(format!("{}: context has {} non-zeros > {bound}", seq.video_id, ctx.nonzeros()));
                }
                if !temporal {
                    let l2d = model.descriptor(seq, Level::L2).map_err(|e| e.to_string())?;
                    let mut offset = 0;
                    for (bank, &size) in l2.iter().zip(&sizes) {
                        let scores = bank.decision_values_for(&l2d).map_err(|e| e.to_string())?;
                        let keep: BTreeSet<usize> = oracle_top(&scores, c).into_iter().collect();
                        for (i, s) in scores.iter().enumerate() {
                            let want = if keep.contains(&i) { *s } else { 0.0 };
                            if ctx.values[offset + i] != want {
                                return Err(format!("{}: context position {} differs", seq.video_id, offset + i));
                            }
                        }
                        offset += size;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Toy taxonomy root -> animal -> {dog, cat}.
pub fn toy_taxonomy() -> Taxonomy {
    Taxonomy::from_pairs(&[("animal", "root"), ("dog", "animal"), ("cat", "animal")]).unwrap()
}

pub fn wup_hand_cases() -> Check {
    let t = toy_taxonomy();
    let cases = [
        (wup(&t, "dog", "cat"), 2.0 / 3.0, "wup(dog, cat)"),
        (wup(&t, "dog", "dog"), 1.0, "wup(dog, dog)"),
        (wup(&t, "dog", "unknown_word"), 0.0, "wup(dog, unknown_word)"),
        (wup(&t, "animal", "root"), 2.0 / 3.0, "wup(animal, root)"),
    ];
    for (got, want, name) in cases {
        if got != want {
            return Err(format!("{name} = {got}, expected {want}"));
        }
    }
    Ok(())
}

/// Random tree over `n` nodes; node i > 0 hangs under a uniformly chosen
/// earlier node.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> (BTreeMap<String, String>, Vec<String>) {
    let nodes: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let parent = (1..n)
        .map(|i| (nodes[i].clone(), nodes[rng.random_range(0..i)].clone()))
        .collect();
    (parent, nodes)
}

pub fn taxonomy_of(parent: &BTreeMap<String, String>) -> Taxonomy {
    let pairs: Vec<(&str, &str)> = parent.iter().map(|(c, p)| (c.as_str(), p.as_str())).collect();
    Taxonomy::from_pairs(&pairs).unwrap()
}

/// Per-video and aggregate dominance (wup >= binary, any >= most) plus
/// agreement of `wup` with the root-path oracle.
pub fn scoring_dominance(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut case = 0;
    while case < cases {
        let n = rng.random_range(2..25);
        let (parent, nodes) = random_tree(&mut rng, n);
        let tax = taxonomy_of(&parent);
        let mut words = nodes.clone();
        words.extend((0..3).map(|i| format!("unknown{i}")));
        let pick = |rng: &mut ChaCha8Rng| words[rng.random_range(0..words.len())].clone();
        let mut predictions = Vec::new();
        let mut annotations = BTreeMap::new();
        for v in 0..100 {
            let id = format!("v{v}");
            let triplets: Vec<Triplet> = (0..rng.random_range(1..6))
                .map(|_| Triplet::new(pick(&mut rng), pick(&mut rng), pick(&mut rng)))
                .collect();
            let ann = AnnotationSet { video_id: id.clone(), triplets };
            let pred = Triplet::new(pick(&mut rng), pick(&mut rng), pick(&mut rng));
            for slot in Slot::ALL {
                let p = pred.get(slot);
                let bm = binary_score(p, &ann, slot, Mode::Most);
                let ba = binary_score(p, &ann, slot, Mode::Any);
                let wm = wup_score(&tax, p, &ann, slot, Mode::Most);
                let wa = wup_score(&tax, p, &ann, slot, Mode::Any);
                if !(wm >= bm && wa >= ba && ba >= bm && wa >= wm) {
                    return Err(format!("case {case}: bm={bm} ba={ba} wm={wm} wa={wa}"));
                }
                for w in ann.words(slot) {
                    let got = wup(&tax, p, w);
                    let want = oracle_wup(&parent, &nodes, p, w);
                    if (got - want).abs() > 1e-12 {
                        return Err(format!("case {case}: wup({p}, {w}) = {got}, oracle {want}"));
                    }
                }
                case += 1;
            }
            predictions.push(Prediction::new(id.clone(), pred));
            annotations.insert(id, ann);
        }
        let known: BTreeSet<String> = annotations.keys().cloned().collect();
        let report = evaluate(&predictions, &annotations, Some(&tax), &known).map_err(|e| e.to_string())?;
        for slot in Slot::ALL {
            let s = report.slot(slot);
            if !(s.wup_most >= s.binary_most && s.wup_any >= s.binary_any && s.binary_any >= s.binary_most && s.wup_any >= s.wup_most) {
                return Err(format!("aggregate dominance fails: {s:?}"));
            }
        }
    }
    Ok(())
}
