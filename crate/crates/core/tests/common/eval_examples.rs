//! Worked metric examples, shared by the eval tests and the acceptance run.

use hiersplat::eval::{
    ate_rmse, depth_l1, level_ground_truth, miou, miou_from_confusion, miou_per_level, psnr, ConfusionMatrix, EvalError,
    TrajectoryPair, PSNR_CAP_DB,
};
use hiersplat::renderer::VOID_LABEL;
use hiersplat::scene::Pose;
use hiersplat::taxonomy::{presets, SemanticTree};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Must hold exactly.
    Trivial,
    /// Checked against an independent oracle within 1e-6.
    Derived,
}

pub struct Example {
    pub name: &'static str,
    pub kind: Kind,
    pub outcome: Result<(), String>,
}

const ORACLE_TOL: f64 = 1e-6;

fn exact(got: f64, want: f64) -> Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("got {got:e}, want exactly {want:e}"))
    }
}

/// For hand values whose inputs are not representable in binary (0.01 m).
fn to_rounding(got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= 1e-12 * want.abs().max(1.0) {
        Ok(())
    } else {
        Err(format!("got {got:e}, want {want:e}"))
    }
}

fn close(got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= ORACLE_TOL {
        Ok(())
    } else {
        Err(format!("got {got:e}, want {want:e} ± {ORACLE_TOL:e}"))
    }
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

fn line_trajectory(n: usize) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let i = i as f64;
            Pose::from_translation(Vector3::new(i, 2.0 * i - 3.0, -i))
        })
        .collect()
}

fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pose> {
    (0..n)
        .map(|_| {
            let t = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let q = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            Pose::from_raw(q, [t.x, t.y, t.z])
        })
        .collect()
}

/// Rigid-alignment oracle for the pure-translation case: the optimal
/// rotation is the identity and the optimal translation the centroid shift,
/// so the residual is the spread of the per-pose differences.
fn translation_only_residual_cm(est: &[Pose], gt: &[Pose]) -> f64 {
    let n = est.len() as f64;
    let d: Vec<Vector3<f64>> = est.iter().zip(gt).map(|(e, g)| g.translation - e.translation).collect();
    let mean = d.iter().sum::<Vector3<f64>>() / n;
    (d.iter().map(|v| (v - mean).norm_squared()).sum::<f64>() / n).sqrt() * 100.0
}

/// Wall, Floor under Structure; Chair, Table under Furniture.
fn sibling_tree() -> SemanticTree {
    SemanticTree::from_paths(&[
        vec!["Structure", "Wall"],
        vec!["Structure", "Floor"],
        vec!["Furniture", "Chair"],
        vec!["Furniture", "Table"],
    ])
    .unwrap()
}

fn ate_examples(out: &mut Vec<Example>) {
    let gt = line_trajectory(6);
    out.push(Example {
        name: "ate: identical trajectories give 0",
        kind: Kind::Trivial,
        outcome: (|| {
            let pair = TrajectoryPair::new(gt.clone(), gt.clone()).map_err(err)?;
            exact(ate_rmse(&pair, false).map_err(err)?, 0.0)
        })(),
    });
    let shifted: Vec<Pose> = gt
        .iter()
        .map(|p| Pose::from_translation(p.translation + Vector3::new(1.0, 0.0, 0.0)))
        .collect();
    out.push(Example {
        name: "ate: constant 1 m offset, unaligned, gives 100 cm",
        kind: Kind::Trivial,
        outcome: (|| {
            let pair = TrajectoryPair::new(shifted.clone(), gt.clone()).map_err(err)?;
            exact(ate_rmse(&pair, false).map_err(err)?, 100.0)
        })(),
    });
    out.push(Example {
        name: "ate: constant offset, aligned, matches the Procrustes oracle",
        kind: Kind::Derived,
        outcome: (|| {
            let pair = TrajectoryPair::new(shifted.clone(), gt.clone()).map_err(err)?;
            close(ate_rmse(&pair, true).map_err(err)?, translation_only_residual_cm(&shifted, &gt))?;
            close(ate_rmse(&pair, true).map_err(err)?, 0.0)
        })(),
    });
    out.push(Example {
        name: "ate: coincident estimates are a degenerate alignment",
        kind: Kind::Trivial,
        outcome: (|| {
            let est = vec![Pose::identity(); gt.len()];
            let pair = TrajectoryPair::new(est, gt.clone()).map_err(err)?;
            match ate_rmse(&pair, true) {
                Err(EvalError::DegenerateAlignment(_)) => Ok(()),
                other => Err(format!("{other:?}")),
            }
        })(),
    });
    out.push(Example {
        name: "ate: alignment undoes an arbitrary rigid motion",
        kind: Kind::Derived,
        outcome: (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let gt = random_trajectory(&mut rng, 12);
            let r = UnitQuaternion::from_euler_angles(0.4, -1.1, 2.3);
            let t = Vector3::new(0.3, -5.0, 2.0);
            let est: Vec<Pose> = gt.iter().map(|p| Pose::from_translation(r * p.translation + t)).collect();
            let pair = TrajectoryPair::new(est, gt).map_err(err)?;
            close(ate_rmse(&pair, true).map_err(err)?, 0.0)
        })(),
    });
    out.push(Example {
        name: "ate: aligned never exceeds unaligned (200 random pairs)",
        kind: Kind::Derived,
        outcome: (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for i in 0..200 {
                let n = rng.random_range(2..20);
                let pair = TrajectoryPair::new(random_trajectory(&mut rng, n), random_trajectory(&mut rng, n))
                    .map_err(err)?;
                let (a, u) = (ate_rmse(&pair, true).map_err(err)?, ate_rmse(&pair, false).map_err(err)?);
                check(a <= u + 1e-9, || format!("pair {i}: aligned {a} > unaligned {u}"))?;
            }
            Ok(())
        })(),
    });
}

fn depth_examples(out: &mut Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gt: Vec<f64> = (0..64).map(|_| rng.random_range(0.5..4.0)).collect();
    let valid = vec![true; gt.len()];
    out.push(Example {
        name: "depth: identical gives 0",
        kind: Kind::Trivial,
        outcome: depth_l1(&gt, &gt, &valid).map_err(err).and_then(|v| exact(v, 0.0)),
    });
    let plus: Vec<f64> = gt.iter().map(|d| d + 0.01).collect();
    out.push(Example {
        name: "depth: uniform +0.01 m gives 1 cm",
        kind: Kind::Trivial,
        outcome: depth_l1(&plus, &gt, &valid).map_err(err).and_then(|v| to_rounding(v, 1.0)),
    });
    let half: Vec<f64> = gt
        .iter()
        .enumerate()
        .map(|(i, d)| if i % 2 == 0 { d + 0.02 } else { *d })
        .collect();
    out.push(Example {
        name: "depth: half the pixels +0.02 m gives 1 cm",
        kind: Kind::Derived,
        outcome: depth_l1(&half, &gt, &valid).map_err(err).and_then(|v| close(v, 1.0)),
    });
    out.push(Example {
        name: "depth: masked-out pixels are ignored and an empty mask is an error",
        kind: Kind::Trivial,
        outcome: (|| {
            let mask: Vec<bool> = (0..gt.len()).map(|i| i % 2 == 1).collect();
            exact(depth_l1(&half, &gt, &mask).map_err(err)?, 0.0)?;
            match depth_l1(&gt, &gt, &vec![false; gt.len()]) {
                Err(EvalError::EmptyMask) => Ok(()),
                other => Err(format!("{other:?}")),
            }
        })(),
    });
}

fn psnr_examples(out: &mut Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let img: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..1.0)).collect();
    out.push(Example {
        name: "psnr: identical images give the 99 dB cap",
        kind: Kind::Trivial,
        outcome: psnr(&img, &img, 1.0).map_err(err).and_then(|v| exact(v, PSNR_CAP_DB)),
    });
    // Four of 100 pixels off by 0.5: MSE = 4 · 0.25 / 100 = 0.01.
    let a: Vec<f64> = (0..100).map(|i| if i < 4 { 0.75 } else { 0.5 }).collect();
    let b: Vec<f64> = (0..100).map(|i| if i < 4 { 0.25 } else { 0.5 }).collect();
    out.push(Example {
        name: "psnr: MSE 0.01 at peak 1 gives 20 dB",
        kind: Kind::Trivial,
        outcome: psnr(&a, &b, 1.0).map_err(err).and_then(|v| exact(v, 20.0)),
    });
    out.push(Example {
        name: "psnr: random pairs match the scalar reference",
        kind: Kind::Derived,
        outcome: (|| {
            for trial in 0..50 {
                let n = rng.random_range(1..500);
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                let peak = rng.random_range(0.5..2.0);
                let mut sse = 0.0;
                for k in 0..n {
                    sse += (x[k] - y[k]).powi(2);
                }
                let reference = 10.0 * (peak * peak / (sse / n as f64)).log10();
                let got = psnr(&x, &y, peak).map_err(err)?;
                check((got - reference).abs() <= 1e-9, || format!("trial {trial}: {got} vs {reference}"))?;
            }
            Ok(())
        })(),
    });
    out.push(Example {
        name: "psnr: strictly decreases with noise amplitude",
        kind: Kind::Derived,
        outcome: (|| {
            let noise: Vec<f64> = (0..img.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut last = f64::INFINITY;
            for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
                let noisy: Vec<f64> = img.iter().zip(&noise).map(|(p, n)| p + amp * n).collect();
                let v = psnr(&noisy, &img, 1.0).map_err(err)?;
                check(v < last, || format!("amplitude {amp}: {v} dB not below {last} dB"))?;
                last = v;
            }
            Ok(())
        })(),
    });
}

fn miou_examples(out: &mut Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let gt: Vec<u32> = (0..400)
        .map(|_| if rng.random_bool(0.1) { VOID_LABEL } else { rng.random_range(0..6) })
        .collect();
    out.push(Example {
        name: "miou: prediction equal to ground truth gives 100%",
        kind: Kind::Trivial,
        outcome: match miou(&gt, &gt, 6, VOID_LABEL).mean {
            Some(m) => exact(m, 100.0),
            None => Err("no classes evaluated".into()),
        },
    });
    out.push(Example {
        name: "miou: disjoint two-class prediction gives 0%",
        kind: Kind::Trivial,
        outcome: (|| {
            let g: Vec<u32> = (0..50).map(|i| i % 2).collect();
            let p: Vec<u32> = g.iter().map(|c| 1 - c).collect();
            exact(miou(&p, &g, 2, VOID_LABEL).mean.ok_or("empty")?, 0.0)
        })(),
    });
    out.push(Example {
        name: "miou: 50-pixel overlap of two 100-pixel regions gives IoU 50/150",
        kind: Kind::Derived,
        outcome: (|| {
            // ground truth: A on 0..100, B on 100..200; prediction: A on 50..150
            let g: Vec<u32> = (0..200).map(|i| u32::from(i >= 100)).collect();
            let p: Vec<u32> = (0..200).map(|i| u32::from(!(50..150).contains(&i))).collect();
            let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
            for (a, b) in p.iter().zip(&g) {
                match (*a == 0, *b == 0) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            let oracle = f64::from(tp) / f64::from(tp + fp + fn_);
            close(oracle, 50.0 / 150.0)?;
            let got = miou(&p, &g, 2, VOID_LABEL).per_class[0].ok_or("class A missing")?;
            close(got, oracle)
        })(),
    });
    out.push(Example {
        name: "miou: VOID pixels are ignored and absent classes excluded",
        kind: Kind::Trivial,
        outcome: (|| {
            let g = vec![0, 0, VOID_LABEL, 1];
            let p = vec![0, 0, 1, 1];
            let r = miou(&p, &g, 5, VOID_LABEL);
            check(r.per_class[2..].iter().all(Option::is_none), || format!("{:?}", r.per_class))?;
            exact(r.mean.ok_or("empty")?, 100.0)
        })(),
    });
    out.push(Example {
        name: "miou: invariant under a bijective relabeling",
        kind: Kind::Derived,
        outcome: (|| {
            let p: Vec<u32> = gt
                .iter()
                .map(|&g| if g != VOID_LABEL && rng.random_bool(0.7) { g } else { rng.random_range(0..6) })
                .collect();
            let perm = [4u32, 0, 5, 2, 1, 3];
            let relabel = |v: &[u32]| -> Vec<u32> {
                v.iter().map(|&c| if c == VOID_LABEL { c } else { perm[c as usize] }).collect()
            };
            let a = miou(&p, &gt, 6, VOID_LABEL).mean.ok_or("empty")?;
            let b = miou(&relabel(&p), &relabel(&gt), 6, VOID_LABEL).mean.ok_or("empty")?;
            close(a, b)
        })(),
    });
    out.push(Example {
        name: "miou: class subset filter averages only the listed classes",
        kind: Kind::Derived,
        outcome: (|| {
            let g: Vec<u32> = (0..200).map(|i| u32::from(i >= 100)).collect();
            let p: Vec<u32> = (0..200).map(|i| u32::from(!(50..150).contains(&i))).collect();
            let mut cm = ConfusionMatrix::new(2);
            cm.add(&p, &g, VOID_LABEL);
            close(miou_from_confusion(&cm, Some(&[1])).mean.ok_or("empty")?, 100.0 * 50.0 / 150.0)
        })(),
    });
}

fn level_examples(out: &mut Vec<Example>) {
    let tree = sibling_tree();
    let leaves: Vec<u32> = vec![0, 0, 1, 1, 2, 3, 3, VOID_LABEL];
    let coarse = |leaf: &[u32]| -> Vec<u32> {
        leaf.iter()
            .map(|&l| if l == VOID_LABEL { l } else { tree.node_path(l as usize)[0] as u32 })
            .collect()
    };
    out.push(Example {
        name: "miou per level: perfect finest prediction gives 100% everywhere",
        kind: Kind::Trivial,
        outcome: (|| {
            let got = miou_per_level(&tree, &[coarse(&leaves), leaves.clone()], &leaves);
            for m in got {
                exact(m.ok_or("empty level")?, 100.0)?;
            }
            Ok(())
        })(),
    });
    out.push(Example {
        name: "miou per level: sibling confusion keeps the parent level perfect",
        kind: Kind::Derived,
        outcome: (|| {
            // Wall ↔ Floor and Chair ↔ Table swapped on some pixels.
            let pred_leaf: Vec<u32> = vec![0, 1, 1, 0, 2, 3, 2, VOID_LABEL];
            let got = miou_per_level(&tree, &[coarse(&pred_leaf), pred_leaf.clone()], &leaves);
            exact(got[0].ok_or("empty")?, 100.0)?;
            let fine = got[1].ok_or("empty")?;
            // Oracle by counting: Wall 1/3, Floor 1/3, Chair 1/2, Table 1/2.
            close(fine, 100.0 * (1.0 / 3.0 + 1.0 / 3.0 + 0.5 + 0.5) / 4.0)
        })(),
    });
    out.push(Example {
        name: "miou per level: all-VOID ground truth gives an empty result",
        kind: Kind::Trivial,
        outcome: (|| {
            let void = vec![VOID_LABEL; 8];
            let got = miou_per_level(&tree, &[vec![0; 8], vec![1; 8]], &void);
            check(got.iter().all(Option::is_none), || format!("{got:?}"))
        })(),
    });
    out.push(Example {
        name: "miou per level: a correct leaf implies correct ancestors at every level",
        kind: Kind::Derived,
        outcome: (|| {
            let tree = SemanticTree::from_paths(&presets::replica_style_paths()).map_err(err)?;
            let leaves = tree.num_leaves() as u32;
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let gt: Vec<u32> = (0..2000).map(|_| rng.random_range(0..leaves)).collect();
            let pred: Vec<u32> =
                gt.iter().map(|&l| if rng.random_bool(0.5) { l } else { rng.random_range(0..leaves) }).collect();
            for level in 0..tree.num_levels() {
                let (p, g) = (level_ground_truth(&tree, &pred, level), level_ground_truth(&tree, &gt, level));
                for i in 0..gt.len() {
                    if pred[i] == gt[i] {
                        check(p[i] == g[i], || format!("pixel {i}: leaf correct but level {level} wrong"))?;
                    }
                }
            }
            Ok(())
        })(),
    });
}

pub fn run() -> Vec<Example> {
    let mut out = Vec::new();
    ate_examples(&mut out);
    depth_examples(&mut out);
    psnr_examples(&mut out);
    miou_examples(&mut out);
    level_examples(&mut out);
    out
}
