mod common;

use common::*;
use ndarray::{Array1, Array2, Axis};
use pppn_core::dataset::{load_head, DatasetManifest};
use pppn_core::decompose::{
    decompose_class, decompose_head, naive_distribute, refine_prototypes, spatial_norm,
    DecomposeConfig, RefineConfig, RefinementMode,
};
use pppn_core::nmf::NmfConfig;
use pppn_core::synthetic::{generate, SyntheticConfig};
use pppn_core::{archive, tensor};
use proptest::prelude::*;

fn cfg(k: usize, seed: u64, mode: RefinementMode) -> DecomposeConfig {
    DecomposeConfig {
        nmf: NmfConfig { k, seed, ..Default::default() },
        refine: RefineConfig::default(),
        mode,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reconstruction_is_exact(seed in 0u64..10_000, k in 1usize..5, d in 4usize..12, naive in any::<bool>()) {
        let mut g = rng(seed);
        let f = uniform(30, d, &mut g);
        let v = centered(d, &mut g) * 3.0;
        let mode = if naive { RefinementMode::Naive } else { RefinementMode::Dynamic };
        let dec = decompose_class(0, f.view(), v.view(), &cfg(k, seed, mode)).unwrap();
        let vinf = max_abs(v.iter().copied());
        prop_assert!(dec.reconstruction_error(v.view()) <= 1e-6 * vinf.max(1.0));
        let rinf = max_abs(dec.residual.iter().copied());
        prop_assert!(dec.constraint_violation() <= 1e-9 * (1.0 + rinf));
        prop_assert!(dec.final_objective() <= dec.initial_objective());
    }

    #[test]
    fn normalization_keeps_argmax(h in proptest::collection::vec(-100.0f64..100.0, 1..64)) {
        let col = Array1::from(h.clone());
        let n = spatial_norm(col.view());
        prop_assert!(n.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let am = |xs: &[f64]| xs.iter().enumerate().fold(0, |b, (i, &x)| if x > xs[b] { i } else { b });
        prop_assert_eq!(am(&h), am(n.as_slice().unwrap()));
    }
}

#[test]
fn refinement_beats_naive_on_small_instance() {
    // n=2, H=W=2, D=6, k=2
    let mut g = rng(21);
    let f = uniform(2 * 2 * 2, 6, &mut g);
    let p = uniform(2, 6, &mut g);
    let alpha = Array1::from(vec![1.3, 0.6]);
    let r = centered(6, &mut g);
    let out = refine_prototypes(f.view(), p.view(), alpha.view(), r.view(), &RefineConfig::default()).unwrap();
    let naive = naive_distribute(r.view(), alpha.view()).unwrap();
    let before = refine_objective_loop(&f, &p, &naive);
    let after = refine_objective_loop(&f, &p, &out.parts);
    assert!(after <= before, "{after} > {before}");
    assert!((out.objective_trace[0] - before).abs() <= 1e-12 * (1.0 + before));
    let sum = out.parts.sum_axis(Axis(0));
    assert!(max_abs((&sum - &r).iter().copied()) <= 1e-12);
}

#[test]
fn planted_two_part_class() {
    // Part 1 lives on channels 0..3, part 2 on channels 3..6.
    let p1 = Array1::from(vec![1.0, 0.5, 0.8, 0.0, 0.0, 0.0]);
    let p2 = Array1::from(vec![0.0, 0.0, 0.0, 0.7, 1.2, 0.4]);
    let v = &p1 * 2.0 + &p2 * 3.0;
    let mut g = rng(5);
    let rows = 40;
    let mut f = Array2::<f64>::zeros((rows, 6));
    let mut owner = vec![0usize; rows];
    for (n, o) in owner.iter_mut().enumerate() {
        let (part, amp) = (n % 2, 0.8 + 0.4 * rand::Rng::random::<f64>(&mut g));
        *o = part;
        let src = if part == 0 { &p1 } else { &p2 };
        f.row_mut(n).scaled_add(amp, src);
    }
    let dec = decompose_class(0, f.view(), v.view(), &cfg(2, 3, RefinementMode::Dynamic)).unwrap();
    assert!(dec.reconstruction_error(v.view()) <= 1e-9);
    // NMF stops early, so only a small residual is left to redistribute.
    assert!(max_abs(dec.residual.iter().copied()) <= 0.05 * max_abs(v.iter().copied()));

    let mut matched = [false; 2];
    for proto in dec.refined.rows() {
        let heat = spatial_norm(f.dot(&proto).view());
        let hot: Vec<usize> = (0..rows).filter(|&n| heat[n] >= 0.5).collect();
        let part = owner[hot[0]];
        assert!(hot.iter().all(|&n| owner[n] == part), "prototype mixes parts");
        assert_eq!(hot.len(), rows / 2, "prototype misses positions of its part");
        matched[part] = true;
    }
    assert_eq!(matched, [true, true]);
}

#[test]
fn head_batch_with_missing_class() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&SyntheticConfig { classes: 3, images: 4, channels: 12, seed: 2, ..Default::default() });
    data.write(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("class_01_features.pptn")).unwrap();
    let manifest = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
    let head = load_head(dir.path().join("head.pptn"), Some(&manifest)).unwrap();
    let out = decompose_head(&manifest, &head, &cfg(3, 0, RefinementMode::Naive), true);
    assert_eq!(out.classes.len(), 2);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].class_id, 1);
}

#[test]
fn single_class_batch_equals_class_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&SyntheticConfig { classes: 1, images: 3, channels: 9, seed: 4, ..Default::default() });
    data.write(dir.path()).unwrap();
    let manifest = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
    let head = load_head(dir.path().join("head.pptn"), Some(&manifest)).unwrap();
    let c = cfg(3, 9, RefinementMode::Dynamic);
    let batch = decompose_head(&manifest, &head, &c, true);
    let stack = pppn_core::load_feature_stack(&manifest, 0, true).unwrap();
    let single = decompose_class(0, stack.data.view(), head.weights.row(0), &c).unwrap();
    assert_eq!(batch.classes, vec![single]);
}

#[test]
fn ten_class_batch_invariants_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&SyntheticConfig { classes: 10, images: 4, channels: 15, head_noise: 0.2, seed: 6, ..Default::default() });
    data.write(dir.path()).unwrap();
    let manifest = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
    let head = load_head(dir.path().join("head.pptn"), Some(&manifest)).unwrap();
    let c = cfg(3, 1, RefinementMode::Dynamic);
    let a = decompose_head(&manifest, &head, &c, true);
    assert!(a.failures.is_empty());
    for d in &a.classes {
        let v = head.weights.row(d.class_id);
        assert!(d.reconstruction_error(v) <= 1e-6 * max_abs(v.iter().copied()).max(1.0));
        assert!(d.final_objective() <= d.initial_objective());
    }
    let b = decompose_head(&manifest, &head, &c, true);
    let (x, y) = (dir.path().join("a"), dir.path().join("b"));
    let info = archive::ArchiveInfo { config: c, clamp: true, ..Default::default() };
    archive::write_archive(&x, &info, &a.classes, &[], Some(&head)).unwrap();
    archive::write_archive(&y, &info, &b.classes, &[], Some(&head)).unwrap();
    for d in &a.classes {
        let sub = format!("class_{:04}/refined.pptn", d.class_id);
        assert_eq!(std::fs::read(x.join(&sub)).unwrap(), std::fs::read(y.join(&sub)).unwrap());
    }
    assert_eq!(
        std::fs::read(x.join("decomposition.json")).unwrap(),
        std::fs::read(y.join("decomposition.json")).unwrap()
    );
    let t = tensor::read_tensor(x.join("class_0000/refined.pptn")).unwrap();
    assert_eq!(t.shape(), &[3, 15]);
}
