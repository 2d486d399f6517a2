//! Randomized invariants across the group, transform, network and analysis
//! layers.

use std::sync::Arc;

use proptest::prelude::*;

use equibias::analysis::{min_schatten_baseline, schatten_quasi_norm, uncertainty_check, MarginPolytope, RANK_TOL};
use equibias::gcnn::{init_network, left_translate, Activation, ArchitectureSpec, Dataset};
use equibias::group::parse_group_spec;
use equibias::repr::{
    builtin_irreps, cyclic_irreps, decompose_regular_representation, dihedral_irreps, quaternion_irreps, random_unitary, IrrepSet,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn signal(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn nonzero(n: usize) -> impl Strategy<Value = Vec<f64>> {
    signal(n).prop_filter("nonzero", |f| f.iter().any(|v| v.abs() > 1e-3))
}

fn d8() -> IrrepSet {
    dihedral_irreps(8).unwrap()
}

fn c2_d6() -> IrrepSet {
    builtin_irreps(&Arc::new(parse_group_spec("cyclic:2*dihedral:6").unwrap())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval(f in signal(12)) {
        let irreps = c2_d6();
        let energy: f64 = f.iter().map(|v| v * v).sum();
        let blocks = irreps.gft(&f).unwrap();
        let weighted = blocks.weighted_frobenius();
        prop_assert!((weighted * weighted - 12.0 * energy).abs() <= 1e-9 * (1.0 + energy));
        let two = schatten_quasi_norm(&blocks, 2.0).unwrap();
        prop_assert!((two - (12.0 * energy).sqrt()).abs() <= 1e-9 * (1.0 + two));
    }

    #[test]
    fn schatten_norms_ignore_the_irrep_basis(f in nonzero(8), seed in 0u64..1000, p in 0.3f64..2.5) {
        let irreps = d8();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unitaries: Vec<_> = irreps.dims().iter().map(|&d| random_unitary(d, &mut rng)).collect();
        let conj = irreps.conjugated(&unitaries).unwrap();
        let a = schatten_quasi_norm(&irreps.gft(&f).unwrap(), p).unwrap();
        let b = schatten_quasi_norm(&conj.gft(&f).unwrap(), p).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn product_transform_matches_dense(f in signal(12)) {
        let irreps = c2_d6();
        let dense = irreps.to_explicit();
        prop_assert!(irreps.gft(&f).unwrap().max_diff(&dense.gft(&f).unwrap()) < 1e-10);
    }

    #[test]
    fn quasi_norm_is_p_subadditive(a in signal(8), b in signal(8), p in 0.2f64..1.0) {
        let irreps = d8();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let n = |f: &[f64]| schatten_quasi_norm(&irreps.gft(f).unwrap(), p).unwrap().powf(p);
        prop_assert!(n(&sum) <= (n(&a) + n(&b)) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn triangle_inequality_for_p_at_least_one(a in signal(8), b in signal(8), p in 1.0f64..3.0) {
        let irreps = quaternion_irreps();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let n = |f: &[f64]| schatten_quasi_norm(&irreps.gft(f).unwrap(), p).unwrap();
        prop_assert!(n(&sum) <= (n(&a) + n(&b)) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn abelian_schatten_is_vector_norm(f in signal(10), p in 0.3f64..2.5) {
        let irreps = cyclic_irreps(10).unwrap();
        let blocks = irreps.gft(&f).unwrap();
        let direct: f64 = blocks.blocks.iter().map(|b| b[(0, 0)].norm().powf(p)).sum::<f64>().powf(1.0 / p);
        let s = schatten_quasi_norm(&blocks, p).unwrap();
        prop_assert!((s - direct).abs() <= 1e-10 * direct.max(1.0));
    }

    #[test]
    fn uncertainty_inequalities_hold(f in nonzero(8), support in prop::collection::vec(any::<bool>(), 8)) {
        let sparse: Vec<f64> = f.iter().zip(&support).map(|(v, &keep)| if keep { *v } else { 0.0 }).collect();
        let g = if sparse.iter().any(|v| v.abs() > 1e-3) { sparse } else { f };
        for irreps in [d8(), quaternion_irreps(), cyclic_irreps(8).unwrap()] {
            let r = uncertainty_check(&g, &irreps.gft(&g).unwrap(), RANK_TOL).unwrap();
            prop_assert!(r.all_satisfied(), "{r:?}");
        }
    }

    #[test]
    fn hidden_stack_is_equivariant(x in signal(8), seed in 0u64..500, relu in any::<bool>()) {
        let irreps = d8();
        let g = irreps.group().clone();
        let act = if relu { Activation::Relu } else { Activation::Linear };
        let p = init_network(&ArchitectureSpec::gcnn(g.clone(), 3, act), seed, 1.0).unwrap();
        let h = p.hidden_stack(&x).unwrap();
        for e in 0..8 {
            let moved = p.hidden_stack(&left_translate(&g, e, &x)).unwrap();
            let expect = left_translate(&g, e, &h);
            prop_assert!(moved.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn gcnn_loss_is_invariant_under_joint_translation(seed in 0u64..500, elem in 0usize..8) {
        // Hidden layers are equivariant, so translating every input and the
        // read-out filter together leaves the outputs unchanged.
        let irreps = d8();
        let g = irreps.group().clone();
        let p = init_network(&ArchitectureSpec::gcnn(g.clone(), 2, Activation::Linear), seed, 1.0).unwrap();
        let data = Dataset::new(vec![vec![1.0, 0.5, -0.2, 0.0, 0.3, -1.0, 0.7, 0.1]], vec![1.0]).unwrap();
        let moved = data.map_inputs(|x| left_translate(&g, elem, x));
        let mut q = p.clone();
        q.layers[1] = left_translate(&g, elem, &p.layers[1]);
        let (a, b) = (p.loss(&data).unwrap(), q.loss(&moved).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn baseline_is_feasible(seed in 0u64..10_000, n in 1usize..5) {
        let irreps = d8();
        let (data, _) = equibias::data::gaussian_dataset(irreps.group(), n, seed).unwrap();
        let r = min_schatten_baseline(&data, &irreps, 2.0 / 3.0, 200, seed).unwrap();
        let poly = MarginPolytope::new(&data);
        prop_assert!(poly.min_margin(&r.beta_refined) >= 1.0 - 1e-6);
        prop_assert!(poly.min_margin(&r.beta_nuclear) >= 1.0 - 1e-6);
        prop_assert!(r.refined_value <= r.nuclear_solution_p_value * (1.0 + 1e-9));
    }
}

#[test]
fn numerical_decomposition_finds_the_dihedral_dimensions() {
    for (n, expected) in [(6, vec![1, 1, 2]), (8, vec![1, 1, 1, 1, 2])] {
        let g = Arc::new(equibias::dihedral_group(n).unwrap());
        let set = decompose_regular_representation(&g, 3).unwrap();
        let mut dims = set.dims();
        dims.sort();
        assert_eq!(dims, expected);
        assert!(set.verify().passes(1e-8));
    }
}

#[test]
fn bundled_mnist_subset_loads() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-1-5");
    let (images, labels) =
        equibias::data::load_mnist_binary(&dir.join("images-idx3-ubyte"), &dir.join("labels-idx1-ubyte"), 1, 5, 20).unwrap();
    assert_eq!(images.len(), 20);
    assert_eq!((images[0].height, images[0].width), (28, 28));
    assert_eq!(labels.iter().filter(|&&y| y == 1.0).count(), 10);
    assert!(labels.iter().all(|&y| y == 1.0 || y == -1.0));
    assert!(images.iter().all(|i| i.pixels.iter().all(|&p| (0.0..=1.0).contains(&p))));
}
