use std::collections::BTreeSet;

use hypalign_core::entailment::{cone_violation, cross_modal_loss, in_modal_loss};
use hypalign_core::features::{cross_attention_forward, init_attention};
use hypalign_core::gradcheck::{relative_error, ridders_derivative};
use hypalign_core::lorentz::{
    distance, expm, expm_origin, exterior_angle, half_aperture, proj_tangent, Curvature, LorentzPoint, TangentVector,
    DEFAULT_APERTURE_K,
};
use hypalign_core::manifold::{
    compute_r, jc_derivatives, objective_jc, r_min_threshold, solve_intermediate, RadiusParameter, DEFAULT_TOL,
};
use hypalign_core::taxonomy::{
    base_novel_split, build_taxonomy, hierarchical_consistent_accuracy, leaf_accuracy, random_taxonomy,
    sample_treecuts, PredictionTable, Taxonomy,
};
use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn curv(c: f64) -> Curvature {
    Curvature::new(c).unwrap()
}

fn space(dim: usize, max: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-max..max, dim)
}

/// Point, curvature and dimension with the point built from a bounded
/// tangent vector at the origin.
fn point_pair() -> impl Strategy<Value = (LorentzPoint, LorentzPoint)> {
    (2usize..12, 0.01f64..2.0).prop_flat_map(|(n, c)| {
        (space(n, 1.5), space(n, 1.5)).prop_map(move |(a, b)| (expm_origin(curv(c), &a).unwrap(), expm_origin(curv(c), &b).unwrap()))
    })
}

fn rotate_plane(v: &[f64], i: usize, j: usize, theta: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    let (s, c) = theta.sin_cos();
    out[i] = c * v[i] - s * v[j];
    out[j] = s * v[i] + c * v[j];
    out
}

fn taxonomy_from_seed(seed: u64) -> Taxonomy {
    random_taxonomy(&mut ChaCha8Rng::seed_from_u64(seed), 4, 3)
}

fn random_table(tax: &Taxonomy, seed: u64, samples: usize) -> PredictionTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = tax.leaves();
    let truth = (0..samples).map(|_| leaves[rng.random_range(0..leaves.len())]).collect();
    let scores = (0..samples).map(|_| (0..tax.len()).map(|_| rng.random_range(0..5) as f64).collect()).collect();
    PredictionTable::new(tax, truth, scores).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn distance_symmetric_nonnegative((x, y) in point_pair()) {
        let dxy = distance(&x, &y).unwrap();
        let dyx = distance(&y, &x).unwrap();
        prop_assert!((dxy - dyx).abs() <= 1e-10 * dxy.max(1.0));
        prop_assert!(dxy >= 0.0);
        prop_assert_eq!(distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn distance_invariant_under_space_rotation((x, y) in point_pair(), theta in 0.0f64..std::f64::consts::TAU) {
        let c = x.curvature();
        let xr = LorentzPoint::from_space(&rotate_plane(x.space(), 0, 1, theta), c).unwrap();
        let yr = LorentzPoint::from_space(&rotate_plane(y.space(), 0, 1, theta), c).unwrap();
        let d = distance(&x, &y).unwrap();
        prop_assert!((distance(&xr, &yr).unwrap() - d).abs() <= 1e-8 * d.max(1.0));
    }

    #[test]
    fn expm_origin_on_hyperboloid(v in space(16, 2.0), c in 0.01f64..2.0) {
        prop_assert!(expm_origin(curv(c), &v).unwrap().membership_residual() <= 1e-9);
    }

    #[test]
    fn expm_stays_on_hyperboloid((x, y) in point_pair(), norm in 0.0f64..3.0) {
        let v = proj_tangent(&x, y.ambient()).unwrap();
        let len = v.lorentz_norm();
        prop_assume!(len > 1e-6);
        let scaled: Vec<f64> = v.ambient().iter().map(|a| a * norm / len).collect();
        let p = expm(&x, &TangentVector::new(x.clone(), scaled).unwrap()).unwrap();
        // residual relative to the magnitude of the coordinates involved
        prop_assert!(p.membership_residual() <= 1e-8 * p.time().powi(2).max(1.0), "residual {}", p.membership_residual());
    }

    #[test]
    fn aperture_decreases_with_norm(dir in space(6, 1.0), a in 0.01f64..4.0, b in 0.01f64..4.0, c in 0.05f64..2.0) {
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3 && (a - b).abs() > 1e-6);
        let at = |t: f64| {
            let s: Vec<f64> = dir.iter().map(|x| x * t / norm).collect();
            half_aperture(&LorentzPoint::from_space(&s, curv(c)).unwrap(), DEFAULT_APERTURE_K).unwrap()
        };
        let (lo, hi) = (a.min(b), a.max(b));
        let saturation = 2.0 * DEFAULT_APERTURE_K / c.sqrt();
        if lo > saturation {
            prop_assert!(at(lo) > at(hi));
        } else {
            prop_assert!(at(lo) >= at(hi));
        }
    }

    #[test]
    fn hinge_continuous_across_aperture(
        parent in space(4, 2.0),
        noise_a in space(4, 1.0),
        noise_b in space(4, 1.0),
        sigma_a in 0.0f64..0.5,
        sigma_b in 0.0f64..3.0,
        c in 0.1f64..1.5,
    ) {
        let lift = |v: &[f64]| expm_origin(curv(c), v).unwrap();
        let t = lift(&parent);
        // children pushed outward along the parent ray, then jittered
        let child = |noise: &[f64], sigma: f64| -> Vec<f64> {
            parent.iter().zip(noise).map(|(p, n)| 1.5 * p + sigma * n).collect()
        };
        let (va, vb) = (lift(&child(&noise_a, sigma_a)), lift(&child(&noise_b, sigma_b)));
        let (Ok(fa), Ok(fb)) = (exterior_angle(&va, &t), exterior_angle(&vb, &t)) else {
            return Ok(());
        };
        // holds on either side of the aperture and across it
        let (la, lb) = (cone_violation(&va, &t).unwrap(), cone_violation(&vb, &t).unwrap());
        prop_assert!((la - lb).abs() <= 2.0 * (fa - fb).abs());
    }

    #[test]
    fn entailment_losses_nonnegative_and_zero_iff_inside(rows in prop::collection::vec(space(3, 1.5), 2..5), c in 0.1f64..1.5) {
        let tree: Vec<LorentzPoint> = rows.iter().map(|r| expm_origin(curv(c), r).unwrap()).collect();
        let Ok(report) = in_modal_loss(&tree) else { return Ok(()); };
        prop_assert!(report.per_level_losses.iter().all(|&l| l >= 0.0));
        prop_assert!((report.total - report.per_level_losses.iter().sum::<f64>()).abs() <= 1e-12);
        let inside = tree.windows(2).all(|w| {
            match exterior_angle(&w[1], &w[0]) {
                Ok(a) => a <= half_aperture(&w[0], DEFAULT_APERTURE_K).unwrap(),
                Err(_) => w[1] == w[0],
            }
        });
        prop_assert_eq!(report.total == 0.0, inside);
        let cross = cross_modal_loss(&tree, &tree).unwrap();
        prop_assert_eq!(cross.total, 0.0);
    }

    #[test]
    fn jc_partials_match_differences(c1 in 0.05f64..2.0, c2 in 0.05f64..2.0, t in 0.0f64..1.0, scale in 1.0f64..2.0) {
        let r = RadiusParameter::fixed(r_min_threshold(curv(c1), curv(c2), curv(1e-4)).unwrap().r_min_star * scale).unwrap();
        let c3 = c1.min(c2) + t * (c1 - c2).abs();
        let d = jc_derivatives(curv(c3), curv(c1), curv(c2), r).unwrap();
        // the objective varies on the scale sqrt(c)/r in each curvature
        let step = |x: f64| 0.02 * x.sqrt() / r.r;
        let j = |x: f64| objective_jc(curv(x), curv(c1), curv(c2), r).unwrap();
        let jp = |x: f64| jc_derivatives(curv(x), curv(c1), curv(c2), r).unwrap().d1;
        let num_d1 = ridders_derivative(j, c3, step(c3));
        let num_d2 = ridders_derivative(jp, c3, step(c3));
        // each mixed partial involves one distance term only; pinning the
        // other curvature to c3 keeps the unrelated term from swamping it
        let num_31 = ridders_derivative(|a| jc_derivatives(curv(c3), curv(a), curv(c3), r).unwrap().d1, c1, step(c1));
        let num_32 = ridders_derivative(|b| jc_derivatives(curv(c3), curv(c3), curv(b), r).unwrap().d1, c2, step(c2));
        let floor = |a: f64, b: f64| 1e-6 * a.abs().max(b.abs()).max(d.d1.abs()).max(1.0);
        prop_assert!(relative_error(d.d1, num_d1, floor(d.d1, num_d1)) <= 1e-5, "d1 {} vs {}", d.d1, num_d1);
        prop_assert!(relative_error(d.d2, num_d2, 1.0) <= 1e-5, "d2 {} vs {}", d.d2, num_d2);
        prop_assert!(relative_error(d.d_c3c1, num_31, 1.0) <= 1e-5, "d31 {} vs {}", d.d_c3c1, num_31);
        prop_assert!(relative_error(d.d_c3c2, num_32, 1.0) <= 1e-5, "d32 {} vs {}", d.d_c3c2, num_32);
    }

    #[test]
    fn intermediate_in_bracket_and_certificate_consistent(c1 in 0.01f64..2.0, c2 in 0.01f64..2.0, scale in 0.5f64..2.0) {
        let cert = r_min_threshold(curv(c1), curv(c2), curv(1e-4)).unwrap();
        let r = cert.r_min_star * scale;
        prop_assert_eq!(cert.clone().evaluate(r).satisfied, r >= cert.r_min_star);
        let Ok(sol) = solve_intermediate(curv(c1), curv(c2), RadiusParameter::fixed(r).unwrap(), DEFAULT_TOL) else {
            return Ok(());
        };
        let c3 = sol.c3_star.get();
        prop_assert!(c3 >= c1.min(c2) && c3 <= c1.max(c2));
        prop_assert_eq!(sol.certified, r >= cert.r_min_star);
    }

    #[test]
    fn equal_curvatures_fix_the_minimizer(c in 0.05f64..2.0, scale in 1.0f64..2.0) {
        let r = RadiusParameter::fixed(r_min_threshold(curv(c), curv(c), curv(1e-4)).unwrap().r_min_star * scale).unwrap();
        let sol = solve_intermediate(curv(c), curv(c), r, DEFAULT_TOL).unwrap();
        prop_assert_eq!(sol.c3_star.get(), c);
        prop_assert!((sol.dc3_dc1 + sol.dc3_dc2 - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn compute_r_permutation_invariant(rows in prop::collection::vec(space(5, 3.0), 1..12), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = compute_r(&rows).unwrap().r;
        let b = compute_r(&shuffled).unwrap().r;
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn attention_ignores_token_order(seed in any::<u64>(), values in prop::collection::vec(-2.0f64..2.0, 2 * 4 + 3 * 4)) {
        let d = 4;
        let params = init_attention(d, seed, 0.5).unwrap();
        let queries = Array2::from_shape_vec((2, d), values[..2 * d].to_vec()).unwrap();
        let tokens = Array2::from_shape_vec((3, d), values[2 * d..].to_vec()).unwrap();
        let mut reversed = tokens.clone();
        reversed.slice_mut(s![..;-1, ..]).assign(&tokens);
        let (a, _) = cross_attention_forward(queries.view(), tokens.view(), &params).unwrap();
        let (b, _) = cross_attention_forward(queries.view(), reversed.view(), &params).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
        let mut swapped = queries.clone();
        swapped.slice_mut(s![..;-1, ..]).assign(&queries);
        let (c, _) = cross_attention_forward(swapped.view(), tokens.view(), &params).unwrap();
        prop_assert_eq!(c.row(0), a.row(1));
        prop_assert_eq!(c.row(1), a.row(0));
    }

    #[test]
    fn hca_never_exceeds_la(tree_seed in any::<u64>(), score_seed in any::<u64>()) {
        let tax = taxonomy_from_seed(tree_seed);
        let preds = random_table(&tax, score_seed, 20);
        prop_assert!(hierarchical_consistent_accuracy(&tax, &preds) <= leaf_accuracy(&tax, &preds));
    }

    #[test]
    fn sampled_treecuts_are_antichain_covers(tree_seed in any::<u64>(), seed in any::<u64>()) {
        let tax = taxonomy_from_seed(tree_seed);
        for cut in sample_treecuts(&tax, 25, seed).unwrap() {
            prop_assert!(cut.is_valid(&tax));
            for &leaf in tax.leaves() {
                let path = tax.path(leaf);
                prop_assert_eq!(cut.frontier.iter().filter(|n| path.contains(n)).count(), 1);
            }
        }
    }

    #[test]
    fn built_taxonomy_recovers_annotations(tree_seed in any::<u64>()) {
        let source = taxonomy_from_seed(tree_seed);
        let depth = tax_depth(&source);
        // equal-depth label paths, as required by the builder
        let rows: Vec<Vec<String>> = source
            .leaves()
            .iter()
            .filter(|&&l| source.depth(l) == depth)
            .map(|&l| source.label_path(l))
            .collect();
        prop_assume!(!rows.is_empty());
        let tax = build_taxonomy(&rows).unwrap();
        let rebuilt: BTreeSet<Vec<String>> = tax.leaves().iter().map(|&l| tax.label_path(l)).collect();
        prop_assert_eq!(rebuilt, rows.into_iter().collect::<BTreeSet<_>>());
        prop_assert!(tax.leaves().iter().all(|&l| tax.depth(l) == depth));
        prop_assert_eq!(Taxonomy::from_file(tax.to_file()).unwrap(), tax);
    }

    #[test]
    fn split_partitions_leaves_into_subtrees(tree_seed in any::<u64>(), seed in any::<u64>()) {
        let tax = taxonomy_from_seed(tree_seed);
        prop_assume!(tax.leaves().len() >= 2);
        let (base, novel) = base_novel_split(&tax, seed).unwrap();
        let ids = |t: &Taxonomy| t.leaves().iter().map(|&l| t.id(l).to_string()).collect::<BTreeSet<_>>();
        let all = ids(&tax);
        let (b, n) = (ids(&base), ids(&novel));
        prop_assert!(b.is_disjoint(&n));
        prop_assert_eq!(b.union(&n).cloned().collect::<BTreeSet<_>>(), all);
        prop_assert_eq!(b.len(), tax.leaves().len().div_ceil(2));
        let edges: BTreeSet<(String, String)> = tax.to_file().edges.into_iter().collect();
        for part in [&base, &novel] {
            prop_assert!(part.to_file().edges.iter().all(|e| edges.contains(e)));
        }
        let (again, _) = base_novel_split(&tax, seed).unwrap();
        prop_assert_eq!(again, base);
    }
}

fn tax_depth(tax: &Taxonomy) -> usize {
    tax.leaves().iter().map(|&l| tax.depth(l)).max().unwrap_or(0)
}
