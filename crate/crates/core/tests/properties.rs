mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::*;
use ddr_vlad::codebook::Codebook;
use ddr_vlad::ddr::{ddr_split, root_square_normalize, DdrConfig, DescriptorSet};
use ddr_vlad::evaluation::average_precision;
use ddr_vlad::retrieval::{index_build, search, Hit, RankedList};
use ddr_vlad::tensor::{decode_tensor, encode_tensor, FeatureMap, ReadOptions};
use ddr_vlad::vlad::{vlad_encode, vlad_trace, VladConfig};

fn shape_and_data() -> impl Strategy<Value = (Vec<usize>, Vec<f32>)> {
    prop::collection::vec(1usize..6, 1..=3).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        (Just(shape), prop::collection::vec(any::<f32>(), n))
    })
}

fn feature_map() -> impl Strategy<Value = (FeatureMap, usize)> {
    (1usize..5, 1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(h, w, split, per)| {
        let d = split * per;
        prop::collection::vec(-10.0f32..10.0, h * w * d)
            .prop_map(move |data| (FeatureMap::new(h, w, d, data).unwrap(), split))
    })
}

fn descriptors_and_codebook() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..5, 1usize..5).prop_flat_map(|(k, d)| {
        (
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 1..40),
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), k),
        )
    })
}

fn distinct(centroids: &[Vec<f64>]) -> bool {
    centroids
        .iter()
        .enumerate()
        .all(|(i, a)| centroids[..i].iter().all(|b| sq_dist(a, b) > 1e-12))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Bit patterns survive the round trip, including NaN payloads when not rejected.
    #[test]
    fn tensor_round_trip_is_bitwise((shape, data) in shape_and_data()) {
        let bytes = encode_tensor(&shape, &data).unwrap();
        let back = decode_tensor(&bytes, ReadOptions { reject_non_finite: false }).unwrap();
        prop_assert_eq!(back.shape, shape);
        let a: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ddr_count_and_partition((fm, split) in feature_map()) {
        let ds = ddr_split(&fm, &DdrConfig::new(split, false).unwrap()).unwrap();
        prop_assert_eq!(ds.len(), fm.height() * fm.width() * fm.depth() / split);
        let per = fm.depth() / split;
        for h in 0..fm.height() {
            for w in 0..fm.width() {
                let first = (h * fm.width() + w) * per;
                let rebuilt: Vec<f64> = (first..first + per).flat_map(|i| ds.row(i).to_vec()).collect();
                let want: Vec<f64> = fm.cell(h, w).iter().map(|&v| f64::from(v)).collect();
                prop_assert_eq!(rebuilt, want);
            }
        }
    }

    #[test]
    fn root_square_rows_have_norm_at_most_one(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..8), 1..10)) {
        let d = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(d, 0.0); r }).collect();
        let out = root_square_normalize(DescriptorSet::from_rows(&rows).unwrap());
        for (i, r) in rows.iter().enumerate() {
            let norm = out.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= 1.0 + 1e-12);
            if r.iter().any(|&v| v != 0.0) {
                // Signed square roots of an L1-normalized row always square-sum to one.
                prop_assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vlad_is_permutation_invariant((rows, centroids) in descriptors_and_codebook(), seed in any::<u64>()) {
        prop_assume!(distinct(&centroids));
        let cb = Codebook::new(centroids[0].len(), flatten(&centroids), "p").unwrap();
        let a = vlad_encode(&DescriptorSet::from_rows(&rows).unwrap(), &cb).unwrap();
        let mut shuffled = rows.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng(seed));
        let b = vlad_encode(&DescriptorSet::from_rows(&shuffled).unwrap(), &cb).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn vlad_matches_naive_oracle((rows, centroids) in descriptors_and_codebook()) {
        prop_assume!(distinct(&centroids));
        let cb = Codebook::new(centroids[0].len(), flatten(&centroids), "p").unwrap();
        let t = vlad_trace(&DescriptorSet::from_rows(&rows).unwrap(), &cb, &VladConfig::default()).unwrap();
        let (z, out) = naive_vlad(&rows, &centroids);
        for (x, y) in t.zscored.iter().zip(&z) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in t.output.values.iter().zip(&out) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        if !t.output.degenerate {
            prop_assert!((t.output.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ap_is_bounded_and_ignores_tail_order(n in 2usize..30, rel_mask in prop::collection::vec(any::<bool>(), 30), seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
        let mut relevant: BTreeSet<String> = ids.iter().zip(&rel_mask).filter(|(_, &m)| m).map(|(id, _)| id.clone()).collect();
        relevant.insert(ids[n - 1].clone());
        let list = |order: &[String]| RankedList {
            query_id: "q".into(),
            hits: order.iter().enumerate().map(|(i, id)| Hit { image_id: id.clone(), distance: i as f64 }).collect(),
        };
        let mut order = ids.clone();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng(seed));
        let ap = average_precision(&list(&order), &relevant, None).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));

        let last = order.iter().rposition(|id| relevant.contains(id)).unwrap();
        let mut tail_permuted = order.clone();
        tail_permuted[last + 1..].reverse();
        let ap2 = average_precision(&list(&tail_permuted), &relevant, None).unwrap();
        prop_assert_eq!(ap, ap2);

        let ranked: Vec<&str> = order.iter().map(String::as_str).collect();
        let rel: BTreeSet<&str> = relevant.iter().map(String::as_str).collect();
        prop_assert!((ap - naive_ap(&ranked, &rel)).abs() < 1e-12);
    }

    #[test]
    fn rankings_survive_orthogonal_transforms(n in 2usize..20, d in 2usize..10, seed in any::<u64>()) {
        let mut r = rng(seed);
        let db: Vec<Vec<f64>> = gaussian_rows(&mut r, n, d).iter().map(|v| unit(v)).collect();
        let q = unit(&gaussian_rows(&mut r, 1, d)[0]);
        let m = random_orthogonal(&mut r, d);
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let a = search(&index_build(&flatten(&db), d, ids.clone()).unwrap(), &q, None, None).unwrap();
        let rotated: Vec<Vec<f64>> = db.iter().map(|v| apply(&m, v)).collect();
        let b = search(&index_build(&flatten(&rotated), d, ids).unwrap(), &apply(&m, &q), None, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.distance - y.distance).abs() < 1e-9);
        }
        // Ties within rounding could legitimately swap; compare only well-separated neighbours.
        for w in a.windows(2) {
            if w[1].distance - w[0].distance > 1e-9 {
                let pos = |id: &str| b.iter().position(|h| h.image_id == id).unwrap();
                prop_assert!(pos(&w[0].image_id) < pos(&w[1].image_id));
            }
        }
    }

    // For unit vectors, ascending L2 equals descending inner product.
    #[test]
    fn l2_order_matches_inner_product(n in 2usize..20, d in 2usize..10, seed in any::<u64>()) {
        let mut r = rng(seed);
        let db: Vec<Vec<f64>> = gaussian_rows(&mut r, n, d).iter().map(|v| unit(v)).collect();
        let q = unit(&gaussian_rows(&mut r, 1, d)[0]);
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let hits = search(&index_build(&flatten(&db), d, ids).unwrap(), &q, None, None).unwrap();
        let dots: Vec<f64> = hits
            .iter()
            .map(|h| db[h.image_id.parse::<usize>().unwrap()].iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect();
        for w in dots.windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-12);
        }
    }
}
