use std::path::Path;

use proptest::prelude::*;

use siamddi::checkpoint::Checkpoint;
use siamddi::config::RunConfig;
use siamddi::data::{build_pairs, decode_png, DrugRecord, GrayImage, Interaction};
use siamddi::eval::{classify_and_report, f1_from_counts, pr_curve, ssim_pixels, SsimConfig};
use siamddi::objective::{contrastive_loss, distance, ContrastiveConfig, DistanceKind};
use siamddi::optim::OptimizerKind;
use siamddi::tensor::Tensor;

fn image_strategy() -> impl Strategy<Value = GrayImage> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..=1.0, h * w)
            .prop_map(move |px| GrayImage::new(h, w, px).unwrap())
    })
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0u32..20, n)
                .prop_map(|v| v.into_iter().map(|x| x as f64 / 8.0).collect()),
            prop::collection::vec(0u8..2, n),
        )
    })
}

fn manifest(n: usize) -> Vec<DrugRecord> {
    (0..n)
        .map(|i| DrugRecord {
            drug_id: format!("{}", 10 + i),
            name: format!("d{i}"),
            image_path: format!("{}.png", 10 + i),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn four_quarter_turns_are_identity(img in image_strategy(), k in -3i32..4) {
        prop_assert_eq!(img.rotate90(4), img.clone());
        prop_assert_eq!(img.rotate90(k).rotate90(-k), img.clone());
        let r = img.rotate90(1);
        prop_assert_eq!((r.height(), r.width()), (img.width(), img.height()));
    }

    #[test]
    fn png_round_trip_on_byte_grid(h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
        let img = GrayImage::from_fn(h, w, |r, c| {
            ((seed.wrapping_mul(31).wrapping_add((r * w + c) as u64 * 7919)) % 256) as f32 / 255.0
        }).unwrap();
        let back = decode_png(&img.to_png_bytes().unwrap(), Path::new("mem.png")).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn build_pairs_is_idempotent_and_canonical(
        n in 2usize..7,
        rows in prop::collection::vec((0usize..7, 0usize..7), 0..30),
    ) {
        let m = manifest(n);
        let rows: Vec<Interaction> = rows
            .into_iter()
            .map(|(i, j)| (i % n, j % n))
            .map(|(i, j)| Interaction {
                drug_id_a: m[i].drug_id.clone(),
                drug_id_b: m[j].drug_id.clone(),
                label: ((i + j) % 2) as u8,
            })
            .collect();
        let once = build_pairs(&m, &rows).unwrap();
        let again: Vec<Interaction> = once
            .iter()
            .map(|p| Interaction { drug_id_a: p.b.clone(), drug_id_b: p.a.clone(), label: p.label })
            .collect();
        prop_assert_eq!(build_pairs(&m, &again).unwrap(), once.clone());
        prop_assert!(once.windows(2).all(|w| (&w[0].a, &w[0].b) < (&w[1].a, &w[1].b)));
        prop_assert!(once.iter().all(|p| p.a < p.b));
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(
        (a, b) in (1usize..200).prop_flat_map(|n| (
            prop::collection::vec(0.0f32..=1.0, n),
            prop::collection::vec(0.0f32..=1.0, n),
        ))
    ) {
        let cfg = SsimConfig::default();
        let ab = ssim_pixels(&a, &b, &cfg).unwrap().score;
        let ba = ssim_pixels(&b, &a, &cfg).unwrap().score;
        prop_assert_eq!(ab, ba);
        prop_assert!(ab.abs() <= 1.0 + 1e-12);
        prop_assert_eq!(ssim_pixels(&a, &a, &cfg).unwrap().score, 1.0);
    }

    #[test]
    fn selected_threshold_is_optimal((d, y) in labeled_scores()) {
        prop_assume!(y.contains(&0) && y.contains(&1));
        let curve = pr_curve(&d, &y).unwrap();
        let r = classify_and_report(&d, &y, curve.selected_threshold, 0, 0).unwrap();
        prop_assert!((r.f1 - curve.selected_f1).abs() < 1e-12);
        for &tau in &d {
            let other = classify_and_report(&d, &y, tau, 0, 0).unwrap();
            prop_assert!(other.f1 <= curve.selected_f1 + 1e-12);
        }
        prop_assert!(curve.points.windows(2).all(|w| w[0].threshold < w[1].threshold));
    }

    #[test]
    fn confusion_counts_and_f1_identity((d, y) in labeled_scores(), tau in 0.0f64..3.0) {
        let r = classify_and_report(&d, &y, tau, 0, 0).unwrap();
        let c = r.confusion;
        prop_assert_eq!(c.total(), d.len());
        prop_assert_eq!(c.tp + c.fn_, y.iter().filter(|&&l| l == 1).count());
        prop_assert!((r.f1 - f1_from_counts(c.tp, c.fp, c.fn_)).abs() < 1e-12);
        prop_assert!((r.accuracy - (c.tp + c.tn) as f64 / d.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn distances_are_symmetric_and_non_negative(
        (a, b) in (1usize..16).prop_flat_map(|n| (
            prop::collection::vec(0.0f64..2.0, n),
            prop::collection::vec(0.0f64..2.0, n),
        ))
    ) {
        for kind in DistanceKind::ALL {
            let ab = distance(kind, &a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - distance(kind, &b, &a).unwrap()).abs() < 1e-12);
            let self_d = distance(kind, &a, &a).unwrap();
            if kind == DistanceKind::Jaccard {
                if a.iter().any(|&v| v > 0.0) {
                    prop_assert!((self_d - 1.0).abs() < 1e-12);
                }
            } else {
                prop_assert!(self_d.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn contrastive_loss_is_non_negative(
        d in prop::collection::vec(0.0f64..3.0, 1..20),
        m in 0.0f64..2.0,
        flip in any::<u64>(),
    ) {
        let y: Vec<f64> = (0..d.len()).map(|i| ((flip >> (i % 64)) & 1) as f64).collect();
        let cfg = ContrastiveConfig { margin: m, ..ContrastiveConfig::default() };
        let l = contrastive_loss(&cfg, &d, &y).unwrap();
        prop_assert!(l >= 0.0);
        let far: Vec<f64> = vec![m + 1.0; d.len()];
        let ones = vec![1.0; d.len()];
        prop_assert_eq!(contrastive_loss(&cfg, &far, &ones).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        config in "[a-z_ =0-9.\n]{0,80}",
        tensors in prop::collection::vec(
            ("[a-z/._]{1,12}", prop::collection::vec(1usize..4, 0..4)),
            0..5,
        ),
        seed in any::<u32>(),
    ) {
        let mut ck = Checkpoint::new(config);
        for (i, (name, shape)) in tensors.into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|j| (seed % 10_007) as f32 / 7.0 - (i * 13 + j) as f32)
                .collect();
            ck.tensors.push((name, Tensor::new(&shape, data).unwrap()));
        }
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes.clone());
        prop_assert_eq!(back, ck);
        prop_assert!(Checkpoint::from_bytes(&bytes[..bytes.len().saturating_sub(1)]).is_err());
    }

    #[test]
    fn config_text_round_trip(
        epochs in 0usize..500,
        seed in any::<u64>(),
        margin in 0.1f64..5.0,
        opt in 0usize..4,
        metric in 0usize..4,
        stn in any::<bool>(),
        lr in prop::option::of(1e-6f64..1e-1),
    ) {
        let cfg = RunConfig {
            epochs,
            seed,
            margin,
            optimizer: OptimizerKind::ALL[opt],
            metric: DistanceKind::ALL[metric],
            stn,
            lr,
            ..RunConfig::default()
        };
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
