use std::collections::BTreeSet;

use adaptkit::formats::{
    convert_classification, convert_grounding, convert_multiview, convert_video, render_overlay,
    ClassificationRecord, ClassificationTemplate, ConvertOptions, GroundingRecord, ImageRef,
    MultiViewRecord, OverlaySpec, QaPair, SpecialToken, VideoRecord, ViewImage, IMAGE_PLACEHOLDER,
};
use adaptkit::geometry::{
    default_view_order, plan_tiles, ImageDims, PixelBox, GRID_MAX, TILE_SIZE,
};
use adaptkit::kernels::{
    distill_loss, pixel_shuffle, pixel_unshuffle, FeatureGrid, HiddenStateStack,
};
use adaptkit::metrics::{control_signal_metrics, mcq_accuracy, EvalPair, SignalPair};
use adaptkit::mixer::{
    mix_records, repeat_dataset, DomainSource, GeneralSource, MixManifest, Ratio,
};
use adaptkit::schema::{Payload, RecordEnvelope};
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn dims_strategy() -> impl Strategy<Value = ImageDims> {
    (1u32..4000, 1u32..4000).prop_map(|(w, h)| ImageDims::new(w, h).unwrap())
}

/// A box inside `dims`, from four unit fractions.
fn box_in(d: ImageDims, f: [f64; 4]) -> PixelBox {
    let (w, h) = (d.width as f64, d.height as f64);
    let (x1, x2) = (f[0].min(f[1]) * w, f[0].max(f[1]) * w);
    let (y1, y2) = (f[2].min(f[3]) * h, f[2].max(f[3]) * h);
    PixelBox::new(x1, y1, x2, y2)
}

fn signal_env(id: String) -> RecordEnvelope {
    let mut p = SignalPair::new(0.0, 0.0);
    p.id = id.clone();
    RecordEnvelope::new(id, Payload::SignalPair(p))
}

proptest! {
    #[test]
    fn tile_plan_invariants(d in dims_strategy(), max in 1u32..=40, thumb in any::<bool>()) {
        let p = plan_tiles(d, 1, max, thumb).unwrap();
        prop_assert!(p.cols * p.rows >= 1 && p.cols * p.rows <= max);
        prop_assert_eq!(p.has_thumbnail, thumb && p.cols * p.rows > 1);
        prop_assert_eq!(p.canvas.width, p.cols * TILE_SIZE);
        prop_assert_eq!(p.canvas.height, p.rows * TILE_SIZE);
    }

    #[test]
    fn unshuffle_is_a_permutation(h in 1usize..6, w in 1usize..6, c in 1usize..4, f in 1usize..4) {
        let g = FeatureGrid::new(h * f, w * f, c, (0..h * f * w * f * c).map(|v| v as f64).collect()).unwrap();
        let u = pixel_unshuffle(&g, f).unwrap();
        prop_assert_eq!(u.tokens() * f * f, g.tokens());
        prop_assert_eq!(u.channels, c * f * f);
        let seen: BTreeSet<u64> = u.data.iter().map(|v| *v as u64).collect();
        prop_assert_eq!(seen.len(), g.data.len());
        prop_assert_eq!(pixel_shuffle(&u, f).unwrap(), g);
    }

    #[test]
    fn loss_bounds_symmetry_and_scale(seed in any::<u64>(), k in 1usize..4, n in 1usize..5, d in 1usize..8, c in 0.001f64..1000.0) {
        let s = HiddenStateStack::random(k, n, d, seed);
        let t = HiddenStateStack::random(k, n, d, seed ^ 0x5555);
        let st = distill_loss(&s, &t).unwrap();
        prop_assert!(st.loss >= -1.0 - 1e-12 && st.loss <= 1.0 + 1e-12);
        let ts = distill_loss(&t, &s).unwrap();
        prop_assert!((st.loss - ts.loss).abs() <= 1e-12);
        let mut scaled = s.clone();
        scaled.data.iter_mut().for_each(|x| *x *= c);
        prop_assert!((distill_loss(&scaled, &t).unwrap().loss - st.loss).abs() <= 1e-12);
        // scale invariance makes every per-vector gradient orthogonal to its vector
        for (g, v) in st.grad.chunks(d).zip(s.data.chunks(d)) {
            let dot: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() <= 1e-12);
        }
    }

    #[test]
    fn grounding_output_parses_and_is_deterministic(d in dims_strategy(), f in prop::array::uniform4(0.0f64..=1.0), expr in "[a-z ]{1,30}") {
        let rec = GroundingRecord {
            image: ImageRef::new("x.jpg"),
            dims: d,
            expression: expr.clone(),
            bbox: box_in(d, f),
            meta: Default::default(),
        };
        let a = convert_grounding("g", &rec).unwrap();
        let b = convert_grounding("g", &rec).unwrap();
        prop_assert_eq!(&a.sample, &b.sample);
        a.sample.validate().unwrap();
        let tokens = a.sample.special_tokens().unwrap();
        prop_assert_eq!(tokens.len(), 3);
        let boxes: Vec<_> = tokens.iter().filter_map(|t| match t {
            SpecialToken::Box(b) => Some(b.coords()),
            _ => None,
        }).collect();
        prop_assert_eq!(boxes.len(), 1);
        let [x1, y1, x2, y2] = boxes[0];
        prop_assert!(x1 <= x2 && y1 <= y2 && x2 <= GRID_MAX && y2 <= GRID_MAX);
    }

    #[test]
    fn mcq_answer_is_one_of_the_options(n in 1usize..10, truth in 0usize..10, seed in any::<u64>()) {
        let truth = truth % n;
        let candidates: Vec<String> = (0..n).map(|i| format!("label {i}")).collect();
        let rec = ClassificationRecord {
            image: ImageRef::new("x.jpg"),
            truth: candidates[truth].clone(),
            candidates,
            meta: Default::default(),
        };
        let mut tpl = ClassificationTemplate::multiple_choice("Which one?");
        tpl.shuffle_options = true;
        let opts = ConvertOptions { classification: tpl, seed: Some(seed), ..Default::default() };
        let out = convert_classification("c", &rec, &opts).unwrap();
        let answer = &out.sample.turns[1].text;
        prop_assert!(answer.ends_with(&rec.truth));
        prop_assert!(out.sample.turns[0].text.contains(answer.as_str()));
        prop_assert_eq!(convert_classification("c", &rec, &opts).unwrap().sample, out.sample);
    }

    #[test]
    fn multiview_images_follow_the_fixed_order(perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let order = default_view_order();
        let views: Vec<ViewImage> = perm.iter().map(|&i| ViewImage {
            camera: order[i].clone(),
            image: ImageRef::new(format!("{}.jpg", order[i])),
            dims: ImageDims::new(1600, 900).unwrap(),
        }).collect();
        let rec = MultiViewRecord {
            views,
            qa: vec![QaPair { question: "q".into(), answer: "a".into() }],
            objects: vec![],
            meta: Default::default(),
        };
        let out = convert_multiview("m", &rec, &ConvertOptions::default()).unwrap();
        let uris: Vec<String> = out.sample.images.iter().map(|i| i.uri.clone()).collect();
        let want: Vec<String> = order.iter().map(|c| format!("{c}.jpg")).collect();
        prop_assert_eq!(uris, want);
        prop_assert_eq!(out.sample.turns[0].text.matches(IMAGE_PLACEHOLDER).count(), 6);
    }

    #[test]
    fn video_frame_limit(n in 0usize..45) {
        let rec = VideoRecord {
            frames: (0..n).map(|i| ImageRef::new(format!("f{i}.jpg"))).collect(),
            qa: vec![QaPair { question: "q".into(), answer: "a".into() }],
            meta: Default::default(),
        };
        let out = convert_video("v", &rec);
        prop_assert_eq!(out.is_ok(), (1..=40).contains(&n));
        if let Ok(c) = out {
            prop_assert_eq!(c.sample.images.len(), n);
            prop_assert!(c.sample.turns[0].text.starts_with("Frame1: "));
        }
    }

    #[test]
    fn overlay_only_touches_the_stroke_band(w in 1u32..40, h in 1u32..40, f in prop::array::uniform4(0.0f64..=1.0), stroke in 0u32..6) {
        let d = ImageDims::new(w, h).unwrap();
        let b = box_in(d, f);
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, 7]));
        let spec = OverlaySpec { image_index: 0, bbox: b, color: [255, 255, 255], width: stroke };
        let out = render_overlay(&img, &spec).unwrap();
        let left = b.x1.floor() as u32;
        let top = b.y1.floor() as u32;
        let right = (b.x2.floor() as u32).min(w - 1);
        let bottom = (b.y2.floor() as u32).min(h - 1);
        for (x, y, p) in out.enumerate_pixels() {
            let inside = x >= left && x <= right && y >= top && y <= bottom;
            let band = inside && stroke > 0 && (x < left + stroke || x + stroke > right || y < top + stroke || y + stroke > bottom);
            if band {
                prop_assert_eq!(*p, Rgb([255, 255, 255]));
            } else {
                prop_assert_eq!(p, img.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn envelope_round_trip(d in dims_strategy(), f in prop::array::uniform4(0.0f64..=1.0), src in proptest::option::of("[a-z]{1,8}"), rep in proptest::option::of(0u32..5)) {
        let mut env = RecordEnvelope::new("rec", Payload::Grounding(GroundingRecord {
            image: ImageRef::new("x.jpg"),
            dims: d,
            expression: "thing".into(),
            bbox: box_in(d, f),
            meta: Default::default(),
        }));
        env.source = src;
        env.repeat_index = rep;
        let line = env.to_line();
        let back = RecordEnvelope::from_line(&line).unwrap();
        prop_assert_eq!(&back, &env);
        prop_assert_eq!(back.to_line(), line);
    }

    #[test]
    fn mix_is_deterministic_without_duplicates(d in 0usize..60, num in 0u64..5, den in 1u64..5, seed in any::<u64>(), repeat in 1u32..3) {
        let manifest = MixManifest {
            ratio: Ratio::new(num, den).unwrap(),
            seed,
            allow_replacement: false,
            domain_sources: vec![DomainSource { id: "d".into(), path: "d".into(), repeat }],
            general_sources: vec![
                GeneralSource { id: "a".into(), path: "a".into(), weight: 2.0 },
                GeneralSource { id: "b".into(), path: "b".into(), weight: 1.0 },
            ],
        };
        let domain = vec![(0..d).map(|i| signal_env(format!("d{i}"))).collect::<Vec<_>>()];
        let general = vec![
            (0..400).map(|i| signal_env(format!("a{i}"))).collect::<Vec<_>>(),
            (0..400).map(|i| signal_env(format!("b{i}"))).collect::<Vec<_>>(),
        ];
        let (x, rx) = mix_records(&manifest, &domain, &general).unwrap();
        let (y, ry) = mix_records(&manifest, &domain, &general).unwrap();
        prop_assert_eq!(&x, &y);
        prop_assert_eq!(&rx, &ry);
        let dom = d as u64 * repeat as u64;
        prop_assert_eq!(rx.domain_total, dom);
        prop_assert_eq!(rx.general_total, (2 * num * dom + den) / (2 * den));
        let keys: BTreeSet<(String, Option<u32>)> = x.iter().map(|r| (r.id.clone(), r.repeat_index)).collect();
        prop_assert_eq!(keys.len(), x.len());
    }

    #[test]
    fn repeat_dataset_multiplies(n in 0usize..20, k in 1u32..5) {
        let recs: Vec<_> = (0..n).map(|i| signal_env(format!("r{i}"))).collect();
        let out = repeat_dataset(&recs, k);
        prop_assert_eq!(out.len(), n * k as usize);
        for r in &recs {
            prop_assert_eq!(out.iter().filter(|x| x.id == r.id).count(), k as usize);
        }
    }

    #[test]
    fn mcq_and_signals_are_order_free(pairs in prop::collection::vec(("[A-D]", "[A-D]"), 1..20), errs in prop::collection::vec(-5.0f64..5.0, 1..20)) {
        let mut ev: Vec<EvalPair> = pairs.iter().map(|(p, r)| EvalPair::new(p.as_str(), &[r.as_str()])).collect();
        let a = mcq_accuracy(&ev).unwrap();
        ev.reverse();
        prop_assert_eq!(mcq_accuracy(&ev).unwrap(), a);
        let mut sp: Vec<SignalPair> = errs.iter().map(|e| SignalPair::new(*e, 0.0)).collect();
        let r1 = control_signal_metrics(&sp, &[0.5, 1.0]).unwrap();
        sp.reverse();
        let r2 = control_signal_metrics(&sp, &[0.5, 1.0]).unwrap();
        prop_assert!((r1.get("rmse").unwrap() - r2.get("rmse").unwrap()).abs() <= 1e-12);
        prop_assert_eq!(r1.get("a_0.5"), r2.get("a_0.5"));
    }
}
