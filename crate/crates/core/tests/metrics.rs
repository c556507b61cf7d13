mod common;

use std::path::Path;

use common::{ap_oracle, match_oracle, random_instance};
use gridsight::detect::{iou, BBox};
use gridsight::io::{format_detections, parse_detections};
use gridsight::metrics::{
    average_precision, coco_thresholds, evaluate, map_at, map_range, match_detections, pr_curve_csv, precision, recall,
};

#[test]
fn precision_recall_examples() {
    assert_eq!(precision(3, 1), 0.75);
    assert_eq!(precision(5, 0), 1.0);
    assert_eq!(precision(0, 0), 0.0);
    assert_eq!(recall(3, 1), 0.75);
    assert_eq!(recall(0, 4), 0.0);
    assert_eq!(recall(0, 0), 1.0);
}

fn b(cx: f64, cy: f64, w: f64, h: f64, class_id: usize, score: f64) -> BBox {
    BBox::new(cx, cy, w, h, class_id, score)
}

#[test]
fn perfect_detections_all_match() {
    let gts = vec![vec![b(0.3, 0.3, 0.2, 0.2, 0, 1.0), b(0.7, 0.6, 0.3, 0.2, 1, 1.0)], vec![b(0.5, 0.5, 0.4, 0.4, 1, 1.0)]];
    let m = match_detections(&gts, &gts, 2, 0.5).unwrap();
    assert!(m.records.iter().all(|r| r.is_tp));
    assert_eq!(m.false_negatives(), 0);
    for t in coco_thresholds() {
        assert_eq!(map_at(&gts, &gts, 2, t).unwrap(), 1.0);
    }
    assert_eq!(map_range(&gts, &gts, 2).unwrap(), 1.0);
}

#[test]
fn duplicate_detection_is_one_tp_one_fp() {
    let gt = b(0.5, 0.5, 0.2, 0.2, 0, 1.0);
    let dets = vec![vec![BBox { score: 0.9, ..gt }, BBox { score: 0.8, ..gt }]];
    let m = match_detections(&dets, &[vec![gt]], 1, 0.5).unwrap();
    assert_eq!(m.records.iter().filter(|r| r.is_tp).count(), 1);
    assert!(m.records[0].is_tp && !m.records[1].is_tp);
}

#[test]
fn class_ids_out_of_range_rejected() {
    let gt = b(0.5, 0.5, 0.2, 0.2, 2, 1.0);
    assert!(match_detections(&[vec![]], &[vec![gt]], 2, 0.5).is_err());
    assert!(match_detections(&[vec![gt]], &[vec![]], 2, 0.5).is_err());
}

#[test]
fn matching_matches_independent_greedy_matcher() {
    for seed in 0..1000 {
        let (dets, gts, classes) = random_instance(seed);
        for t in [0.3, 0.5, 0.75] {
            let m = match_detections(&dets, &gts, classes, t).unwrap();
            let (want, n_gt) = match_oracle(&dets, &gts, classes, t);
            assert_eq!(m.gt_per_class, n_gt);
            for (img, k, tp) in want {
                let rec = m
                    .records
                    .iter()
                    .find(|r| r.image_id == img && r.det == dets[img][k])
                    .expect("every detection has a record");
                assert_eq!(rec.is_tp, tp, "seed {seed} t {t}");
            }
            let n_det: usize = dets.iter().map(Vec::len).sum();
            assert_eq!(m.records.len(), n_det);
            for c in 0..classes {
                let tp = m.class_records(c).filter(|r| r.is_tp).count();
                assert_eq!(tp + m.fn_per_class[c], m.gt_per_class[c]);
            }
        }
    }
}

#[test]
fn ap_examples() {
    let gt = vec![vec![b(0.3, 0.3, 0.2, 0.2, 0, 1.0), b(0.7, 0.7, 0.2, 0.2, 0, 1.0)]];
    let dets = vec![vec![
        BBox { score: 0.9, ..gt[0][0] },
        b(0.1, 0.8, 0.1, 0.1, 0, 0.8),
        BBox { score: 0.7, ..gt[0][1] },
    ]];
    let m = match_detections(&dets, &gt, 1, 0.5).unwrap();
    let ap = average_precision(m.class_records(0), 2);
    assert!((ap - 253.0 / 303.0).abs() < 1e-12, "{ap}");
    let scored: Vec<(f64, bool)> = m.records.iter().map(|r| (r.det.score, r.is_tp)).collect();
    assert!((ap - ap_oracle(&scored, 2)).abs() < 1e-12);

    let all_fp = vec![vec![b(0.1, 0.8, 0.1, 0.1, 0, 0.8)]];
    let m = match_detections(&all_fp, &gt, 1, 0.5).unwrap();
    assert_eq!(average_precision(m.class_records(0), 2), 0.0);
    assert_eq!(map_at(&[vec![]], &gt, 1, 0.5).unwrap(), 0.0);
    assert_eq!(map_range(&[vec![]], &gt, 1).unwrap(), 0.0);
}

#[test]
fn ap_matches_threshold_sweep_oracle() {
    for seed in 0..1000 {
        let (dets, gts, classes) = random_instance(seed);
        let m = match_detections(&dets, &gts, classes, 0.5).unwrap();
        for c in 0..classes {
            let scored: Vec<(f64, bool)> = m.class_records(c).map(|r| (r.det.score, r.is_tp)).collect();
            let got = average_precision(m.class_records(c), m.gt_per_class[c]);
            let want = ap_oracle(&scored, m.gt_per_class[c]);
            assert!((got - want).abs() < 1e-12, "seed {seed} class {c}: {got} vs {want}");
        }
    }
}

#[test]
fn map_is_mean_of_per_class_aps() {
    let gts = vec![vec![b(0.3, 0.3, 0.2, 0.2, 0, 1.0), b(0.7, 0.7, 0.2, 0.2, 1, 1.0), b(0.2, 0.8, 0.2, 0.2, 1, 1.0)]];
    let dets = vec![vec![
        BBox { score: 0.9, ..gts[0][0] },
        b(0.5, 0.5, 0.1, 0.1, 1, 0.95),
        BBox { score: 0.6, ..gts[0][1] },
    ]];
    // class 0: one TP over one truth -> 1.0
    // class 1: FP then TP over two truths: recall 0.5 at precision 0.5
    let ap1 = ap_oracle(&[(0.95, false), (0.6, true)], 2);
    let want = (1.0 + ap1) / 2.0;
    assert!((map_at(&dets, &gts, 2, 0.5).unwrap() - want).abs() < 1e-12);
    // a class with no truth is left out of the mean
    assert!((map_at(&dets, &gts, 3, 0.5).unwrap() - want).abs() < 1e-12);
}

#[test]
fn iou_of_exactly_point_six_counts_up_to_that_threshold() {
    let gt = b(0.25, 0.5, 0.5, 0.5, 0, 1.0);
    let det = b(0.15, 0.5, 0.3, 0.5, 0, 0.9);
    assert_eq!(iou(&gt, &det), 0.6);
    let (dets, gts) = (vec![vec![det]], vec![vec![gt]]);
    let mut sum = 0.0;
    for t in coco_thresholds() {
        let v = map_at(&dets, &gts, 1, t).unwrap();
        assert_eq!(v, if t <= 0.6 { 1.0 } else { 0.0 }, "t {t}");
        sum += v;
    }
    assert_eq!(map_range(&dets, &gts, 1).unwrap(), sum / 10.0);
    assert_eq!(map_range(&dets, &gts, 1).unwrap(), 0.3);
}

#[test]
fn map_range_is_mean_of_map_at_and_ap_monotone() {
    for seed in 0..200 {
        let (dets, gts, classes) = random_instance(seed);
        let per: Vec<f64> = coco_thresholds().iter().map(|&t| map_at(&dets, &gts, classes, t).unwrap()).collect();
        let mean = per.iter().sum::<f64>() / 10.0;
        assert!((map_range(&dets, &gts, classes).unwrap() - mean).abs() < 1e-15);
        assert!(per.windows(2).all(|w| w[1] <= w[0] + 1e-15), "seed {seed}: {per:?}");
    }
}

#[test]
fn duplicating_a_true_positive_never_raises_ap() {
    for seed in 0..300 {
        let (mut dets, gts, classes) = random_instance(seed);
        let m = match_detections(&dets, &gts, classes, 0.5).unwrap();
        let Some(tp) = m.records.iter().find(|r| r.is_tp) else { continue };
        // a box overlapping two truths of its class could legitimately
        // claim the second one; the property is about pure duplicates
        let matchable = gts[tp.image_id]
            .iter()
            .filter(|g| g.class_id == tp.det.class_id && iou(g, &tp.det) >= 0.5)
            .count();
        if matchable > 1 {
            continue;
        }
        let before = map_at(&dets, &gts, classes, 0.5).unwrap();
        let dup = BBox { score: tp.det.score - 1e-9, ..tp.det };
        dets[tp.image_id].push(dup);
        let after = map_at(&dets, &gts, classes, 0.5).unwrap();
        assert!(after <= before + 1e-15, "seed {seed}: {before} -> {after}");
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("c{k}")).collect()
}

#[test]
fn report_values_are_bounded_and_consistent() {
    for seed in 0..100 {
        let (dets, gts, classes) = random_instance(seed);
        let r = evaluate(&dets, &gts, &names(classes)).unwrap();
        for v in [r.precision, r.recall, r.map50, r.map50_95] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(r.map50_95 <= r.map50 + 1e-12);
        for c in &r.classes {
            assert_eq!(c.tp + c.fn_, c.gt);
            assert!(c.ap50_95 <= c.ap50 + 1e-12);
        }
        assert!((r.map50 - map_at(&dets, &gts, classes, 0.5).unwrap()).abs() < 1e-12);
        assert!((r.map50_95 - map_range(&dets, &gts, classes).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn no_detections_report_zero_precision() {
    let gts = vec![vec![b(0.5, 0.5, 0.2, 0.2, 0, 1.0)]];
    let r = evaluate(&[vec![]], &gts, &names(1)).unwrap();
    assert_eq!(r.detections, 0);
    assert_eq!(r.precision, 0.0);
    assert_eq!(r.recall, 0.0);
    assert_eq!(r.map50, 0.0);
    assert!(r.table().contains("all"));
    assert!(r.csv().starts_with("class,gt,tp,fp,fn,precision,recall,ap50,ap50_95\n"));
}

#[test]
fn dump_reload_reproduces_report() {
    for seed in 0..50 {
        let (dets, gts, classes) = random_instance(seed);
        let ids: Vec<String> = (0..dets.len()).map(|k| format!("img_{k:03}")).collect();
        let text = format_detections(&ids, &dets);
        let back = parse_detections(Path::new("dump.txt"), &text, &ids).unwrap();
        assert_eq!(back, dets);
        assert_eq!(
            evaluate(&back, &gts, &names(classes)).unwrap(),
            evaluate(&dets, &gts, &names(classes)).unwrap()
        );
    }
    let ids = vec!["a".to_string()];
    assert!(parse_detections(Path::new("d"), "b 0 0.5 0.5 0.5 0.1 0.1\n", &ids).is_err());
    assert!(parse_detections(Path::new("d"), "a 0 0.5 0.5 0.5 0.1\n", &ids).is_err());
}

#[test]
fn pr_curve_rows_follow_score_order() {
    let (dets, gts, classes) = random_instance(3);
    let csv = pr_curve_csv(&dets, &gts, &names(classes)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("class,score,precision,recall"));
    let n: usize = dets.iter().map(Vec::len).sum();
    assert_eq!(lines.count(), n);
}
