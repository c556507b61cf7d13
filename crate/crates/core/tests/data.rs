mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use common::{dyadic_annotations, iou_oracle, rng, survivors};
use gridsight::autodiff::Tensor;
use gridsight::data::{
    batch_iter, cell_of, decode_ppm, encode_ppm, encode_targets, epoch_order, load_dataset, parse_label_line,
    parse_labels, read_image, render_sample, resize_image, resize_rgb, synth_shapes, targets_as_raw, write_ppm,
    Annotation, Dataset, RgbImage, Sample, SynthConfig,
};
use gridsight::detect::{decode_grid, BBox, GridLayout};
use gridsight::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_image(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut img = RgbImage::new(w, h);
    rng(seed).fill(&mut img.pixels[..]);
    img
}

/// Every file under `root` with its bytes, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn label_line_parses() {
    assert_eq!(
        parse_label_line("2 0.5 0.5 0.25 0.25", 3).unwrap(),
        Annotation::new(2, 0.5, 0.5, 0.25, 0.25)
    );
    let p = Path::new("x.txt");
    assert!(parse_labels(p, "", 3).unwrap().is_empty());
    assert_eq!(parse_labels(p, "0 0.1 0.2 0.3 0.4\n1 1 1 1 1", 3).unwrap().len(), 2);
    assert_eq!(parse_labels(p, "0 0.1 0.2 0.3 0.4\r\n", 3).unwrap().len(), 1);
}

fn valid_line(r: &mut impl Rng, classes: usize) -> String {
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        r.random_range(0..classes),
        r.random_range(0.0..=1.0),
        r.random_range(0.0..=1.0),
        r.random_range(0.01..=1.0),
        r.random_range(0.01..=1.0)
    )
}

/// A malformed variant of a valid line.
fn mutate(r: &mut impl Rng, line: &str, classes: usize) -> String {
    let mut f: Vec<String> = line.split(' ').map(String::from).collect();
    match r.random_range(0..10) {
        0 => {
            f.pop();
        }
        1 => f.push("0.5".into()),
        // a lone blank line is just an empty file
        2 => return " ".into(),
        3 => return f.join("  "),
        4 => f[r.random_range(0..5)] = "abc".into(),
        5 => f[r.random_range(1..5)] = ["nan", "inf", "-inf", "1e400"][r.random_range(0..4)].into(),
        6 => f[0] = r.random_range(classes..classes + 20).to_string(),
        7 => f[0] = ["-1", "1.0", "+x"][r.random_range(0..3)].into(),
        8 => f[r.random_range(1..5)] = format!("{}", r.random_range(1.0001..5.0)),
        _ => f[r.random_range(1..5)] = format!("-{}", r.random_range(0.001..1.0)),
    }
    f.join(" ")
}

#[test]
fn parser_rejects_every_mutation_with_location() {
    let mut r = rng(11);
    let path = Path::new("labels/train/a.txt");
    for _ in 0..2000 {
        let classes = r.random_range(1..6);
        let mut lines: Vec<String> = (0..r.random_range(1..8)).map(|_| valid_line(&mut r, classes)).collect();
        let bad = r.random_range(0..lines.len());
        lines[bad] = mutate(&mut r, &lines[bad], classes);
        if r.random_bool(0.1) && lines.len() > 1 {
            lines[bad].clear();
        }
        let text = lines.join("\n") + "\n";
        match parse_labels(path, &text, classes) {
            Err(Error::Parse { path: p, line, .. }) => {
                assert_eq!(p, path);
                assert_eq!(line, bad + 1, "{text:?}");
            }
            other => panic!("accepted malformed line {:?}: {other:?}", lines[bad]),
        }
    }
    let e = parse_labels(path, "0 0.5 0.5 0 0.5", 1).unwrap_err();
    assert!(e.to_string().contains("a.txt:1"), "{e}");
}

#[test]
fn ppm_roundtrip_and_errors() {
    let img = noise_image(7, 5, 1);
    let bytes = encode_ppm(&img);
    assert_eq!(decode_ppm(Path::new("a.ppm"), &bytes).unwrap(), img);

    let mut commented = b"P6\n# made by hand\n7 5\n# depth\n255\n".to_vec();
    commented.extend_from_slice(&img.pixels);
    assert_eq!(decode_ppm(Path::new("a.ppm"), &commented).unwrap(), img);

    let p = Path::new("a.ppm");
    assert!(matches!(decode_ppm(p, b"P3\n1 1\n255\n000"), Err(Error::Image { .. })));
    assert!(decode_ppm(p, b"P6\n2 2\n65535\n").is_err());
    assert!(decode_ppm(p, &bytes[..bytes.len() - 1]).is_err());
    assert!(decode_ppm(p, b"P6\n0 3\n255\n").is_err());
    assert!(decode_ppm(p, b"P6\n").is_err());

    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.ppm");
    write_ppm(&f, &img).unwrap();
    assert_eq!(read_image(&f).unwrap(), img);
    assert!(read_image(&dir.path().join("missing.ppm")).is_err());
}

#[test]
fn resize_examples() {
    let mut r = rng(2);
    let t = Tensor::<f32>::uniform(&[3, 6, 6], 0.0, 1.0, &mut r);
    assert_eq!(resize_image(&t, 6).unwrap().data(), t.data());

    let c = Tensor::<f32>::full(&[3, 5, 9], 0.25);
    assert!(resize_image(&c, 13).unwrap().data().iter().all(|&v| v == 0.25));

    for seed in 0..20 {
        let n = rng(seed).random_range(1..12);
        let t = Tensor::<f64>::uniform(&[3, n, n], 0.0, 1.0, &mut rng(100 + seed));
        let back = resize_image(&resize_image(&t, 2 * n).unwrap(), n).unwrap();
        assert_eq!(back.data(), t.data());
    }
    assert!(resize_image(&t, 0).is_err());

    let img = noise_image(9, 4, 3);
    let back = resize_rgb(&resize_rgb(&img, 18, 8), 9, 4);
    assert_eq!(back, img);
}

#[test]
fn missing_labels_give_empty_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::create_dir_all(root.join("images/train")).unwrap();
    std::fs::create_dir_all(root.join("labels/train")).unwrap();
    for k in [2, 0, 1] {
        write_ppm(&root.join(format!("images/train/im{k}.ppm")), &noise_image(10, 12, k)).unwrap();
    }
    std::fs::write(root.join("images/train/notes.md"), "ignored").unwrap();
    let ds = load_dataset(root, "train", 2, 8).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.missing_labels, 3);
    assert!(ds.samples.iter().all(|s| s.annotations.is_empty()));
    let ids: Vec<&str> = ds.samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["im0", "im1", "im2"]);
    assert_eq!(ds.samples[0].image.shape(), &[3, 8, 8]);

    std::fs::write(root.join("labels/train/im1.txt"), "0 0.5 0.5 0.2 0.2\n1 0.5 2 0.1 0.1\n").unwrap();
    let e = load_dataset(root, "train", 2, 8).unwrap_err();
    assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    assert!(load_dataset(root, "val", 2, 8).is_err());
}

#[test]
fn generated_dataset_loads_back_with_its_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_train: 12, n_val: 3, classes: 5, size: 64, seed: 21 };
    synth_shapes(dir.path(), &cfg).unwrap();

    // the generator draws every train image, then every val image, from one stream
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (split, n) in [("train", 12), ("val", 3)] {
        let ds = load_dataset(dir.path(), split, 5, 64).unwrap();
        assert_eq!(ds.len(), n);
        assert_eq!(ds.missing_labels, 0);
        assert_eq!(ds.class_names, ["disk", "square", "triangle", "ring", "cross"]);
        for s in &ds.samples {
            let (img, anns) = render_sample(&mut r, 5, 64);
            assert_eq!(s.image.data(), img.to_tensor::<f32>().data());
            assert_eq!(s.annotations.len(), anns.len());
            for (a, b) in s.annotations.iter().zip(&anns) {
                assert_eq!(a.class_id, b.class_id);
                for (x, y) in [(a.cx, b.cx), (a.cy, b.cy), (a.w, b.w), (a.h, b.h)] {
                    assert!((x - y).abs() <= 1e-6);
                }
            }
        }
    }
}

#[test]
fn synth_is_deterministic_and_validated() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_train: 10, n_val: 2, ..SynthConfig::default() };
    synth_shapes(a.path(), &cfg).unwrap();
    synth_shapes(b.path(), &cfg).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 10 * 2 + 2 * 2 + 1);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    synth_shapes(c.path(), &SynthConfig { seed: 8, ..cfg.clone() }).unwrap();
    assert_ne!(tree(c.path()), ta);

    let e = tempfile::tempdir().unwrap();
    assert!(matches!(
        synth_shapes(e.path(), &SynthConfig { classes: 6, ..cfg.clone() }),
        Err(Error::Config(_))
    ));

    let z = tempfile::tempdir().unwrap();
    synth_shapes(z.path(), &SynthConfig { n_train: 0, n_val: 0, ..cfg }).unwrap();
    assert!(load_dataset(z.path(), "train", 3, 160).unwrap().is_empty());
    assert!(load_dataset(z.path(), "val", 3, 160).unwrap().is_empty());
}

/// Box of the pixels carrying the most frequent exact colour inside the
/// label's box (the glyph paint; background noise almost never repeats),
/// searched in a margin around the label.
fn measured_box(img: &RgbImage, a: &Annotation) -> BBox {
    let (w, h) = (img.width as f64, img.height as f64);
    let x0 = ((a.cx - a.w / 2.0) * w).round() as usize;
    let x1 = ((a.cx + a.w / 2.0) * w).round() as usize;
    let y0 = ((a.cy - a.h / 2.0) * h).round() as usize;
    let y1 = ((a.cy + a.h / 2.0) * h).round() as usize;
    let mut counts: BTreeMap<[u8; 3], usize> = BTreeMap::new();
    for y in y0..y1 {
        for x in x0..x1 {
            *counts.entry(img.get(x, y)).or_default() += 1;
        }
    }
    let color = *counts.iter().max_by_key(|(_, &n)| n).unwrap().0;
    let m = 4;
    let (mut bx0, mut by0, mut bx1, mut by1) = (usize::MAX, usize::MAX, 0, 0);
    for y in y0.saturating_sub(m)..(y1 + m).min(img.height) {
        for x in x0.saturating_sub(m)..(x1 + m).min(img.width) {
            if img.get(x, y) == color {
                bx0 = bx0.min(x);
                by0 = by0.min(y);
                bx1 = bx1.max(x + 1);
                by1 = by1.max(y + 1);
            }
        }
    }
    let (fx0, fy0, fx1, fy1) = (bx0 as f64 / w, by0 as f64 / h, bx1 as f64 / w, by1 as f64 / h);
    BBox::new((fx0 + fx1) / 2.0, (fy0 + fy1) / 2.0, fx1 - fx0, fy1 - fy0, a.class_id, 1.0)
}

#[test]
fn synth_labels_match_painted_pixels() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut n = 0;
    for k in 0..300 {
        let classes = 1 + k % 5;
        let size = [64, 96, 160][k % 3];
        let (img, anns) = render_sample(&mut r, classes, size);
        assert!((1..=3).contains(&anns.len()));
        for a in &anns {
            assert!(a.class_id < classes);
            assert!(a.w > 0.0 && a.h > 0.0);
            let m = measured_box(&img, a);
            let v = iou_oracle(&m, &a.to_bbox());
            assert!(v >= 0.95, "image {k}: IoU {v} for {a:?} vs {m:?}");
            n += 1;
        }
    }
    assert!(n > 300);
}

#[test]
fn encode_examples() {
    let layout = GridLayout::new(7, 2, 3);
    let e = encode_targets::<f64>(&[Annotation::new(1, 0.5, 0.5, 0.2, 0.3)], layout);
    assert_eq!(cell_of(0.5, 0.5, 7), (3, 3));
    let v = &e.grid.data()[(3 * 7 + 3) * 13..(3 * 7 + 4) * 13];
    assert_eq!(&v[..5], &[0.5, 0.5, 0.2, 0.3, 1.0]);
    assert_eq!(&v[10..], &[0.0, 1.0, 0.0]);
    assert_eq!(e.grid.data().iter().filter(|&&x| x != 0.0).count(), 6);
    assert_eq!(e.object_mask.iter().filter(|&&m| m).count(), 1);

    let empty = encode_targets::<f64>(&[], layout);
    assert!(empty.grid.data().iter().all(|&x| x == 0.0));
    assert_eq!(empty.dropped, 0);

    assert_eq!(cell_of(1.0, 1.0, 7), (6, 6));
    assert_eq!(cell_of(0.0, 1.0, 7), (6, 0));
    let e = encode_targets::<f64>(&[Annotation::new(0, 1.0, 0.0, 0.1, 0.1)], layout);
    let v = &e.grid.data()[6 * 13..7 * 13];
    assert_eq!(v[0], 1.0);
    assert_eq!(v[4], 1.0);

    // collisions keep the larger box
    let anns = [
        Annotation::new(0, 0.51, 0.51, 0.1, 0.1),
        Annotation::new(2, 0.52, 0.53, 0.3, 0.2),
        Annotation::new(1, 0.55, 0.55, 0.05, 0.05),
    ];
    let e = encode_targets::<f64>(&anns, layout);
    assert_eq!(e.dropped, 2);
    let v = &e.grid.data()[(3 * 7 + 3) * 13..(3 * 7 + 4) * 13];
    assert_eq!(v[2], 0.3);
    assert_eq!(v[12], 1.0);
}

#[test]
fn encode_then_decode_returns_surviving_boxes_exactly() {
    let mut r = rng(31);
    for case in 0..500 {
        let s = [1, 2, 5, 7, 10, 20][case % 6];
        let boxes = 1 + case % 3;
        let classes = 1 + (case / 3) % 4;
        let layout = GridLayout::new(s, boxes, classes);
        let anns = dyadic_annotations(&mut r, classes);
        let e = encode_targets::<f64>(&anns, layout);
        let keep = survivors(&anns, s);
        assert_eq!(e.dropped, anns.len() - keep.len());

        let raw = targets_as_raw(&e.grid, layout);
        let mut dec = decode_grid(raw.data(), layout, 0.5).unwrap();
        assert_eq!(dec.len(), keep.len(), "case {case}");
        for src in &keep {
            let hit = dec.iter().position(|d| {
                d.class_id == src.class_id && iou_oracle(d, &src.to_bbox()) == 1.0 && d.score == 1.0
            });
            let k = hit.unwrap_or_else(|| panic!("case {case}: {src:?} not recovered from {dec:?}"));
            dec.swap_remove(k);
        }
    }
}

fn toy_dataset(n: usize) -> Dataset {
    Dataset {
        samples: (0..n)
            .map(|k| Sample {
                id: format!("s{k}"),
                image: Tensor::full(&[3, 8, 8], k as f32),
                annotations: vec![Annotation::new(k % 2, 0.5, 0.5, 0.5, 0.5)],
            })
            .collect(),
        ..Default::default()
    }
}

#[test]
fn batches_cover_the_dataset_once() {
    let layouts = [GridLayout::new(2, 1, 2), GridLayout::new(1, 1, 2)];
    let ds = toy_dataset(11);
    let plain: Vec<Vec<usize>> = batch_iter::<f32>(&ds, 4, &layouts, 0, 1, false)
        .map(|b| b.unwrap().indices)
        .collect();
    assert_eq!(plain, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9, 10]]);

    for seed in 0..20 {
        for epoch in 1..4 {
            let batches: Vec<_> = batch_iter::<f32>(&ds, 3, &layouts, seed, epoch, true)
                .map(|b| b.unwrap())
                .collect();
            assert_eq!(batches.len(), 4);
            assert_eq!(batches.last().unwrap().indices.len(), 2);
            let mut seen: Vec<usize> = Vec::new();
            for b in &batches {
                assert_eq!(b.images.shape(), &[b.indices.len(), 3, 8, 8]);
                assert_eq!(b.targets[0].shape(), &[b.indices.len(), 2, 2, 7]);
                assert_eq!(b.targets[1].shape(), &[b.indices.len(), 1, 1, 7]);
                for (slot, &i) in b.indices.iter().enumerate() {
                    // image content identifies the sample
                    assert_eq!(b.images.data()[slot * 192], i as f32);
                }
                seen.extend(&b.indices);
            }
            let mut sorted = seen.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..11).collect::<Vec<_>>());
            assert_eq!(seen, epoch_order(11, seed, epoch, true));
        }
    }
    assert_ne!(epoch_order(50, 1, 1, true), epoch_order(50, 1, 2, true));
    assert_ne!(epoch_order(50, 1, 1, true), epoch_order(50, 2, 1, true));
}

proptest! {
    #[test]
    fn cell_assignment_is_in_range(cx in 0.0f64..=1.0, cy in 0.0f64..=1.0, s in 1usize..40) {
        let (i, j) = cell_of(cx, cy, s);
        prop_assert!(i < s && j < s);
        if cx < 1.0 && cy < 1.0 {
            prop_assert_eq!(j, (cx * s as f64).floor() as usize);
            prop_assert_eq!(i, (cy * s as f64).floor() as usize);
        }
    }
}
