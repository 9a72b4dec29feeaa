//! End-to-end acceptance checks for the augmentation, fusion, and
//! evaluation pipeline. Each test covers one headline claim and prints a
//! single PASS line on success.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use faceaug::assets;
use faceaug::augment::{align_in_plane, augment_dataset, classify_alignment, AugmentConfig};
use faceaug::eval::{cmc, roc, tar_at_far};
use faceaug::features::{video_pool, EmbeddingBackend, FeatureVector, MediaFeature, MediaType, ToyBackend};
use faceaug::fusion::{
    baseline_pool, fuse_scores, score_matrix, select_mutual_view, softmax_pool,
    template_similarity, FusionConfig, Strategy, TemplateFeatures,
};
use faceaug::geometry::{decompose_yaw, estimate_pose, euler_rotation, project_one, Projected};
use faceaug::landmarks::{LandmarkSet2D, Schema};
use faceaug::mesh::Mesh;
use faceaug::raster::RasterImage;
use faceaug::render::{rasterize, texture_from_image};
use faceaug::synth::{
    canvas_camera, fit_expression, neutral_coefficients, neutralize_expression,
    render_novel_views, ExpressionCoeffs, RENDER_SIZE,
};

fn smooth_texture(size: u32, seed: u32) -> RasterImage {
    RasterImage::from_fn(size, size, 1, |x, y| {
        let fx = x as f32 / size as f32;
        let fy = y as f32 / size as f32;
        let s = seed as f32;
        let v = 0.55
            + 0.20 * ((6.0 * fx + s).sin() * (5.0 * fy + 0.7 * s).cos())
            + 0.12 * ((11.0 * fy - s).sin());
        vec![v.clamp(0.0, 1.0)]
    })
}

fn synthetic_landmarks(mesh: &Mesh, yaw: f64) -> LandmarkSet2D {
    let (intr, pose) = canvas_camera(mesh, &euler_rotation(yaw, 0.0, 0.0), RENDER_SIZE);
    let pts: Vec<[f64; 2]> = (0..68)
        .map(|slot| match project_one(&mesh.landmark(slot), &intr, &pose) {
            Projected::Pixel(p) => p,
            Projected::BehindCamera => [0.0, 0.0],
        })
        .collect();
    LandmarkSet2D::all_visible(Schema::Face68, pts).unwrap()
}

/// Write `<root>/<subject>/<stem>.png` plus its landmark sidecar.
fn write_entry(root: &Path, subject: &str, stem: &str, yaw: f64, seed: u32) {
    let shape = assets::generic_head(0);
    let dir = root.join(subject);
    std::fs::create_dir_all(&dir).unwrap();
    smooth_texture(RENDER_SIZE, seed)
        .save_png(&dir.join(format!("{stem}.png")))
        .unwrap();
    synthetic_landmarks(&shape, yaw)
        .save(&dir.join(format!("{stem}.pts")))
        .unwrap();
}

fn write_dataset(root: &Path, subjects: usize, per_subject: usize) {
    let mut k = 0u32;
    for s in 0..subjects {
        for i in 0..per_subject {
            let yaw = -20.0 + 40.0 * (k as f64 % 7.0) / 6.0;
            write_entry(root, &format!("s{s:02}"), &format!("img{i:03}"), yaw, 50 + k);
            k += 1;
        }
    }
}

#[test]
fn augmentation_multiplier_is_exact() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_dataset(&input, 10, 10);
    let shapes = assets::shape_set();
    let basis = assets::blendshape_basis();

    let full = AugmentConfig {
        seed: 11,
        ..AugmentConfig::default()
    };
    let manifest = augment_dataset(&input, &dir.path().join("full"), &shapes, &basis, &full).unwrap();
    assert_eq!(manifest.rows.len(), 500, "full mode must yield 5 rows per image");

    let pose_only = AugmentConfig {
        include_expression: false,
        ..full
    };
    let manifest =
        augment_dataset(&input, &dir.path().join("pose"), &shapes, &basis, &pose_only).unwrap();
    assert_eq!(manifest.rows.len(), 400, "pose+shape mode must yield 4 rows per image");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
    println!("PASS augmentation multiplier: 100 images -> 400/500 rows ({elapsed:?})");
}

#[test]
fn softmax_fusion_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    for trial in 0..1000 {
        let n = rng.gen_range(2..24);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        // Beta 0 is the arithmetic mean.
        assert!((softmax_pool(&scores, 0.0).unwrap() - mean).abs() < 1e-12, "trial {trial}");

        // Large beta approaches the max when the runner-up is clearly below.
        let second = scores
            .iter()
            .cloned()
            .filter(|&s| s < max)
            .fold(f64::NEG_INFINITY, f64::max);
        if !second.is_finite() || max - second >= 0.05 {
            assert!((softmax_pool(&scores, 200.0).unwrap() - max).abs() < 1e-4, "trial {trial}");
        }

        // Monotone in beta.
        let mut prev = f64::NEG_INFINITY;
        for beta in 0..=40 {
            let pooled = softmax_pool(&scores, beta as f64).unwrap();
            assert!(pooled >= prev - 1e-12, "trial {trial} beta {beta}");
            prev = pooled;
        }

        // Pooled fusion dominates the mean, strictly unless constant.
        let fused = fuse_scores(&scores).unwrap();
        let spread = max - scores.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(fused >= mean - 1e-12, "trial {trial}");
        if spread > 1e-9 {
            assert!(fused > mean + 1e-12, "trial {trial}: fused {fused} mean {mean}");
        } else {
            assert!((fused - mean).abs() < 1e-12, "trial {trial}");
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!("PASS softmax fusion suite: limits, monotonicity, mean dominance ({elapsed:?})");
}

#[test]
fn pose_recovery_accuracy() {
    let start = Instant::now();
    let shapes = assets::shape_set();
    let mut rng = ChaCha8Rng::seed_from_u64(13);

    for case in 0..100 {
        let mesh = shapes.shape(case % 10);
        let yaw = rng.gen_range(-75.0..=75.0);
        let pitch = rng.gen_range(-12.0..=12.0);
        let roll = rng.gen_range(-12.0..=12.0);
        let (intr, pose) = canvas_camera(mesh, &euler_rotation(yaw, pitch, roll), RENDER_SIZE);

        let noisy_pts: Vec<[f64; 2]> = (0..68)
            .map(|slot| match project_one(&mesh.landmark(slot), &intr, &pose) {
                Projected::Pixel([u, v]) => [
                    u + rng.gen_range(-0.5..=0.5),
                    v + rng.gen_range(-0.5..=0.5),
                ],
                Projected::BehindCamera => panic!("landmark behind camera"),
            })
            .collect();
        let landmarks = LandmarkSet2D::all_visible(Schema::Face68, noisy_pts).unwrap();
        let est = estimate_pose(&landmarks, mesh, (RENDER_SIZE, RENDER_SIZE)).unwrap();
        let got = decompose_yaw(&est.pose).unwrap().yaw;
        assert!((got - yaw).abs() < 2.0, "case {case}: yaw {yaw} got {got}");
        assert!(est.residual <= 1.5, "case {case}: residual {}", est.residual);

        // Noise-free landmarks recover the yaw almost exactly.
        let clean = synthetic_landmarks(mesh, yaw);
        let est = estimate_pose(&clean, mesh, (RENDER_SIZE, RENDER_SIZE)).unwrap();
        let got = decompose_yaw(&est.pose).unwrap().yaw;
        assert!((got - yaw).abs() < 0.1, "case {case}: clean yaw {yaw} got {got}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!("PASS pose recovery: 100 faces within 2 deg / 1.5 px, clean within 0.1 deg ({elapsed:?})");
}

#[test]
fn render_round_trip_reproduces_source() {
    let start = Instant::now();
    let shapes = assets::shape_set();

    for case in 0..20 {
        let mesh = shapes.shape(case % 10);
        let yaw = [-30.0, -15.0, 0.0, 15.0, 30.0][case % 5];
        let image = smooth_texture(RENDER_SIZE, 200 + case as u32);
        let landmarks = synthetic_landmarks(mesh, yaw);
        let est = estimate_pose(&landmarks, mesh, (RENDER_SIZE, RENDER_SIZE)).unwrap();

        let tex = texture_from_image(mesh, &image, &est.pose, &est.intrinsics);
        let render = rasterize(
            mesh,
            &tex,
            &image,
            &est.pose,
            &est.intrinsics,
            (RENDER_SIZE, RENDER_SIZE),
        )
        .unwrap();
        let mae = render.image.mae(&image, Some(&render.mask));
        assert!(mae < 2.0 / 255.0, "case {case}: mae {mae}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("PASS render round trip: 20 cases, masked MAE < 2/255 ({elapsed:?})");
}

#[test]
fn expression_recovery_and_untouched_background() {
    let start = Instant::now();
    let basis = assets::blendshape_basis();

    // Forward-synthesized mouth openings come back within tolerance.
    for &truth in &[0.3, 0.7, 1.0] {
        let expressed = basis.apply(&ExpressionCoeffs {
            mouth_open: truth,
            ..ExpressionCoeffs::default()
        });
        let (intr, pose) = canvas_camera(&basis.neutral, &euler_rotation(0.0, 0.0, 0.0), RENDER_SIZE);
        let pts: Vec<[f64; 2]> = (0..68)
            .map(|slot| match project_one(&expressed.landmark(slot), &intr, &pose) {
                Projected::Pixel(p) => p,
                Projected::BehindCamera => panic!("landmark behind camera"),
            })
            .collect();
        let landmarks = LandmarkSet2D::all_visible(Schema::Face68, pts).unwrap();
        let fit = fit_expression(&landmarks, &basis, &pose, &intr).unwrap();
        assert!(
            (fit.coefficients.mouth_open - truth).abs() <= 0.05,
            "mouth_open {truth} recovered {}",
            fit.coefficients.mouth_open
        );
    }

    // Neutralization leaves everything outside the composite mask
    // bit-identical.
    let shape0 = assets::generic_head(0);
    let image = smooth_texture(RENDER_SIZE, 77);
    let landmarks = synthetic_landmarks(&shape0, 0.0);
    let out = neutralize_expression(&image, &landmarks, &basis).unwrap();
    assert!(!out.skipped);

    let est = estimate_pose(&landmarks, &basis.neutral, (RENDER_SIZE, RENDER_SIZE)).unwrap();
    let fit = fit_expression(&landmarks, &basis, &est.pose, &est.intrinsics).unwrap();
    let fitted_mesh = basis.apply(&fit.coefficients);
    let tex = texture_from_image(&fitted_mesh, &image, &est.pose, &est.intrinsics);
    let neutral_mesh = basis.apply(&neutral_coefficients(&fit.coefficients));
    let composite = rasterize(
        &neutral_mesh,
        &tex,
        &image,
        &est.pose,
        &est.intrinsics,
        (RENDER_SIZE, RENDER_SIZE),
    )
    .unwrap();
    let w = RENDER_SIZE as usize;
    let mut outside_changed = 0usize;
    for p in 0..w * w {
        if !composite.mask[p] {
            let (x, y) = ((p % w) as u32, (p / w) as u32);
            if out.image.pixel(x, y) != image.pixel(x, y) {
                outside_changed += 1;
            }
        }
    }
    assert_eq!(outside_changed, 0, "background pixels must be bit-identical");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!("PASS expression recovery: coefficients within 0.05, background untouched ({elapsed:?})");
}

fn oracle_tar(genuine: &[f64], impostor: &[f64], far: f64) -> f64 {
    let mut best = 0.0f64;
    let count_ge = |xs: &[f64], t: f64| xs.iter().filter(|&&x| x >= t).count() as f64;
    for &t in genuine.iter().chain(impostor.iter()) {
        if count_ge(impostor, t) / impostor.len() as f64 <= far {
            best = best.max(count_ge(genuine, t) / genuine.len() as f64);
        }
    }
    best
}

fn oracle_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor.iter()).cloned().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let top = *thresholds.last().unwrap() + 1.0;
    thresholds.push(top);
    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
            let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
            (far, frr)
        })
        .collect();
    for (i, &(far, frr)) in rates.iter().enumerate() {
        if far <= frr {
            if i == 0 {
                return far;
            }
            let (f1, r1) = rates[i - 1];
            let (f2, r2) = (far, frr);
            let den = (f1 - r1) - (f2 - r2);
            return if den.abs() < 1e-15 {
                0.5 * (f1 + r1)
            } else {
                f1 + (f2 - f1) * (f1 - r1) / den
            };
        }
    }
    0.0
}

fn oracle_cmc_rank(scores: &[f64], gallery: &[String], subject: &str) -> usize {
    let mut idx: Vec<usize> = (0..gallery.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then_with(|| {
            let ca = gallery[a] == subject;
            let cb = gallery[b] == subject;
            ca.cmp(&cb)
        })
    });
    idx.iter().position(|&g| gallery[g] == subject).unwrap() + 1
}

#[test]
fn metrics_match_brute_force_oracles() {
    let start = Instant::now();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let genuine: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0) + 0.15).collect();
        let impostor: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0)).collect();

        let curve = roc(&genuine, &impostor).unwrap();
        for far in [0.5, 0.1, 0.01, 0.002] {
            assert_eq!(
                tar_at_far(&curve, far),
                oracle_tar(&genuine, &impostor, far),
                "seed {seed} far {far}"
            );
        }

        // EER against an independent sweep.
        let eer = {
            // The library exposes 1 - EER through eer_and_accuracy; rebuild
            // scored pairs to read it back.
            let pairs: Vec<faceaug::eval::ScoredPair> = genuine
                .iter()
                .enumerate()
                .map(|(i, &s)| faceaug::eval::ScoredPair {
                    score: s,
                    same_subject: true,
                    fold: i as u32 % 2,
                })
                .chain(impostor.iter().enumerate().map(|(i, &s)| faceaug::eval::ScoredPair {
                    score: s,
                    same_subject: false,
                    fold: i as u32 % 2,
                }))
                .collect();
            let (eer_complement, _) = faceaug::eval::eer_and_accuracy(&pairs).unwrap();
            1.0 - eer_complement
        };
        let want = oracle_eer(&genuine, &impostor);
        assert!((eer - want).abs() < 1e-12, "seed {seed}: eer {eer} want {want}");

        // CMC against a sort-based oracle with pessimistic ties.
        let gallery: Vec<String> = (0..20).map(|i| format!("g{i}")).collect();
        let probes: Vec<String> = (0..40).map(|i| format!("g{}", i % 20)).collect();
        let scores: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let rates = cmc(&scores, &probes, &gallery, &[1, 5, 10]).unwrap();
        for &k in &[1usize, 5, 10] {
            let hits = probes
                .iter()
                .enumerate()
                .filter(|(p, subject)| oracle_cmc_rank(&scores[*p], &gallery, subject) <= k)
                .count();
            assert_eq!(rates[&k.to_string()], hits as f64 / 40.0, "seed {seed} rank {k}");
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("PASS metric oracles: ROC, EER, CMC exact over 50 seeds ({elapsed:?})");
}

#[test]
fn video_pooling_exact_and_separated() {
    let mf = |media_id: &str, media_type, values: Vec<f64>| MediaFeature {
        media_id: media_id.to_string(),
        media_type,
        feature: FeatureVector::new(values, media_id),
    };
    let media = vec![
        mf("v1", MediaType::Video, vec![1.0, 2.0, 3.0]),
        mf("s1", MediaType::Image, vec![10.0, 20.0, 30.0]),
        mf("v1", MediaType::Video, vec![3.0, 4.0, 5.0]),
        mf("v2", MediaType::Video, vec![-1.0, 0.0, 1.0]),
        mf("v1", MediaType::Video, vec![5.0, 6.0, 7.0]),
        mf("s2", MediaType::Image, vec![0.5, 0.25, 0.125]),
    ];
    let pooled = video_pool(&media);
    // Two videos + two stills, in first-appearance order.
    assert_eq!(pooled.len(), 4);
    assert_eq!(pooled[0].values, vec![3.0, 4.0, 5.0]);
    assert_eq!(pooled[1].values, vec![10.0, 20.0, 30.0]);
    assert_eq!(pooled[2].values, vec![-1.0, 0.0, 1.0]);
    assert_eq!(pooled[3].values, vec![0.5, 0.25, 0.125]);
    println!("PASS video pooling: within-video mean exact, videos + stills separated");
}

/// Render an observation of `mesh` textured with `texture` at `yaw`.
fn observe(mesh: &Mesh, texture: &RasterImage, yaw: f64) -> (RasterImage, LandmarkSet2D) {
    let frontal = synthetic_landmarks(mesh, 0.0);
    let render = render_novel_views(texture, &frontal, mesh, &[yaw]).unwrap().remove(0);
    (render.image, synthetic_landmarks(mesh, yaw))
}

fn perturbed(base: &RasterImage, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = base.clone();
    for v in out.data.iter_mut() {
        *v = (*v + rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0);
    }
    out
}

#[test]
fn end_to_end_rendering_beats_in_plane_baseline() {
    let start = Instant::now();
    let shapes = assets::shape_set();
    let backend = ToyBackend;
    let n_ids = 20usize;

    let embed_aligned = |image: &RasterImage, landmarks: &LandmarkSet2D, yaw: f64| -> Vec<f64> {
        let class = classify_alignment(yaw);
        let (aligned, _) = align_in_plane(image, landmarks, class, RENDER_SIZE).unwrap();
        backend.embed(&aligned, "").unwrap().values
    };
    let embed_rendered = |image: &RasterImage, landmarks: &LandmarkSet2D, target: f64| -> Vec<f64> {
        let render = render_novel_views(image, landmarks, &shapes.shape(0), &[target])
            .unwrap()
            .remove(0);
        backend.embed(&render.image, "").unwrap().values
    };

    let gallery_yaws = [0.0, 40.0];
    let probe_yaws = [55.0, 75.0];
    let mutual = select_mutual_view(40.0, 75.0);

    let mut gallery_templates = Vec::new();
    let mut probe_templates = Vec::new();
    let mut subjects = Vec::new();
    for id in 0..n_ids {
        let mesh = shapes.shape(id % 10);
        let base = smooth_texture(RENDER_SIZE, 1000 + id as u32);
        subjects.push(format!("id{id:02}"));

        let build = |yaws: &[f64], noise_base: u64, pool_video: bool| -> TemplateFeatures {
            let mut in_plane = Vec::new();
            let mut rendered = Vec::new();
            let mut frames = Vec::new();
            for (k, &yaw) in yaws.iter().enumerate() {
                let texture = perturbed(&base, noise_base + k as u64);
                let (image, landmarks) = observe(mesh, &texture, yaw);
                let f = embed_aligned(&image, &landmarks, yaw);
                if pool_video {
                    frames.push(MediaFeature {
                        media_id: "clip".to_string(),
                        media_type: MediaType::Video,
                        feature: FeatureVector::new(f, ""),
                    });
                } else {
                    in_plane.push(f);
                }
                rendered.push(embed_rendered(&image, &landmarks, mutual));
            }
            if pool_video {
                in_plane.extend(video_pool(&frames).into_iter().map(|f| f.values));
            }
            TemplateFeatures {
                template_id: format!("t{noise_base}"),
                subject_id: format!("id{id:02}"),
                in_plane,
                rendered,
                yaws: yaws.to_vec(),
            }
        };
        gallery_templates.push(build(&gallery_yaws, 10_000 + 2 * id as u64, false));
        probe_templates.push(build(&probe_yaws, 20_000 + 2 * id as u64, true));
    }

    let softmax = FusionConfig::default();
    let rank1 = |use_rendered: bool, config: &FusionConfig| -> f64 {
        let scores: Vec<Vec<f64>> = probe_templates
            .iter()
            .map(|p| {
                gallery_templates
                    .iter()
                    .map(|g| {
                        if use_rendered {
                            template_similarity(p, g, config).unwrap().score
                        } else {
                            let m = score_matrix(&p.in_plane, &g.in_plane).unwrap();
                            match config.strategy {
                                Strategy::Softmax => fuse_scores(&m.entries).unwrap(),
                                s => baseline_pool(&m.entries, s).unwrap(),
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        cmc(&scores, &subjects, &subjects, &[1]).unwrap()["1"]
    };

    let baseline = rank1(false, &FusionConfig { strategy: Strategy::Mean, ..softmax.clone() });
    let pipeline = rank1(true, &softmax);
    assert!(
        pipeline >= baseline,
        "pipeline rank-1 {pipeline} below in-plane mean baseline {baseline}"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "PASS end-to-end: rank-1 {pipeline:.3} >= in-plane mean baseline {baseline:.3} ({elapsed:?})"
    );
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_faceaug"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().expect("spawn faceaug");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// All files under a directory as (relative path, bytes), sorted.
fn dir_snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn cli_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_dataset(&input, 2, 2);

    // Augment: reruns and different worker counts are bitwise identical.
    let outs = ["a1", "a2", "a3"];
    for (out, workers) in outs.iter().zip(["1", "1", "3"]) {
        run_ok(bin()
            .arg("augment")
            .arg("--in")
            .arg(&input)
            .arg("--out")
            .arg(dir.path().join(out))
            .arg("--seed")
            .arg("5")
            .arg("--workers")
            .arg(workers));
    }
    let first = dir_snapshot(&dir.path().join(outs[0]));
    assert!(!first.is_empty());
    for out in &outs[1..] {
        assert_eq!(first, dir_snapshot(&dir.path().join(out)), "augment differs in {out}");
    }

    // Eval: embed the aligned outputs, run the protocol twice.
    let emb = dir.path().join("emb.bin");
    run_ok(bin().arg("embed").arg("--in").arg(dir.path().join("a1")).arg("--out").arg(&emb));

    let protocol = dir.path().join("protocol");
    std::fs::create_dir_all(&protocol).unwrap();
    let rows = [
        ("T0a", "s00", "s00/img000_aligned.png"),
        ("T0b", "s00", "s00/img001_aligned.png"),
        ("T1a", "s01", "s01/img000_aligned.png"),
        ("T1b", "s01", "s01/img001_aligned.png"),
    ];
    let mut templates = String::from("template_id,subject_id,media_id,media_type,item_id\n");
    for (t, s, item) in rows {
        templates.push_str(&format!("{t},{s},m_{t},image,{item}\n"));
    }
    std::fs::write(protocol.join("templates.csv"), templates).unwrap();
    std::fs::write(
        protocol.join("pairs.csv"),
        "template_a,template_b,label,fold\n\
         T0a,T0b,1,0\nT0a,T1b,0,0\nT1a,T1b,1,1\nT1a,T0b,0,1\n",
    )
    .unwrap();
    std::fs::write(protocol.join("gallery.csv"), "template_id\nT0a\nT1a\n").unwrap();
    std::fs::write(protocol.join("probes.csv"), "template_id\nT0b\nT1b\n").unwrap();

    let reports = ["r1.json", "r2.json", "r3.json"];
    for (report, workers) in reports.iter().zip(["1", "1", "3"]) {
        run_ok(bin()
            .arg("eval")
            .arg("--protocol")
            .arg(&protocol)
            .arg("--embeddings")
            .arg(&emb)
            .arg("--report")
            .arg(dir.path().join(report))
            .arg("--workers")
            .arg(workers));
    }
    let first = std::fs::read(dir.path().join(reports[0])).unwrap();
    for report in &reports[1..] {
        assert_eq!(first, std::fs::read(dir.path().join(report)).unwrap(), "{report} differs");
    }

    println!("PASS determinism: augment and eval outputs bitwise stable across reruns and workers");
}
