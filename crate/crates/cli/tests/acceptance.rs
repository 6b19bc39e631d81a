//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Set `TOPICA_FULL_SCALE=1` to include the slow
//! full-scale smoke run.
//!
//! Natural images are stood in for by dead-leaves occlusion scenes and movies
//! by slow camera pans across a larger scene.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use tempfile::TempDir;
use topica_core::analysis::{AutocorrOptions, Quantity};
use topica_core::estimation::{initial_filters, DEFAULT_EPSILON};
use topica_core::image::{
    extract_fixed_patches, extract_random_patches, extract_training_patches, normalize_image,
    write_pgm_unit,
};
use topica_core::nalgebra::DMatrix;
use topica_core::stimulus::{
    generate_dead_leaves, generate_moving_bar, generate_pan, generate_single_basis_probe,
    BarStimulusSpec, DeadLeavesSpec, Orientation, PanSpec,
};
use topica_core::whitening::{second_moment, whiten_rows};
use topica_core::{
    adjacent_correlation, autocorrelation_with, build_topography, cluster_locality,
    compute_activation, fit_whitening, ica_train, orthonormality_error, permutation_test,
    shuffle_topography, tica_gradient, tica_objective, train, BasisModel, GrayImage, PatchSet,
    Topography, TrainConfig, WhiteningModel,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scene(width: usize, height: usize, seed: u64) -> GrayImage {
    normalize_image(&generate_dead_leaves(&DeadLeavesSpec::new(width, height, seed)).unwrap())
        .unwrap()
}

fn training_scenes() -> Vec<GrayImage> {
    (0..3).map(|i| scene(512, 512, 100 + i)).collect()
}

/// Desk-scale data and models shared by several criteria.
struct Desk {
    patches: PatchSet,
    whitening: WhiteningModel,
    topo: Topography,
}

const DESK_SIDE: usize = 9;
const DESK_K: usize = 64;
const DESK_ITERS: usize = 200;
const PAN_FRAMES: usize = 1000;
const PAN_VELOCITY: f64 = 0.15;

impl Desk {
    fn new(scenes: &[GrayImage]) -> Desk {
        let patches = extract_training_patches(scenes, DESK_SIDE, 20_000, 7).unwrap();
        let whitening = fit_whitening(&patches, DESK_K).unwrap();
        Desk {
            patches,
            whitening,
            topo: build_topography(8, 8, 1).unwrap(),
        }
    }

    fn config(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            max_iters: DESK_ITERS,
            ..TrainConfig::default()
        }
    }
}

fn central_differences(
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
    topo: &Topography,
    h: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
        let mut plus = w.clone();
        plus[(i, j)] += h;
        let mut minus = w.clone();
        minus[(i, j)] -= h;
        (tica_objective(&plus, z, topo, DEFAULT_EPSILON).unwrap()
            - tica_objective(&minus, z, topo, DEFAULT_EPSILON).unwrap())
            / (2.0 * h)
    })
}

/// `rows` whitened 5×5 patches (k = 16) from one scene.
fn whitened_batch(scenes: &[GrayImage], rows: usize, seed: u64) -> DMatrix<f64> {
    let fit = extract_training_patches(scenes, 5, 5_000, 1).unwrap();
    let whitening = fit_whitening(&fit, 16).unwrap();
    let batch =
        extract_random_patches(&scenes[seed as usize % scenes.len()], 5, rows, seed).unwrap();
    whiten_rows(&whitening, batch.data()).unwrap()
}

fn c1_whitening(scenes: &[GrayImage]) -> Outcome {
    let start = Instant::now();
    let patches = extract_training_patches(scenes, 8, 20_000, 11).unwrap();
    // 8×8 patches without their DC component have rank 63
    let whitening = fit_whitening(&patches, 63).unwrap();
    let z = whiten_rows(&whitening, patches.data()).unwrap();
    let c = second_moment(&z);
    let dev = (c - DMatrix::identity(63, 63)).amax();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        dev < 1e-6 && secs < 30.0,
        format!("20000 8x8 patches, k=63: max|C - I| = {dev:.2e} (< 1e-6), {secs:.2} s (< 30 s)"),
    )
}

fn c2_gradient(scenes: &[GrayImage]) -> Outcome {
    let start = Instant::now();
    let topo = build_topography(4, 4, 1).unwrap();
    let w = initial_filters(16, 16, 3).unwrap();
    let z = whitened_batch(scenes, 20, 5);
    let analytic = tica_gradient(&w, &z, &topo, DEFAULT_EPSILON).unwrap();
    let numeric = central_differences(&w, &z, &topo, 1e-6);
    let rel = (&analytic - &numeric).norm() / analytic.norm();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rel < 1e-5 && secs < 5.0,
        format!(
            "n=k=16, 4x4 torus r=1, T=20: relative error {rel:.2e} (< 1e-5), {secs:.3} s (< 5 s)"
        ),
    )
}

fn c3_orthonormality(desk: &Desk) -> (Outcome, BasisModel) {
    let config = TrainConfig {
        tol: 0.0,
        ..Desk::config(0)
    };
    let model = train(&desk.patches, &desk.whitening, &desk.topo, &config).unwrap();
    let worst = model
        .training_log()
        .iter()
        .map(|r| r.orthonormality_error)
        .fold(0.0, f64::max);
    let direct = orthonormality_error(model.w());
    let pass = worst < 1e-8 && direct < 1e-8 && model.iterations() == DESK_ITERS;
    (
        outcome(
            pass,
            format!(
                "{} iterations logged, worst ||WW' - I||_F = {worst:.2e}, final {direct:.2e} (< 1e-8)",
                model.iterations()
            ),
        ),
        model,
    )
}

fn c4_radius_zero(scenes: &[GrayImage]) -> Outcome {
    let topo = build_topography(4, 4, 0).unwrap();
    let mut worst: f64 = 0.0;
    for instance in 0..10u64 {
        let w = initial_filters(16, 16, 100 + instance).unwrap();
        let z = whitened_batch(scenes, 30, 200 + instance);
        let grad = tica_gradient(&w, &z, &topo, DEFAULT_EPSILON).unwrap();
        let t = z.nrows() as f64;
        let y = &z * w.transpose();
        // independent-unit rule: each filter scored on its own squared response
        let m = y.map(|yi| 2.0 * yi * (-0.5 / (DEFAULT_EPSILON + yi * yi).sqrt()));
        let expected = m.transpose() * &z / t;
        worst = worst.max((grad - expected).amax());
    }
    outcome(
        worst < 1e-12,
        format!("10 instances, max |difference| = {worst:.2e} (< 1e-12)"),
    )
}

fn c5_probe(desk: &Desk, model: &BasisModel) -> Outcome {
    let mut hits = 0;
    let mut worst_ratio: f64 = 0.0;
    for unit in 0..model.n_units() {
        let probe = generate_single_basis_probe(model, unit).unwrap();
        let patch = PatchSet::new(
            DMatrix::from_row_slice(1, probe.values().len(), probe.values()),
            DESK_SIDE,
            "probe",
            false,
        )
        .unwrap();
        let trace = compute_activation(model, &desk.whitening, &patch, 24.0).unwrap();
        let mut mags: Vec<(f64, usize)> = trace
            .activations()
            .row(0)
            .iter()
            .map(|s| s.abs())
            .zip(0..)
            .collect();
        mags.sort_by(|a, b| b.0.total_cmp(&a.0));
        if mags[0].1 == unit && mags[1].0 < 0.05 * mags[0].0 {
            hits += 1;
        }
        worst_ratio = worst_ratio.max(mags[1].0 / mags[0].0);
    }
    outcome(
        hits == model.n_units(),
        format!("{hits}/{} probes peak at their own unit, worst second/first = {worst_ratio:.2e} (< 0.05)", model.n_units()),
    )
}

fn c6_reconstruction(desk: &Desk, model: &BasisModel) -> Outcome {
    let test = extract_random_patches(&scene(256, 256, 555), DESK_SIDE, 100, 9).unwrap();
    let trace = compute_activation(model, &desk.whitening, &test, 24.0).unwrap();
    let a_s = trace.activations() * model.a().transpose();
    let projected =
        test.data() * desk.whitening.v().transpose() * desk.whitening.v_inv().transpose();
    let err = (a_s - projected).amax();
    outcome(
        err < 1e-8,
        format!("100 test patches, max |A s - V_inv V x| = {err:.2e} (< 1e-8)"),
    )
}

struct SeedModels {
    seed: u64,
    tica: BasisModel,
    ica: BasisModel,
}

fn seed_models(desk: &Desk) -> Vec<SeedModels> {
    (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let config = Desk::config(seed);
            SeedModels {
                seed,
                tica: train(&desk.patches, &desk.whitening, &desk.topo, &config).unwrap(),
                ica: ica_train(&desk.patches, &desk.whitening, &desk.topo, &config).unwrap(),
            }
        })
        .collect()
}

fn c7_bar_locality(desk: &Desk, models: &[SeedModels]) -> Outcome {
    let bar = generate_moving_bar(&BarStimulusSpec::with_defaults(
        DESK_SIDE,
        Orientation::Horizontal,
    ))
    .unwrap();
    let patches = extract_fixed_patches(&bar, (0, 0), DESK_SIDE).unwrap();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for m in models {
        let t = compute_activation(&m.tica, &desk.whitening, &patches, 24.0).unwrap();
        let i = compute_activation(&m.ica, &desk.whitening, &patches, 24.0).unwrap();
        let lt = cluster_locality(&t, &desk.topo, 5).unwrap();
        let li = cluster_locality(&i, &desk.topo, 5).unwrap();
        if lt < li {
            wins += 1;
        }
        pairs.push(format!("{lt:.2}/{li:.2}"));
    }
    outcome(
        wins >= 8,
        format!(
            "TICA < ICA locality (k=5) in {wins}/10 seeds (>= 8); TICA/ICA: {}",
            pairs.join(" ")
        ),
    )
}

fn pan_patches() -> (PatchSet, f64) {
    let big = scene(512, 256, 999);
    let spec = PanSpec {
        frame_width: DESK_SIDE,
        frame_height: DESK_SIDE,
        n_frames: PAN_FRAMES,
        start: (100.0, 10.0),
        velocity: (0.0, PAN_VELOCITY),
        frame_rate: 24.0,
    };
    let seq = generate_pan(&big, &spec).unwrap();
    (
        extract_fixed_patches(&seq, (0, 0), DESK_SIDE).unwrap(),
        seq.frame_rate(),
    )
}

fn c8_adjacency(desk: &Desk, models: &[SeedModels], pan: &PatchSet) -> Outcome {
    let results: Vec<(bool, String)> = models
        .par_iter()
        .map(|m| {
            let t = compute_activation(&m.tica, &desk.whitening, pan, 24.0).unwrap();
            let i = compute_activation(&m.ica, &desk.whitening, pan, 24.0).unwrap();
            let r_t = adjacent_correlation(&t, &desk.topo).unwrap();
            let r_i = adjacent_correlation(&i, &desk.topo).unwrap();
            let r_s =
                adjacent_correlation(&t, &shuffle_topography(&desk.topo, 1000 + m.seed)).unwrap();
            let p_ti = permutation_test(&r_t.rs(), &r_i.rs(), 10_000, 3 * m.seed).unwrap();
            let p_ts = permutation_test(&r_t.rs(), &r_s.rs(), 10_000, 3 * m.seed + 1).unwrap();
            let p_is = permutation_test(&r_i.rs(), &r_s.rs(), 10_000, 3 * m.seed + 2).unwrap();
            let ok = r_t.mean_r > r_i.mean_r && p_ti < 0.05 && p_ts < 0.05 && p_is > 0.05;
            let line = format!(
                "[R {:.3}/{:.3}/{:.3} p {p_ti:.4}/{p_ts:.4}/{p_is:.3}]",
                r_t.mean_r, r_i.mean_r, r_s.mean_r
            );
            (ok, line)
        })
        .collect();
    let wins = results.iter().filter(|r| r.0).count();
    let detail: Vec<&str> = results.iter().map(|r| r.1.as_str()).collect();
    outcome(
        wins >= 8,
        format!(
            "{PAN_FRAMES}-frame pan: TICA>ICA p<0.05, TICA vs shuffled p<0.05, ICA vs shuffled p>0.05 in {wins}/10 seeds (>= 8); R tica/ica/shuffled, p: {}",
            detail.join(" ")
        ),
    )
}

fn c9_autocorrelation(desk: &Desk, model: &BasisModel, pan: &PatchSet, frame_rate: f64) -> Outcome {
    let trace = compute_activation(model, &desk.whitening, pan, frame_rate).unwrap();
    let bound = 3.0 / (trace.n_frames() as f64).sqrt();
    let mut pass = true;
    let mut parts = Vec::new();
    for quantity in [Quantity::Activation, Quantity::Energy] {
        let report = autocorrelation_with(
            &trace,
            &AutocorrOptions {
                max_lag: 100,
                quantity,
                shuffle_seed: 17,
            },
        )
        .unwrap();
        let min_gap = (1..=10)
            .map(|l| report.mean_autocorr[l] - report.shuffled_mean[l])
            .fold(f64::INFINITY, f64::min);
        let max_shuffled = report.shuffled_mean[1..]
            .iter()
            .map(|r| r.abs())
            .fold(0.0, f64::max);
        pass &= min_gap > 0.1 && max_shuffled < bound;
        parts.push(format!(
            "{quantity}: min gap over lags 1-10 = {min_gap:.3} (> 0.1), max |shuffled r| over lags 1-100 = {max_shuffled:.4} (< {bound:.4})"
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c10_permutation_exactness() -> Outcome {
    let p = permutation_test(&[0.0, 0.0], &[1.0, 1.0], 10_000, 42).unwrap();
    let same = permutation_test(&[0.3, 0.1, 0.7], &[0.3, 0.1, 0.7], 10_000, 42).unwrap();
    outcome(
        (p - 1.0 / 3.0).abs() <= 0.05 && same == 1.0,
        format!("{{0,0}} vs {{1,1}}: p = {p:.4} (1/3 +- 0.05); identical groups: p = {same}"),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn cli(args: &[&str]) {
    let mut argv = vec!["topica"];
    argv.extend_from_slice(args);
    if let Err(e) = topica_cli::try_run(argv) {
        panic!("topica {args:?}: {e}");
    }
}

fn c11_determinism(scenes: &[GrayImage]) -> Outcome {
    let tmp = TempDir::new().unwrap();
    let images = tmp.path().join("images");
    fs::create_dir(&images).unwrap();
    for (i, img) in scenes.iter().enumerate() {
        let lo = img.values().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img
            .values()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let unit = GrayImage::from_fn(img.width(), img.height(), |r, c| {
            (img.get(r, c) - lo) / (hi - lo)
        })
        .unwrap();
        write_pgm_unit(&images.join(format!("scene{i}.pgm")), &unit).unwrap();
    }
    let big = tmp.path().join("big.pgm");
    cli(&[
        "synth",
        "leaves",
        "--width",
        "256",
        "--height",
        "128",
        "--seed",
        "4",
        "--out",
        big.to_str().unwrap(),
    ]);
    let frames = tmp.path().join("frames");
    cli(&[
        "synth",
        "pan",
        "--image",
        big.to_str().unwrap(),
        "--out",
        frames.to_str().unwrap(),
        "--frames",
        "300",
        "--size",
        "9,9",
        "--start",
        "20,5",
        "--velocity",
        "0.1,0.15",
    ]);
    let run = |name: &str| -> PathBuf {
        let root = tmp.path().join(name);
        let p = |s: &str| root.join(s).to_str().unwrap().to_owned();
        cli(&[
            "train",
            "--images",
            images.to_str().unwrap(),
            "--out",
            &p("model"),
            "--n-patches",
            "5000",
            "--max-iters",
            "30",
            "--seed",
            "3",
        ]);
        cli(&[
            "activate",
            "--model",
            &p("model"),
            "--frames",
            frames.to_str().unwrap(),
            "--out",
            &p("trace"),
        ]);
        cli(&[
            "analyze",
            "--trace",
            &p("trace"),
            "--model",
            &p("model"),
            "--mode",
            "autocorr",
            "--shuffle-baseline",
            "5",
            "--out",
            &p("autocorr"),
        ]);
        cli(&[
            "analyze",
            "--trace",
            &p("trace"),
            "--model",
            &p("model"),
            "--mode",
            "adjacency",
            "--compare",
            &p("trace"),
            "--compare-shuffle-topo",
            "2",
            "--permutations",
            "2000",
            "--out",
            &p("adjacency"),
        ]);
        cli(&[
            "analyze",
            "--trace",
            &p("trace"),
            "--model",
            &p("model"),
            "--mode",
            "locality",
            "--out",
            &p("locality"),
        ]);
        root
    };
    let a = run("a");
    let b = run("b");
    let files = files_under(&a);
    let same_listing = files == files_under(&b);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    outcome(
        same_listing && differing.is_empty() && !files.is_empty(),
        format!(
            "{} output files from train + activate + analyze x2, {} differ{}",
            files.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {}", differing.join(", "))
            }
        ),
    )
}

fn c12_full_scale() -> Option<Outcome> {
    if std::env::var("TOPICA_FULL_SCALE")
        .map(|v| v != "1")
        .unwrap_or(true)
    {
        return None;
    }
    let start = Instant::now();
    let scenes: Vec<GrayImage> = (0..4).map(|i| scene(768, 768, 300 + i)).collect();
    let patches = extract_training_patches(&scenes, 100, 20_000, 1).unwrap();
    let result = fit_whitening(&patches, 200).and_then(|whitening| {
        let topo = build_topography(20, 10, 1)?;
        let config = TrainConfig {
            max_iters: 200,
            batch_size: Some(2_000),
            ..TrainConfig::default()
        };
        train(&patches, &whitening, &topo, &config)
    });
    Some(match result {
        Ok(model) => {
            let dir = std::env::var("TOPICA_FULL_SCALE_OUT")
                .unwrap_or_else(|_| "full_scale_model".into());
            let dir = PathBuf::from(dir);
            fs::create_dir_all(&dir).unwrap();
            model.save(&dir).unwrap();
            let montage = topica_cli::render::montage(&model).unwrap();
            write_pgm_unit(&dir.join("montage.pgm"), &montage).unwrap();
            outcome(
                true,
                format!(
                    "100x100 patches, k=200, 20x10 map: {} iterations in {:.0} s, montage {}x{} at {} (inspect visually)",
                    model.iterations(),
                    start.elapsed().as_secs_f64(),
                    montage.width(),
                    montage.height(),
                    dir.join("montage.pgm").display()
                ),
            )
        }
        Err(e) => outcome(false, format!("numerical failure: {e}")),
    })
}

fn report(id: usize, name: &str, o: &Outcome, failures: &mut usize) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    if !o.pass {
        *failures += 1;
    }
    println!("{tag} {id:>2} {name}: {}", o.detail);
}

fn main() {
    let start = Instant::now();
    let scenes = training_scenes();
    let mut failures = 0;

    report(
        1,
        "whitening identity",
        &c1_whitening(&scenes),
        &mut failures,
    );
    report(
        2,
        "gradient correctness",
        &c2_gradient(&scenes),
        &mut failures,
    );

    let desk = Desk::new(&scenes);
    let (c3, model) = c3_orthonormality(&desk);
    report(3, "orthonormality", &c3, &mut failures);
    report(
        4,
        "radius-0 reduction",
        &c4_radius_zero(&scenes),
        &mut failures,
    );
    report(
        5,
        "single-basis validation",
        &c5_probe(&desk, &model),
        &mut failures,
    );
    report(
        6,
        "reconstruction identity",
        &c6_reconstruction(&desk, &model),
        &mut failures,
    );

    let models = seed_models(&desk);
    report(
        7,
        "moving-bar locality",
        &c7_bar_locality(&desk, &models),
        &mut failures,
    );
    let (pan, frame_rate) = pan_patches();
    report(
        8,
        "adjacency direction",
        &c8_adjacency(&desk, &models, &pan),
        &mut failures,
    );
    report(
        9,
        "autocorrelation pattern",
        &c9_autocorrelation(&desk, &models[0].tica, &pan, frame_rate),
        &mut failures,
    );
    report(
        10,
        "permutation-test exactness",
        &c10_permutation_exactness(),
        &mut failures,
    );
    report(11, "determinism", &c11_determinism(&scenes), &mut failures);
    match c12_full_scale() {
        Some(o) => report(12, "full-scale smoke run", &o, &mut failures),
        None => println!("SKIP 12 full-scale smoke run: optional, set TOPICA_FULL_SCALE=1"),
    }

    println!(
        "acceptance: {failures} failing criteria, {:.0} s total",
        start.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
